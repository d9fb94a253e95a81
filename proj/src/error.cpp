// Copyright 2026 The VoxelSAM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "voxelsam/error.hpp"

namespace voxelsam {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnreadableFile: return "UnreadableFile";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::GraphLoadError: return "GraphLoadError";
    case ErrorCode::InterfaceMismatch: return "InterfaceMismatch";
    case ErrorCode::ExecutionError: return "ExecutionError";
    case ErrorCode::EmptyPrompt: return "EmptyPrompt";
    case ErrorCode::NoEncoder: return "NoEncoder";
    case ErrorCode::NoDecoder: return "NoDecoder";
    case ErrorCode::DiskFull: return "DiskFull";
    case ErrorCode::Cancelled: return "Cancelled";
    case ErrorCode::IncompleteCache: return "IncompleteCache";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::MissingEntry: return "MissingEntry";
    case ErrorCode::CorruptHeader: return "CorruptHeader";
    case ErrorCode::CorruptPayload: return "CorruptPayload";
    case ErrorCode::AxisMismatch: return "AxisMismatch";
    case ErrorCode::ScaleMissing: return "ScaleMissing";
    case ErrorCode::UnknownPoint: return "UnknownPoint";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownSegment: return "UnknownSegment";
    case ErrorCode::NothingToUndo: return "NothingToUndo";
    case ErrorCode::TooFewKeyframes: return "TooFewKeyframes";
    case ErrorCode::EmptyKeyframe: return "EmptyKeyframe";
    case ErrorCode::PortInUse: return "PortInUse";
  }
  return "Unknown";
}

}  // namespace voxelsam
