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
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include "json.hpp"

namespace voxelsam {

/// Stable, machine-readable failure codes. The names double as the `code`
/// field of service error bodies and as the CLI's printed error names.
enum class ErrorCode {
  UnreadableFile,
  UnsupportedFormat,
  DimensionMismatch,
  IndexOutOfRange,
  InvalidParams,
  InvalidArgument,
  GraphLoadError,
  InterfaceMismatch,
  ExecutionError,
  EmptyPrompt,
  NoEncoder,
  NoDecoder,
  DiskFull,
  Cancelled,
  IncompleteCache,
  VersionMismatch,
  MissingEntry,
  CorruptHeader,
  CorruptPayload,
  AxisMismatch,
  ScaleMissing,
  UnknownPoint,
  ShapeMismatch,
  UnknownSegment,
  NothingToUndo,
  TooFewKeyframes,
  EmptyKeyframe,
  PortInUse,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, nlohmann::json details = nlohmann::json::object())
      : std::runtime_error(message), code_(code), details_(std::move(details)) {}

  ErrorCode code() const noexcept { return code_; }
  const nlohmann::json& details() const noexcept { return details_; }

 private:
  ErrorCode code_;
  nlohmann::json details_;
};

}  // namespace voxelsam
