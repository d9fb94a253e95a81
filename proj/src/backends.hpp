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

#include <filesystem>
#include <memory>

#include "json.hpp"
#include "voxelsam/model_runtime.hpp"

namespace voxelsam::detail {

// Tensor names every graph must expose.
inline constexpr const char* kEncoderInputs[] = {"image"};
inline constexpr const char* kEncoderOutputs[] = {"image_embeddings"};
inline constexpr const char* kDecoderInputs[] = {"image_embeddings", "point_coords",   "point_labels",
                                                  "mask_input",       "has_mask_input", "orig_im_size"};
inline constexpr const char* kDecoderOutputs[] = {"masks", "iou_predictions", "low_res_masks"};

std::shared_ptr<const EncoderBackend> make_stub_encoder(const nlohmann::json& desc, const Normalization& norm);
std::shared_ptr<const DecoderBackend> make_stub_decoder(const nlohmann::json& desc, const Normalization& norm);
std::shared_ptr<const EncoderBackend> make_onnx_encoder(const std::filesystem::path& path, const Normalization& norm);
std::shared_ptr<const DecoderBackend> make_onnx_decoder(const std::filesystem::path& path, const Normalization& norm);

}  // namespace voxelsam::detail
