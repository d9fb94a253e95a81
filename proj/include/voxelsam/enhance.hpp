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

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "voxelsam/volume.hpp"

namespace voxelsam {

enum class EnhanceMethod { None, GlobalEqualize, Clahe };

std::string_view to_string(EnhanceMethod method) noexcept;
/// Accepts "none", "global-equalize" (or "equalize"), "clahe".
std::optional<EnhanceMethod> parse_enhance_method(std::string_view text) noexcept;

struct EnhanceParams {
  EnhanceMethod method = EnhanceMethod::Clahe;
  double clip_limit = 2.0;
  int tile_rows = 8;
  int tile_cols = 8;

  /// Descriptor recorded in the embedding cache header.
  nlohmann::json to_json() const;
  static EnhanceParams from_json(const nlohmann::json& j);
};

/// Linear map of [lo, hi] onto [0, 255], rounded to nearest, clamped.
/// Requires hi > lo.
std::vector<std::uint8_t> rescale_to_u8(std::span<const float> pixels, double lo, double hi);

/// Produces an 8-bit image (dtype UInt8, values 0..255) of the same shape.
/// Non-8-bit input is min-max rescaled first. Zero-variance input is returned
/// as a constant image (its value clamped to 0..255) for every method.
SliceImage enhance_contrast(const SliceImage& image, const EnhanceParams& params);

}  // namespace voxelsam
