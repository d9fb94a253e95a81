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
#include <string_view>
#include <vector>

#include "json.hpp"
#include "voxelsam/volume.hpp"

namespace voxelsam {

/// Row-major binary mask; every element is 0 or 1.
struct Mask2D {
  SliceShape shape;
  std::vector<std::uint8_t> bits;

  Mask2D() = default;
  explicit Mask2D(SliceShape s) : shape(s), bits(static_cast<std::size_t>(s.pixel_count()), 0) {}
  Mask2D(SliceShape s, std::vector<std::uint8_t> b) : shape(s), bits(std::move(b)) {}

  std::uint8_t at(std::int64_t row, std::int64_t col) const { return bits[static_cast<std::size_t>(row * shape.cols + col)]; }
  std::uint8_t& at(std::int64_t row, std::int64_t col) { return bits[static_cast<std::size_t>(row * shape.cols + col)]; }
  std::int64_t count() const noexcept;
  bool empty() const noexcept { return count() == 0; }
  friend bool operator==(const Mask2D&, const Mask2D&) = default;
};

enum class Provenance : std::uint8_t { Decoded, Interpolated, Imported };

std::string_view to_string(Provenance p) noexcept;
std::optional<Provenance> parse_provenance(std::string_view text) noexcept;

/// A mask bound to a slice, with where it came from.
struct MaskSlice {
  Axis axis = Axis::Z;
  std::int64_t index = 0;
  Mask2D mask;
  float threshold = 0.0f;
  Provenance provenance = Provenance::Decoded;
  std::optional<float> quality;
};

/// Run-length encoding of a binary mask in row-major order. Runs alternate
/// starting with a run of zeros (which may have length 0).
std::vector<std::int64_t> rle_encode(const Mask2D& mask);
/// Throws InvalidArgument when the runs do not sum to the pixel count.
Mask2D rle_decode(const std::vector<std::int64_t>& runs, SliceShape shape);

/// {"shape": [rows, cols], "rle": [...]}
nlohmann::json mask_to_json(const Mask2D& mask);
Mask2D mask_from_json(const nlohmann::json& j);

}  // namespace voxelsam
