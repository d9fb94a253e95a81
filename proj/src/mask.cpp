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
#include "voxelsam/mask.hpp"

#include <algorithm>
#include <numeric>

#include "voxelsam/error.hpp"

namespace voxelsam {

std::int64_t Mask2D::count() const noexcept {
  return std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; });
}

std::string_view to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::Decoded: return "decoded";
    case Provenance::Interpolated: return "interpolated";
    case Provenance::Imported: return "imported";
  }
  return "unknown";
}

std::optional<Provenance> parse_provenance(std::string_view text) noexcept {
  if (text == "decoded") return Provenance::Decoded;
  if (text == "interpolated") return Provenance::Interpolated;
  if (text == "imported") return Provenance::Imported;
  return std::nullopt;
}

std::vector<std::int64_t> rle_encode(const Mask2D& mask) {
  std::vector<std::int64_t> runs;
  std::uint8_t current = 0;
  std::int64_t length = 0;
  for (auto b : mask.bits) {
    const std::uint8_t v = b ? 1 : 0;
    if (v != current) {
      runs.push_back(length);
      current = v;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

Mask2D rle_decode(const std::vector<std::int64_t>& runs, SliceShape shape) {
  if (std::any_of(runs.begin(), runs.end(), [](std::int64_t r) { return r < 0; })) {
    throw Error(ErrorCode::InvalidArgument, "RLE run lengths must be non-negative");
  }
  const auto total = std::accumulate(runs.begin(), runs.end(), std::int64_t{0});
  if (total != shape.pixel_count()) {
    throw Error(ErrorCode::InvalidArgument, "RLE covers " + std::to_string(total) + " pixels, shape has " +
                                                std::to_string(shape.pixel_count()));
  }
  Mask2D mask(shape);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (auto r : runs) {
    std::fill_n(mask.bits.begin() + static_cast<std::ptrdiff_t>(pos), r, value);
    pos += static_cast<std::size_t>(r);
    value ^= 1;
  }
  return mask;
}

nlohmann::json mask_to_json(const Mask2D& mask) {
  return {{"shape", {mask.shape.rows, mask.shape.cols}}, {"rle", rle_encode(mask)}};
}

Mask2D mask_from_json(const nlohmann::json& j) {
  SliceShape shape{j.at("shape").at(0).get<std::int64_t>(), j.at("shape").at(1).get<std::int64_t>()};
  return rle_decode(j.at("rle").get<std::vector<std::int64_t>>(), shape);
}

}  // namespace voxelsam
