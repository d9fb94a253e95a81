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
#include "voxelsam/enhance.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "voxelsam/error.hpp"

namespace voxelsam {
namespace {

using Histogram = std::array<std::int64_t, 256>;

std::vector<std::uint8_t> to_u8(const SliceImage& image) {
  if (image.dtype == DType::UInt8) {
    std::vector<std::uint8_t> out(image.pixels.size());
    std::transform(image.pixels.begin(), image.pixels.end(), out.begin(),
                   [](float v) { return static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f)); });
    return out;
  }
  auto [lo, hi] = std::minmax_element(image.pixels.begin(), image.pixels.end());
  return rescale_to_u8(image.pixels, *lo, *hi);
}

void equalize(std::vector<std::uint8_t>& px) {
  Histogram hist{};
  for (auto v : px) ++hist[v];
  std::array<std::uint8_t, 256> lut{};
  const auto total = static_cast<std::int64_t>(px.size());
  std::int64_t cum = 0;
  for (int v = 0; v < 256; ++v) {
    cum += hist[static_cast<std::size_t>(v)];
    lut[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>((255 * cum) / total);
  }
  for (auto& v : px) v = lut[v];
}

// Contrast-limited adaptive histogram equalization: per-tile clipped
// histograms, excess redistributed uniformly, bilinear blend of the four
// nearest tile mappings.
void clahe(std::vector<std::uint8_t>& px, SliceShape shape, double clip_limit, int tile_rows, int tile_cols) {
  const auto rows = shape.rows;
  const auto cols = shape.cols;
  const std::int64_t tr = std::min<std::int64_t>(tile_rows, rows);
  const std::int64_t tc = std::min<std::int64_t>(tile_cols, cols);
  auto row_start = [&](std::int64_t i) { return i * rows / tr; };
  auto col_start = [&](std::int64_t j) { return j * cols / tc; };

  std::vector<std::array<std::uint8_t, 256>> luts(static_cast<std::size_t>(tr * tc));
  for (std::int64_t ti = 0; ti < tr; ++ti) {
    for (std::int64_t tj = 0; tj < tc; ++tj) {
      Histogram hist{};
      const auto r0 = row_start(ti), r1 = row_start(ti + 1);
      const auto c0 = col_start(tj), c1 = col_start(tj + 1);
      for (auto r = r0; r < r1; ++r)
        for (auto c = c0; c < c1; ++c) ++hist[px[static_cast<std::size_t>(r * cols + c)]];
      const std::int64_t area = (r1 - r0) * (c1 - c0);
      const auto limit = std::max<std::int64_t>(1, static_cast<std::int64_t>(clip_limit * static_cast<double>(area) / 256.0));
      std::int64_t excess = 0;
      for (auto& h : hist) {
        if (h > limit) {
          excess += h - limit;
          h = limit;
        }
      }
      const std::int64_t bonus = excess / 256;
      const std::int64_t remainder = excess % 256;
      for (std::size_t b = 0; b < 256; ++b) hist[b] += bonus;
      if (remainder > 0) {
        const std::int64_t step = std::max<std::int64_t>(1, 256 / remainder);
        std::int64_t left = remainder;
        for (std::size_t b = 0; b < 256 && left > 0; b += static_cast<std::size_t>(step), --left) ++hist[b];
      }
      auto& lut = luts[static_cast<std::size_t>(ti * tc + tj)];
      std::int64_t cum = 0;
      for (std::size_t b = 0; b < 256; ++b) {
        cum += hist[b];
        lut[b] = static_cast<std::uint8_t>(std::clamp<std::int64_t>((255 * cum + area / 2) / area, 0, 255));
      }
    }
  }

  // Tile centers in pixel units.
  auto center = [](std::int64_t start, std::int64_t end) { return 0.5 * static_cast<double>(start + end - 1); };
  auto locate = [&](double pos, std::int64_t tiles, auto start_of, std::int64_t& lo, std::int64_t& hi, double& w) {
    lo = 0;
    while (lo + 1 < tiles && center(start_of(lo + 1), start_of(lo + 2)) <= pos) ++lo;
    const double c_lo = center(start_of(lo), start_of(lo + 1));
    if (pos <= c_lo || lo + 1 >= tiles) {
      hi = lo;
      w = 0.0;
      return;
    }
    hi = lo + 1;
    const double c_hi = center(start_of(hi), start_of(hi + 1));
    w = (pos - c_lo) / (c_hi - c_lo);
  };

  std::vector<std::uint8_t> out(px.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    std::int64_t i0, i1;
    double wy;
    locate(static_cast<double>(r), tr, row_start, i0, i1, wy);
    for (std::int64_t c = 0; c < cols; ++c) {
      std::int64_t j0, j1;
      double wx;
      locate(static_cast<double>(c), tc, col_start, j0, j1, wx);
      const auto v = px[static_cast<std::size_t>(r * cols + c)];
      auto m = [&](std::int64_t i, std::int64_t j) {
        return static_cast<double>(luts[static_cast<std::size_t>(i * tc + j)][v]);
      };
      const double top = (1 - wx) * m(i0, j0) + wx * m(i0, j1);
      const double bottom = (1 - wx) * m(i1, j0) + wx * m(i1, j1);
      out[static_cast<std::size_t>(r * cols + c)] =
          static_cast<std::uint8_t>(std::clamp(std::lround((1 - wy) * top + wy * bottom), 0L, 255L));
    }
  }
  px = std::move(out);
}

}  // namespace

std::string_view to_string(EnhanceMethod method) noexcept {
  switch (method) {
    case EnhanceMethod::None: return "none";
    case EnhanceMethod::GlobalEqualize: return "global-equalize";
    case EnhanceMethod::Clahe: return "clahe";
  }
  return "unknown";
}

std::optional<EnhanceMethod> parse_enhance_method(std::string_view text) noexcept {
  if (text == "none") return EnhanceMethod::None;
  if (text == "global-equalize" || text == "equalize") return EnhanceMethod::GlobalEqualize;
  if (text == "clahe") return EnhanceMethod::Clahe;
  return std::nullopt;
}

nlohmann::json EnhanceParams::to_json() const {
  nlohmann::json j = {{"method", std::string(to_string(method))}};
  if (method == EnhanceMethod::Clahe) {
    j["clip_limit"] = clip_limit;
    j["tile_grid"] = {tile_rows, tile_cols};
  }
  return j;
}

EnhanceParams EnhanceParams::from_json(const nlohmann::json& j) {
  EnhanceParams p;
  auto m = parse_enhance_method(j.value("method", "clahe"));
  if (!m) throw Error(ErrorCode::InvalidParams, "unknown enhancement method");
  p.method = *m;
  p.clip_limit = j.value("clip_limit", 2.0);
  if (j.contains("tile_grid")) {
    p.tile_rows = j["tile_grid"].at(0).get<int>();
    p.tile_cols = j["tile_grid"].at(1).get<int>();
  }
  return p;
}

std::vector<std::uint8_t> rescale_to_u8(std::span<const float> pixels, double lo, double hi) {
  std::vector<std::uint8_t> out(pixels.size());
  const double span = hi - lo;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double v = span > 0 ? (static_cast<double>(pixels[i]) - lo) * 255.0 / span : 0.0;
    out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return out;
}

SliceImage enhance_contrast(const SliceImage& image, const EnhanceParams& params) {
  if (params.method == EnhanceMethod::Clahe && (params.tile_rows < 1 || params.tile_cols < 1 || !(params.clip_limit > 0))) {
    throw Error(ErrorCode::InvalidParams, "CLAHE needs tile grid >= 1 and clip limit > 0",
                {{"clip_limit", params.clip_limit}, {"tile_grid", {params.tile_rows, params.tile_cols}}});
  }
  if (static_cast<std::int64_t>(image.pixels.size()) != image.shape.pixel_count()) {
    throw Error(ErrorCode::InvalidParams, "slice pixel count does not match its shape");
  }
  SliceImage out;
  out.axis = image.axis;
  out.index = image.index;
  out.shape = image.shape;
  out.dtype = DType::UInt8;
  out.pixels.resize(image.pixels.size());
  if (image.pixels.empty()) return out;

  auto [lo, hi] = std::minmax_element(image.pixels.begin(), image.pixels.end());
  if (*lo == *hi) {
    const float v = std::clamp(std::round(*lo), 0.0f, 255.0f);
    std::fill(out.pixels.begin(), out.pixels.end(), v);
    return out;
  }

  std::vector<std::uint8_t> px;
  if (params.method == EnhanceMethod::None) {
    px = rescale_to_u8(image.pixels, *lo, *hi);
  } else {
    px = to_u8(image);
    if (params.method == EnhanceMethod::GlobalEqualize) equalize(px);
    else clahe(px, image.shape, params.clip_limit, params.tile_rows, params.tile_cols);
  }
  std::transform(px.begin(), px.end(), out.pixels.begin(), [](std::uint8_t v) { return static_cast<float>(v); });
  return out;
}

}  // namespace voxelsam
