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

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

namespace voxelsam {

enum class Axis : std::uint8_t { X = 0, Y = 1, Z = 2 };

inline constexpr std::array<Axis, 3> kAllAxes{Axis::X, Axis::Y, Axis::Z};

char axis_letter(Axis axis) noexcept;  // 'x', 'y' or 'z'
std::optional<Axis> parse_axis(std::string_view text) noexcept;
/// Parses an axis set such as "xyz" or "z". Returns axes in X, Y, Z order.
std::optional<std::vector<Axis>> parse_axes(std::string_view text) noexcept;

enum class DType : std::uint8_t { UInt8, UInt16, Float32 };

std::string_view to_string(DType dtype) noexcept;
std::optional<DType> parse_dtype(std::string_view text) noexcept;
std::size_t dtype_size(DType dtype) noexcept;

struct Dims {
  std::int64_t nx = 0;
  std::int64_t ny = 0;
  std::int64_t nz = 0;

  std::int64_t voxel_count() const noexcept { return nx * ny * nz; }
  std::int64_t extent(Axis axis) const noexcept;
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz;
  }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

struct SliceShape {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::int64_t pixel_count() const noexcept { return rows * cols; }
  std::int64_t long_side() const noexcept { return rows > cols ? rows : cols; }
  friend bool operator==(const SliceShape&, const SliceShape&) = default;
};

struct VoxelCoord {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;
  friend bool operator==(const VoxelCoord&, const VoxelCoord&) = default;
};

/// A pixel on a specific slice: `index` is the slice position along the axis.
struct SlicePixel {
  std::int64_t index = 0;
  std::int64_t row = 0;
  std::int64_t col = 0;
  friend bool operator==(const SlicePixel&, const SlicePixel&) = default;
};

// Slice orientation used everywhere (cache, prompts, label map, UI):
//   Z slice: (rows, cols) = (ny, nx), pixel (r, c) = voxel (c, r, index)
//   Y slice: (rows, cols) = (nz, nx), pixel (r, c) = voxel (c, index, r)
//   X slice: (rows, cols) = (nz, ny), pixel (r, c) = voxel (index, c, r)
SliceShape slice_shape(const Dims& dims, Axis axis) noexcept;
VoxelCoord pixel_to_voxel(Axis axis, std::int64_t index, std::int64_t row, std::int64_t col) noexcept;
SlicePixel voxel_to_pixel(Axis axis, const VoxelCoord& voxel) noexcept;

/// Immutable scalar grid, x fastest: offset = x + nx * (y + ny * z).
/// Copies share the underlying buffer.
class Volume3D {
 public:
  using Storage = std::variant<std::vector<std::uint8_t>, std::vector<std::uint16_t>, std::vector<float>>;

  Volume3D(Dims dims, Spacing spacing, Storage data);

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  DType dtype() const noexcept;
  double intensity_min() const noexcept { return min_; }
  double intensity_max() const noexcept { return max_; }
  const Storage& storage() const noexcept { return *data_; }

  std::int64_t offset(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return x + dims_.nx * (y + dims_.ny * z);
  }
  double value(std::int64_t x, std::int64_t y, std::int64_t z) const;

 private:
  Dims dims_;
  Spacing spacing_;
  std::shared_ptr<const Storage> data_;
  double min_ = 0.0;
  double max_ = 0.0;
};

/// 2D scalar image. Values are held as float, which is exact for the
/// uint8/uint16 sources; `dtype` records the source type.
struct SliceImage {
  Axis axis = Axis::Z;
  std::int64_t index = 0;
  SliceShape shape;
  DType dtype = DType::Float32;
  std::vector<float> pixels;

  float at(std::int64_t row, std::int64_t col) const { return pixels[static_cast<std::size_t>(row * shape.cols + col)]; }
};

SliceImage extract_slice(const Volume3D& volume, Axis axis, std::int64_t index);

}  // namespace voxelsam
