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
#include "voxelsam/volume.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "voxelsam/error.hpp"

namespace voxelsam {

char axis_letter(Axis axis) noexcept {
  switch (axis) {
    case Axis::X: return 'x';
    case Axis::Y: return 'y';
    case Axis::Z: return 'z';
  }
  return '?';
}

std::optional<Axis> parse_axis(std::string_view text) noexcept {
  if (text.size() != 1) return std::nullopt;
  switch (text[0]) {
    case 'x': case 'X': return Axis::X;
    case 'y': case 'Y': return Axis::Y;
    case 'z': case 'Z': return Axis::Z;
    default: return std::nullopt;
  }
}

std::optional<std::vector<Axis>> parse_axes(std::string_view text) noexcept {
  std::array<bool, 3> seen{};
  for (char ch : text) {
    auto axis = parse_axis(std::string_view(&ch, 1));
    if (!axis) return std::nullopt;
    seen[static_cast<std::size_t>(*axis)] = true;
  }
  std::vector<Axis> axes;
  for (Axis a : kAllAxes) {
    if (seen[static_cast<std::size_t>(a)]) axes.push_back(a);
  }
  if (axes.empty()) return std::nullopt;
  return axes;
}

std::string_view to_string(DType dtype) noexcept {
  switch (dtype) {
    case DType::UInt8: return "uint8";
    case DType::UInt16: return "uint16";
    case DType::Float32: return "float32";
  }
  return "unknown";
}

std::optional<DType> parse_dtype(std::string_view text) noexcept {
  if (text == "uint8") return DType::UInt8;
  if (text == "uint16") return DType::UInt16;
  if (text == "float32") return DType::Float32;
  return std::nullopt;
}

std::size_t dtype_size(DType dtype) noexcept {
  switch (dtype) {
    case DType::UInt8: return 1;
    case DType::UInt16: return 2;
    case DType::Float32: return 4;
  }
  return 0;
}

std::int64_t Dims::extent(Axis axis) const noexcept {
  switch (axis) {
    case Axis::X: return nx;
    case Axis::Y: return ny;
    case Axis::Z: return nz;
  }
  return 0;
}

SliceShape slice_shape(const Dims& dims, Axis axis) noexcept {
  switch (axis) {
    case Axis::Z: return {dims.ny, dims.nx};
    case Axis::Y: return {dims.nz, dims.nx};
    case Axis::X: return {dims.nz, dims.ny};
  }
  return {};
}

VoxelCoord pixel_to_voxel(Axis axis, std::int64_t index, std::int64_t row, std::int64_t col) noexcept {
  switch (axis) {
    case Axis::Z: return {col, row, index};
    case Axis::Y: return {col, index, row};
    case Axis::X: return {index, col, row};
  }
  return {};
}

SlicePixel voxel_to_pixel(Axis axis, const VoxelCoord& v) noexcept {
  switch (axis) {
    case Axis::Z: return {v.z, v.y, v.x};
    case Axis::Y: return {v.y, v.z, v.x};
    case Axis::X: return {v.x, v.z, v.y};
  }
  return {};
}

Volume3D::Volume3D(Dims dims, Spacing spacing, Storage data) : dims_(dims), spacing_(spacing) {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) {
    throw Error(ErrorCode::DimensionMismatch, "volume dimensions must be positive");
  }
  if (!(spacing.sx > 0 && spacing.sy > 0 && spacing.sz > 0)) {
    throw Error(ErrorCode::InvalidParams, "voxel spacing must be positive");
  }
  const auto count = static_cast<std::size_t>(dims.voxel_count());
  std::visit(
      [&](const auto& values) {
        if (values.size() != count) {
          throw Error(ErrorCode::DimensionMismatch,
                      "voxel payload holds " + std::to_string(values.size()) + " scalars, header declares " +
                          std::to_string(count));
        }
        auto [lo, hi] = std::minmax_element(values.begin(), values.end());
        min_ = static_cast<double>(*lo);
        max_ = static_cast<double>(*hi);
      },
      data);
  data_ = std::make_shared<const Storage>(std::move(data));
}

DType Volume3D::dtype() const noexcept {
  switch (data_->index()) {
    case 0: return DType::UInt8;
    case 1: return DType::UInt16;
    default: return DType::Float32;
  }
}

double Volume3D::value(std::int64_t x, std::int64_t y, std::int64_t z) const {
  if (!dims_.contains(x, y, z)) throw Error(ErrorCode::IndexOutOfRange, "voxel outside volume");
  const auto i = static_cast<std::size_t>(offset(x, y, z));
  return std::visit([i](const auto& values) { return static_cast<double>(values[i]); }, *data_);
}

SliceImage extract_slice(const Volume3D& volume, Axis axis, std::int64_t index) {
  const Dims& d = volume.dims();
  if (index < 0 || index >= d.extent(axis)) {
    throw Error(ErrorCode::IndexOutOfRange,
                std::string("slice ") + std::to_string(index) + " outside axis " + axis_letter(axis) + " extent " +
                    std::to_string(d.extent(axis)),
                {{"axis", std::string(1, axis_letter(axis))}, {"index", index}, {"extent", d.extent(axis)}});
  }
  SliceImage out;
  out.axis = axis;
  out.index = index;
  out.shape = slice_shape(d, axis);
  out.dtype = volume.dtype();
  out.pixels.resize(static_cast<std::size_t>(out.shape.pixel_count()));
  std::visit(
      [&](const auto& values) {
        float* dst = out.pixels.data();
        switch (axis) {
          case Axis::Z: {
            const auto base = static_cast<std::size_t>(index * d.nx * d.ny);
            for (std::size_t i = 0; i < out.pixels.size(); ++i) dst[i] = static_cast<float>(values[base + i]);
            break;
          }
          case Axis::Y:
            for (std::int64_t z = 0; z < d.nz; ++z) {
              const auto row = static_cast<std::size_t>(volume.offset(0, index, z));
              for (std::int64_t x = 0; x < d.nx; ++x) *dst++ = static_cast<float>(values[row + static_cast<std::size_t>(x)]);
            }
            break;
          case Axis::X:
            for (std::int64_t z = 0; z < d.nz; ++z) {
              for (std::int64_t y = 0; y < d.ny; ++y) {
                *dst++ = static_cast<float>(values[static_cast<std::size_t>(volume.offset(index, y, z))]);
              }
            }
            break;
        }
      },
      volume.storage());
  return out;
}

}  // namespace voxelsam
