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
#include "voxelsam/png.hpp"

#include <zlib.h>

#include <array>
#include <vector>

#include "voxelsam/error.hpp"

namespace voxelsam {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  out.append(b, 4);
}

void put_chunk(std::string& out, const char type[4], const std::string& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_u32(out, static_cast<std::uint32_t>(crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace

std::string encode_png_gray8(std::span<const std::uint8_t> pixels, std::int64_t rows, std::int64_t cols) {
  if (rows <= 0 || cols <= 0 || static_cast<std::int64_t>(pixels.size()) != rows * cols) {
    throw Error(ErrorCode::InvalidArgument, "png: pixel count does not match shape");
  }
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(rows * (cols + 1)));
  for (std::int64_t r = 0; r < rows; ++r) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), pixels.begin() + r * cols, pixels.begin() + (r + 1) * cols);
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::string idat(len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(idat.data()), &len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw Error(ErrorCode::ExecutionError, "png: deflate failed");
  }
  idat.resize(len);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(cols));
  put_u32(ihdr, static_cast<std::uint32_t>(rows));
  ihdr += std::string("\x08\x00\x00\x00\x00", 5);  // depth 8, grayscale, deflate, adaptive, no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", idat);
  put_chunk(out, "IEND", "");
  return out;
}

}  // namespace voxelsam
