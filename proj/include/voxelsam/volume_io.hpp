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
#include <optional>
#include <string_view>

#include "voxelsam/volume.hpp"

namespace voxelsam {

enum class VolumeFormat { TiffStack, Nrrd, RawJson };

std::string_view to_string(VolumeFormat format) noexcept;
/// Accepts "tiff", "tiff-stack", "nrrd", "raw", "raw+json".
std::optional<VolumeFormat> parse_volume_format(std::string_view text) noexcept;

/// Guesses the format from the extension: .tif/.tiff, .nrrd/.nhdr, .raw/.bin
/// (with a `<path>.json` sidecar) or a `.json` sidecar path itself.
VolumeFormat sniff_volume_format(const std::filesystem::path& path);

/// Reads a volume. Raw files take their metadata from the JSON sidecar
/// {dims, dtype, spacing, byte_order}; the sidecar is `<raw>.json`.
Volume3D load_volume(const std::filesystem::path& path, std::optional<VolumeFormat> hint = std::nullopt);

/// Writes the voxel data bit-exactly. For RawJson the sidecar is written to
/// `<path>.json`.
void save_volume(const Volume3D& volume, const std::filesystem::path& path, VolumeFormat format);

}  // namespace voxelsam
