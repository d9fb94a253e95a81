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
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "voxelsam/mask.hpp"
#include "voxelsam/volume.hpp"
#include "voxelsam/volume_io.hpp"

namespace voxelsam {

using SegmentId = std::uint16_t;
using Rgb = std::array<std::uint8_t, 3>;

enum class WriteMode { Overwrite, Preserve };
enum class SegmentTag { Instance, Semantic };

std::string_view to_string(WriteMode mode) noexcept;
std::optional<WriteMode> parse_write_mode(std::string_view text) noexcept;
std::string_view to_string(SegmentTag tag) noexcept;
std::optional<SegmentTag> parse_segment_tag(std::string_view text) noexcept;

struct SegmentMeta {
  SegmentId id = 0;
  std::string name;
  Rgb color{};
  SegmentTag tag = SegmentTag::Semantic;
  std::string created;

  nlohmann::json to_json() const;
  static SegmentMeta from_json(const nlohmann::json& j);
};

/// (segment, axis) -> slice index -> provenance. Sorted and duplicate-free by
/// construction.
class KeyframeRegistry {
 public:
  using Entries = std::map<std::int64_t, Provenance>;

  void set(SegmentId segment, Axis axis, std::int64_t index, Provenance provenance);
  void erase(SegmentId segment, Axis axis, std::int64_t index);
  void erase_segment(SegmentId segment);
  const Entries& entries(SegmentId segment, Axis axis) const;
  /// Indices whose provenance is decoded or imported, ascending.
  std::vector<std::int64_t> anchors(SegmentId segment, Axis axis) const;

  nlohmann::json to_json() const;
  static KeyframeRegistry from_json(const nlohmann::json& j);
  friend bool operator==(const KeyframeRegistry&, const KeyframeRegistry&) = default;

 private:
  std::map<std::pair<SegmentId, Axis>, Entries> map_;
};

/// 3D grid of segment ids (0 = background) with a segment table, keyframe
/// registry and a bounded undo history of sparse voxel diffs.
class LabelMap {
 public:
  static constexpr std::size_t kUndoDepth = 32;

  explicit LabelMap(Dims dims, Spacing spacing = {});

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  std::uint64_t generation() const noexcept { return generation_; }
  std::span<const SegmentId> voxels() const noexcept { return voxels_; }
  SegmentId label(const VoxelCoord& v) const;

  const SegmentMeta& create_segment(std::string name, std::optional<Rgb> color = std::nullopt,
                                    SegmentTag tag = SegmentTag::Semantic);
  /// Inserts a segment with a fixed id (used by import).
  void add_segment(SegmentMeta meta);
  /// Removes the segment and its voxels. Clears the undo history because
  /// earlier generations reference the deleted id.
  void delete_segment(SegmentId id);
  const SegmentMeta* find_segment(SegmentId id) const noexcept;
  const std::map<SegmentId, SegmentMeta>& segments() const noexcept { return segments_; }

  /// Writes one slice as one generation. Overwrite sets every mask voxel to
  /// the segment; Preserve only claims background voxels. When `keyframe` is
  /// given the slice is registered with that provenance in the same
  /// generation.
  std::uint64_t write_mask(SegmentId segment, Axis axis, std::int64_t index, const Mask2D& mask,
                           WriteMode mode = WriteMode::Overwrite, std::optional<Provenance> keyframe = std::nullopt);
  Mask2D get_mask(SegmentId segment, Axis axis, std::int64_t index) const;
  std::vector<SegmentId> get_labels(Axis axis, std::int64_t index) const;

  std::uint64_t undo();
  std::size_t undo_available() const noexcept { return history_.size(); }

  const KeyframeRegistry& keyframes() const noexcept { return registry_; }

  /// Groups several slice writes into a single undoable generation. An
  /// uncommitted edit is rolled back on destruction.
  class Edit {
   public:
    Edit(Edit&&) noexcept;
    Edit& operator=(Edit&&) = delete;
    ~Edit();

    void write(SegmentId segment, Axis axis, std::int64_t index, const Mask2D& mask, WriteMode mode);
    /// Like write, and also clears this segment's voxels on the slice that
    /// fall outside the mask.
    void replace(SegmentId segment, Axis axis, std::int64_t index, const Mask2D& mask, WriteMode mode);
    void set_keyframe(SegmentId segment, Axis axis, std::int64_t index, Provenance provenance);
    void erase_keyframe(SegmentId segment, Axis axis, std::int64_t index);
    std::uint64_t commit();

   private:
    friend class LabelMap;
    explicit Edit(LabelMap& map);
    void set_voxel(std::size_t offset, SegmentId value);
    void check(SegmentId segment, Axis axis, std::int64_t index, const Mask2D& mask) const;

    LabelMap* map_;
    std::vector<std::pair<std::uint64_t, SegmentId>> diff_;
    KeyframeRegistry registry_before_;
    bool registry_touched_ = false;
    bool open_ = true;
  };
  Edit begin_edit() { return Edit(*this); }

 private:
  friend LabelMap import_labelmap(const std::filesystem::path& path, std::optional<VolumeFormat> format);

  struct UndoRecord {
    std::vector<std::pair<std::uint64_t, SegmentId>> diff;  // offset, previous value
    KeyframeRegistry registry;
  };

  std::size_t offset(const VoxelCoord& v) const noexcept {
    return static_cast<std::size_t>(v.x + dims_.nx * (v.y + dims_.ny * v.z));
  }

  Dims dims_;
  Spacing spacing_;
  std::vector<SegmentId> voxels_;
  std::map<SegmentId, SegmentMeta> segments_;
  SegmentId next_id_ = 1;
  KeyframeRegistry registry_;
  std::deque<UndoRecord> history_;
  std::uint64_t generation_ = 0;
};

/// `<path without extension>.segments.json`
std::filesystem::path segments_sidecar_path(const std::filesystem::path& labels);

/// Writes the label grid (uint16) plus the segment table sidecar.
void export_labelmap(const LabelMap& map, const std::filesystem::path& path, VolumeFormat format);
/// Reads a uint8/uint16 label grid. Segment table and keyframes come from the
/// sidecar when present; otherwise every distinct id becomes a segment.
LabelMap import_labelmap(const std::filesystem::path& path, std::optional<VolumeFormat> format = std::nullopt);

}  // namespace voxelsam
