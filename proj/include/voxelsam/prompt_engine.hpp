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
#include <compare>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "voxelsam/embedding_cache.hpp"
#include "voxelsam/labelmap.hpp"
#include "voxelsam/mask.hpp"
#include "voxelsam/model_runtime.hpp"
#include "voxelsam/volume.hpp"

namespace voxelsam {

enum class PointKind : std::uint8_t { Include, Exclude };

std::string_view to_string(PointKind kind) noexcept;
std::optional<PointKind> parse_point_kind(std::string_view text) noexcept;

struct PromptPoint {
  PointKind kind = PointKind::Include;
  VoxelCoord voxel;
  std::string id;

  nlohmann::json to_json() const;
};

struct SliceKey {
  SegmentId segment = 0;
  Axis axis = Axis::Z;
  std::int64_t index = 0;
  friend auto operator<=>(const SliceKey&, const SliceKey&) = default;
};

struct PromptSet {
  SliceKey key;
  std::vector<PromptPoint> points;  // insertion order
  std::vector<float> prior;         // low-res logits of the last decode; empty if none

  nlohmann::json to_json() const;
};

/// Pixel of `voxel` on the slice of `axis` it lies on.
SlicePixel to_slice_coords(const VoxelCoord& voxel, Axis axis) noexcept;
/// Same, but requires the voxel to lie on slice `index`. Throws AxisMismatch.
SlicePixel to_slice_coords(const VoxelCoord& voxel, Axis axis, std::int64_t index);

/// Encoder-input coordinates (col, row) of a pixel center. Throws ScaleMissing
/// when no positive scale is available.
std::array<float, 2> to_model_coords(std::int64_t row, std::int64_t col, SliceShape shape, std::optional<double> scale);

/// Builds the decoder prompt for a point set. Points are taken in a canonical
/// order so the result does not depend on insertion order.
ModelPrompt build_model_prompt(const PromptSet& set, SliceShape shape, double scale);

/// Interactive point prompts of one annotation session. All operations are
/// serialized on an internal mutex.
class PromptSession {
 public:
  explicit PromptSession(Dims dims);

  const Dims& dims() const noexcept { return dims_; }

  /// Adds a point to the slice of `axis` that contains it. Throws IndexOutOfRange.
  PromptPoint add_point(SegmentId segment, Axis axis, PointKind kind, const VoxelCoord& voxel);
  /// Throws UnknownPoint. Drops the prior of the affected slice.
  PromptSet remove_point(const std::string& id);
  /// Removes every point of the slice and its prior.
  PromptSet clear_points(const SliceKey& key);
  PromptSet prompt_set(const SliceKey& key) const;
  std::vector<PromptSet> prompt_sets() const;

  /// Feed the previous low-res logits back into the next decode of the slice.
  void set_prior_enabled(bool enabled);
  bool prior_enabled() const;

  /// Decodes the slice's points against the cached embedding. Throws
  /// EmptyPrompt, MissingEntry, AxisMismatch, InterfaceMismatch.
  MaskSlice decode(const SliceKey& key, const EmbeddingCache& cache, const DecoderGraph& decoder);

  /// Writes a decoded mask to the label map and registers it as a keyframe.
  /// Throws ShapeMismatch.
  std::uint64_t accept_mask(LabelMap& labels, SegmentId segment, const MaskSlice& mask,
                            WriteMode mode = WriteMode::Overwrite) const;

 private:
  Dims dims_;
  mutable std::mutex mutex_;
  std::map<SliceKey, PromptSet> sets_;
  std::map<std::string, SliceKey> owner_;
  std::uint64_t next_point_ = 1;
  bool prior_enabled_ = true;
};

}  // namespace voxelsam
