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
#include <utility>
#include <vector>

#include "json.hpp"
#include "voxelsam/labelmap.hpp"
#include "voxelsam/mask.hpp"

namespace voxelsam {

/// Exact Euclidean signed distance in pixels: outside pixels hold the distance
/// to the nearest foreground pixel, inside pixels the negated distance to the
/// nearest background pixel. An empty mask yields +inf everywhere, a full mask
/// -inf everywhere.
std::vector<double> signed_distance(const Mask2D& mask);

/// Pixels where (1 - t) * a + t * b < 0.
Mask2D blend_fields(const std::vector<double>& a, const std::vector<double>& b, SliceShape shape, double t);

/// Throws EmptyKeyframe if either mask is empty, ShapeMismatch if shapes differ.
Mask2D interpolate_pair(const Mask2D& first, const Mask2D& second, double t);

struct InterpolationPlan {
  SegmentId segment = 0;
  Axis axis = Axis::Z;
  WriteMode mode = WriteMode::Overwrite;
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
  std::vector<std::vector<std::int64_t>> between;  // per pair, ascending

  std::int64_t slice_count() const noexcept;
  nlohmann::json to_json() const;
};

/// Consecutive non-interpolated keyframes of (segment, axis). Throws
/// UnknownSegment, TooFewKeyframes.
InterpolationPlan plan_fill(const LabelMap& labels, SegmentId segment, Axis axis,
                            WriteMode mode = WriteMode::Overwrite);

struct FillResult {
  InterpolationPlan plan;
  std::uint64_t generation = 0;
  std::int64_t slices_written = 0;
};

/// Fills every slice strictly between consecutive keyframes as one undoable
/// generation. Previous interpolated content of those slices is replaced.
FillResult fill_between(LabelMap& labels, SegmentId segment, Axis axis, WriteMode mode = WriteMode::Overwrite,
                        unsigned workers = 0);

/// Registers every non-empty slice of the segment along `axis` as an imported
/// keyframe, for label maps that carry no keyframe registry. Returns the count.
std::int64_t infer_keyframes(LabelMap& labels, SegmentId segment, Axis axis);

}  // namespace voxelsam
