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
#include "voxelsam/prompt_engine.hpp"

#include <algorithm>
#include <cstdio>
#include <tuple>

#include "voxelsam/error.hpp"

namespace voxelsam {
using nlohmann::json;

namespace {

json voxel_json(const VoxelCoord& v) { return json::array({v.x, v.y, v.z}); }

std::int64_t coord_on(Axis axis, const VoxelCoord& v) {
  switch (axis) {
    case Axis::X: return v.x;
    case Axis::Y: return v.y;
    case Axis::Z: return v.z;
  }
  return 0;
}

}  // namespace

std::string_view to_string(PointKind kind) noexcept { return kind == PointKind::Include ? "include" : "exclude"; }

std::optional<PointKind> parse_point_kind(std::string_view text) noexcept {
  if (text == "include") return PointKind::Include;
  if (text == "exclude") return PointKind::Exclude;
  return std::nullopt;
}

json PromptPoint::to_json() const {
  return {{"id", id}, {"kind", std::string(voxelsam::to_string(kind))}, {"voxel", voxel_json(voxel)}};
}

json PromptSet::to_json() const {
  json pts = json::array();
  for (const auto& p : points) pts.push_back(p.to_json());
  return {{"segment", key.segment},
          {"axis", std::string(1, axis_letter(key.axis))},
          {"index", key.index},
          {"points", pts},
          {"has_prior", !prior.empty()}};
}

SlicePixel to_slice_coords(const VoxelCoord& voxel, Axis axis) noexcept { return voxel_to_pixel(axis, voxel); }

SlicePixel to_slice_coords(const VoxelCoord& voxel, Axis axis, std::int64_t index) {
  const SlicePixel px = voxel_to_pixel(axis, voxel);
  if (px.index != index) {
    throw Error(ErrorCode::AxisMismatch, "point does not lie on the requested slice",
                {{"axis", std::string(1, axis_letter(axis))}, {"index", index}, {"voxel", voxel_json(voxel)}});
  }
  return px;
}

std::array<float, 2> to_model_coords(std::int64_t row, std::int64_t col, SliceShape shape, std::optional<double> scale) {
  if (!scale || !(*scale > 0.0)) throw Error(ErrorCode::ScaleMissing, "no resize scale recorded for this slice");
  if (row < 0 || col < 0 || row >= shape.rows || col >= shape.cols) {
    throw Error(ErrorCode::IndexOutOfRange, "pixel outside slice", {{"row", row}, {"col", col}});
  }
  return {static_cast<float>((static_cast<double>(col) + 0.5) * *scale),
          static_cast<float>((static_cast<double>(row) + 0.5) * *scale)};
}

ModelPrompt build_model_prompt(const PromptSet& set, SliceShape shape, double scale) {
  struct Item {
    PointKind kind;
    std::int64_t row, col;
  };
  std::vector<Item> items;
  items.reserve(set.points.size());
  for (const auto& p : set.points) {
    const SlicePixel px = to_slice_coords(p.voxel, set.key.axis, set.key.index);
    items.push_back({p.kind, px.row, px.col});
  }
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    return std::tie(a.kind, a.row, a.col) < std::tie(b.kind, b.row, b.col);
  });
  ModelPrompt prompt;
  for (const auto& it : items) {
    prompt.coords.push_back(to_model_coords(it.row, it.col, shape, scale));
    prompt.labels.push_back(it.kind == PointKind::Include ? 1.0f : 0.0f);
  }
  return prompt;
}

PromptSession::PromptSession(Dims dims) : dims_(dims) {}

PromptPoint PromptSession::add_point(SegmentId segment, Axis axis, PointKind kind, const VoxelCoord& voxel) {
  if (!dims_.contains(voxel.x, voxel.y, voxel.z)) {
    throw Error(ErrorCode::IndexOutOfRange, "point outside volume",
                {{"voxel", voxel_json(voxel)}, {"dims", {dims_.nx, dims_.ny, dims_.nz}}});
  }
  std::lock_guard lock(mutex_);
  char id[32];
  std::snprintf(id, sizeof id, "p-%06llu", static_cast<unsigned long long>(next_point_++));
  PromptPoint point{kind, voxel, id};
  const SliceKey key{segment, axis, coord_on(axis, voxel)};
  auto& set = sets_[key];
  set.key = key;
  set.points.push_back(point);
  owner_[point.id] = key;
  return point;
}

PromptSet PromptSession::remove_point(const std::string& id) {
  std::lock_guard lock(mutex_);
  auto it = owner_.find(id);
  if (it == owner_.end()) throw Error(ErrorCode::UnknownPoint, "unknown point " + id, {{"point", id}});
  auto& set = sets_.at(it->second);
  std::erase_if(set.points, [&](const PromptPoint& p) { return p.id == id; });
  set.prior.clear();
  owner_.erase(it);
  return set;
}

PromptSet PromptSession::clear_points(const SliceKey& key) {
  std::lock_guard lock(mutex_);
  auto it = sets_.find(key);
  if (it == sets_.end()) return PromptSet{key, {}, {}};
  for (const auto& p : it->second.points) owner_.erase(p.id);
  it->second.points.clear();
  it->second.prior.clear();
  return it->second;
}

PromptSet PromptSession::prompt_set(const SliceKey& key) const {
  std::lock_guard lock(mutex_);
  auto it = sets_.find(key);
  return it == sets_.end() ? PromptSet{key, {}, {}} : it->second;
}

std::vector<PromptSet> PromptSession::prompt_sets() const {
  std::lock_guard lock(mutex_);
  std::vector<PromptSet> out;
  for (const auto& [key, set] : sets_) {
    if (!set.points.empty()) out.push_back(set);
  }
  return out;
}

void PromptSession::set_prior_enabled(bool enabled) {
  std::lock_guard lock(mutex_);
  prior_enabled_ = enabled;
  if (!enabled) {
    for (auto& [key, set] : sets_) set.prior.clear();
  }
}

bool PromptSession::prior_enabled() const {
  std::lock_guard lock(mutex_);
  return prior_enabled_;
}

MaskSlice PromptSession::decode(const SliceKey& key, const EmbeddingCache& cache, const DecoderGraph& decoder) {
  std::lock_guard lock(mutex_);
  const CacheHeader& header = cache.header();
  if (!(header.dims == dims_)) {
    throw Error(ErrorCode::DimensionMismatch, "cache dims differ from session volume",
                {{"cache", {header.dims.nx, header.dims.ny, header.dims.nz}}, {"session", {dims_.nx, dims_.ny, dims_.nz}}});
  }
  if (!(decoder.embedding_shape() == header.shape)) {
    throw Error(ErrorCode::InterfaceMismatch, "decoder embedding shape differs from cache",
                {{"decoder", {decoder.embedding_shape().channels, decoder.embedding_shape().height,
                              decoder.embedding_shape().width}},
                 {"cache", {header.shape.channels, header.shape.height, header.shape.width}}});
  }
  auto it = sets_.find(key);
  if (it == sets_.end() || it->second.points.empty()) {
    throw Error(ErrorCode::EmptyPrompt, "no points on this slice",
                {{"segment", key.segment}, {"axis", std::string(1, axis_letter(key.axis))}, {"index", key.index}});
  }
  PromptSet& set = it->second;
  const SliceShape shape = slice_shape(dims_, key.axis);
  const double scale = cache.scale(key.axis, key.index);
  ModelPrompt prompt = build_model_prompt(set, shape, scale);
  if (prior_enabled_) prompt.prior = set.prior;

  const EmbeddingTensor embedding = cache.get(key.axis, key.index);
  DecodeResult result = voxelsam::decode(decoder, embedding, prompt, shape);
  if (prior_enabled_) set.prior = std::move(result.low_res_logits);

  MaskSlice out;
  out.axis = key.axis;
  out.index = key.index;
  out.mask = Mask2D(shape, result.mask());
  out.threshold = kMaskThreshold;
  out.provenance = Provenance::Decoded;
  out.quality = result.quality;
  return out;
}

std::uint64_t PromptSession::accept_mask(LabelMap& labels, SegmentId segment, const MaskSlice& mask, WriteMode mode) const {
  const SliceShape expected = slice_shape(labels.dims(), mask.axis);
  if (!(mask.mask.shape == expected)) {
    throw Error(ErrorCode::ShapeMismatch, "mask shape does not match the slice cross-section",
                {{"expected", {expected.rows, expected.cols}}, {"actual", {mask.mask.shape.rows, mask.mask.shape.cols}}});
  }
  LabelMap::Edit edit = labels.begin_edit();
  edit.replace(segment, mask.axis, mask.index, mask.mask, mode);
  edit.set_keyframe(segment, mask.axis, mask.index, mask.provenance == Provenance::Interpolated ? Provenance::Decoded
                                                                                               : mask.provenance);
  return edit.commit();
}

}  // namespace voxelsam
