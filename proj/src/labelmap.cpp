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
#include "voxelsam/labelmap.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>

#include "voxelsam/error.hpp"

namespace voxelsam {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr Rgb kPalette[] = {{230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},  {245, 130, 48},
                            {145, 30, 180}, {70, 240, 240}, {240, 50, 230}, {210, 245, 60}, {250, 190, 212}};

std::string now_iso() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string axis_name(Axis a) { return std::string(1, axis_letter(a)); }

}  // namespace

std::string_view to_string(WriteMode mode) noexcept { return mode == WriteMode::Overwrite ? "overwrite" : "preserve"; }

std::optional<WriteMode> parse_write_mode(std::string_view text) noexcept {
  if (text == "overwrite") return WriteMode::Overwrite;
  if (text == "preserve") return WriteMode::Preserve;
  return std::nullopt;
}

std::string_view to_string(SegmentTag tag) noexcept { return tag == SegmentTag::Instance ? "instance" : "semantic"; }

std::optional<SegmentTag> parse_segment_tag(std::string_view text) noexcept {
  if (text == "instance") return SegmentTag::Instance;
  if (text == "semantic") return SegmentTag::Semantic;
  return std::nullopt;
}

json SegmentMeta::to_json() const {
  return {{"id", id}, {"name", name}, {"color", color}, {"tag", std::string(voxelsam::to_string(tag))}, {"created", created}};
}

SegmentMeta SegmentMeta::from_json(const json& j) {
  SegmentMeta m;
  m.id = j.at("id").get<SegmentId>();
  m.name = j.at("name").get<std::string>();
  m.color = j.at("color").get<Rgb>();
  auto tag = parse_segment_tag(j.value("tag", "semantic"));
  if (!tag) throw Error(ErrorCode::InvalidArgument, "unknown segment tag");
  m.tag = *tag;
  m.created = j.value("created", "");
  return m;
}

// ------------------------------------------------------------ KeyframeRegistry

void KeyframeRegistry::set(SegmentId segment, Axis axis, std::int64_t index, Provenance provenance) {
  map_[{segment, axis}][index] = provenance;
}

void KeyframeRegistry::erase(SegmentId segment, Axis axis, std::int64_t index) {
  auto it = map_.find({segment, axis});
  if (it == map_.end()) return;
  it->second.erase(index);
  if (it->second.empty()) map_.erase(it);
}

void KeyframeRegistry::erase_segment(SegmentId segment) {
  std::erase_if(map_, [segment](const auto& kv) { return kv.first.first == segment; });
}

const KeyframeRegistry::Entries& KeyframeRegistry::entries(SegmentId segment, Axis axis) const {
  static const Entries kEmpty;
  auto it = map_.find({segment, axis});
  return it == map_.end() ? kEmpty : it->second;
}

std::vector<std::int64_t> KeyframeRegistry::anchors(SegmentId segment, Axis axis) const {
  std::vector<std::int64_t> out;
  for (const auto& [index, prov] : entries(segment, axis)) {
    if (prov != Provenance::Interpolated) out.push_back(index);
  }
  return out;
}

json KeyframeRegistry::to_json() const {
  json out = json::array();
  for (const auto& [key, entries] : map_) {
    json slices = json::array();
    for (const auto& [index, prov] : entries) slices.push_back({{"index", index}, {"provenance", std::string(to_string(prov))}});
    out.push_back({{"segment", key.first}, {"axis", axis_name(key.second)}, {"slices", slices}});
  }
  return out;
}

KeyframeRegistry KeyframeRegistry::from_json(const json& j) {
  KeyframeRegistry r;
  for (const auto& group : j) {
    const auto segment = group.at("segment").get<SegmentId>();
    auto axis = parse_axis(group.at("axis").get<std::string>());
    if (!axis) throw Error(ErrorCode::InvalidArgument, "bad axis in keyframe registry");
    for (const auto& s : group.at("slices")) {
      auto prov = parse_provenance(s.at("provenance").get<std::string>());
      if (!prov) throw Error(ErrorCode::InvalidArgument, "bad provenance in keyframe registry");
      r.set(segment, *axis, s.at("index").get<std::int64_t>(), *prov);
    }
  }
  return r;
}

// -------------------------------------------------------------------- LabelMap

LabelMap::LabelMap(Dims dims, Spacing spacing)
    : dims_(dims), spacing_(spacing), voxels_(static_cast<std::size_t>(dims.voxel_count()), 0) {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) throw Error(ErrorCode::DimensionMismatch, "label map dims must be positive");
}

SegmentId LabelMap::label(const VoxelCoord& v) const {
  if (!dims_.contains(v.x, v.y, v.z)) throw Error(ErrorCode::IndexOutOfRange, "voxel outside label map");
  return voxels_[offset(v)];
}

const SegmentMeta& LabelMap::create_segment(std::string name, std::optional<Rgb> color, SegmentTag tag) {
  if (name.empty()) throw Error(ErrorCode::InvalidArgument, "segment name must not be empty");
  if (next_id_ == 0xFFFF) throw Error(ErrorCode::InvalidArgument, "segment ids exhausted");
  SegmentMeta m;
  m.id = next_id_++;
  m.name = std::move(name);
  m.color = color ? *color : kPalette[(m.id - 1) % std::size(kPalette)];
  m.tag = tag;
  m.created = now_iso();
  return segments_.emplace(m.id, std::move(m)).first->second;
}

void LabelMap::add_segment(SegmentMeta meta) {
  if (meta.id == 0) throw Error(ErrorCode::InvalidArgument, "segment id 0 is reserved for background");
  next_id_ = std::max<SegmentId>(next_id_, static_cast<SegmentId>(meta.id + 1));
  segments_[meta.id] = std::move(meta);
}

void LabelMap::delete_segment(SegmentId id) {
  if (!segments_.count(id)) throw Error(ErrorCode::UnknownSegment, "unknown segment " + std::to_string(id), {{"segment", id}});
  std::replace(voxels_.begin(), voxels_.end(), id, SegmentId{0});
  segments_.erase(id);
  registry_.erase_segment(id);
  history_.clear();
  ++generation_;
}

const SegmentMeta* LabelMap::find_segment(SegmentId id) const noexcept {
  auto it = segments_.find(id);
  return it == segments_.end() ? nullptr : &it->second;
}

std::uint64_t LabelMap::write_mask(SegmentId segment, Axis axis, std::int64_t index, const Mask2D& mask, WriteMode mode,
                                   std::optional<Provenance> keyframe) {
  Edit edit(*this);
  edit.write(segment, axis, index, mask, mode);
  if (keyframe) edit.set_keyframe(segment, axis, index, *keyframe);
  return edit.commit();
}

Mask2D LabelMap::get_mask(SegmentId segment, Axis axis, std::int64_t index) const {
  const auto labels = get_labels(axis, index);
  Mask2D m(slice_shape(dims_, axis));
  std::transform(labels.begin(), labels.end(), m.bits.begin(), [segment](SegmentId v) { return v == segment ? 1 : 0; });
  return m;
}

std::vector<SegmentId> LabelMap::get_labels(Axis axis, std::int64_t index) const {
  if (index < 0 || index >= dims_.extent(axis)) {
    throw Error(ErrorCode::IndexOutOfRange, "slice index outside axis extent",
                {{"axis", axis_name(axis)}, {"index", index}, {"extent", dims_.extent(axis)}});
  }
  const SliceShape shape = slice_shape(dims_, axis);
  std::vector<SegmentId> out(static_cast<std::size_t>(shape.pixel_count()));
  for (std::int64_t r = 0; r < shape.rows; ++r)
    for (std::int64_t c = 0; c < shape.cols; ++c)
      out[static_cast<std::size_t>(r * shape.cols + c)] = voxels_[offset(pixel_to_voxel(axis, index, r, c))];
  return out;
}

std::uint64_t LabelMap::undo() {
  if (history_.empty()) throw Error(ErrorCode::NothingToUndo, "no edits to undo");
  UndoRecord rec = std::move(history_.back());
  history_.pop_back();
  for (auto it = rec.diff.rbegin(); it != rec.diff.rend(); ++it) voxels_[it->first] = it->second;
  registry_ = std::move(rec.registry);
  return ++generation_;
}

// ------------------------------------------------------------------------ Edit

LabelMap::Edit::Edit(LabelMap& map) : map_(&map), registry_before_(map.registry_) {}

LabelMap::Edit::Edit(Edit&& other) noexcept
    : map_(other.map_),
      diff_(std::move(other.diff_)),
      registry_before_(std::move(other.registry_before_)),
      registry_touched_(other.registry_touched_),
      open_(other.open_) {
  other.open_ = false;
}

LabelMap::Edit::~Edit() {
  if (!open_) return;
  for (auto it = diff_.rbegin(); it != diff_.rend(); ++it) map_->voxels_[it->first] = it->second;
  if (registry_touched_) map_->registry_ = std::move(registry_before_);
}

void LabelMap::Edit::check(SegmentId segment, Axis axis, std::int64_t index, const Mask2D& mask) const {
  if (!open_) throw Error(ErrorCode::InvalidArgument, "edit already committed");
  if (!map_->segments_.count(segment)) {
    throw Error(ErrorCode::UnknownSegment, "unknown segment " + std::to_string(segment), {{"segment", segment}});
  }
  if (index < 0 || index >= map_->dims_.extent(axis)) {
    throw Error(ErrorCode::IndexOutOfRange, "slice index outside axis extent",
                {{"axis", axis_name(axis)}, {"index", index}, {"extent", map_->dims_.extent(axis)}});
  }
  const SliceShape expected = slice_shape(map_->dims_, axis);
  if (!(mask.shape == expected) || static_cast<std::int64_t>(mask.bits.size()) != expected.pixel_count()) {
    throw Error(ErrorCode::ShapeMismatch, "mask shape does not match the slice cross-section",
                {{"expected", {expected.rows, expected.cols}}, {"actual", {mask.shape.rows, mask.shape.cols}}});
  }
}

void LabelMap::Edit::set_voxel(std::size_t off, SegmentId value) {
  SegmentId& v = map_->voxels_[off];
  if (v == value) return;
  diff_.emplace_back(off, v);
  v = value;
}

void LabelMap::Edit::write(SegmentId segment, Axis axis, std::int64_t index, const Mask2D& mask, WriteMode mode) {
  check(segment, axis, index, mask);
  for (std::int64_t r = 0; r < mask.shape.rows; ++r) {
    for (std::int64_t c = 0; c < mask.shape.cols; ++c) {
      if (!mask.at(r, c)) continue;
      const auto off = map_->offset(pixel_to_voxel(axis, index, r, c));
      if (mode == WriteMode::Preserve && map_->voxels_[off] != 0) continue;
      set_voxel(off, segment);
    }
  }
}

void LabelMap::Edit::replace(SegmentId segment, Axis axis, std::int64_t index, const Mask2D& mask, WriteMode mode) {
  check(segment, axis, index, mask);
  for (std::int64_t r = 0; r < mask.shape.rows; ++r) {
    for (std::int64_t c = 0; c < mask.shape.cols; ++c) {
      const auto off = map_->offset(pixel_to_voxel(axis, index, r, c));
      if (!mask.at(r, c) && map_->voxels_[off] == segment) set_voxel(off, 0);
    }
  }
  write(segment, axis, index, mask, mode);
}

void LabelMap::Edit::set_keyframe(SegmentId segment, Axis axis, std::int64_t index, Provenance provenance) {
  registry_touched_ = true;
  map_->registry_.set(segment, axis, index, provenance);
}

void LabelMap::Edit::erase_keyframe(SegmentId segment, Axis axis, std::int64_t index) {
  registry_touched_ = true;
  map_->registry_.erase(segment, axis, index);
}

std::uint64_t LabelMap::Edit::commit() {
  if (!open_) throw Error(ErrorCode::InvalidArgument, "edit already committed");
  open_ = false;
  map_->history_.push_back({std::move(diff_), std::move(registry_before_)});
  while (map_->history_.size() > kUndoDepth) map_->history_.pop_front();
  return ++map_->generation_;
}

// ---------------------------------------------------------------- export/import

fs::path segments_sidecar_path(const fs::path& labels) {
  fs::path p = labels;
  p.replace_extension(".segments.json");
  return p;
}

void export_labelmap(const LabelMap& map, const fs::path& path, VolumeFormat format) {
  std::vector<std::uint16_t> data(map.voxels().begin(), map.voxels().end());
  Volume3D vol(map.dims(), map.spacing(), std::move(data));
  save_volume(vol, path, format);
  json segments = json::array();
  for (const auto& [id, meta] : map.segments()) segments.push_back(meta.to_json());
  const json sidecar = {{"segments", segments}, {"keyframes", map.keyframes().to_json()}};
  const auto side = segments_sidecar_path(path);
  std::ofstream out(side);
  out << sidecar.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::DiskFull, side.string() + ": write failed", {{"path", side.string()}});
}

LabelMap import_labelmap(const fs::path& path, std::optional<VolumeFormat> format) {
  const Volume3D vol = load_volume(path, format);
  LabelMap map(vol.dims(), vol.spacing());
  std::vector<SegmentId> voxels;
  if (const auto* v16 = std::get_if<std::vector<std::uint16_t>>(&vol.storage())) {
    voxels = *v16;
  } else if (const auto* v8 = std::get_if<std::vector<std::uint8_t>>(&vol.storage())) {
    voxels.assign(v8->begin(), v8->end());
  } else {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": label maps must be uint8 or uint16");
  }

  std::set<SegmentId> present(voxels.begin(), voxels.end());
  present.erase(0);
  KeyframeRegistry registry;
  const auto side = segments_sidecar_path(path);
  if (std::ifstream in(side); in) {
    try {
      json j;
      in >> j;
      for (const auto& s : j.at("segments")) map.add_segment(SegmentMeta::from_json(s));
      if (j.contains("keyframes")) registry = KeyframeRegistry::from_json(j["keyframes"]);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::UnsupportedFormat, side.string() + ": " + e.what(), {{"path", side.string()}});
    }
  }
  for (SegmentId id : present) {
    if (!map.find_segment(id)) {
      SegmentMeta m;
      m.id = id;
      m.name = "segment " + std::to_string(id);
      m.color = kPalette[(id - 1) % std::size(kPalette)];
      map.add_segment(std::move(m));
    }
  }
  // Imported state is the baseline: no undo record.
  map.voxels_ = std::move(voxels);
  map.registry_ = std::move(registry);
  return map;
}

}  // namespace voxelsam
