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
#include <random>
#include <set>

#include "doctest.h"
#include "test_support.hpp"
#include "voxelsam/error.hpp"
#include "voxelsam/labelmap.hpp"
#include "voxelsam/volume_io.hpp"

using namespace voxelsam;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::ExecutionError;
}

std::vector<SegmentId> snapshot(const LabelMap& m) { return {m.voxels().begin(), m.voxels().end()}; }

}  // namespace

TEST_CASE("segment ids are fresh and never reused") {
  LabelMap m({4, 4, 4});
  CHECK(m.create_segment("a").id == 1);
  CHECK(m.create_segment("b").id == 2);
  m.delete_segment(1);
  CHECK(m.find_segment(1) == nullptr);
  CHECK(m.create_segment("c").id == 3);
  CHECK(code_of([&] { m.delete_segment(1); }) == ErrorCode::UnknownSegment);
  const auto& s = m.create_segment("d", Rgb{1, 2, 3}, SegmentTag::Instance);
  CHECK(s.color == Rgb{1, 2, 3});
  CHECK(s.tag == SegmentTag::Instance);
  CHECK(SegmentMeta::from_json(s.to_json()).to_json() == s.to_json());
  CHECK(m.segments().size() == 3);
}

TEST_CASE("write modes") {
  LabelMap m({16, 16, 3});
  const auto a = m.create_segment("a").id, b = m.create_segment("b").id;
  const auto disk = vtest::disk({16, 16}, 7, 7, 5);
  const auto shifted = vtest::disk({16, 16}, 7, 10, 5);
  m.write_mask(a, Axis::Z, 1, disk);
  CHECK(m.get_mask(a, Axis::Z, 1) == disk);
  CHECK(m.get_mask(a, Axis::Z, 0).empty());
  CHECK(m.get_mask(b, Axis::Z, 1).empty());

  SUBCASE("overwrite") {
    m.write_mask(b, Axis::Z, 1, shifted, WriteMode::Overwrite);
    for (std::int64_t r = 0; r < 16; ++r)
      for (std::int64_t c = 0; c < 16; ++c) {
        const SegmentId want = shifted.at(r, c) ? b : disk.at(r, c) ? a : 0;
        CHECK(m.label({c, r, 1}) == want);
      }
  }
  SUBCASE("preserve") {
    m.write_mask(b, Axis::Z, 1, shifted, WriteMode::Preserve);
    for (std::int64_t r = 0; r < 16; ++r)
      for (std::int64_t c = 0; c < 16; ++c) {
        const SegmentId want = disk.at(r, c) ? a : shifted.at(r, c) ? b : 0;
        CHECK(m.label({c, r, 1}) == want);
      }
  }
}

TEST_CASE("write errors leave the map unchanged") {
  LabelMap m({8, 6, 4});
  const auto a = m.create_segment("a").id;
  const auto g = m.generation();
  CHECK(code_of([&] { m.write_mask(a, Axis::Z, 0, Mask2D({8, 6})); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { m.write_mask(9, Axis::Z, 0, Mask2D({6, 8})); }) == ErrorCode::UnknownSegment);
  CHECK(code_of([&] { m.write_mask(a, Axis::Z, 4, Mask2D({6, 8})); }) == ErrorCode::IndexOutOfRange);
  CHECK(code_of([&] { m.get_mask(a, Axis::X, 8); }) == ErrorCode::IndexOutOfRange);
  CHECK(m.generation() == g);
  CHECK(m.undo_available() == 0);
}

TEST_CASE("slices along every axis land on the right voxels") {
  LabelMap m({5, 6, 7});
  const auto a = m.create_segment("a").id;
  std::mt19937_64 rng(1);
  for (Axis axis : {Axis::X, Axis::Y, Axis::Z}) {
    LabelMap fresh({5, 6, 7});
    fresh.create_segment("a");
    const auto shape = slice_shape(fresh.dims(), axis);
    const auto mask = vtest::random_mask(rng, shape, 0.4);
    fresh.write_mask(a, axis, 2, mask);
    for (std::int64_t r = 0; r < shape.rows; ++r)
      for (std::int64_t c = 0; c < shape.cols; ++c)
        CHECK(fresh.label(pixel_to_voxel(axis, 2, r, c)) == (mask.at(r, c) ? a : 0));
    CHECK(fresh.get_mask(a, axis, 2) == mask);
  }
}

TEST_CASE("undo") {
  LabelMap m({10, 10, 5});
  const auto a = m.create_segment("a").id;
  CHECK(code_of([&] { m.undo(); }) == ErrorCode::NothingToUndo);

  std::mt19937_64 rng(2);
  std::vector<std::vector<SegmentId>> states{snapshot(m)};
  std::vector<KeyframeRegistry> registries{m.keyframes()};
  for (int i = 0; i < 40; ++i) {
    m.write_mask(a, Axis::Z, i % 5, vtest::random_mask(rng, {10, 10}, 0.5),
                 i % 2 ? WriteMode::Overwrite : WriteMode::Preserve, Provenance::Decoded);
    states.push_back(snapshot(m));
    registries.push_back(m.keyframes());
  }
  CHECK(m.undo_available() == LabelMap::kUndoDepth);
  for (std::size_t k = 0; k < LabelMap::kUndoDepth; ++k) {
    m.undo();
    CHECK(snapshot(m) == states[states.size() - 2 - k]);
    CHECK(m.keyframes() == registries[registries.size() - 2 - k]);
  }
  CHECK(code_of([&] { m.undo(); }) == ErrorCode::NothingToUndo);
}

TEST_CASE("grouped edits commit as one generation") {
  LabelMap m({8, 8, 4});
  const auto a = m.create_segment("a").id;
  const auto g = m.generation();
  {
    auto edit = m.begin_edit();
    edit.write(a, Axis::Z, 0, vtest::disk({8, 8}, 3, 3, 2), WriteMode::Overwrite);
    edit.write(a, Axis::Z, 1, vtest::disk({8, 8}, 3, 3, 2), WriteMode::Overwrite);
    edit.set_keyframe(a, Axis::Z, 0, Provenance::Decoded);
    CHECK(edit.commit() == g + 1);
  }
  CHECK(m.undo_available() == 1);
  m.undo();
  CHECK(std::all_of(m.voxels().begin(), m.voxels().end(), [](SegmentId v) { return v == 0; }));
  CHECK(m.keyframes().anchors(a, Axis::Z).empty());
  {
    auto edit = m.begin_edit();
    edit.write(a, Axis::Z, 2, vtest::disk({8, 8}, 3, 3, 2), WriteMode::Overwrite);
    // dropped without commit
  }
  CHECK(std::all_of(m.voxels().begin(), m.voxels().end(), [](SegmentId v) { return v == 0; }));
}

TEST_CASE("deleting a segment clears its voxels and keyframes") {
  LabelMap m({6, 6, 2});
  const auto a = m.create_segment("a").id, b = m.create_segment("b").id;
  m.write_mask(a, Axis::Z, 0, vtest::disk({6, 6}, 2, 2, 2), WriteMode::Overwrite, Provenance::Decoded);
  m.write_mask(b, Axis::Z, 1, vtest::disk({6, 6}, 2, 2, 2), WriteMode::Overwrite, Provenance::Decoded);
  m.delete_segment(a);
  CHECK(std::none_of(m.voxels().begin(), m.voxels().end(), [&](SegmentId v) { return v == a; }));
  CHECK(m.keyframes().entries(a, Axis::Z).empty());
  CHECK(m.get_mask(b, Axis::Z, 1).count() > 0);
  CHECK(m.undo_available() == 0);
}

TEST_CASE("keyframe registry") {
  KeyframeRegistry r;
  r.set(1, Axis::Z, 20, Provenance::Decoded);
  r.set(1, Axis::Z, 0, Provenance::Imported);
  r.set(1, Axis::Z, 10, Provenance::Interpolated);
  r.set(1, Axis::Z, 0, Provenance::Decoded);
  r.set(2, Axis::X, 3, Provenance::Decoded);
  CHECK(r.entries(1, Axis::Z).size() == 3);
  CHECK(r.anchors(1, Axis::Z) == std::vector<std::int64_t>{0, 20});
  CHECK(r.entries(1, Axis::Y).empty());
  CHECK(KeyframeRegistry::from_json(r.to_json()) == r);
  r.erase(1, Axis::Z, 10);
  CHECK(r.entries(1, Axis::Z).size() == 2);
  r.erase_segment(1);
  CHECK(r.entries(1, Axis::Z).empty());
  CHECK(r.anchors(2, Axis::X) == std::vector<std::int64_t>{3});
}

TEST_CASE("export and import round trip in every format") {
  vtest::TempDir tmp;
  LabelMap m({7, 5, 6}, Spacing{0.5, 1.0, 2.0});
  const auto a = m.create_segment("pore", Rgb{10, 20, 30}).id;
  const auto b = m.create_segment("fiber", std::nullopt, SegmentTag::Instance).id;
  std::mt19937_64 rng(3);
  for (std::int64_t z = 0; z < 6; ++z)
    m.write_mask(z % 2 ? a : b, Axis::Z, z, vtest::random_mask(rng, {5, 7}, 0.5), WriteMode::Overwrite,
                 Provenance::Decoded);
  const std::vector<std::pair<VolumeFormat, std::string>> formats = {
      {VolumeFormat::TiffStack, "l.tiff"}, {VolumeFormat::Nrrd, "l.nrrd"}, {VolumeFormat::RawJson, "l.raw"}};
  for (const auto& [format, name] : formats) {
    CAPTURE(name);
    export_labelmap(m, tmp / name, format);
    CHECK(fs::exists(segments_sidecar_path(tmp / name)));
    const LabelMap back = import_labelmap(tmp / name);
    CHECK(back.dims() == m.dims());
    CHECK(snapshot(back) == snapshot(m));
    CHECK(back.keyframes() == m.keyframes());
    REQUIRE(back.segments().size() == 2);
    CHECK(back.segments().at(a).to_json() == m.segments().at(a).to_json());
    CHECK(back.segments().at(b).to_json() == m.segments().at(b).to_json());
    CHECK(back.undo_available() == 0);
    if (format != VolumeFormat::TiffStack) CHECK(back.spacing() == m.spacing());
  }
  CHECK(segments_sidecar_path(tmp / "l.nrrd") == tmp / "l.segments.json");
}

TEST_CASE("empty map exports zeros") {
  vtest::TempDir tmp;
  LabelMap m({4, 5, 6});
  export_labelmap(m, tmp / "e.raw", VolumeFormat::RawJson);
  const auto bytes = vtest::read_file(tmp / "e.raw");
  CHECK(bytes.size() == 4u * 5u * 6u * 2u);
  CHECK(std::all_of(bytes.begin(), bytes.end(), [](char c) { return c == 0; }));
  export_labelmap(m, tmp / "e.nrrd", VolumeFormat::Nrrd);
  CHECK(vtest::read_file(tmp / "e.nrrd").find("sizes: 4 5 6") != std::string::npos);
}

TEST_CASE("import without a sidecar invents segments") {
  vtest::TempDir tmp;
  std::vector<std::uint8_t> data(3 * 3 * 2, 0);
  data[0] = 4;
  data[5] = 2;
  data[17] = 4;
  vtest::write_raw(tmp / "u8.raw", {3, 3, 2}, data, "uint8");
  const LabelMap m = import_labelmap(tmp / "u8.raw");
  CHECK(m.segments().size() == 2);
  CHECK(m.find_segment(2) != nullptr);
  CHECK(m.find_segment(4) != nullptr);
  CHECK(m.label({0, 0, 0}) == 4);
  CHECK(m.label({2, 2, 1}) == 4);
  LabelMap copy = m;
  CHECK(copy.create_segment("next").id == 5);

  std::vector<float> f(8, 1.0f);
  vtest::write_raw(tmp / "f.raw", {2, 2, 2}, f, "float32");
  CHECK(code_of([&] { import_labelmap(tmp / "f.raw"); }) == ErrorCode::UnsupportedFormat);
}

TEST_CASE("random operation sequences keep labels consistent") {
  std::mt19937_64 rng(4);
  for (int run = 0; run < 20; ++run) {
    LabelMap m({6, 5, 4});
    std::uniform_int_distribution<int> op(0, 5);
    for (int step = 0; step < 60; ++step) {
      const auto& segs = m.segments();
      switch (op(rng)) {
        case 0:
          m.create_segment("s");
          break;
        case 1:
          if (!segs.empty()) m.delete_segment(std::next(segs.begin(), rng() % segs.size())->first);
          break;
        case 2:
        case 3: {
          if (segs.empty()) break;
          const auto id = std::next(segs.begin(), rng() % segs.size())->first;
          const Axis axis = static_cast<Axis>(rng() % 3);
          const auto shape = slice_shape(m.dims(), axis);
          m.write_mask(id, axis, static_cast<std::int64_t>(rng() % m.dims().extent(axis)),
                       vtest::random_mask(rng, shape, 0.3), rng() % 2 ? WriteMode::Overwrite : WriteMode::Preserve);
          break;
        }
        default:
          if (m.undo_available()) m.undo();
      }
      std::set<SegmentId> ids;
      for (const auto& [id, meta] : m.segments()) ids.insert(id);
      for (SegmentId v : m.voxels()) CHECK((v == 0 || ids.count(v) == 1));
    }
  }
}
