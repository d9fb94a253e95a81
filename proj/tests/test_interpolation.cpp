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
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "test_support.hpp"
#include "voxelsam/error.hpp"
#include "voxelsam/interpolation.hpp"

using namespace voxelsam;

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

bool subset(const Mask2D& a, const Mask2D& b) {
  for (std::size_t i = 0; i < a.bits.size(); ++i)
    if (a.bits[i] && !b.bits[i]) return false;
  return true;
}

Mask2D nonempty_random(std::mt19937_64& rng, SliceShape shape, double p) {
  Mask2D m = vtest::random_mask(rng, shape, p);
  if (m.empty()) m.bits[rng() % m.bits.size()] = 1;
  return m;
}

}  // namespace

TEST_CASE("signed distance examples") {
  Mask2D dot({12, 12});
  dot.at(5, 5) = 1;
  const auto f = signed_distance(dot);
  CHECK(f[5 * 12 + 8] == 3.0);
  CHECK(f[5 * 12 + 5] == -1.0);
  CHECK(f[9 * 12 + 8] == 5.0);

  Mask2D full({4, 6});
  std::fill(full.bits.begin(), full.bits.end(), 1);
  for (double v : signed_distance(full)) CHECK(v <= 0.0);
  for (double v : signed_distance(Mask2D({4, 6}))) CHECK(v == std::numeric_limits<double>::infinity());
}

TEST_CASE("signed distance matches a brute force scan") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Mask2D m = vtest::random_mask(rng, {16, 16}, trial % 2 ? 0.1 : 0.6);
    const auto fast = signed_distance(m), slow = vtest::brute_signed_distance(m);
    for (std::size_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-12));
  }
  const Mask2D wide = vtest::random_mask(rng, {9, 23}, 0.2);
  const auto fast = signed_distance(wide), slow = vtest::brute_signed_distance(wide);
  for (std::size_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-12));
}

TEST_CASE("pair interpolation") {
  std::mt19937_64 rng(2);
  SUBCASE("identical masks") {
    const Mask2D m = nonempty_random(rng, {16, 16}, 0.4);
    for (double t : {0.1, 0.5, 0.9}) CHECK(interpolate_pair(m, m, t) == m);
  }
  SUBCASE("concentric disks") {
    const auto out = interpolate_pair(vtest::disk({33, 33}, 16, 16, 4), vtest::disk({33, 33}, 16, 16, 8), 0.5);
    for (std::int64_t r = 0; r < 33; ++r)
      for (std::int64_t c = 0; c < 33; ++c) {
        const double d = std::hypot(double(r - 16), double(c - 16));
        if (d <= 5.0) CHECK(out.at(r, c) == 1);
        if (d >= 7.0) CHECK(out.at(r, c) == 0);
      }
  }
  SUBCASE("oracle equivalence") {
    for (int trial = 0; trial < 40; ++trial) {
      const Mask2D a = nonempty_random(rng, {16, 16}, 0.3), b = nonempty_random(rng, {16, 16}, 0.3);
      const double t = std::uniform_real_distribution<double>(0.01, 0.99)(rng);
      CHECK(interpolate_pair(a, b, t) == vtest::brute_interpolate(a, b, t));
    }
  }
  SUBCASE("extreme t reproduces the endpoints") {
    for (int trial = 0; trial < 20; ++trial) {
      const Mask2D a = nonempty_random(rng, {16, 16}, 0.4), b = nonempty_random(rng, {16, 16}, 0.4);
      CHECK(interpolate_pair(a, b, 0.001) == a);
      CHECK(interpolate_pair(a, b, 0.999) == b);
    }
  }
  SUBCASE("nesting is monotone in t") {
    for (int trial = 0; trial < 20; ++trial) {
      const Mask2D inner = nonempty_random(rng, {16, 16}, 0.2);
      Mask2D outer = vtest::random_mask(rng, {16, 16}, 0.3);
      for (std::size_t i = 0; i < outer.bits.size(); ++i) outer.bits[i] |= inner.bits[i];
      Mask2D prev = interpolate_pair(inner, outer, 0.05);
      for (double t = 0.1; t < 0.96; t += 0.05) {
        const Mask2D next = interpolate_pair(inner, outer, t);
        CHECK(subset(prev, next));
        prev = next;
      }
    }
  }
  SUBCASE("errors") {
    const Mask2D a = nonempty_random(rng, {8, 8}, 0.5);
    CHECK(code_of([&] { interpolate_pair(a, Mask2D({8, 8}), 0.5); }) == ErrorCode::EmptyKeyframe);
    CHECK(code_of([&] { interpolate_pair(a, nonempty_random(rng, {8, 9}, 0.5), 0.5); }) == ErrorCode::ShapeMismatch);
    CHECK(code_of([&] { interpolate_pair(a, a, 0.0); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([&] { interpolate_pair(a, a, 1.0); }) == ErrorCode::InvalidArgument);
  }
}

TEST_CASE("fill between keyframes") {
  LabelMap m({20, 18, 30});
  const auto a = m.create_segment("a").id;
  const auto k0 = vtest::disk({18, 20}, 8, 8, 3), k20 = vtest::disk({18, 20}, 9, 11, 6);
  m.write_mask(a, Axis::Z, 2, k0, WriteMode::Overwrite, Provenance::Decoded);
  m.write_mask(a, Axis::Z, 22, k20, WriteMode::Overwrite, Provenance::Decoded);
  const auto before = snapshot(m);

  const auto plan = plan_fill(m, a, Axis::Z);
  REQUIRE(plan.pairs.size() == 1);
  CHECK(plan.pairs[0] == std::pair<std::int64_t, std::int64_t>{2, 22});
  CHECK(plan.slice_count() == 19);

  const FillResult res = fill_between(m, a, Axis::Z, WriteMode::Overwrite, 3);
  CHECK(res.slices_written == 19);
  CHECK(m.undo_available() == 3);
  for (std::int64_t k = 3; k < 22; ++k)
    CHECK(m.get_mask(a, Axis::Z, k) == vtest::brute_interpolate(k0, k20, double(k - 2) / 20.0));
  CHECK(m.get_mask(a, Axis::Z, 2) == k0);
  CHECK(m.get_mask(a, Axis::Z, 22) == k20);
  for (std::int64_t k : {0, 1, 23, 29}) CHECK(m.get_mask(a, Axis::Z, k).empty());
  CHECK(m.keyframes().entries(a, Axis::Z).size() == 21);
  CHECK(m.keyframes().entries(a, Axis::Z).at(12) == Provenance::Interpolated);
  CHECK(m.keyframes().anchors(a, Axis::Z) == std::vector<std::int64_t>{2, 22});

  const auto once = snapshot(m);
  fill_between(m, a, Axis::Z);
  CHECK(snapshot(m) == once);

  m.undo();
  m.undo();
  CHECK(snapshot(m) == before);
  CHECK(m.keyframes().entries(a, Axis::Z).size() == 2);
}

TEST_CASE("adjacent identical keyframes") {
  LabelMap m({8, 8, 3});
  const auto a = m.create_segment("a").id;
  const auto d = vtest::disk({8, 8}, 3, 4, 2);
  m.write_mask(a, Axis::Z, 0, d, WriteMode::Overwrite, Provenance::Decoded);
  m.write_mask(a, Axis::Z, 2, d, WriteMode::Overwrite, Provenance::Decoded);
  CHECK(fill_between(m, a, Axis::Z).slices_written == 1);
  CHECK(m.get_mask(a, Axis::Z, 1) == d);
}

TEST_CASE("fill errors leave the map untouched") {
  LabelMap m({8, 8, 10});
  const auto a = m.create_segment("a").id;
  m.write_mask(a, Axis::Z, 3, vtest::disk({8, 8}, 3, 3, 2), WriteMode::Overwrite, Provenance::Decoded);
  const auto before = snapshot(m);
  const auto g = m.generation();
  CHECK(code_of([&] { fill_between(m, a, Axis::Z); }) == ErrorCode::TooFewKeyframes);
  CHECK(code_of([&] { fill_between(m, 7, Axis::Z); }) == ErrorCode::UnknownSegment);
  CHECK(snapshot(m) == before);
  CHECK(m.generation() == g);
  // A registered keyframe whose voxels were since taken by another segment.
  const auto b = m.create_segment("b").id;
  m.write_mask(a, Axis::Z, 8, vtest::disk({8, 8}, 3, 3, 1), WriteMode::Overwrite, Provenance::Decoded);
  m.write_mask(b, Axis::Z, 8, vtest::disk({8, 8}, 3, 3, 3), WriteMode::Overwrite);
  const auto mid = snapshot(m);
  const auto g2 = m.generation();
  CHECK(code_of([&] { fill_between(m, a, Axis::Z); }) == ErrorCode::EmptyKeyframe);
  CHECK(snapshot(m) == mid);
  CHECK(m.generation() == g2);
}

TEST_CASE("multiple pairs and other axes") {
  LabelMap m({12, 30, 10});
  const auto a = m.create_segment("a").id;
  const SliceShape s = slice_shape(m.dims(), Axis::Y);
  std::mt19937_64 rng(3);
  std::vector<std::int64_t> keys = {1, 9, 10, 25};
  std::map<std::int64_t, Mask2D> masks;
  for (auto k : keys) {
    masks[k] = vtest::disk(s, 4 + double(rng() % 3), 5 + double(rng() % 3), 2 + double(rng() % 3));
    m.write_mask(a, Axis::Y, k, masks[k], WriteMode::Overwrite, Provenance::Decoded);
  }
  const auto res = fill_between(m, a, Axis::Y);
  CHECK(res.plan.pairs.size() == 3);
  CHECK(res.slices_written == 7 + 0 + 14);
  for (std::size_t p = 0; p + 1 < keys.size(); ++p)
    for (auto k = keys[p] + 1; k < keys[p + 1]; ++k)
      CHECK(m.get_mask(a, Axis::Y, k) ==
            vtest::brute_interpolate(masks[keys[p]], masks[keys[p + 1]],
                                     double(k - keys[p]) / double(keys[p + 1] - keys[p])));
  CHECK(m.get_mask(a, Axis::Y, 0).empty());
  CHECK(m.get_mask(a, Axis::Y, 29).empty());
}

TEST_CASE("preserve mode keeps other segments") {
  LabelMap m({10, 10, 5});
  const auto a = m.create_segment("a").id, b = m.create_segment("b").id;
  const auto d = vtest::disk({10, 10}, 5, 5, 3);
  m.write_mask(a, Axis::Z, 0, d, WriteMode::Overwrite, Provenance::Decoded);
  m.write_mask(a, Axis::Z, 4, d, WriteMode::Overwrite, Provenance::Decoded);
  m.write_mask(b, Axis::Z, 2, vtest::disk({10, 10}, 5, 5, 1));
  fill_between(m, a, Axis::Z, WriteMode::Preserve);
  CHECK(m.label({5, 5, 2}) == b);
  CHECK(m.label({5, 3, 2}) == a);
  fill_between(m, a, Axis::Z, WriteMode::Overwrite);
  CHECK(m.label({5, 5, 2}) == a);
}

TEST_CASE("keyframes can be inferred") {
  LabelMap m({6, 6, 8});
  const auto a = m.create_segment("a").id;
  auto edit = m.begin_edit();
  edit.write(a, Axis::Z, 1, vtest::disk({6, 6}, 2, 2, 1), WriteMode::Overwrite);
  edit.write(a, Axis::Z, 6, vtest::disk({6, 6}, 3, 3, 2), WriteMode::Overwrite);
  edit.commit();
  CHECK(infer_keyframes(m, a, Axis::Z) == 2);
  CHECK(m.keyframes().entries(a, Axis::Z).at(6) == Provenance::Imported);
  CHECK(fill_between(m, a, Axis::Z).slices_written == 4);
}
