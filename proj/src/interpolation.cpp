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
#include "voxelsam/interpolation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "voxelsam/error.hpp"

namespace voxelsam {
using nlohmann::json;

namespace {

constexpr double kFar = 1e20;
constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared distance transform of a sampled function (lower envelope of parabolas).
void edt_1d(const double* f, double* d, std::int64_t n, std::vector<std::int64_t>& v, std::vector<double>& z) {
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n + 1));
  std::int64_t k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (std::int64_t q = 1; q < n; ++q) {
    double s = 0.0;
    for (;;) {
      const std::int64_t p = v[k];
      s = ((f[q] + double(q * q)) - (f[p] + double(p * p))) / double(2 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[k + 1] < double(q)) ++k;
    const double dq = double(q - v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

// Squared distance from every pixel to the nearest pixel where `target` holds.
std::vector<double> squared_distance_to(const Mask2D& mask, std::uint8_t target) {
  const auto rows = mask.shape.rows, cols = mask.shape.cols;
  std::vector<double> grid(mask.bits.size());
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = (mask.bits[i] != 0) == (target != 0) ? 0.0 : kFar;

  std::vector<std::int64_t> v;
  std::vector<double> z, f(static_cast<std::size_t>(std::max(rows, cols))), d(f.size());
  for (std::int64_t c = 0; c < cols; ++c) {
    for (std::int64_t r = 0; r < rows; ++r) f[r] = grid[r * cols + c];
    edt_1d(f.data(), d.data(), rows, v, z);
    for (std::int64_t r = 0; r < rows; ++r) grid[r * cols + c] = d[r];
  }
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = grid.data() + r * cols;
    std::copy(row, row + cols, f.begin());
    edt_1d(f.data(), row, cols, v, z);
  }
  return grid;
}

}  // namespace

std::vector<double> signed_distance(const Mask2D& mask) {
  const std::int64_t fg = mask.count();
  const auto n = mask.bits.size();
  if (fg == 0) return std::vector<double>(n, kInf);
  if (fg == static_cast<std::int64_t>(n)) return std::vector<double>(n, -kInf);
  const auto to_fg = squared_distance_to(mask, 1);
  const auto to_bg = squared_distance_to(mask, 0);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = mask.bits[i] ? -std::sqrt(to_bg[i]) : std::sqrt(to_fg[i]);
  return out;
}

Mask2D blend_fields(const std::vector<double>& a, const std::vector<double>& b, SliceShape shape, double t) {
  Mask2D out(shape);
  for (std::size_t i = 0; i < out.bits.size(); ++i) {
    // Infinite fields only occur for full masks here (empty masks are rejected earlier).
    double v;
    if (std::isinf(a[i]) || std::isinf(b[i])) {
      v = std::isinf(a[i]) && std::isinf(b[i]) && (a[i] > 0) != (b[i] > 0) ? 0.0
          : std::isinf(a[i]) ? a[i]
                             : b[i];
    } else {
      v = (1.0 - t) * a[i] + t * b[i];
    }
    out.bits[i] = v < 0.0 ? 1 : 0;
  }
  return out;
}

Mask2D interpolate_pair(const Mask2D& first, const Mask2D& second, double t) {
  if (!(first.shape == second.shape)) {
    throw Error(ErrorCode::ShapeMismatch, "keyframe masks differ in shape");
  }
  if (first.empty() || second.empty()) throw Error(ErrorCode::EmptyKeyframe, "keyframe mask is empty");
  if (!(t > 0.0 && t < 1.0)) throw Error(ErrorCode::InvalidArgument, "t must lie in (0, 1)", {{"t", t}});
  return blend_fields(signed_distance(first), signed_distance(second), first.shape, t);
}

std::int64_t InterpolationPlan::slice_count() const noexcept {
  std::int64_t n = 0;
  for (const auto& b : between) n += static_cast<std::int64_t>(b.size());
  return n;
}

json InterpolationPlan::to_json() const {
  json p = json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    p.push_back({{"from", pairs[i].first}, {"to", pairs[i].second}, {"slices", between[i]}});
  }
  return {{"segment", segment},
          {"axis", std::string(1, axis_letter(axis))},
          {"mode", std::string(to_string(mode))},
          {"pairs", p},
          {"slices_written", slice_count()}};
}

InterpolationPlan plan_fill(const LabelMap& labels, SegmentId segment, Axis axis, WriteMode mode) {
  if (!labels.find_segment(segment)) {
    throw Error(ErrorCode::UnknownSegment, "unknown segment " + std::to_string(segment), {{"segment", segment}});
  }
  const auto anchors = labels.keyframes().anchors(segment, axis);
  if (anchors.size() < 2) {
    throw Error(ErrorCode::TooFewKeyframes, "at least two keyframes are needed",
                {{"segment", segment}, {"axis", std::string(1, axis_letter(axis))}, {"keyframes", anchors.size()}});
  }
  InterpolationPlan plan{segment, axis, mode, {}, {}};
  for (std::size_t i = 0; i + 1 < anchors.size(); ++i) {
    plan.pairs.emplace_back(anchors[i], anchors[i + 1]);
    std::vector<std::int64_t> ks;
    for (std::int64_t k = anchors[i] + 1; k < anchors[i + 1]; ++k) ks.push_back(k);
    plan.between.push_back(std::move(ks));
  }
  return plan;
}

FillResult fill_between(LabelMap& labels, SegmentId segment, Axis axis, WriteMode mode, unsigned workers) {
  FillResult result{plan_fill(labels, segment, axis, mode), 0, 0};
  const InterpolationPlan& plan = result.plan;
  const std::size_t npairs = plan.pairs.size();

  // Validate every keyframe before any work so a failure leaves the map untouched.
  std::vector<Mask2D> keys;
  keys.reserve(npairs + 1);
  keys.push_back(labels.get_mask(segment, axis, plan.pairs.front().first));
  for (const auto& [i, j] : plan.pairs) keys.push_back(labels.get_mask(segment, axis, j));
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].empty()) {
      const std::int64_t index = i == 0 ? plan.pairs.front().first : plan.pairs[i - 1].second;
      throw Error(ErrorCode::EmptyKeyframe, "keyframe mask is empty; annotate or delete it",
                  {{"segment", segment}, {"axis", std::string(1, axis_letter(axis))}, {"index", index}});
    }
  }

  std::vector<std::vector<double>> fields(keys.size());
  std::vector<std::vector<Mask2D>> masks(npairs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < keys.size();) fields[k] = signed_distance(keys[k]);
  };
  auto run_parallel = [&](auto&& fn) {
    unsigned n = workers ? workers : std::max(1u, std::thread::hardware_concurrency());
    n = static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(keys.size(), 1)));
    next = 0;
    std::vector<std::jthread> pool;
    for (unsigned w = 1; w < n; ++w) {
      pool.emplace_back([&] {
        try {
          fn();
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
    fn();
    pool.clear();
    if (failure) std::rethrow_exception(failure);
  };
  run_parallel(worker);
  run_parallel([&] {
    for (std::size_t p; (p = next.fetch_add(1)) < npairs;) {
      const auto [i, j] = plan.pairs[p];
      for (std::int64_t k : plan.between[p]) {
        const double t = double(k - i) / double(j - i);
        masks[p].push_back(blend_fields(fields[p], fields[p + 1], keys[p].shape, t));
      }
    }
  });

  LabelMap::Edit edit = labels.begin_edit();
  for (const auto& [index, prov] : std::map(labels.keyframes().entries(segment, axis))) {
    if (prov == Provenance::Interpolated) edit.erase_keyframe(segment, axis, index);
  }
  for (std::size_t p = 0; p < npairs; ++p) {
    for (std::size_t s = 0; s < plan.between[p].size(); ++s) {
      const std::int64_t k = plan.between[p][s];
      edit.replace(segment, axis, k, masks[p][s], mode);
      edit.set_keyframe(segment, axis, k, Provenance::Interpolated);
      ++result.slices_written;
    }
  }
  result.generation = edit.commit();
  return result;
}

std::int64_t infer_keyframes(LabelMap& labels, SegmentId segment, Axis axis) {
  if (!labels.find_segment(segment)) {
    throw Error(ErrorCode::UnknownSegment, "unknown segment " + std::to_string(segment), {{"segment", segment}});
  }
  LabelMap::Edit edit = labels.begin_edit();
  std::int64_t n = 0;
  for (std::int64_t k = 0; k < labels.dims().extent(axis); ++k) {
    if (!labels.get_mask(segment, axis, k).empty()) {
      edit.set_keyframe(segment, axis, k, Provenance::Imported);
      ++n;
    }
  }
  edit.commit();
  return n;
}

}  // namespace voxelsam
