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

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "voxelsam/enhance.hpp"
#include "voxelsam/model_runtime.hpp"
#include "voxelsam/volume.hpp"

namespace voxelsam {

// On-disk layout (little-endian):
//   "VSEM" | u32 version | u32 header_len | header JSON (space padded)
//   | u64 xxh64(header JSON)
//   then per entry, axes in X, Y, Z order and indices ascending:
//   u32 axis | u32 index | u64 payload_len | payload | u64 xxh64(all preceding entry bytes)
inline constexpr std::uint32_t kCacheVersion = 1;

enum class ScalarType { Float32, Float16 };

std::string_view to_string(ScalarType type) noexcept;
std::optional<ScalarType> parse_scalar_type(std::string_view text) noexcept;

struct CacheHeader {
  Dims dims;
  std::vector<Axis> axes;
  TensorShape3 shape;
  ScalarType scalar = ScalarType::Float16;
  std::string model_hash;
  std::int64_t input_side = 0;
  nlohmann::json preprocessing;
  /// Resize scale per slice, indexed by axis then slice index.
  std::map<Axis, std::vector<double>> scales;
  std::string created;
  bool complete = false;

  bool has_axis(Axis axis) const noexcept;
  std::int64_t entry_count() const noexcept;
  nlohmann::json to_json() const;
  static CacheHeader from_json(const nlohmann::json& j);
};

class MappedFile;

/// Read-only view of a complete cache file. Opening parses only the header;
/// entries are read from the memory map on demand. Copies share the mapping
/// and may be read concurrently.
class EmbeddingCache {
 public:
  static EmbeddingCache open(const std::filesystem::path& path);

  const CacheHeader& header() const noexcept { return *header_; }
  const std::filesystem::path& path() const noexcept { return path_; }
  bool contains(Axis axis, std::int64_t index) const noexcept;
  /// Stored resize scale for the slice. Throws MissingEntry.
  double scale(Axis axis, std::int64_t index) const;
  /// Decoded tensor (always float32). Throws MissingEntry or CorruptPayload.
  EmbeddingTensor get(Axis axis, std::int64_t index) const;

 private:
  EmbeddingCache() = default;
  std::filesystem::path path_;
  std::shared_ptr<const CacheHeader> header_;
  std::shared_ptr<const MappedFile> file_;
  std::uint64_t data_offset_ = 0;
};

inline EmbeddingCache open_cache(const std::filesystem::path& path) { return EmbeddingCache::open(path); }
inline EmbeddingTensor get_embedding(const EmbeddingCache& cache, Axis axis, std::int64_t index) {
  return cache.get(axis, index);
}

struct VerifyIssue {
  std::string code;  // ErrorCode name
  std::string message;
  std::optional<Axis> axis;
  std::optional<std::int64_t> index;
};

struct VerifyReport {
  std::filesystem::path path;
  bool ok = false;
  bool complete = false;
  std::optional<CacheHeader> header;
  std::map<Axis, std::int64_t> valid_entries;
  std::vector<VerifyIssue> issues;

  nlohmann::json to_json() const;
};

/// Checks magic, version, header checksum, completeness, entry layout and
/// every entry checksum. Never throws for file content problems.
VerifyReport verify_cache(const std::filesystem::path& path);

struct PrecomputeOptions {
  std::vector<Axis> axes{Axis::X, Axis::Y, Axis::Z};
  EnhanceParams enhance;
  ScalarType scalar = ScalarType::Float16;
  unsigned workers = 0;  // 0: hardware concurrency
  /// Header timestamp; defaults to SOURCE_DATE_EPOCH or the current time.
  std::optional<std::string> created;
};

struct Progress {
  std::int64_t done = 0;
  std::int64_t total = 0;
};

/// One precompute run. `run` fans slices out to an encoder worker pool and
/// writes entries in order from the calling thread. Cancelling leaves the
/// file marked incomplete and makes `run` throw Cancelled.
class PrecomputeJob {
 public:
  PrecomputeJob(Volume3D volume, EncoderGraph encoder, std::filesystem::path output, PrecomputeOptions options);

  void run(const std::function<void(const Progress&)>& on_progress = {});
  void cancel() noexcept { cancelled_.store(true); }
  bool cancelled() const noexcept { return cancelled_.load(); }
  Progress progress() const noexcept { return {done_.load(), total_}; }
  const std::filesystem::path& output() const noexcept { return output_; }

 private:
  Volume3D volume_;
  EncoderGraph encoder_;
  std::filesystem::path output_;
  PrecomputeOptions options_;
  std::int64_t total_ = 0;
  std::atomic<std::int64_t> done_{0};
  std::atomic<bool> cancelled_{false};
};

/// Convenience wrapper: runs a job and opens the resulting cache.
EmbeddingCache precompute(const Volume3D& volume, const EncoderGraph& encoder, const std::filesystem::path& output,
                          const PrecomputeOptions& options = {},
                          const std::function<void(const Progress&)>& on_progress = {});

/// The slice image that precompute encodes for (axis, index).
SliceImage preprocess_slice(const Volume3D& volume, Axis axis, std::int64_t index, const EnhanceParams& enhance);

}  // namespace voxelsam
