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
#include "voxelsam/embedding_cache.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <deque>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "voxelsam/checksum.hpp"
#include "voxelsam/error.hpp"
#include "voxelsam/float16.hpp"

namespace voxelsam {
namespace fs = std::filesystem;
using nlohmann::json;

class MappedFile {
 public:
  explicit MappedFile(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd_ < 0) {
      throw Error(ErrorCode::UnreadableFile, path.string() + ": " + std::strerror(errno), {{"path", path.string()}});
    }
    struct stat st {};
    if (::fstat(fd_, &st) != 0) {
      ::close(fd_);
      throw Error(ErrorCode::UnreadableFile, path.string() + ": cannot stat", {{"path", path.string()}});
    }
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ > 0) {
      void* p = ::mmap(nullptr, size_, PROT_READ, MAP_SHARED, fd_, 0);
      if (p == MAP_FAILED) {
        ::close(fd_);
        throw Error(ErrorCode::UnreadableFile, path.string() + ": mmap failed", {{"path", path.string()}});
      }
      data_ = static_cast<const std::byte*>(p);
    }
  }
  ~MappedFile() {
    if (data_) ::munmap(const_cast<std::byte*>(data_), size_);
    if (fd_ >= 0) ::close(fd_);
  }
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;

  std::span<const std::byte> bytes() const noexcept { return {data_, size_}; }
  std::size_t size() const noexcept { return size_; }

 private:
  int fd_ = -1;
  const std::byte* data_ = nullptr;
  std::size_t size_ = 0;
};

namespace {

constexpr char kMagic[4] = {'V', 'S', 'E', 'M'};
constexpr std::size_t kPreambleBytes = 12;     // magic + version + header_len
constexpr std::size_t kEntryHeaderBytes = 16;  // axis + index + payload_len
constexpr std::size_t kHeaderSlack = 32;

template <typename T>
T load_le(const std::byte* p) noexcept {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void append_le(std::vector<std::byte>& buf, T v) {
  const auto* p = reinterpret_cast<const std::byte*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

std::size_t scalar_bytes(ScalarType t) { return t == ScalarType::Float32 ? 4 : 2; }

std::uint64_t payload_bytes(const CacheHeader& h) {
  return static_cast<std::uint64_t>(h.shape.element_count()) * scalar_bytes(h.scalar);
}

std::uint64_t entry_bytes(const CacheHeader& h) { return kEntryHeaderBytes + payload_bytes(h) + 8; }

std::string axes_string(const std::vector<Axis>& axes) {
  std::string s;
  for (Axis a : axes) s += axis_letter(a);
  return s;
}

// Position of (axis, index) in the entry sequence.
std::optional<std::uint64_t> ordinal_of(const CacheHeader& h, Axis axis, std::int64_t index) {
  std::uint64_t base = 0;
  for (Axis a : h.axes) {
    if (a == axis) {
      if (index < 0 || index >= h.dims.extent(a)) return std::nullopt;
      return base + static_cast<std::uint64_t>(index);
    }
    base += static_cast<std::uint64_t>(h.dims.extent(a));
  }
  return std::nullopt;
}

std::string axis_name(Axis a) { return std::string(1, axis_letter(a)); }

std::string default_timestamp() {
  std::time_t t;
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) {
    t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct ParsedHeader {
  CacheHeader header;
  std::uint64_t data_offset = 0;
};

// Parses the preamble and header. Throws CorruptHeader, VersionMismatch or
// IncompleteCache; completeness of the entry region is checked by callers.
ParsedHeader parse_header(const MappedFile& file, const fs::path& path) {
  const auto bytes = file.bytes();
  const json where = {{"path", path.string()}};
  if (bytes.size() < kPreambleBytes) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0) {
      throw Error(ErrorCode::CorruptHeader, path.string() + ": bad magic", where);
    }
    throw Error(ErrorCode::IncompleteCache, path.string() + ": truncated before the header", where);
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw Error(ErrorCode::CorruptHeader, path.string() + ": bad magic", where);
  const auto version = load_le<std::uint32_t>(bytes.data() + 4);
  if (version != kCacheVersion) {
    throw Error(ErrorCode::VersionMismatch,
                path.string() + ": cache version " + std::to_string(version) + ", expected " +
                    std::to_string(kCacheVersion),
                {{"path", path.string()}, {"version", version}});
  }
  const auto header_len = load_le<std::uint32_t>(bytes.data() + 8);
  if (bytes.size() < kPreambleBytes + header_len + 8) {
    throw Error(ErrorCode::IncompleteCache, path.string() + ": truncated inside the header", where);
  }
  const auto* text = reinterpret_cast<const char*>(bytes.data() + kPreambleBytes);
  const auto stored = load_le<std::uint64_t>(bytes.data() + kPreambleBytes + header_len);
  if (xxh64(bytes.subspan(kPreambleBytes, header_len)) != stored) {
    throw Error(ErrorCode::CorruptHeader, path.string() + ": header checksum mismatch", where);
  }
  ParsedHeader out;
  try {
    out.header = CacheHeader::from_json(json::parse(std::string_view(text, header_len)));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::CorruptHeader, path.string() + ": " + e.what(), where);
  }
  out.data_offset = kPreambleBytes + header_len + 8;
  return out;
}

struct EntryCheck {
  bool ok = false;
  std::string message;
};

EntryCheck check_entry(std::span<const std::byte> bytes, const CacheHeader& h, std::uint64_t offset, Axis axis,
                       std::int64_t index) {
  const auto size = entry_bytes(h);
  if (offset + size > bytes.size()) return {false, "entry truncated"};
  const std::byte* p = bytes.data() + offset;
  const auto a = load_le<std::uint32_t>(p);
  const auto i = load_le<std::uint32_t>(p + 4);
  const auto len = load_le<std::uint64_t>(p + 8);
  if (a != static_cast<std::uint32_t>(axis) || i != static_cast<std::uint32_t>(index) || len != payload_bytes(h)) {
    return {false, "entry header does not match its position"};
  }
  const auto stored = load_le<std::uint64_t>(p + size - 8);
  if (xxh64(bytes.subspan(offset, size - 8)) != stored) return {false, "entry checksum mismatch"};
  return {true, {}};
}

// Sequential writer used by precompute.
class CacheWriter {
 public:
  CacheWriter(const fs::path& path, CacheHeader header) : path_(path), header_(std::move(header)) {
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw Error(ErrorCode::UnreadableFile, path.string() + ": cannot open for writing", {{"path", path.string()}});
    header_.complete = false;
    std::string text = header_.to_json().dump();
    reserved_ = static_cast<std::uint32_t>(text.size() + kHeaderSlack);
    write_header(text);
  }

  void write_entry(Axis axis, std::int64_t index, const EmbeddingTensor& t) {
    buf_.clear();
    append_le<std::uint32_t>(buf_, static_cast<std::uint32_t>(axis));
    append_le<std::uint32_t>(buf_, static_cast<std::uint32_t>(index));
    append_le<std::uint64_t>(buf_, payload_bytes(header_));
    if (header_.scalar == ScalarType::Float32) {
      const auto* p = reinterpret_cast<const std::byte*>(t.data.data());
      buf_.insert(buf_.end(), p, p + t.data.size() * sizeof(float));
    } else {
      for (float v : t.data) append_le<std::uint16_t>(buf_, float_to_half(v));
    }
    append_le<std::uint64_t>(buf_, xxh64(buf_));
    put(buf_.data(), buf_.size());
  }

  void finalize() {
    header_.complete = true;
    out_.seekp(0);
    write_header(header_.to_json().dump());
    out_.flush();
    if (!out_) throw Error(ErrorCode::DiskFull, path_.string() + ": failed to finalize cache", {{"path", path_.string()}});
    out_.close();
  }

 private:
  void write_header(std::string text) {
    if (text.size() > reserved_) throw Error(ErrorCode::ExecutionError, "cache header outgrew its reserved space");
    text.resize(reserved_, ' ');
    std::vector<std::byte> pre;
    pre.insert(pre.end(), reinterpret_cast<const std::byte*>(kMagic), reinterpret_cast<const std::byte*>(kMagic) + 4);
    append_le<std::uint32_t>(pre, kCacheVersion);
    append_le<std::uint32_t>(pre, reserved_);
    const auto* tp = reinterpret_cast<const std::byte*>(text.data());
    pre.insert(pre.end(), tp, tp + text.size());
    append_le<std::uint64_t>(pre, xxh64(std::as_bytes(std::span(text))));
    put(pre.data(), pre.size());
  }

  void put(const std::byte* p, std::size_t n) {
    out_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw Error(ErrorCode::DiskFull, path_.string() + ": write failed", {{"path", path_.string()}});
  }

  fs::path path_;
  CacheHeader header_;
  std::ofstream out_;
  std::uint32_t reserved_ = 0;
  std::vector<std::byte> buf_;
};

}  // namespace

std::string_view to_string(ScalarType type) noexcept { return type == ScalarType::Float32 ? "float32" : "float16"; }

std::optional<ScalarType> parse_scalar_type(std::string_view text) noexcept {
  if (text == "float32" || text == "f32") return ScalarType::Float32;
  if (text == "float16" || text == "f16") return ScalarType::Float16;
  return std::nullopt;
}

bool CacheHeader::has_axis(Axis axis) const noexcept {
  return std::find(axes.begin(), axes.end(), axis) != axes.end();
}

std::int64_t CacheHeader::entry_count() const noexcept {
  std::int64_t n = 0;
  for (Axis a : axes) n += dims.extent(a);
  return n;
}

json CacheHeader::to_json() const {
  json scale_table = json::object();
  for (const auto& [axis, values] : scales) scale_table[axis_name(axis)] = values;
  return {{"format", "voxelsam-embedding-cache"},
          {"complete", complete},
          {"dims", {dims.nx, dims.ny, dims.nz}},
          {"axes", axes_string(axes)},
          {"embedding_shape", {shape.channels, shape.height, shape.width}},
          {"scalar_type", std::string(to_string(scalar))},
          {"model_hash", model_hash},
          {"input_side", input_side},
          {"preprocessing", preprocessing},
          {"scale_table", scale_table},
          {"created", created}};
}

CacheHeader CacheHeader::from_json(const json& j) {
  CacheHeader h;
  if (j.at("format").get<std::string>() != "voxelsam-embedding-cache") {
    throw Error(ErrorCode::CorruptHeader, "header format tag is not voxelsam-embedding-cache");
  }
  h.complete = j.at("complete").get<bool>();
  const auto& d = j.at("dims");
  h.dims = {d.at(0).get<std::int64_t>(), d.at(1).get<std::int64_t>(), d.at(2).get<std::int64_t>()};
  auto axes = parse_axes(j.at("axes").get<std::string>());
  if (!axes) throw Error(ErrorCode::CorruptHeader, "invalid axis set in header");
  h.axes = *axes;
  const auto& s = j.at("embedding_shape");
  h.shape = {s.at(0).get<std::int64_t>(), s.at(1).get<std::int64_t>(), s.at(2).get<std::int64_t>()};
  auto scalar = parse_scalar_type(j.at("scalar_type").get<std::string>());
  if (!scalar) throw Error(ErrorCode::CorruptHeader, "invalid scalar type in header");
  h.scalar = *scalar;
  h.model_hash = j.at("model_hash").get<std::string>();
  h.input_side = j.at("input_side").get<std::int64_t>();
  h.preprocessing = j.at("preprocessing");
  for (Axis a : h.axes) {
    h.scales[a] = j.at("scale_table").at(axis_name(a)).get<std::vector<double>>();
    if (static_cast<std::int64_t>(h.scales[a].size()) != h.dims.extent(a)) {
      throw Error(ErrorCode::CorruptHeader, "scale table length differs from axis extent");
    }
  }
  h.created = j.value("created", "");
  if (h.dims.nx <= 0 || h.dims.ny <= 0 || h.dims.nz <= 0 || h.shape.element_count() <= 0) {
    throw Error(ErrorCode::CorruptHeader, "non-positive dims or embedding shape");
  }
  return h;
}

EmbeddingCache EmbeddingCache::open(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::UnreadableFile, path.string() + ": no such file", {{"path", path.string()}});
  auto file = std::make_shared<const MappedFile>(path);
  ParsedHeader parsed = parse_header(*file, path);
  const json where = {{"path", path.string()}};
  if (!parsed.header.complete) {
    throw Error(ErrorCode::IncompleteCache, path.string() + ": cache was not completed (interrupted precompute)", where);
  }
  const std::uint64_t expected =
      parsed.data_offset + static_cast<std::uint64_t>(parsed.header.entry_count()) * entry_bytes(parsed.header);
  if (file->size() < expected) throw Error(ErrorCode::IncompleteCache, path.string() + ": file is truncated", where);
  if (file->size() > expected) throw Error(ErrorCode::CorruptPayload, path.string() + ": trailing bytes after last entry", where);
  EmbeddingCache cache;
  cache.path_ = path;
  cache.header_ = std::make_shared<const CacheHeader>(std::move(parsed.header));
  cache.file_ = std::move(file);
  cache.data_offset_ = parsed.data_offset;
  return cache;
}

bool EmbeddingCache::contains(Axis axis, std::int64_t index) const noexcept {
  return ordinal_of(*header_, axis, index).has_value();
}

double EmbeddingCache::scale(Axis axis, std::int64_t index) const {
  if (!contains(axis, index)) {
    throw Error(ErrorCode::MissingEntry, "no cache entry for axis " + axis_name(axis) + " slice " + std::to_string(index),
                {{"axis", axis_name(axis)}, {"index", index}});
  }
  return header_->scales.at(axis)[static_cast<std::size_t>(index)];
}

EmbeddingTensor EmbeddingCache::get(Axis axis, std::int64_t index) const {
  const auto ordinal = ordinal_of(*header_, axis, index);
  const json where = {{"axis", axis_name(axis)}, {"index", index}};
  if (!ordinal) {
    throw Error(ErrorCode::MissingEntry, "no cache entry for axis " + axis_name(axis) + " slice " + std::to_string(index),
                where);
  }
  const auto offset = data_offset_ + *ordinal * entry_bytes(*header_);
  const auto check = check_entry(file_->bytes(), *header_, offset, axis, index);
  if (!check.ok) {
    throw Error(ErrorCode::CorruptPayload,
                path_.string() + ": entry (" + axis_name(axis) + ", " + std::to_string(index) + "): " + check.message,
                where);
  }
  EmbeddingTensor t;
  t.shape = header_->shape;
  t.data.resize(static_cast<std::size_t>(t.shape.element_count()));
  const std::byte* payload = file_->bytes().data() + offset + kEntryHeaderBytes;
  if (header_->scalar == ScalarType::Float32) {
    std::memcpy(t.data.data(), payload, t.data.size() * sizeof(float));
  } else {
    for (std::size_t k = 0; k < t.data.size(); ++k) t.data[k] = half_to_float(load_le<std::uint16_t>(payload + 2 * k));
  }
  return t;
}

json VerifyReport::to_json() const {
  json issues_json = json::array();
  for (const auto& i : issues) {
    json e = {{"code", i.code}, {"message", i.message}};
    if (i.axis) e["axis"] = axis_name(*i.axis);
    if (i.index) e["index"] = *i.index;
    issues_json.push_back(e);
  }
  json entries = json::object();
  for (const auto& [axis, n] : valid_entries) entries[axis_name(axis)] = n;
  json j = {{"path", path.string()}, {"ok", ok}, {"complete", complete}, {"valid_entries", entries}, {"issues", issues_json}};
  if (header) {
    j["axes"] = axes_string(header->axes);
    j["dims"] = {header->dims.nx, header->dims.ny, header->dims.nz};
    j["embedding_shape"] = {header->shape.channels, header->shape.height, header->shape.width};
    j["scalar_type"] = std::string(to_string(header->scalar));
    j["model_hash"] = header->model_hash;
    j["version"] = kCacheVersion;
  }
  return j;
}

VerifyReport verify_cache(const fs::path& path) {
  VerifyReport report;
  report.path = path;
  auto issue = [&](ErrorCode code, std::string msg, std::optional<Axis> axis = {}, std::optional<std::int64_t> idx = {}) {
    report.issues.push_back({std::string(to_string(code)), std::move(msg), axis, idx});
  };
  std::shared_ptr<MappedFile> file;
  ParsedHeader parsed;
  try {
    file = std::make_shared<MappedFile>(path);
    parsed = parse_header(*file, path);
  } catch (const Error& e) {
    issue(e.code(), e.what());
    return report;
  }
  report.header = parsed.header;
  report.complete = parsed.header.complete;
  if (!parsed.header.complete) issue(ErrorCode::IncompleteCache, "header is marked incomplete");

  const auto bytes = file->bytes();
  const auto stride = entry_bytes(parsed.header);
  std::uint64_t offset = parsed.data_offset;
  bool truncated = false;
  for (Axis a : parsed.header.axes) {
    report.valid_entries[a] = 0;
    for (std::int64_t i = 0; i < parsed.header.dims.extent(a); ++i, offset += stride) {
      if (offset + stride > bytes.size()) {
        truncated = true;
        continue;
      }
      auto check = check_entry(bytes, parsed.header, offset, a, i);
      if (check.ok) {
        ++report.valid_entries[a];
      } else {
        issue(ErrorCode::CorruptPayload,
              "entry (" + axis_name(a) + ", " + std::to_string(i) + "): " + check.message, a, i);
      }
    }
  }
  if (truncated && parsed.header.complete) issue(ErrorCode::IncompleteCache, "file is truncated");
  if (!truncated && offset < bytes.size()) issue(ErrorCode::CorruptPayload, "trailing bytes after last entry");
  report.ok = report.issues.empty();
  return report;
}

SliceImage preprocess_slice(const Volume3D& volume, Axis axis, std::int64_t index, const EnhanceParams& enhance) {
  return enhance_contrast(extract_slice(volume, axis, index), enhance);
}

PrecomputeJob::PrecomputeJob(Volume3D volume, EncoderGraph encoder, fs::path output, PrecomputeOptions options)
    : volume_(std::move(volume)), encoder_(std::move(encoder)), output_(std::move(output)), options_(std::move(options)) {
  if (options_.axes.empty()) throw Error(ErrorCode::InvalidParams, "precompute needs at least one axis");
  std::sort(options_.axes.begin(), options_.axes.end());
  options_.axes.erase(std::unique(options_.axes.begin(), options_.axes.end()), options_.axes.end());
  for (Axis a : options_.axes) total_ += volume_.dims().extent(a);
}

void PrecomputeJob::run(const std::function<void(const Progress&)>& on_progress) {
  CacheHeader header;
  header.dims = volume_.dims();
  header.axes = options_.axes;
  header.shape = encoder_.output_shape();
  header.scalar = options_.scalar;
  header.model_hash = encoder_.identity_hash();
  header.input_side = encoder_.input_side();
  header.preprocessing = options_.enhance.to_json();
  header.created = options_.created ? *options_.created : default_timestamp();
  std::vector<std::pair<Axis, std::int64_t>> work;
  for (Axis a : options_.axes) {
    const double scale = plan_resize(slice_shape(header.dims, a), header.input_side).scale;
    header.scales[a].assign(static_cast<std::size_t>(header.dims.extent(a)), scale);
    for (std::int64_t i = 0; i < header.dims.extent(a); ++i) work.emplace_back(a, i);
  }

  CacheWriter writer(output_, header);
  done_ = 0;
  if (on_progress) on_progress(progress());

  unsigned workers = options_.workers ? options_.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, work.size()));
  const std::size_t window = 2 * static_cast<std::size_t>(workers);

  std::mutex mu;
  std::condition_variable produced, consumed;
  std::map<std::size_t, EmbeddingTensor> ready;
  std::size_t next_to_write = 0;
  std::size_t next_to_claim = 0;
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      std::size_t k;
      {
        std::unique_lock lock(mu);
        consumed.wait(lock, [&] { return failure || cancelled() || next_to_claim < next_to_write + window; });
        if (failure || cancelled() || next_to_claim >= work.size()) return;
        k = next_to_claim++;
      }
      try {
        auto [axis, index] = work[k];
        EmbeddingTensor t = encode(encoder_, preprocess_slice(volume_, axis, index, options_.enhance));
        std::lock_guard lock(mu);
        ready.emplace(k, std::move(t));
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
      produced.notify_all();
    }
  };

  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);

  auto stop_pool = [&] {
    consumed.notify_all();
    pool.clear();
  };

  try {
    while (next_to_write < work.size()) {
      EmbeddingTensor t;
      {
        std::unique_lock lock(mu);
        produced.wait_for(lock, std::chrono::milliseconds(50),
                          [&] { return failure || cancelled() || ready.count(next_to_write); });
        if (failure) std::rethrow_exception(failure);
        if (cancelled()) throw Error(ErrorCode::Cancelled, "precompute cancelled");
        auto it = ready.find(next_to_write);
        if (it == ready.end()) continue;
        t = std::move(it->second);
        ready.erase(it);
      }
      const auto [axis, index] = work[next_to_write];
      writer.write_entry(axis, index, t);
      {
        std::lock_guard lock(mu);
        ++next_to_write;
      }
      consumed.notify_all();
      if (next_to_write == work.size()) writer.finalize();
      done_.store(static_cast<std::int64_t>(next_to_write));
      if (on_progress) on_progress(progress());
    }
  } catch (...) {
    {
      std::lock_guard lock(mu);
      if (!failure) failure = std::current_exception();
    }
    stop_pool();
    throw;
  }
  stop_pool();
}

EmbeddingCache precompute(const Volume3D& volume, const EncoderGraph& encoder, const fs::path& output,
                          const PrecomputeOptions& options, const std::function<void(const Progress&)>& on_progress) {
  PrecomputeJob job(volume, encoder, output, options);
  job.run(on_progress);
  return EmbeddingCache::open(output);
}

}  // namespace voxelsam
