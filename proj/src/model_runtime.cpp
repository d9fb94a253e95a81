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
#include "voxelsam/model_runtime.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "backends.hpp"
#include "json.hpp"
#include "voxelsam/checksum.hpp"
#include "voxelsam/error.hpp"

namespace voxelsam {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Normalization read_meta(const fs::path& graph) {
  const fs::path meta_path = graph.string() + ".meta.json";
  std::ifstream in(meta_path);
  if (!in) {
    throw Error(ErrorCode::GraphLoadError, meta_path.string() + ": normalization sidecar missing",
                {{"path", meta_path.string()}});
  }
  try {
    json j;
    in >> j;
    Normalization n;
    n.input_side = j.at("input_side").get<std::int64_t>();
    for (std::size_t c = 0; c < 3; ++c) {
      n.mean[c] = j.at("mean").at(c).get<float>();
      n.std[c] = j.at("std").at(c).get<float>();
      if (!(n.std[c] > 0)) throw std::invalid_argument("std must be positive");
    }
    if (n.input_side <= 0) throw std::invalid_argument("input_side must be positive");
    if (j.contains("companion_encoder")) n.companion_encoder = j["companion_encoder"].get<std::string>();
    return n;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::GraphLoadError, meta_path.string() + ": " + e.what(), {{"path", meta_path.string()}});
  }
}

json read_stub(const fs::path& path, GraphKind kind) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::GraphLoadError, path.string() + ": cannot open", {{"path", path.string()}});
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("format", "") != "voxelsam-stub-graph") {
    throw Error(ErrorCode::GraphLoadError, path.string() + ": not a stub graph description", {{"path", path.string()}});
  }
  const std::string want = kind == GraphKind::Encoder ? "encoder" : "decoder";
  if (j.value("kind", "") != want) {
    throw Error(ErrorCode::GraphLoadError, path.string() + ": stub graph is not a " + want, {{"path", path.string()}});
  }
  return j;
}

bool is_onnx(const fs::path& path) { return path.extension() == ".onnx"; }

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) {
    throw Error(ErrorCode::GraphLoadError, path.string() + ": graph file not found", {{"path", path.string()}});
  }
}

}  // namespace

std::vector<std::uint8_t> DecodeResult::mask() const {
  std::vector<std::uint8_t> m(logits.size());
  std::transform(logits.begin(), logits.end(), m.begin(), [](float v) { return v > kMaskThreshold ? 1 : 0; });
  return m;
}

EncoderGraph::EncoderGraph(fs::path source, std::string identity, Normalization norm,
                           std::shared_ptr<const detail::EncoderBackend> backend)
    : source_(std::move(source)), identity_(std::move(identity)), norm_(norm), backend_(std::move(backend)) {}

EmbeddingTensor EncoderGraph::run(std::span<const float> chw) const { return backend_->run(chw); }

DecoderGraph::DecoderGraph(fs::path source, std::string identity, Normalization norm,
                           std::shared_ptr<const detail::DecoderBackend> backend)
    : source_(std::move(source)), identity_(std::move(identity)), norm_(norm), backend_(std::move(backend)) {}

DecodeResult DecoderGraph::run(const EmbeddingTensor& embedding, const ModelPrompt& prompt, SliceShape original) const {
  return backend_->run(embedding, prompt, original, norm_.input_side);
}

std::string file_identity_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::UnreadableFile, path.string() + ": cannot open", {{"path", path.string()}});
  Xxh64Stream hash;
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto got = static_cast<std::size_t>(in.gcount());
    hash.update(std::as_bytes(std::span(buf.data(), got)));
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash.digest()));
  return hex;
}

EncoderGraph load_encoder(const fs::path& path) {
  require_file(path);
  const Normalization norm = read_meta(path);
  std::shared_ptr<const detail::EncoderBackend> backend =
      is_onnx(path) ? detail::make_onnx_encoder(path, norm)
                    : detail::make_stub_encoder(read_stub(path, GraphKind::Encoder), norm);
  return EncoderGraph(path, file_identity_hash(path), norm, std::move(backend));
}

DecoderGraph load_decoder(const fs::path& path) {
  require_file(path);
  const Normalization norm = read_meta(path);
  std::shared_ptr<const detail::DecoderBackend> backend =
      is_onnx(path) ? detail::make_onnx_decoder(path, norm)
                    : detail::make_stub_decoder(read_stub(path, GraphKind::Decoder), norm);
  if (norm.input_side % backend->low_res_side() != 0) {
    throw Error(ErrorCode::InterfaceMismatch, path.string() + ": low-res grid side does not divide the input side");
  }
  return DecoderGraph(path, file_identity_hash(path), norm, std::move(backend));
}

std::variant<EncoderGraph, DecoderGraph> load_graph(const fs::path& path, GraphKind kind) {
  if (kind == GraphKind::Encoder) return load_encoder(path);
  return load_decoder(path);
}

std::optional<fs::path> find_graph(const fs::path& model_dir, GraphKind kind) {
  const std::string stem = kind == GraphKind::Encoder ? "encoder" : "decoder";
  for (const char* ext : {".onnx", ".json"}) {
    fs::path p = model_dir / (stem + ext);
    if (fs::is_regular_file(p)) return p;
  }
  return std::nullopt;
}

ResizePlan plan_resize(SliceShape shape, std::int64_t input_side) {
  const auto long_side = shape.long_side();
  if (long_side <= 0 || input_side <= 0) throw Error(ErrorCode::InvalidParams, "cannot resize an empty slice");
  ResizePlan plan;
  plan.scale = static_cast<double>(input_side) / static_cast<double>(long_side);
  // std::lround rounds half away from zero.
  plan.resized.rows = std::max<std::int64_t>(1, std::lround(static_cast<double>(shape.rows) * plan.scale));
  plan.resized.cols = std::max<std::int64_t>(1, std::lround(static_cast<double>(shape.cols) * plan.scale));
  if (shape.rows == long_side) plan.resized.rows = input_side;
  if (shape.cols == long_side) plan.resized.cols = input_side;
  return plan;
}

std::vector<float> resize_bilinear(std::span<const float> src, SliceShape from, SliceShape to) {
  std::vector<float> out(static_cast<std::size_t>(to.pixel_count()));
  if (from == to) {
    std::copy(src.begin(), src.end(), out.begin());
    return out;
  }
  struct Tap {
    std::int64_t i0, i1;
    float w;
  };
  auto taps = [](std::int64_t n_from, std::int64_t n_to) {
    std::vector<Tap> t(static_cast<std::size_t>(n_to));
    const double ratio = static_cast<double>(n_from) / static_cast<double>(n_to);
    for (std::int64_t i = 0; i < n_to; ++i) {
      const double pos = std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(n_from - 1));
      const auto i0 = static_cast<std::int64_t>(std::floor(pos));
      const auto i1 = std::min(i0 + 1, n_from - 1);
      t[static_cast<std::size_t>(i)] = {i0, i1, static_cast<float>(pos - static_cast<double>(i0))};
    }
    return t;
  };
  const auto ty = taps(from.rows, to.rows);
  const auto tx = taps(from.cols, to.cols);
  for (std::int64_t r = 0; r < to.rows; ++r) {
    const auto& y = ty[static_cast<std::size_t>(r)];
    const float* row0 = src.data() + y.i0 * from.cols;
    const float* row1 = src.data() + y.i1 * from.cols;
    for (std::int64_t c = 0; c < to.cols; ++c) {
      const auto& x = tx[static_cast<std::size_t>(c)];
      const float top = row0[x.i0] + (row0[x.i1] - row0[x.i0]) * x.w;
      const float bottom = row1[x.i0] + (row1[x.i1] - row1[x.i0]) * x.w;
      out[static_cast<std::size_t>(r * to.cols + c)] = top + (bottom - top) * y.w;
    }
  }
  return out;
}

std::vector<float> prepare_encoder_input(const SliceImage& image, const Normalization& norm) {
  const auto side = norm.input_side;
  const ResizePlan plan = plan_resize(image.shape, side);
  const auto resized = resize_bilinear(image.pixels, image.shape, plan.resized);
  std::vector<float> chw(static_cast<std::size_t>(3 * side * side), 0.0f);
  for (std::size_t c = 0; c < 3; ++c) {
    float* plane = chw.data() + c * static_cast<std::size_t>(side * side);
    for (std::int64_t r = 0; r < plan.resized.rows; ++r) {
      for (std::int64_t col = 0; col < plan.resized.cols; ++col) {
        plane[r * side + col] = (resized[static_cast<std::size_t>(r * plan.resized.cols + col)] - norm.mean[c]) / norm.std[c];
      }
    }
  }
  return chw;
}

EmbeddingTensor encode(const EncoderGraph& graph, const SliceImage& image) {
  const auto input = prepare_encoder_input(image, graph.normalization());
  EmbeddingTensor t = graph.run(input);
  if (!(t.shape == graph.output_shape())) {
    throw Error(ErrorCode::ExecutionError, "encoder output shape differs from its declared shape");
  }
  return t;
}

DecodeResult decode(const DecoderGraph& graph, const EmbeddingTensor& embedding, const ModelPrompt& prompt,
                    SliceShape original_size) {
  if (prompt.coords.empty()) throw Error(ErrorCode::EmptyPrompt, "decode needs at least one point");
  if (prompt.coords.size() != prompt.labels.size()) {
    throw Error(ErrorCode::InvalidParams, "prompt coordinate and label counts differ");
  }
  if (!(embedding.shape == graph.embedding_shape())) {
    throw Error(ErrorCode::ExecutionError, "embedding shape does not match the decoder");
  }
  DecodeResult r = graph.run(embedding, prompt, original_size);
  if (static_cast<std::int64_t>(r.logits.size()) != original_size.pixel_count()) {
    throw Error(ErrorCode::ExecutionError, "decoder output does not cover the original slice");
  }
  return r;
}

}  // namespace voxelsam
