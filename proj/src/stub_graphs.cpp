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
#include <chrono>
#include <cmath>
#include <set>
#include <string>
#include <thread>

#include "backends.hpp"
#include "voxelsam/error.hpp"

namespace voxelsam::detail {
namespace {

using nlohmann::json;

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

template <std::size_t NI, std::size_t NO>
void require_names(const json& desc, const char* const (&inputs)[NI], const char* const (&outputs)[NO]) {
  std::set<std::string> in, out;
  for (const auto& n : desc.value("inputs", json::array())) in.insert(n.get<std::string>());
  for (const auto& n : desc.value("outputs", json::array())) out.insert(n.get<std::string>());
  std::vector<std::string> missing;
  for (const char* n : inputs)
    if (!in.count(n)) missing.emplace_back(std::string("input:") + n);
  for (const char* n : outputs)
    if (!out.count(n)) missing.emplace_back(std::string("output:") + n);
  if (!missing.empty()) {
    throw Error(ErrorCode::InterfaceMismatch, "stub graph lacks required tensors", {{"missing", missing}});
  }
}

TensorShape3 shape_from(const json& desc) {
  try {
    const auto& s = desc.at("embedding_shape");
    TensorShape3 shape{s.at(0).get<std::int64_t>(), s.at(1).get<std::int64_t>(), s.at(2).get<std::int64_t>()};
    if (shape.channels <= 0 || shape.height <= 0 || shape.width <= 0) throw std::invalid_argument("non-positive");
    return shape;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::GraphLoadError, std::string("stub graph needs a positive embedding_shape: ") + e.what());
  }
}

// Embedding value (c, h, w) = hash(seed, c, h, w, quantized block mean of the
// first input channel), mapped to [-1, 1).
class StubEncoder final : public EncoderBackend {
 public:
  StubEncoder(const json& desc, const Normalization& norm)
      : shape_(shape_from(desc)),
        seed_(desc.value("seed", std::uint64_t{0x5EED})),
        side_(norm.input_side),
        delay_(desc.value("delay_ms", 0)) {
    if (side_ % shape_.height != 0 || side_ % shape_.width != 0) {
      throw Error(ErrorCode::GraphLoadError, "stub encoder input side must be a multiple of the embedding grid");
    }
  }

  TensorShape3 output_shape() const override { return shape_; }
  std::string_view name() const override { return "stub"; }

  EmbeddingTensor run(std::span<const float> chw) const override {
    if (static_cast<std::int64_t>(chw.size()) != 3 * side_ * side_) {
      throw Error(ErrorCode::ExecutionError, "stub encoder received a tensor of the wrong size");
    }
    if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
    const std::int64_t bh = side_ / shape_.height;
    const std::int64_t bw = side_ / shape_.width;
    std::vector<std::int64_t> q(static_cast<std::size_t>(shape_.height * shape_.width));
    for (std::int64_t h = 0; h < shape_.height; ++h) {
      for (std::int64_t w = 0; w < shape_.width; ++w) {
        double sum = 0.0;
        for (std::int64_t r = h * bh; r < (h + 1) * bh; ++r)
          for (std::int64_t c = w * bw; c < (w + 1) * bw; ++c) sum += chw[static_cast<std::size_t>(r * side_ + c)];
        q[static_cast<std::size_t>(h * shape_.width + w)] = std::llround(64.0 * sum / static_cast<double>(bh * bw));
      }
    }
    EmbeddingTensor t;
    t.shape = shape_;
    t.data.resize(static_cast<std::size_t>(shape_.element_count()));
    std::size_t i = 0;
    for (std::int64_t c = 0; c < shape_.channels; ++c) {
      const std::uint64_t kc = splitmix64(seed_ ^ static_cast<std::uint64_t>(c));
      for (std::size_t p = 0; p < q.size(); ++p, ++i) {
        const std::uint64_t h = splitmix64(kc ^ splitmix64(static_cast<std::uint64_t>(p) * 0x100000001B3ULL ^
                                                            static_cast<std::uint64_t>(q[p])));
        t.data[i] = static_cast<float>(static_cast<double>(h >> 40) / 8388608.0 - 1.0);
      }
    }
    return t;
  }

 private:
  TensorShape3 shape_;
  std::uint64_t seed_;
  std::int64_t side_;
  std::chrono::milliseconds delay_;  // simulated encoder cost, for job tests
};

// Logit +10 within Chebyshev radius of any include point, -10 within radius
// of any exclude point (exclude wins), -10 elsewhere.
class StubDecoder final : public DecoderBackend {
 public:
  StubDecoder(const json& desc, const Normalization&)
      : shape_(shape_from(desc)), radius_(desc.value("radius", 2)), low_res_(desc.value("low_res_side", 16)) {
    if (low_res_ <= 0 || radius_ < 0) throw Error(ErrorCode::GraphLoadError, "invalid stub decoder parameters");
  }

  std::int64_t low_res_side() const override { return low_res_; }
  TensorShape3 embedding_shape() const override { return shape_; }
  std::string_view name() const override { return "stub"; }

  DecodeResult run(const EmbeddingTensor& embedding, const ModelPrompt& prompt, SliceShape original,
                   std::int64_t input_side) const override {
    if (!(embedding.shape == shape_)) throw Error(ErrorCode::ExecutionError, "embedding shape differs from stub decoder");
    const double scale = static_cast<double>(input_side) / static_cast<double>(original.long_side());
    DecodeResult r;
    r.shape = original;
    r.logits.assign(static_cast<std::size_t>(original.pixel_count()), -10.0f);
    auto paint = [&](float label, float value) {
      for (std::size_t k = 0; k < prompt.coords.size(); ++k) {
        if (prompt.labels[k] != label) continue;
        const auto col = static_cast<std::int64_t>(std::floor(prompt.coords[k][0] / scale));
        const auto row = static_cast<std::int64_t>(std::floor(prompt.coords[k][1] / scale));
        for (auto rr = std::max<std::int64_t>(0, row - radius_); rr <= std::min(original.rows - 1, row + radius_); ++rr)
          for (auto cc = std::max<std::int64_t>(0, col - radius_); cc <= std::min(original.cols - 1, col + radius_); ++cc)
            r.logits[static_cast<std::size_t>(rr * original.cols + cc)] = value;
      }
    };
    paint(1.0f, 10.0f);
    paint(0.0f, -10.0f);

    r.low_res_side = low_res_;
    r.low_res_logits.assign(static_cast<std::size_t>(low_res_ * low_res_), -10.0f);
    const double cell = static_cast<double>(input_side) / static_cast<double>(low_res_);
    for (std::int64_t i = 0; i < low_res_; ++i) {
      for (std::int64_t j = 0; j < low_res_; ++j) {
        const auto row = static_cast<std::int64_t>(std::floor((static_cast<double>(i) + 0.5) * cell / scale));
        const auto col = static_cast<std::int64_t>(std::floor((static_cast<double>(j) + 0.5) * cell / scale));
        if (row < original.rows && col < original.cols) {
          r.low_res_logits[static_cast<std::size_t>(i * low_res_ + j)] =
              r.logits[static_cast<std::size_t>(row * original.cols + col)];
        }
      }
    }
    r.quality = 1.0f;
    return r;
  }

 private:
  TensorShape3 shape_;
  std::int64_t radius_;
  std::int64_t low_res_;
};

}  // namespace

std::shared_ptr<const EncoderBackend> make_stub_encoder(const json& desc, const Normalization& norm) {
  require_names(desc, kEncoderInputs, kEncoderOutputs);
  return std::make_shared<StubEncoder>(desc, norm);
}

std::shared_ptr<const DecoderBackend> make_stub_decoder(const json& desc, const Normalization& norm) {
  require_names(desc, kDecoderInputs, kDecoderOutputs);
  return std::make_shared<StubDecoder>(desc, norm);
}

}  // namespace voxelsam::detail
