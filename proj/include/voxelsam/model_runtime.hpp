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

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "voxelsam/volume.hpp"

namespace voxelsam {

/// Channel-major (C, H, W) float tensor produced by the image encoder.
struct TensorShape3 {
  std::int64_t channels = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t element_count() const noexcept { return channels * height * width; }
  friend bool operator==(const TensorShape3&, const TensorShape3&) = default;
};

struct EmbeddingTensor {
  TensorShape3 shape;
  std::vector<float> data;
};

/// Input-side preprocessing contract read from `<graph>.meta.json`.
struct Normalization {
  std::int64_t input_side = 0;
  std::array<float, 3> mean{};
  std::array<float, 3> std{};
  std::optional<std::string> companion_encoder;  // identity hash the decoder was exported with
};

enum class GraphKind { Encoder, Decoder };

/// Prompt payload in encoder-input space. Coordinates are (col, row) pairs,
/// labels are 1 for include and 0 for exclude.
struct ModelPrompt {
  std::vector<std::array<float, 2>> coords;
  std::vector<float> labels;
  /// Low-resolution logits from a previous decode, square of side
  /// `DecoderGraph::low_res_side()`; empty when no prior is supplied.
  std::vector<float> prior;
};

struct DecodeResult {
  SliceShape shape;                 // original slice size
  std::vector<float> logits;        // shape.rows * shape.cols
  std::int64_t low_res_side = 0;
  std::vector<float> low_res_logits;
  float quality = 0.0f;

  /// Binary mask, logits > 0.
  std::vector<std::uint8_t> mask() const;
};

inline constexpr float kMaskThreshold = 0.0f;

namespace detail {

class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;
  virtual TensorShape3 output_shape() const = 0;
  /// `chw` is the normalized, padded (3, S, S) input.
  virtual EmbeddingTensor run(std::span<const float> chw) const = 0;
  virtual std::string_view name() const = 0;
};

class DecoderBackend {
 public:
  virtual ~DecoderBackend() = default;
  virtual std::int64_t low_res_side() const = 0;
  virtual TensorShape3 embedding_shape() const = 0;
  virtual DecodeResult run(const EmbeddingTensor& embedding, const ModelPrompt& prompt, SliceShape original,
                           std::int64_t input_side) const = 0;
  virtual std::string_view name() const = 0;
};

}  // namespace detail

class EncoderGraph {
 public:
  EncoderGraph(std::filesystem::path source, std::string identity, Normalization norm,
               std::shared_ptr<const detail::EncoderBackend> backend);

  const std::filesystem::path& source() const noexcept { return source_; }
  /// Content hash (XXH64, hex) of the graph file.
  const std::string& identity_hash() const noexcept { return identity_; }
  const Normalization& normalization() const noexcept { return norm_; }
  std::int64_t input_side() const noexcept { return norm_.input_side; }
  TensorShape3 output_shape() const { return backend_->output_shape(); }
  std::string_view backend_name() const { return backend_->name(); }

  EmbeddingTensor run(std::span<const float> chw) const;

 private:
  std::filesystem::path source_;
  std::string identity_;
  Normalization norm_;
  std::shared_ptr<const detail::EncoderBackend> backend_;
};

class DecoderGraph {
 public:
  DecoderGraph(std::filesystem::path source, std::string identity, Normalization norm,
               std::shared_ptr<const detail::DecoderBackend> backend);

  const std::filesystem::path& source() const noexcept { return source_; }
  const std::string& identity_hash() const noexcept { return identity_; }
  const Normalization& normalization() const noexcept { return norm_; }
  std::int64_t input_side() const noexcept { return norm_.input_side; }
  std::int64_t low_res_side() const { return backend_->low_res_side(); }
  TensorShape3 embedding_shape() const { return backend_->embedding_shape(); }
  std::string_view backend_name() const { return backend_->name(); }

  DecodeResult run(const EmbeddingTensor& embedding, const ModelPrompt& prompt, SliceShape original) const;

 private:
  std::filesystem::path source_;
  std::string identity_;
  Normalization norm_;
  std::shared_ptr<const detail::DecoderBackend> backend_;
};

/// Loads an encoder or decoder. `.onnx` files run on ONNX Runtime; `.json`
/// files describing a stub graph run the deterministic test stubs. Both read
/// the `<graph>.meta.json` normalization sidecar.
std::variant<EncoderGraph, DecoderGraph> load_graph(const std::filesystem::path& path, GraphKind kind);
EncoderGraph load_encoder(const std::filesystem::path& path);
DecoderGraph load_decoder(const std::filesystem::path& path);

/// Looks for encoder.onnx / encoder.json (and decoder.*) in a model directory.
std::optional<std::filesystem::path> find_graph(const std::filesystem::path& model_dir, GraphKind kind);

/// Size of the slice after the long side is scaled to `input_side`, the
/// short side rounded half away from zero.
struct ResizePlan {
  SliceShape resized;
  double scale = 1.0;  // input_side / long_side
};
ResizePlan plan_resize(SliceShape shape, std::int64_t input_side);

/// Bilinear resize (half-pixel centers, edge clamped).
std::vector<float> resize_bilinear(std::span<const float> src, SliceShape from, SliceShape to);

/// Resize to the long side, normalize per channel, zero-pad bottom/right to
/// S x S, replicate gray to 3 channels. Returns the (3, S, S) tensor.
std::vector<float> prepare_encoder_input(const SliceImage& image, const Normalization& norm);

/// Runs the encoder on an already contrast-processed slice.
EmbeddingTensor encode(const EncoderGraph& graph, const SliceImage& image);

/// Runs the decoder. Throws EmptyPrompt for an empty prompt.
DecodeResult decode(const DecoderGraph& graph, const EmbeddingTensor& embedding, const ModelPrompt& prompt,
                    SliceShape original_size);

/// Hex XXH64 of a file's bytes.
std::string file_identity_hash(const std::filesystem::path& path);

}  // namespace voxelsam
