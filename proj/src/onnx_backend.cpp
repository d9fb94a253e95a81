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
#include <dlfcn.h>

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "backends.hpp"
#include "ort_api.hpp"
#include "voxelsam/error.hpp"

namespace voxelsam {
namespace ort {
namespace {

struct OrtApiBase {
  const void* (*GetApi)(std::uint32_t version);
  const char* (*GetVersionString)();
};

void* open_library(std::string& tried) {
  std::vector<std::string> candidates;
  if (const char* env = std::getenv("VOXELSAM_ORT_LIB"); env && *env) candidates.emplace_back(env);
  if (std::strlen(VOXELSAM_DEFAULT_ORT_LIBRARY) > 0) candidates.emplace_back(VOXELSAM_DEFAULT_ORT_LIBRARY);
  candidates.emplace_back("libonnxruntime.so");
  for (const auto& c : candidates) {
    if (void* h = dlopen(c.c_str(), RTLD_NOW | RTLD_LOCAL)) return h;
    tried += (tried.empty() ? "" : ", ") + c;
  }
  return nullptr;
}

template <typename Fn>
void bind(Fn& fn, void* const* table, std::size_t slot) {
  fn = reinterpret_cast<Fn>(table[slot]);
}

}  // namespace

Api::Api() {
  std::string tried;
  void* lib = open_library(tried);
  if (!lib) throw Error(ErrorCode::GraphLoadError, "ONNX Runtime library not found (tried " + tried + ")");
  auto get_base = reinterpret_cast<const OrtApiBase* (*)()>(dlsym(lib, "OrtGetApiBase"));
  if (!get_base) throw Error(ErrorCode::GraphLoadError, "library does not export OrtGetApiBase");
  const OrtApiBase* base = get_base();
  version_ = base->GetVersionString();
  auto* table = static_cast<void* const*>(const_cast<void*>(base->GetApi(kApiVersion)));
  if (!table) throw Error(ErrorCode::GraphLoadError, "ONNX Runtime " + version_ + " does not provide API v17");
  bind(GetErrorMessage, table, 2);
  bind(CreateEnv, table, 3);
  bind(CreateSession, table, 7);
  bind(Run, table, 9);
  bind(CreateSessionOptions, table, 10);
  bind(SetSessionGraphOptimizationLevel, table, 23);
  bind(SetIntraOpNumThreads, table, 24);
  bind(SessionGetInputCount, table, 30);
  bind(SessionGetOutputCount, table, 31);
  bind(SessionGetInputTypeInfo, table, 33);
  bind(SessionGetOutputTypeInfo, table, 34);
  bind(SessionGetInputName, table, 36);
  bind(SessionGetOutputName, table, 37);
  bind(CreateTensorWithDataAsOrtValue, table, 49);
  bind(GetTensorMutableData, table, 51);
  bind(CastTypeInfoToTensorInfo, table, 55);
  bind(GetTensorElementType, table, 60);
  bind(GetDimensionsCount, table, 61);
  bind(GetDimensions, table, 62);
  bind(GetTensorTypeAndShape, table, 65);
  bind(CreateCpuMemoryInfo, table, 69);
  bind(AllocatorFree, table, 76);
  bind(GetAllocatorWithDefaultOptions, table, 78);
  bind(ReleaseEnv, table, 92);
  bind(ReleaseStatus, table, 93);
  bind(ReleaseMemoryInfo, table, 94);
  bind(ReleaseSession, table, 95);
  bind(ReleaseValue, table, 96);
  bind(ReleaseTypeInfo, table, 98);
  bind(ReleaseTensorTypeAndShapeInfo, table, 99);
  bind(ReleaseSessionOptions, table, 100);
}

const Api& Api::get() {
  static const Api api;
  return api;
}

void Api::check(OrtStatus* status, const char* what) const {
  if (!status) return;
  std::string msg = std::string(what) + ": " + GetErrorMessage(status);
  ReleaseStatus(status);
  throw Error(ErrorCode::ExecutionError, msg);
}

bool available() noexcept {
  try {
    Api::get();
    return true;
  } catch (...) {
    return false;
  }
}

}  // namespace ort

namespace detail {
namespace {

using ort::Api;

template <typename T, void (*Api::*Release)(T*)>
struct Releaser {
  void operator()(T* p) const noexcept {
    if (p) (Api::get().*Release)(p);
  }
};
using ValuePtr = std::unique_ptr<ort::OrtValue, Releaser<ort::OrtValue, &Api::ReleaseValue>>;
using SessionPtr = std::unique_ptr<ort::OrtSession, Releaser<ort::OrtSession, &Api::ReleaseSession>>;
using TypeInfoPtr = std::unique_ptr<ort::OrtTypeInfo, Releaser<ort::OrtTypeInfo, &Api::ReleaseTypeInfo>>;
using ShapeInfoPtr = std::unique_ptr<ort::OrtTensorTypeAndShapeInfo,
                                     Releaser<ort::OrtTensorTypeAndShapeInfo, &Api::ReleaseTensorTypeAndShapeInfo>>;
using OptionsPtr = std::unique_ptr<ort::OrtSessionOptions, Releaser<ort::OrtSessionOptions, &Api::ReleaseSessionOptions>>;
using MemInfoPtr = std::unique_ptr<ort::OrtMemoryInfo, Releaser<ort::OrtMemoryInfo, &Api::ReleaseMemoryInfo>>;

ort::OrtEnv* shared_env() {
  static ort::OrtEnv* env = [] {
    const auto& api = Api::get();
    ort::OrtEnv* e = nullptr;
    api.check(api.CreateEnv(ort::kLoggingWarning, "voxelsam", &e), "CreateEnv");
    return e;
  }();
  return env;
}

const ort::OrtMemoryInfo* cpu_memory() {
  static MemInfoPtr info = [] {
    const auto& api = Api::get();
    ort::OrtMemoryInfo* m = nullptr;
    api.check(api.CreateCpuMemoryInfo(ort::kArenaAllocator, ort::kMemTypeDefault, &m), "CreateCpuMemoryInfo");
    return MemInfoPtr(m);
  }();
  return info.get();
}

struct TensorSpec {
  int element_type = 0;
  std::vector<std::int64_t> dims;  // -1 for symbolic
};

TensorSpec spec_of(ort::OrtTypeInfo* info) {
  const auto& api = Api::get();
  const ort::OrtTensorTypeAndShapeInfo* tensor = nullptr;
  api.check(api.CastTypeInfoToTensorInfo(info, &tensor), "CastTypeInfoToTensorInfo");
  TensorSpec spec;
  if (!tensor) return spec;
  api.check(api.GetTensorElementType(tensor, &spec.element_type), "GetTensorElementType");
  std::size_t n = 0;
  api.check(api.GetDimensionsCount(tensor, &n), "GetDimensionsCount");
  spec.dims.resize(n);
  api.check(api.GetDimensions(tensor, spec.dims.data(), n), "GetDimensions");
  return spec;
}

// A loaded ONNX session with its introspected interface.
class OnnxSession {
 public:
  explicit OnnxSession(const std::filesystem::path& path) {
    const auto& api = Api::get();
    ort::OrtSessionOptions* opts_raw = nullptr;
    api.check(api.CreateSessionOptions(&opts_raw), "CreateSessionOptions");
    OptionsPtr opts(opts_raw);
    api.check(api.SetSessionGraphOptimizationLevel(opts.get(), ort::kGraphOptimizeAll), "SetOptimizationLevel");
    int threads = 0;
    if (const char* env = std::getenv("VOXELSAM_ORT_THREADS"); env && *env) threads = std::atoi(env);
    api.check(api.SetIntraOpNumThreads(opts.get(), threads), "SetIntraOpNumThreads");
    ort::OrtSession* session = nullptr;
    if (auto* st = api.CreateSession(shared_env(), path.c_str(), opts.get(), &session)) {
      std::string msg = api.GetErrorMessage(st);
      api.ReleaseStatus(st);
      throw Error(ErrorCode::GraphLoadError, path.string() + ": " + msg, {{"path", path.string()}});
    }
    session_.reset(session);

    ort::OrtAllocator* alloc = nullptr;
    api.check(api.GetAllocatorWithDefaultOptions(&alloc), "GetAllocatorWithDefaultOptions");
    auto collect = [&](bool input) {
      std::size_t count = 0;
      api.check(input ? api.SessionGetInputCount(session_.get(), &count)
                      : api.SessionGetOutputCount(session_.get(), &count),
                "SessionGetCount");
      for (std::size_t i = 0; i < count; ++i) {
        char* name = nullptr;
        api.check(input ? api.SessionGetInputName(session_.get(), i, alloc, &name)
                        : api.SessionGetOutputName(session_.get(), i, alloc, &name),
                  "SessionGetName");
        std::string n(name);
        api.check(api.AllocatorFree(alloc, name), "AllocatorFree");
        ort::OrtTypeInfo* info = nullptr;
        api.check(input ? api.SessionGetInputTypeInfo(session_.get(), i, &info)
                        : api.SessionGetOutputTypeInfo(session_.get(), i, &info),
                  "SessionGetTypeInfo");
        TypeInfoPtr owned(info);
        (input ? inputs_ : outputs_)[n] = spec_of(info);
      }
    };
    collect(true);
    collect(false);
  }

  template <std::size_t NI, std::size_t NO>
  void require(const char* const (&inputs)[NI], const char* const (&outputs)[NO],
               const std::filesystem::path& path) const {
    std::vector<std::string> missing;
    for (const char* n : inputs)
      if (!inputs_.count(n)) missing.emplace_back(std::string("input:") + n);
    for (const char* n : outputs)
      if (!outputs_.count(n)) missing.emplace_back(std::string("output:") + n);
    if (!missing.empty()) {
      throw Error(ErrorCode::InterfaceMismatch, path.string() + ": graph lacks required tensors",
                  {{"missing", missing}, {"path", path.string()}});
    }
    for (const auto& [name, spec] : inputs_) {
      if (spec.element_type != ort::kElementFloat) {
        throw Error(ErrorCode::InterfaceMismatch, path.string() + ": input '" + name + "' is not float32");
      }
    }
  }

  const TensorSpec& input(const std::string& n) const { return inputs_.at(n); }
  const TensorSpec& output(const std::string& n) const { return outputs_.at(n); }

  struct Input {
    const char* name;
    std::span<const float> data;
    std::vector<std::int64_t> shape;
  };
  struct Output {
    std::vector<std::int64_t> shape;
    std::vector<float> data;
  };

  std::vector<Output> run(const std::vector<Input>& inputs, const std::vector<const char*>& output_names) const {
    const auto& api = Api::get();
    std::vector<ValuePtr> owned;
    std::vector<const ort::OrtValue*> values;
    std::vector<const char*> names;
    for (const auto& in : inputs) {
      ort::OrtValue* v = nullptr;
      api.check(api.CreateTensorWithDataAsOrtValue(cpu_memory(), const_cast<float*>(in.data.data()),
                                                   in.data.size() * sizeof(float), in.shape.data(), in.shape.size(),
                                                   ort::kElementFloat, &v),
                "CreateTensor");
      owned.emplace_back(v);
      values.push_back(v);
      names.push_back(in.name);
    }
    std::vector<ort::OrtValue*> outs(output_names.size(), nullptr);
    api.check(api.Run(session_.get(), nullptr, names.data(), values.data(), values.size(), output_names.data(),
                      output_names.size(), outs.data()),
              "Run");
    std::vector<ValuePtr> out_owned;
    for (auto* o : outs) out_owned.emplace_back(o);
    std::vector<Output> result;
    for (auto* o : outs) {
      ort::OrtTensorTypeAndShapeInfo* info = nullptr;
      api.check(api.GetTensorTypeAndShape(o, &info), "GetTensorTypeAndShape");
      ShapeInfoPtr owned_info(info);
      std::size_t n = 0;
      api.check(api.GetDimensionsCount(info, &n), "GetDimensionsCount");
      Output r;
      r.shape.resize(n);
      api.check(api.GetDimensions(info, r.shape.data(), n), "GetDimensions");
      std::int64_t count = 1;
      for (auto d : r.shape) count *= d;
      void* data = nullptr;
      api.check(api.GetTensorMutableData(o, &data), "GetTensorMutableData");
      const float* f = static_cast<const float*>(data);
      r.data.assign(f, f + count);
      result.push_back(std::move(r));
    }
    return result;
  }

 private:
  SessionPtr session_;
  std::map<std::string, TensorSpec> inputs_;
  std::map<std::string, TensorSpec> outputs_;
};

class OnnxEncoder final : public EncoderBackend {
 public:
  OnnxEncoder(const std::filesystem::path& path, const Normalization& norm) : session_(path), side_(norm.input_side) {
    session_.require(kEncoderInputs, kEncoderOutputs, path);
    const auto& in = session_.input("image");
    const auto& out = session_.output("image_embeddings");
    if (in.dims.size() != 4 || out.dims.size() != 4) {
      throw Error(ErrorCode::InterfaceMismatch, path.string() + ": encoder tensors must be 4D");
    }
    if ((in.dims[2] > 0 && in.dims[2] != side_) || (in.dims[3] > 0 && in.dims[3] != side_)) {
      throw Error(ErrorCode::InterfaceMismatch, path.string() + ": encoder input side differs from meta input_side");
    }
    if (out.dims[1] <= 0 || out.dims[2] <= 0 || out.dims[3] <= 0) {
      throw Error(ErrorCode::InterfaceMismatch, path.string() + ": encoder output shape must be static");
    }
    shape_ = {out.dims[1], out.dims[2], out.dims[3]};
  }

  TensorShape3 output_shape() const override { return shape_; }
  std::string_view name() const override { return "onnx"; }

  EmbeddingTensor run(std::span<const float> chw) const override {
    auto outs = session_.run({{"image", chw, {1, 3, side_, side_}}}, {"image_embeddings"});
    EmbeddingTensor t;
    t.shape = shape_;
    t.data = std::move(outs[0].data);
    if (static_cast<std::int64_t>(t.data.size()) != shape_.element_count()) {
      throw Error(ErrorCode::ExecutionError, "encoder produced an unexpected number of elements");
    }
    return t;
  }

 private:
  OnnxSession session_;
  std::int64_t side_;
  TensorShape3 shape_;
};

class OnnxDecoder final : public DecoderBackend {
 public:
  OnnxDecoder(const std::filesystem::path& path, const Normalization&) : session_(path) {
    session_.require(kDecoderInputs, kDecoderOutputs, path);
    const auto& emb = session_.input("image_embeddings");
    const auto& mask = session_.input("mask_input");
    if (emb.dims.size() != 4 || mask.dims.size() != 4 || mask.dims[2] <= 0 || mask.dims[2] != mask.dims[3]) {
      throw Error(ErrorCode::InterfaceMismatch, path.string() + ": unexpected decoder tensor shapes");
    }
    shape_ = {emb.dims[1], emb.dims[2], emb.dims[3]};
    low_res_ = mask.dims[2];
  }

  std::int64_t low_res_side() const override { return low_res_; }
  TensorShape3 embedding_shape() const override { return shape_; }
  std::string_view name() const override { return "onnx"; }

  DecodeResult run(const EmbeddingTensor& embedding, const ModelPrompt& prompt, SliceShape original,
                   std::int64_t) const override {
    // The exported decoder expects a padding point labelled -1 when no box
    // prompt is present.
    const auto n = static_cast<std::int64_t>(prompt.coords.size()) + 1;
    std::vector<float> coords;
    coords.reserve(static_cast<std::size_t>(2 * n));
    for (const auto& c : prompt.coords) coords.insert(coords.end(), {c[0], c[1]});
    coords.insert(coords.end(), {0.0f, 0.0f});
    std::vector<float> labels(prompt.labels);
    labels.push_back(-1.0f);
    std::vector<float> mask_input(static_cast<std::size_t>(low_res_ * low_res_), 0.0f);
    float has_mask = 0.0f;
    if (!prompt.prior.empty()) {
      if (prompt.prior.size() != mask_input.size()) {
        throw Error(ErrorCode::ExecutionError, "prior mask size does not match the decoder's low-res grid");
      }
      mask_input = prompt.prior;
      has_mask = 1.0f;
    }
    std::vector<float> orig{static_cast<float>(original.rows), static_cast<float>(original.cols)};
    auto outs = session_.run({{"image_embeddings", embedding.data, {1, shape_.channels, shape_.height, shape_.width}},
                              {"point_coords", coords, {1, n, 2}},
                              {"point_labels", labels, {1, n}},
                              {"mask_input", mask_input, {1, 1, low_res_, low_res_}},
                              {"has_mask_input", std::span<const float>(&has_mask, 1), {1}},
                              {"orig_im_size", orig, {2}}},
                             {"masks", "iou_predictions", "low_res_masks"});
    DecodeResult r;
    r.shape = original;
    const auto& masks = outs[0];
    if (masks.shape.size() != 4 || masks.shape[2] != original.rows || masks.shape[3] != original.cols) {
      throw Error(ErrorCode::ExecutionError, "decoder mask output does not match the original slice size");
    }
    // Single-mask mode: take the first mask.
    r.logits.assign(masks.data.begin(), masks.data.begin() + original.pixel_count());
    r.quality = outs[1].data.empty() ? 0.0f : outs[1].data[0];
    r.low_res_side = low_res_;
    r.low_res_logits.assign(outs[2].data.begin(), outs[2].data.begin() + low_res_ * low_res_);
    return r;
  }

 private:
  OnnxSession session_;
  TensorShape3 shape_;
  std::int64_t low_res_ = 0;
};

}  // namespace

std::shared_ptr<const EncoderBackend> make_onnx_encoder(const std::filesystem::path& path, const Normalization& norm) {
  return std::make_shared<OnnxEncoder>(path, norm);
}

std::shared_ptr<const DecoderBackend> make_onnx_decoder(const std::filesystem::path& path, const Normalization& norm) {
  return std::make_shared<OnnxDecoder>(path, norm);
}

}  // namespace detail
}  // namespace voxelsam
