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

// Minimal binding to the ONNX Runtime C API, resolved at run time with
// dlopen. Only the calls used by the ONNX backend are declared. Slot numbers
// index the OrtApi function table; the first ~100 slots have been stable
// since API version 1.

#include <cstddef>
#include <cstdint>
#include <string>

namespace voxelsam::ort {

struct OrtStatus;
struct OrtEnv;
struct OrtSession;
struct OrtSessionOptions;
struct OrtRunOptions;
struct OrtValue;
struct OrtTypeInfo;
struct OrtTensorTypeAndShapeInfo;
struct OrtMemoryInfo;
struct OrtAllocator;

inline constexpr int kElementFloat = 1;
inline constexpr int kLoggingWarning = 2;
inline constexpr int kGraphOptimizeAll = 99;
inline constexpr int kArenaAllocator = 1;
inline constexpr int kMemTypeDefault = 0;
inline constexpr std::uint32_t kApiVersion = 17;

class Api {
 public:
  /// Loads the runtime on first use. Library search order: VOXELSAM_ORT_LIB,
  /// the build-time default, then "libonnxruntime.so" on the loader path.
  static const Api& get();

  /// Converts a non-null status into an exception and releases it.
  void check(OrtStatus* status, const char* what) const;

  const std::string& version() const noexcept { return version_; }

  OrtStatus* (*CreateEnv)(int, const char*, OrtEnv**) = nullptr;
  OrtStatus* (*CreateSession)(const OrtEnv*, const char*, const OrtSessionOptions*, OrtSession**) = nullptr;
  OrtStatus* (*Run)(OrtSession*, const OrtRunOptions*, const char* const*, const OrtValue* const*, std::size_t,
                    const char* const*, std::size_t, OrtValue**) = nullptr;
  OrtStatus* (*CreateSessionOptions)(OrtSessionOptions**) = nullptr;
  OrtStatus* (*SetSessionGraphOptimizationLevel)(OrtSessionOptions*, int) = nullptr;
  OrtStatus* (*SetIntraOpNumThreads)(OrtSessionOptions*, int) = nullptr;
  OrtStatus* (*SessionGetInputCount)(const OrtSession*, std::size_t*) = nullptr;
  OrtStatus* (*SessionGetOutputCount)(const OrtSession*, std::size_t*) = nullptr;
  OrtStatus* (*SessionGetInputTypeInfo)(const OrtSession*, std::size_t, OrtTypeInfo**) = nullptr;
  OrtStatus* (*SessionGetOutputTypeInfo)(const OrtSession*, std::size_t, OrtTypeInfo**) = nullptr;
  OrtStatus* (*SessionGetInputName)(const OrtSession*, std::size_t, OrtAllocator*, char**) = nullptr;
  OrtStatus* (*SessionGetOutputName)(const OrtSession*, std::size_t, OrtAllocator*, char**) = nullptr;
  OrtStatus* (*CreateTensorWithDataAsOrtValue)(const OrtMemoryInfo*, void*, std::size_t, const std::int64_t*,
                                               std::size_t, int, OrtValue**) = nullptr;
  OrtStatus* (*GetTensorMutableData)(OrtValue*, void**) = nullptr;
  OrtStatus* (*CastTypeInfoToTensorInfo)(const OrtTypeInfo*, const OrtTensorTypeAndShapeInfo**) = nullptr;
  OrtStatus* (*GetTensorElementType)(const OrtTensorTypeAndShapeInfo*, int*) = nullptr;
  OrtStatus* (*GetDimensionsCount)(const OrtTensorTypeAndShapeInfo*, std::size_t*) = nullptr;
  OrtStatus* (*GetDimensions)(const OrtTensorTypeAndShapeInfo*, std::int64_t*, std::size_t) = nullptr;
  OrtStatus* (*GetTensorTypeAndShape)(const OrtValue*, OrtTensorTypeAndShapeInfo**) = nullptr;
  OrtStatus* (*CreateCpuMemoryInfo)(int, int, OrtMemoryInfo**) = nullptr;
  OrtStatus* (*AllocatorFree)(OrtAllocator*, void*) = nullptr;
  OrtStatus* (*GetAllocatorWithDefaultOptions)(OrtAllocator**) = nullptr;
  const char* (*GetErrorMessage)(const OrtStatus*) = nullptr;
  void (*ReleaseEnv)(OrtEnv*) = nullptr;
  void (*ReleaseStatus)(OrtStatus*) = nullptr;
  void (*ReleaseMemoryInfo)(OrtMemoryInfo*) = nullptr;
  void (*ReleaseSession)(OrtSession*) = nullptr;
  void (*ReleaseValue)(OrtValue*) = nullptr;
  void (*ReleaseTypeInfo)(OrtTypeInfo*) = nullptr;
  void (*ReleaseTensorTypeAndShapeInfo)(OrtTensorTypeAndShapeInfo*) = nullptr;
  void (*ReleaseSessionOptions)(OrtSessionOptions*) = nullptr;

 private:
  Api();
  std::string version_;
};

/// True when the runtime library can be loaded.
bool available() noexcept;

}  // namespace voxelsam::ort
