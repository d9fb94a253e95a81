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

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "voxelsam/error.hpp"

namespace voxelsam {

inline constexpr int kDefaultPort = 8642;

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = kDefaultPort;  // 0: OS-assigned
  /// Directory searched for encoder/decoder graphs; empty disables models.
  std::filesystem::path model_dir;
  unsigned workers = 0;
  /// Caches produced by /embed and recovery files of evicted sessions.
  std::filesystem::path work_dir;
  std::chrono::seconds session_ttl{4 * 3600};
  /// Appends every mutating request as one JSON line when set.
  std::optional<std::filesystem::path> request_log;
};

/// Maps a module error to its HTTP status.
int http_status(ErrorCode code) noexcept;

/// Local HTTP/JSON annotation service.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the listening socket and returns the port. Throws PortInUse.
  int bind();
  /// Serves until stop(). Calls bind() first if needed.
  void run();
  /// Starts run() on a background thread; returns the bound port.
  int start();
  void stop();
  int port() const noexcept;

  /// Evicts sessions idle for longer than the TTL, saving a recovery file
  /// for each. Returns the number evicted.
  std::size_t evict_idle(std::chrono::steady_clock::time_point now = std::chrono::steady_clock::now());

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace voxelsam
