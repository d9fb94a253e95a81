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

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "json.hpp"

namespace voxelsam {

/// Settings shared by all CLI commands. Resolution order: command-line flags,
/// then environment variables, then the defaults file, then built-ins.
struct CliConfig {
  std::filesystem::path model_dir;
  unsigned workers = 0;
  int port = 8642;
  std::string log_level = "info";
  std::filesystem::path defaults_file;

  /// Where each field's value came from: "flag", "env", "file" or "default".
  std::map<std::string, std::string> origin;

  nlohmann::json to_json() const;
};

struct CliOverrides {
  std::optional<std::filesystem::path> model_dir;
  std::optional<unsigned> workers;
  std::optional<int> port;
  std::optional<std::string> log_level;
  std::optional<std::filesystem::path> defaults_file;
};

/// Default location of the defaults file: $XDG_CONFIG_HOME/voxelsam/defaults.json
/// or ~/.config/voxelsam/defaults.json.
std::filesystem::path default_defaults_file();

/// `env` maps variable names to values; pass `environment_snapshot()` for the
/// process environment. Throws InvalidArgument on malformed values.
CliConfig resolve_config(const CliOverrides& flags, const std::map<std::string, std::string>& env);

std::map<std::string, std::string> environment_snapshot();

}  // namespace voxelsam
