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
#include "voxelsam/config.hpp"

#include <cstdlib>
#include <fstream>

#include "voxelsam/error.hpp"

extern char** environ;

namespace voxelsam {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kEnvModelDir = "VOXELSAM_MODEL_DIR";
constexpr const char* kEnvWorkers = "VOXELSAM_WORKERS";
constexpr const char* kEnvConfig = "VOXELSAM_CONFIG";

unsigned parse_workers(const std::string& text, const std::string& source) {
  try {
    std::size_t used = 0;
    const long v = std::stol(text, &used);
    if (used == text.size() && v >= 0 && v <= 1024) return static_cast<unsigned>(v);
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::InvalidArgument, source + ": workers must be an integer in [0, 1024]", {{"value", text}});
}

std::optional<std::string> lookup(const std::map<std::string, std::string>& env, const char* name) {
  auto it = env.find(name);
  if (it == env.end() || it->second.empty()) return std::nullopt;
  return it->second;
}

}  // namespace

json CliConfig::to_json() const {
  return {{"model_dir", model_dir.string()},
          {"workers", workers},
          {"port", port},
          {"log_level", log_level},
          {"defaults_file", defaults_file.string()},
          {"origin", origin}};
}

fs::path default_defaults_file() {
  if (const char* xdg = std::getenv("XDG_CONFIG_HOME"); xdg && *xdg) return fs::path(xdg) / "voxelsam" / "defaults.json";
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".config" / "voxelsam" / "defaults.json";
  return {};
}

std::map<std::string, std::string> environment_snapshot() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv(*e);
    const auto eq = kv.find('=');
    if (eq != std::string::npos && kv.rfind("VOXELSAM_", 0) == 0) env[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return env;
}

CliConfig resolve_config(const CliOverrides& flags, const std::map<std::string, std::string>& env) {
  CliConfig cfg;
  for (const char* k : {"model_dir", "workers", "port", "log_level"}) cfg.origin[k] = "default";

  if (flags.defaults_file) {
    cfg.defaults_file = *flags.defaults_file;
    cfg.origin["defaults_file"] = "flag";
  } else if (auto e = lookup(env, kEnvConfig)) {
    cfg.defaults_file = *e;
    cfg.origin["defaults_file"] = "env";
  } else {
    cfg.defaults_file = default_defaults_file();
    cfg.origin["defaults_file"] = "default";
  }

  if (!cfg.defaults_file.empty() && fs::exists(cfg.defaults_file)) {
    json j;
    try {
      std::ifstream in(cfg.defaults_file);
      in >> j;
      if (j.contains("model_dir")) cfg.model_dir = j["model_dir"].get<std::string>(), cfg.origin["model_dir"] = "file";
      if (j.contains("workers")) cfg.workers = j["workers"].get<unsigned>(), cfg.origin["workers"] = "file";
      if (j.contains("port")) cfg.port = j["port"].get<int>(), cfg.origin["port"] = "file";
      if (j.contains("log_level")) cfg.log_level = j["log_level"].get<std::string>(), cfg.origin["log_level"] = "file";
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, cfg.defaults_file.string() + ": " + e.what(),
                  {{"path", cfg.defaults_file.string()}});
    }
  } else if (flags.defaults_file) {
    throw Error(ErrorCode::UnreadableFile, cfg.defaults_file.string() + ": defaults file not found",
                {{"path", cfg.defaults_file.string()}});
  }

  if (auto e = lookup(env, kEnvModelDir)) cfg.model_dir = *e, cfg.origin["model_dir"] = "env";
  if (auto e = lookup(env, kEnvWorkers)) cfg.workers = parse_workers(*e, kEnvWorkers), cfg.origin["workers"] = "env";

  if (flags.model_dir) cfg.model_dir = *flags.model_dir, cfg.origin["model_dir"] = "flag";
  if (flags.workers) cfg.workers = *flags.workers, cfg.origin["workers"] = "flag";
  if (flags.port) cfg.port = *flags.port, cfg.origin["port"] = "flag";
  if (flags.log_level) cfg.log_level = *flags.log_level, cfg.origin["log_level"] = "flag";

  if (cfg.port < 0 || cfg.port > 65535) throw Error(ErrorCode::InvalidArgument, "port must be in [0, 65535]", {{"port", cfg.port}});
  return cfg;
}

}  // namespace voxelsam
