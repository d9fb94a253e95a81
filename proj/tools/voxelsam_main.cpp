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
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "voxelsam/config.hpp"
#include "voxelsam/embedding_cache.hpp"
#include "voxelsam/enhance.hpp"
#include "voxelsam/error.hpp"
#include "voxelsam/interpolation.hpp"
#include "voxelsam/labelmap.hpp"
#include "voxelsam/model_runtime.hpp"
#include "voxelsam/service.hpp"
#include "voxelsam/volume_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace voxelsam;

namespace {

enum Exit : int { kOk = 0, kUsage = 2, kMissingModel = 3, kCorruptInput = 4, kRuntime = 5 };

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidParams: return kUsage;
    case ErrorCode::NoEncoder:
    case ErrorCode::NoDecoder:
    case ErrorCode::GraphLoadError:
    case ErrorCode::InterfaceMismatch: return kMissingModel;
    case ErrorCode::UnreadableFile:
    case ErrorCode::UnsupportedFormat:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::IncompleteCache:
    case ErrorCode::VersionMismatch:
    case ErrorCode::CorruptHeader:
    case ErrorCode::CorruptPayload:
    case ErrorCode::MissingEntry: return kCorruptInput;
    default: return kRuntime;
  }
}

Axis axis_arg(const std::string& text) {
  auto a = parse_axis(text);
  if (!a) throw Error(ErrorCode::InvalidArgument, "axis must be one of x, y, z", {{"axis", text}});
  return *a;
}

std::optional<VolumeFormat> format_arg(const std::string& text) {
  if (text.empty()) return std::nullopt;
  auto f = parse_volume_format(text);
  if (!f) throw Error(ErrorCode::UnsupportedFormat, "unknown format " + text, {{"format", text}});
  return f;
}

bool is_cache_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in && std::string(magic, 4) == "VSEM";
}

struct Globals {
  std::string model_dir;
  int workers = -1;
  std::string log_level;
  std::string config;
  bool verbose = false;
};

CliConfig effective(const Globals& g, std::optional<int> port = std::nullopt) {
  CliOverrides o;
  if (!g.model_dir.empty()) o.model_dir = g.model_dir;
  if (g.workers >= 0) o.workers = static_cast<unsigned>(g.workers);
  if (!g.log_level.empty()) o.log_level = g.log_level;
  if (!g.config.empty()) o.defaults_file = g.config;
  o.port = port;
  CliConfig cfg = resolve_config(o, environment_snapshot());
  spdlog::set_level(spdlog::level::from_str(cfg.log_level));
  if (g.verbose) std::cerr << "effective config: " << cfg.to_json().dump() << "\n";
  return cfg;
}

EncoderGraph require_encoder(const CliConfig& cfg) {
  std::optional<fs::path> path;
  if (!cfg.model_dir.empty()) path = find_graph(cfg.model_dir, GraphKind::Encoder);
  if (!path) {
    throw Error(ErrorCode::NoEncoder, "no encoder graph found in model dir '" + cfg.model_dir.string() + "'",
                {{"model_dir", cfg.model_dir.string()}});
  }
  return load_encoder(*path);
}

int cmd_embed(const Globals& g, const fs::path& volume_path, fs::path out, const std::string& axes,
              const std::string& enhance, double clip, int tiles, const std::string& scalar, const std::string& created) {
  const CliConfig cfg = effective(g);
  const EncoderGraph encoder = require_encoder(cfg);
  const Volume3D volume = load_volume(volume_path);
  PrecomputeOptions po;
  auto parsed_axes = parse_axes(axes);
  if (!parsed_axes) throw Error(ErrorCode::InvalidArgument, "axes must be a combination of x, y, z", {{"axes", axes}});
  po.axes = *parsed_axes;
  auto method = parse_enhance_method(enhance);
  if (!method) throw Error(ErrorCode::InvalidArgument, "unknown enhance method " + enhance);
  po.enhance.method = *method;
  po.enhance.clip_limit = clip;
  po.enhance.tile_rows = po.enhance.tile_cols = tiles;
  auto st = parse_scalar_type(scalar);
  if (!st) throw Error(ErrorCode::InvalidArgument, "scalar must be float16 or float32", {{"scalar", scalar}});
  po.scalar = *st;
  po.workers = cfg.workers;
  if (!created.empty()) po.created = created;
  if (out.empty()) out = fs::path(volume_path.string() + ".vsemb");

  std::int64_t last = -1;
  precompute(volume, encoder, out, po, [&](const Progress& p) {
    if (p.done != last) {
      std::cout << "progress " << p.done << "/" << p.total << "\n" << std::flush;
      last = p.done;
    }
  });
  const auto header = EmbeddingCache::open(out).header();
  std::cout << "wrote " << out.string() << " (" << header.entry_count() << "/" << header.entry_count() << " slices)\n";
  return kOk;
}

int cmd_serve(const Globals& g, std::optional<int> port, const std::string& host, const std::string& work_dir,
              double ttl_hours, const std::string& record) {
  const CliConfig cfg = effective(g, port);
  ServiceOptions so;
  so.host = host;
  so.port = cfg.port;
  so.model_dir = cfg.model_dir;
  so.workers = cfg.workers;
  if (!work_dir.empty()) so.work_dir = work_dir;
  so.session_ttl = std::chrono::seconds(static_cast<std::int64_t>(ttl_hours * 3600.0));
  if (!record.empty()) so.request_log = fs::path(record);

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  Service service(so);
  const int bound = service.bind();
  std::cout << "listening on http://" << host << ":" << bound << "\n" << std::flush;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    service.stop();
  });
  service.run();
  waiter.join();
  return kOk;
}

LabelMap load_labels(const fs::path& path, const std::string& format) { return import_labelmap(path, format_arg(format)); }

int cmd_interpolate(const Globals& g, const fs::path& labels_path, int segment, const std::string& axis_text,
                    fs::path out, const std::string& format, const std::string& mode_text) {
  const CliConfig cfg = effective(g);
  LabelMap labels = load_labels(labels_path, format);
  const Axis axis = axis_arg(axis_text);
  auto mode = parse_write_mode(mode_text);
  if (!mode) throw Error(ErrorCode::InvalidArgument, "mode must be overwrite or preserve");
  if (segment <= 0 || segment > 0xFFFF || !labels.find_segment(static_cast<SegmentId>(segment))) {
    throw Error(ErrorCode::UnknownSegment, "unknown segment " + std::to_string(segment), {{"segment", segment}});
  }
  const auto seg = static_cast<SegmentId>(segment);
  if (labels.keyframes().anchors(seg, axis).empty()) infer_keyframes(labels, seg, axis);
  const FillResult r = fill_between(labels, seg, axis, *mode, cfg.workers);
  if (out.empty()) out = labels_path;
  const VolumeFormat fmt = format.empty() ? sniff_volume_format(labels_path) : *format_arg(format);
  export_labelmap(labels, out, fmt);
  json report = r.plan.to_json();
  report["output"] = out.string();
  std::cout << report.dump() << "\n";
  return kOk;
}

int cmd_export(const Globals& g, const fs::path& labels_path, const fs::path& out, const std::string& in_format,
               const std::string& out_format) {
  effective(g);
  const LabelMap labels = load_labels(labels_path, in_format);
  auto fmt = out_format.empty() ? std::optional<VolumeFormat>(sniff_volume_format(out)) : format_arg(out_format);
  export_labelmap(labels, out, *fmt);
  std::cout << json{{"output", out.string()}, {"format", std::string(to_string(*fmt))}}.dump() << "\n";
  return kOk;
}

int cmd_verify(const Globals& g, const fs::path& path) {
  effective(g);
  const VerifyReport report = verify_cache(path);
  std::cout << report.to_json().dump(2) << "\n";
  return report.ok ? kOk : kCorruptInput;
}

int cmd_info(const Globals& g, const fs::path& path) {
  const CliConfig cfg = effective(g);
  if (!fs::exists(path)) throw Error(ErrorCode::UnreadableFile, path.string() + ": no such file", {{"path", path.string()}});
  json out;
  if (is_cache_file(path)) {
    out = EmbeddingCache::open(path).header().to_json();
    out["kind"] = "embedding-cache";
  } else if (path.extension() == ".onnx" || path.string().ends_with("coder.json")) {
    auto graph = load_graph(path, path.filename().string().find("decoder") != std::string::npos ? GraphKind::Decoder
                                                                                                 : GraphKind::Encoder);
    out = std::visit(
        [](const auto& gr) {
          return json{{"source", gr.source().string()},
                      {"identity_hash", gr.identity_hash()},
                      {"backend", std::string(gr.backend_name())},
                      {"input_side", gr.input_side()}};
        },
        graph);
    out["kind"] = std::holds_alternative<EncoderGraph>(graph) ? "encoder" : "decoder";
  } else {
    const Volume3D v = load_volume(path);
    out = {{"kind", "volume"},
           {"format", std::string(to_string(sniff_volume_format(path)))},
           {"dims", {v.dims().nx, v.dims().ny, v.dims().nz}},
           {"spacing", {v.spacing().sx, v.spacing().sy, v.spacing().sz}},
           {"dtype", std::string(to_string(v.dtype()))},
           {"min", v.intensity_min()},
           {"max", v.intensity_max()}};
  }
  (void)cfg;
  std::cout << out.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_pattern("[%H:%M:%S.%e] [%l] %v");
  spdlog::set_default_logger(spdlog::stderr_color_mt("voxelsam"));

  CLI::App app{"VoxelSAM: interactive 3D segmentation workbench"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--model-dir", g.model_dir, "Directory holding encoder/decoder graphs (env VOXELSAM_MODEL_DIR)");
  app.add_option("--workers", g.workers, "Worker threads, 0 = all cores (env VOXELSAM_WORKERS)");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off");
  app.add_option("--config", g.config, "Defaults file (JSON; env VOXELSAM_CONFIG)");
  app.add_flag("-v,--verbose", g.verbose, "Print the effective configuration to stderr");

  std::string volume, out, axes = "xyz", enhance = "clahe", scalar = "float16", created, labels, axis = "z", format,
                       out_format, mode = "overwrite", host = "127.0.0.1", work_dir, record, file;
  double clip = 2.0, ttl_hours = 4.0;
  int tiles = 8, segment = 0;
  std::optional<int> port;

  auto* embed = app.add_subcommand("embed", "Precompute slice embeddings into a cache file");
  embed->add_option("volume,--in", volume, "Input volume (TIFF stack, NRRD or raw+json)")->required();
  embed->add_option("-o,--out", out, "Output cache path (default <volume>.vsemb)");
  embed->add_option("--axes", axes, "Axes to embed, any of x, y, z")->capture_default_str();
  embed->add_option("--enhance", enhance, "Contrast enhancement: none, global-equalize, clahe")->capture_default_str();
  embed->add_option("--clip-limit", clip, "CLAHE clip limit")->capture_default_str();
  embed->add_option("--tiles", tiles, "CLAHE tile grid size per side")->capture_default_str();
  embed->add_option("--scalar", scalar, "Stored precision: float16 or float32")->capture_default_str();
  embed->add_option("--created", created, "Header timestamp override (default SOURCE_DATE_EPOCH or now)");

  auto* serve = app.add_subcommand("serve", "Run the local HTTP annotation service");
  serve->add_option("--port", port, "Listen port, 0 = OS-assigned (default 8642)");
  serve->add_option("--host", host, "Listen address")->capture_default_str();
  serve->add_option("--work-dir", work_dir, "Directory for generated caches and recovery files");
  serve->add_option("--ttl-hours", ttl_hours, "Idle session eviction time in hours")->capture_default_str();
  serve->add_option("--record", record, "Append mutating requests to this JSON-lines file");

  auto* interp = app.add_subcommand("interpolate", "Fill slices between keyframes of a segment");
  interp->add_option("--labels", labels, "Label map file")->required();
  interp->add_option("--segment", segment, "Segment id")->required();
  interp->add_option("--axis", axis, "Interpolation axis: x, y or z")->capture_default_str();
  interp->add_option("-o,--out", out, "Output path (default: overwrite input)");
  interp->add_option("--format", format, "Label map format: nrrd, tiff, raw (default: detect)");
  interp->add_option("--mode", mode, "Write mode: overwrite or preserve")->capture_default_str();

  auto* exp = app.add_subcommand("export", "Convert a label map to another format");
  exp->add_option("--labels", labels, "Label map file")->required();
  exp->add_option("-o,--out", out, "Output path")->required();
  exp->add_option("--in-format", format, "Input format (default: detect)");
  exp->add_option("--format", out_format, "Output format: nrrd, tiff, raw (default: from extension)");

  auto* verify = app.add_subcommand("verify", "Check an embedding cache and print a JSON report");
  verify->add_option("cache", file, "Cache file")->required();

  auto* info = app.add_subcommand("info", "Print metadata of a volume, cache or graph as JSON");
  info->add_option("path", file, "File to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*embed) return cmd_embed(g, volume, out, axes, enhance, clip, tiles, scalar, created);
    if (*serve) return cmd_serve(g, port, host, work_dir, ttl_hours, record);
    if (*interp) return cmd_interpolate(g, labels, segment, axis, out, format, mode);
    if (*exp) return cmd_export(g, labels, out, format, out_format);
    if (*verify) return cmd_verify(g, file);
    if (*info) return cmd_info(g, file);
  } catch (const Error& e) {
    std::cerr << to_string(e.code()) << ": " << e.what();
    if (!e.details().empty()) std::cerr << " " << e.details().dump();
    std::cerr << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
