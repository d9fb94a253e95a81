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
#include "voxelsam/service.hpp"

#include <spdlog/spdlog.h>
#include <sys/socket.h>
#include <unistd.h>

#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <variant>

#include "httplib.h"
#include "json.hpp"
#include "voxelsam/embedding_cache.hpp"
#include "voxelsam/enhance.hpp"
#include "voxelsam/interpolation.hpp"
#include "voxelsam/labelmap.hpp"
#include "voxelsam/mask.hpp"
#include "voxelsam/model_runtime.hpp"
#include "voxelsam/png.hpp"
#include "voxelsam/prompt_engine.hpp"
#include "voxelsam/volume_io.hpp"

namespace voxelsam {
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

int http_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnreadableFile: return 404;
    case ErrorCode::InvalidArgument: return 400;
    case ErrorCode::UnknownPoint:
    case ErrorCode::UnknownSegment: return 404;
    case ErrorCode::DimensionMismatch:
    case ErrorCode::MissingEntry:
    case ErrorCode::ScaleMissing:
    case ErrorCode::NothingToUndo:
    case ErrorCode::Cancelled:
    case ErrorCode::InterfaceMismatch: return 409;
    case ErrorCode::UnsupportedFormat:
    case ErrorCode::IndexOutOfRange:
    case ErrorCode::InvalidParams:
    case ErrorCode::EmptyPrompt:
    case ErrorCode::IncompleteCache:
    case ErrorCode::VersionMismatch:
    case ErrorCode::CorruptHeader:
    case ErrorCode::CorruptPayload:
    case ErrorCode::AxisMismatch:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::TooFewKeyframes:
    case ErrorCode::EmptyKeyframe: return 422;
    case ErrorCode::GraphLoadError:
    case ErrorCode::NoEncoder:
    case ErrorCode::NoDecoder: return 503;
    case ErrorCode::DiskFull: return 507;
    case ErrorCode::ExecutionError:
    case ErrorCode::PortInUse: return 500;
  }
  return 500;
}

namespace {

// Service-level failure with a code that has no module counterpart.
struct ApiError {
  int status;
  std::string code;
  std::string message;
  json details = json::object();
};

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message, const json& details) {
  send_json(res, {{"code", code}, {"message", message}, {"details", details}}, status);
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw ApiError{400, "BadRequest", "request body must be a JSON object"};
    return j;
  } catch (const json::parse_error& e) {
    throw ApiError{400, "BadRequest", std::string("malformed JSON: ") + e.what()};
  }
}

template <class T>
T field(const json& body, const char* name) {
  if (!body.contains(name)) throw ApiError{400, "BadRequest", std::string("missing field '") + name + "'"};
  try {
    return body.at(name).get<T>();
  } catch (const json::exception&) {
    throw ApiError{400, "BadRequest", std::string("field '") + name + "' has the wrong type"};
  }
}

std::string query(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) throw ApiError{400, "BadRequest", std::string("missing query parameter '") + name + "'"};
  return req.get_param_value(name);
}

std::int64_t to_int(const std::string& text, const char* name) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size()) throw std::invalid_argument(name);
    return v;
  } catch (const std::exception&) {
    throw ApiError{400, "BadRequest", std::string("parameter '") + name + "' must be an integer"};
  }
}

Axis to_axis(const std::string& text) {
  auto a = parse_axis(text);
  if (!a) throw ApiError{400, "BadRequest", "axis must be one of x, y, z", {{"axis", text}}};
  return *a;
}

WriteMode to_mode(const json& body) {
  if (!body.contains("mode")) return WriteMode::Overwrite;
  auto m = parse_write_mode(field<std::string>(body, "mode"));
  if (!m) throw ApiError{400, "BadRequest", "mode must be overwrite or preserve"};
  return *m;
}

json dims_json(const Dims& d) { return json::array({d.nx, d.ny, d.nz}); }
std::string axis_str(Axis a) { return std::string(1, axis_letter(a)); }

std::string make_id(const char* prefix, std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%06llu", prefix, static_cast<unsigned long long>(n));
  return buf;
}

bool localhost_origin(const std::string& origin) {
  for (const char* host : {"http://localhost", "http://127.0.0.1", "http://[::1]"}) {
    const std::string h(host);
    if (origin == h || (origin.rfind(h + ":", 0) == 0)) return true;
  }
  return false;
}

struct Job {
  std::string id;
  std::string session;
  std::unique_ptr<PrecomputeJob> work;
  std::mutex mutex;
  std::condition_variable cv;
  std::vector<json> events;  // ProgressEvent history
  bool terminal = false;
  std::jthread thread;

  void push(std::int64_t done, std::int64_t total, const std::string& phase, bool last, const json& extra = {}) {
    {
      std::lock_guard lock(mutex);
      if (terminal) return;
      json e = {{"job_id", id}, {"done", done}, {"total", total}, {"phase", phase}, {"terminal", last}};
      if (!extra.is_null()) e.update(extra);
      events.push_back(std::move(e));
      terminal = last;
    }
    cv.notify_all();
  }
  json status() {
    std::lock_guard lock(mutex);
    return events.empty() ? json{{"job_id", id}, {"terminal", false}} : events.back();
  }
};

struct Session {
  std::string id;
  fs::path volume_path;
  Volume3D volume;
  std::optional<EmbeddingCache> cache;
  LabelMap labels;
  PromptSession prompts;
  std::map<SliceKey, MaskSlice> decoded;  // last decode per slice, accepted on request
  std::string active_job;
  json warnings = json::array();
  Clock::time_point last_active = Clock::now();
  std::mutex mutex;

  Session(std::string sid, fs::path path, Volume3D vol)
      : id(std::move(sid)), volume_path(std::move(path)), volume(std::move(vol)), labels(volume.dims(), volume.spacing()),
        prompts(volume.dims()) {}

  json summary() const {
    json segs = json::array();
    for (const auto& [sid, meta] : labels.segments()) segs.push_back(meta.to_json());
    return {{"session_id", id},
            {"volume_path", volume_path.string()},
            {"dims", dims_json(volume.dims())},
            {"spacing", {volume.spacing().sx, volume.spacing().sy, volume.spacing().sz}},
            {"dtype", std::string(to_string(volume.dtype()))},
            {"has_cache", cache.has_value()},
            {"cache_axes", cache ? json(cache->header().to_json().at("axes")) : json(nullptr)},
            {"segments", segs},
            {"generation", labels.generation()},
            {"undo_available", labels.undo_available()},
            {"prior_enabled", prompts.prior_enabled()},
            {"warnings", warnings}};
  }
};

}  // namespace

struct Service::Impl {
  ServiceOptions opts;
  httplib::Server server;
  int bound_port = -1;
  std::thread runner;
  std::mutex run_mutex;
  bool serving = false;
  bool stopping = false;

  std::mutex models_mutex;
  std::optional<EncoderGraph> encoder;
  std::optional<std::string> companion;
  bool companion_checked = false;
  std::optional<DecoderGraph> decoder;
  bool encoder_tried = false, decoder_tried = false;

  std::mutex sessions_mutex;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::uint64_t next_session = 1;

  std::mutex jobs_mutex;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::uint64_t next_job = 1;

  std::mutex log_mutex;
  std::jthread reaper;

  explicit Impl(ServiceOptions o) : opts(std::move(o)) {
    if (opts.work_dir.empty()) opts.work_dir = fs::temp_directory_path() / "voxelsam";
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    routes();
  }

  ~Impl() {
    std::vector<std::shared_ptr<Job>> all;
    {
      std::lock_guard lock(jobs_mutex);
      for (auto& [id, job] : jobs) all.push_back(job);
    }
    for (auto& job : all) {
      if (job->work) job->work->cancel();
      if (job->thread.joinable()) job->thread.join();
    }
  }

  // ------------------------------------------------------------------ models

  const EncoderGraph& require_encoder() {
    std::lock_guard lock(models_mutex);
    if (!encoder && !encoder_tried) {
      encoder_tried = true;
      if (auto p = opts.model_dir.empty() ? std::nullopt : find_graph(opts.model_dir, GraphKind::Encoder)) {
        encoder = load_encoder(*p);
        spdlog::info("encoder {} ({})", p->string(), encoder->backend_name());
      }
    }
    if (!encoder) throw Error(ErrorCode::NoEncoder, "no encoder graph configured", {{"model_dir", opts.model_dir.string()}});
    return *encoder;
  }

  const DecoderGraph& require_decoder() {
    std::lock_guard lock(models_mutex);
    if (!decoder && !decoder_tried) {
      decoder_tried = true;
      if (auto p = opts.model_dir.empty() ? std::nullopt : find_graph(opts.model_dir, GraphKind::Decoder)) {
        decoder = load_decoder(*p);
        spdlog::info("decoder {} ({})", p->string(), decoder->backend_name());
      }
    }
    if (!decoder) throw Error(ErrorCode::NoDecoder, "no decoder graph configured", {{"model_dir", opts.model_dir.string()}});
    return *decoder;
  }

  // ---------------------------------------------------------------- sessions

  std::shared_ptr<Session> session(const httplib::Request& req) {
    const std::string id = req.path_params.at("id");
    std::lock_guard lock(sessions_mutex);
    auto it = sessions.find(id);
    if (it == sessions.end()) throw ApiError{404, "UnknownSession", "unknown session " + id, {{"session_id", id}}};
    it->second->last_active = Clock::now();
    return it->second;
  }

  std::shared_ptr<Job> job(const httplib::Request& req) {
    const std::string id = req.path_params.at("job");
    std::lock_guard lock(jobs_mutex);
    auto it = jobs.find(id);
    if (it == jobs.end()) throw ApiError{404, "UnknownJob", "unknown job " + id, {{"job_id", id}}};
    return it->second;
  }

  /// Identity hash of the encoder next to the decoder, if there is one.
  std::optional<std::string> companion_hash() {
    std::lock_guard lock(models_mutex);
    if (!companion_checked) {
      companion_checked = true;
      if (auto p = opts.model_dir.empty() ? std::nullopt : find_graph(opts.model_dir, GraphKind::Encoder)) {
        companion = file_identity_hash(*p);
      }
    }
    return companion;
  }

  static void attach_cache(Session& s, const fs::path& path, const std::optional<std::string>& expected_hash = {}) {
    EmbeddingCache cache = EmbeddingCache::open(path);
    const Dims& cd = cache.header().dims;
    if (!(cd == s.volume.dims())) {
      throw Error(ErrorCode::DimensionMismatch, "cache dims differ from volume dims",
                  {{"cache", dims_json(cd)}, {"volume", dims_json(s.volume.dims())}});
    }
    s.warnings = json::array();
    if (expected_hash && cache.header().model_hash != *expected_hash) {
      spdlog::warn("cache {} was built with encoder {} but the configured encoder is {}", path.string(),
                   cache.header().model_hash, *expected_hash);
      s.warnings.push_back({{"code", "ModelHashMismatch"},
                            {"message", "cache was built with a different encoder than the configured one"},
                            {"cache_model_hash", cache.header().model_hash},
                            {"encoder_hash", *expected_hash}});
    }
    s.cache = std::move(cache);
  }

  static const EmbeddingCache& require_cache(const Session& s) {
    if (!s.cache) throw ApiError{409, "NoCache", "session has no embedding cache; run embed first", {{"session_id", s.id}}};
    return *s.cache;
  }

  std::size_t evict(Clock::time_point now) {
    std::vector<std::shared_ptr<Session>> victims;
    {
      std::lock_guard lock(sessions_mutex);
      for (auto it = sessions.begin(); it != sessions.end();) {
        if (now - it->second->last_active > opts.session_ttl) {
          victims.push_back(it->second);
          it = sessions.erase(it);
        } else {
          ++it;
        }
      }
    }
    for (auto& s : victims) {
      std::lock_guard lock(s->mutex);
      try {
        fs::create_directories(opts.work_dir);
        const fs::path out = opts.work_dir / (s->id + ".recovery.nrrd");
        export_labelmap(s->labels, out, VolumeFormat::Nrrd);
        spdlog::info("evicted idle session {}; label map saved to {}", s->id, out.string());
      } catch (const std::exception& e) {
        spdlog::error("evicting session {}: recovery save failed: {}", s->id, e.what());
      }
    }
    return victims.size();
  }

  void record(const httplib::Request& req) {
    if (!opts.request_log || req.method == "OPTIONS") return;
    // A mask GET stores the decoded mask that a later accept consumes.
    const bool stateful_get = req.path.ends_with("/mask");
    if (req.method == "GET" && !stateful_get) return;
    json line = {{"method", req.method}, {"path", req.path}};
    if (!req.params.empty()) {
      json params = json::object();
      for (const auto& [k, v] : req.params) params[k] = v;
      line["params"] = params;
    }
    if (!req.body.empty()) {
      try {
        line["body"] = json::parse(req.body);
      } catch (const json::exception&) {
        line["body"] = req.body;
      }
    }
    std::lock_guard lock(log_mutex);
    std::ofstream(*opts.request_log, std::ios::app) << line.dump() << "\n";
  }

  // ------------------------------------------------------------------ routes

  void wrap(const httplib::Request& req, httplib::Response& res, const std::function<void()>& fn) {
    (void)req;
    try {
      fn();
    } catch (const ApiError& e) {
      send_error(res, e.status, e.code, e.message, e.details);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), to_string(e.code()), e.what(), e.details());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what(), json::object());
    }
  }

  template <class F>
  httplib::Server::Handler h(F fn) {
    return [this, fn](const httplib::Request& req, httplib::Response& res) {
      wrap(req, res, [&] { fn(req, res); });
    };
  }

  void routes();
};

void Service::Impl::routes() {
  auto& s = server;

  s.set_post_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    const std::string origin = req.get_header_value("Origin");
    if (!origin.empty() && localhost_origin(origin)) {
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Vary", "Origin");
    }
    if (res.status < 400) record(req);
  });
  s.Options(R"(.*)", [](const httplib::Request& req, httplib::Response& res) {
    const std::string origin = req.get_header_value("Origin");
    if (localhost_origin(origin)) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    }
    res.status = 204;
  });

  s.Get("/health", h([this](const httplib::Request&, httplib::Response& res) {
          std::lock_guard lock(sessions_mutex);
          send_json(res, {{"status", "ok"}, {"sessions", sessions.size()}, {"model_dir", opts.model_dir.string()}});
        }));

  // Sessions ------------------------------------------------------------------

  s.Post("/sessions", h([this](const httplib::Request& req, httplib::Response& res) {
           const json body = parse_body(req);
           const fs::path vpath = field<std::string>(body, "volume_path");
           Volume3D vol = load_volume(vpath);
           auto sess = std::make_shared<Session>("", vpath, std::move(vol));
           if (body.contains("cache_path") && !body["cache_path"].is_null()) {
             attach_cache(*sess, field<std::string>(body, "cache_path"), companion_hash());
           }
           {
             std::lock_guard lock(sessions_mutex);
             sess->id = make_id("s", next_session++);
             sessions[sess->id] = sess;
           }
           send_json(res, sess->summary());
         }));

  s.Get("/sessions/:id", h([this](const httplib::Request& req, httplib::Response& res) {
          auto sess = session(req);
          std::lock_guard lock(sess->mutex);
          send_json(res, sess->summary());
        }));

  s.Delete("/sessions/:id", h([this](const httplib::Request& req, httplib::Response& res) {
             auto sess = session(req);
             std::lock_guard lock(sessions_mutex);
             sessions.erase(sess->id);
             send_json(res, {{"session_id", sess->id}, {"closed", true}});
           }));

  s.Post("/sessions/:id/cache", h([this](const httplib::Request& req, httplib::Response& res) {
           auto sess = session(req);
           const json body = parse_body(req);
           const auto expected = companion_hash();
           std::lock_guard lock(sess->mutex);
           attach_cache(*sess, field<std::string>(body, "cache_path"), expected);
           send_json(res, sess->summary());
         }));

  s.Post("/sessions/:id/prior", h([this](const httplib::Request& req, httplib::Response& res) {
           auto sess = session(req);
           const json body = parse_body(req);
           std::lock_guard lock(sess->mutex);
           sess->prompts.set_prior_enabled(field<bool>(body, "enabled"));
           send_json(res, {{"prior_enabled", sess->prompts.prior_enabled()}});
         }));

  // Embedding jobs --------------------------------------------------------------

  s.Post("/sessions/:id/embed", h([this](const httplib::Request& req, httplib::Response& res) {
           auto sess = session(req);
           const json body = parse_body(req);
           PrecomputeOptions po;
           po.workers = opts.workers;
           if (body.contains("axes")) {
             auto axes = parse_axes(field<std::string>(body, "axes"));
             if (!axes) throw ApiError{400, "BadRequest", "axes must be a combination of x, y, z"};
             po.axes = *axes;
           }
           if (body.contains("enhance")) {
             const json& e = body["enhance"];
             po.enhance = e.is_string() ? EnhanceParams::from_json({{"method", e}}) : EnhanceParams::from_json(e);
           }
           if (body.contains("scalar")) {
             auto st = parse_scalar_type(field<std::string>(body, "scalar"));
             if (!st) throw ApiError{400, "BadRequest", "scalar must be float16 or float32"};
             po.scalar = *st;
           }
           if (body.contains("created")) po.created = field<std::string>(body, "created");
           const EncoderGraph& enc = require_encoder();

           std::lock_guard lock(sess->mutex);
           if (!sess->active_job.empty()) {
             auto running = [&] {
               std::lock_guard jl(jobs_mutex);
               auto it = jobs.find(sess->active_job);
               if (it == jobs.end()) return false;
               std::lock_guard l(it->second->mutex);
               return !it->second->terminal;
             }();
             if (running) {
               throw ApiError{409, "JobRunning", "an embedding job is already running for this session",
                              {{"job_id", sess->active_job}}};
             }
           }
           fs::path out = body.contains("cache_path") ? fs::path(field<std::string>(body, "cache_path"))
                                                      : opts.work_dir / (sess->id + ".vsemb");
           if (out.has_parent_path()) fs::create_directories(out.parent_path());

           auto job = std::make_shared<Job>();
           {
             std::lock_guard jl(jobs_mutex);
             job->id = make_id("j", next_job++);
             jobs[job->id] = job;
           }
           job->session = sess->id;
           job->work = std::make_unique<PrecomputeJob>(sess->volume, enc, out, po);
           sess->active_job = job->id;
           const std::int64_t total = job->work->progress().total;
           job->push(0, total, "queued", false);
           std::weak_ptr<Session> weak = sess;
           job->thread = std::jthread([job, weak, out, total] {
             try {
               job->work->run([&](const Progress& p) { job->push(p.done, p.total, "encoding", false); });
               if (auto sp = weak.lock()) {
                 std::lock_guard l(sp->mutex);
                 attach_cache(*sp, out);
               }
               job->push(total, total, "done", true, {{"cache_path", out.string()}});
             } catch (const Error& e) {
               const auto done = job->work->progress().done;
               if (e.code() == ErrorCode::Cancelled) {
                 job->push(done, total, "cancelled", true);
               } else {
                 job->push(done, total, "failed", true, {{"code", to_string(e.code())}, {"message", e.what()}});
               }
             } catch (const std::exception& e) {
               job->push(job->work->progress().done, total, "failed", true, {{"code", "Internal"}, {"message", e.what()}});
             }
           });
           send_json(res, {{"job_id", job->id}, {"total", total}, {"cache_path", out.string()}}, 202);
         }));

  s.Get("/jobs/:job", h([this](const httplib::Request& req, httplib::Response& res) { send_json(res, job(req)->status()); }));

  s.Post("/jobs/:job/cancel", h([this](const httplib::Request& req, httplib::Response& res) {
           auto j = job(req);
           j->work->cancel();
           send_json(res, {{"job_id", j->id}, {"cancel_requested", true}});
         }));

  s.Get("/jobs/:job/events", h([this](const httplib::Request& req, httplib::Response& res) {
          auto j = job(req);
          auto cursor = std::make_shared<std::size_t>(0);
          res.set_header("Cache-Control", "no-cache");
          res.set_chunked_content_provider("text/event-stream", [j, cursor](std::size_t, httplib::DataSink& sink) {
            std::unique_lock lock(j->mutex);
            j->cv.wait_for(lock, std::chrono::seconds(15), [&] { return j->events.size() > *cursor; });
            if (j->events.size() == *cursor) {
              lock.unlock();
              return sink.write(": keep-alive\n\n", 14);
            }
            std::string chunk;
            bool finished = false;
            for (; *cursor < j->events.size(); ++*cursor) {
              const json& e = j->events[*cursor];
              chunk += "event: progress\ndata: " + e.dump() + "\n\n";
              finished = finished || e.value("terminal", false);
            }
            lock.unlock();
            if (!sink.write(chunk.data(), chunk.size())) return false;
            if (finished) sink.done();
            return true;
          });
        }));

  // Segments --------------------------------------------------------------------

  s.Post("/sessions/:id/segments", h([this](const httplib::Request& req, httplib::Response& res) {
           auto sess = session(req);
           const json body = parse_body(req);
           std::optional<Rgb> color;
           if (body.contains("color")) color = field<Rgb>(body, "color");
           SegmentTag tag = SegmentTag::Semantic;
           if (body.contains("tag")) {
             auto t = parse_segment_tag(field<std::string>(body, "tag"));
             if (!t) throw ApiError{400, "BadRequest", "tag must be instance or semantic"};
             tag = *t;
           }
           std::lock_guard lock(sess->mutex);
           send_json(res, sess->labels.create_segment(field<std::string>(body, "name"), color, tag).to_json());
         }));

  s.Get("/sessions/:id/segments", h([this](const httplib::Request& req, httplib::Response& res) {
          auto sess = session(req);
          std::lock_guard lock(sess->mutex);
          json out = json::array();
          for (const auto& [id, meta] : sess->labels.segments()) out.push_back(meta.to_json());
          send_json(res, out);
        }));

  s.Delete("/sessions/:id/segments/:segment", h([this](const httplib::Request& req, httplib::Response& res) {
             auto sess = session(req);
             const auto seg = to_int(req.path_params.at("segment"), "segment");
             std::lock_guard lock(sess->mutex);
             if (seg <= 0 || seg > 0xFFFF) throw Error(ErrorCode::UnknownSegment, "unknown segment", {{"segment", seg}});
             sess->labels.delete_segment(static_cast<SegmentId>(seg));
             send_json(res, {{"segment", seg}, {"deleted", true}, {"generation", sess->labels.generation()}});
           }));

  // Points and masks --------------------------------------------------------------

  auto segment_of = [](Session& sess, std::int64_t id) {
    if (id <= 0 || id > 0xFFFF || !sess.labels.find_segment(static_cast<SegmentId>(id))) {
      throw Error(ErrorCode::UnknownSegment, "unknown segment " + std::to_string(id), {{"segment", id}});
    }
    return static_cast<SegmentId>(id);
  };

  s.Post("/sessions/:id/points", h([this, segment_of](const httplib::Request& req, httplib::Response& res) {
           auto sess = session(req);
           const json body = parse_body(req);
           const auto voxel = field<std::array<std::int64_t, 3>>(body, "voxel");
           const Axis axis = to_axis(field<std::string>(body, "axis"));
           auto kind = parse_point_kind(body.value("kind", "include"));
           if (!kind) throw ApiError{400, "BadRequest", "kind must be include or exclude"};
           std::lock_guard lock(sess->mutex);
           const SegmentId seg = segment_of(*sess, field<std::int64_t>(body, "segment"));
           const PromptPoint p = sess->prompts.add_point(seg, axis, *kind, {voxel[0], voxel[1], voxel[2]});
           const SlicePixel px = to_slice_coords(p.voxel, axis);
           json out = p.to_json();
           out.update({{"segment", seg}, {"axis", axis_str(axis)}, {"index", px.index}, {"row", px.row}, {"col", px.col}});
           send_json(res, out);
         }));

  s.Delete("/sessions/:id/points/:pid", h([this](const httplib::Request& req, httplib::Response& res) {
             auto sess = session(req);
             std::lock_guard lock(sess->mutex);
             send_json(res, sess->prompts.remove_point(req.path_params.at("pid")).to_json());
           }));

  s.Post("/sessions/:id/points/clear", h([this, segment_of](const httplib::Request& req, httplib::Response& res) {
           auto sess = session(req);
           const json body = parse_body(req);
           std::lock_guard lock(sess->mutex);
           const SliceKey key{segment_of(*sess, field<std::int64_t>(body, "segment")),
                              to_axis(field<std::string>(body, "axis")), field<std::int64_t>(body, "index")};
           send_json(res, sess->prompts.clear_points(key).to_json());
         }));

  s.Get("/sessions/:id/points", h([this, segment_of](const httplib::Request& req, httplib::Response& res) {
          auto sess = session(req);
          std::lock_guard lock(sess->mutex);
          if (req.has_param("segment")) {
            const SliceKey key{segment_of(*sess, to_int(query(req, "segment"), "segment")), to_axis(query(req, "axis")),
                               to_int(query(req, "index"), "index")};
            send_json(res, sess->prompts.prompt_set(key).to_json());
            return;
          }
          json out = json::array();
          for (const auto& set : sess->prompts.prompt_sets()) out.push_back(set.to_json());
          send_json(res, out);
        }));

  s.Get("/sessions/:id/mask", h([this, segment_of](const httplib::Request& req, httplib::Response& res) {
          auto sess = session(req);
          const Axis axis = to_axis(query(req, "axis"));
          const auto index = to_int(query(req, "index"), "index");
          std::lock_guard lock(sess->mutex);
          const SliceKey key{segment_of(*sess, to_int(query(req, "segment"), "segment")), axis, index};
          if (index < 0 || index >= sess->volume.dims().extent(axis)) {
            throw Error(ErrorCode::IndexOutOfRange, "slice index outside axis extent",
                        {{"axis", axis_str(axis)}, {"index", index}, {"extent", sess->volume.dims().extent(axis)}});
          }
          if (sess->prompts.prompt_set(key).points.empty()) {
            throw Error(ErrorCode::EmptyPrompt, "no points on this slice",
                        {{"segment", key.segment}, {"axis", axis_str(axis)}, {"index", index}});
          }
          const EmbeddingCache& cache = require_cache(*sess);
          if (!cache.contains(axis, index)) {
            throw Error(ErrorCode::MissingEntry, "no cached embedding for this slice", {{"axis", axis_str(axis)}, {"index", index}});
          }
          MaskSlice m = sess->prompts.decode(key, cache, require_decoder());
          json out = mask_to_json(m.mask);
          out.update({{"segment", key.segment},
                      {"axis", axis_str(axis)},
                      {"index", index},
                      {"quality", m.quality.value_or(0.0f)},
                      {"provenance", std::string(to_string(m.provenance))}});
          sess->decoded[key] = std::move(m);
          send_json(res, out);
        }));

  s.Post("/sessions/:id/accept", h([this, segment_of](const httplib::Request& req, httplib::Response& res) {
           auto sess = session(req);
           const json body = parse_body(req);
           std::lock_guard lock(sess->mutex);
           const SliceKey key{segment_of(*sess, field<std::int64_t>(body, "segment")), to_axis(field<std::string>(body, "axis")),
                              field<std::int64_t>(body, "index")};
           MaskSlice m;
           if (body.contains("mask")) {
             m.axis = key.axis;
             m.index = key.index;
             try {
               m.mask = mask_from_json(body["mask"]);
             } catch (const json::exception& e) {
               throw ApiError{400, "BadRequest", std::string("malformed mask: ") + e.what()};
             }
           } else {
             auto it = sess->decoded.find(key);
             if (it == sess->decoded.end()) {
               throw ApiError{409, "NoDecodedMask", "no decoded mask for this slice; GET mask first",
                              {{"segment", key.segment}, {"axis", axis_str(key.axis)}, {"index", key.index}}};
             }
             m = it->second;
           }
           const auto gen = sess->prompts.accept_mask(sess->labels, key.segment, m, to_mode(body));
           send_json(res, {{"generation", gen}, {"segment", key.segment}, {"axis", axis_str(key.axis)}, {"index", key.index},
                           {"voxels", m.mask.count()}});
         }));

  // Label map ---------------------------------------------------------------------

  s.Get("/sessions/:id/labels", h([this, segment_of](const httplib::Request& req, httplib::Response& res) {
          auto sess = session(req);
          const Axis axis = to_axis(query(req, "axis"));
          const auto index = to_int(query(req, "index"), "index");
          std::lock_guard lock(sess->mutex);
          if (req.has_param("segment")) {
            const SegmentId seg = segment_of(*sess, to_int(query(req, "segment"), "segment"));
            json out = mask_to_json(sess->labels.get_mask(seg, axis, index));
            out.update({{"segment", seg}, {"axis", axis_str(axis)}, {"index", index}});
            send_json(res, out);
            return;
          }
          const SliceShape shape = slice_shape(sess->volume.dims(), axis);
          send_json(res, {{"shape", {shape.rows, shape.cols}},
                          {"axis", axis_str(axis)},
                          {"index", index},
                          {"labels", sess->labels.get_labels(axis, index)}});
        }));

  s.Get("/sessions/:id/keyframes", h([this](const httplib::Request& req, httplib::Response& res) {
          auto sess = session(req);
          std::lock_guard lock(sess->mutex);
          send_json(res, sess->labels.keyframes().to_json());
        }));

  s.Post("/sessions/:id/interpolate", h([this, segment_of](const httplib::Request& req, httplib::Response& res) {
           auto sess = session(req);
           const json body = parse_body(req);
           std::lock_guard lock(sess->mutex);
           const SegmentId seg = segment_of(*sess, field<std::int64_t>(body, "segment"));
           const FillResult r = fill_between(sess->labels, seg, to_axis(field<std::string>(body, "axis")), to_mode(body),
                                             opts.workers);
           json out = r.plan.to_json();
           out["generation"] = r.generation;
           send_json(res, out);
         }));

  s.Post("/sessions/:id/undo", h([this](const httplib::Request& req, httplib::Response& res) {
           auto sess = session(req);
           std::lock_guard lock(sess->mutex);
           const auto gen = sess->labels.undo();
           send_json(res, {{"generation", gen}, {"undo_available", sess->labels.undo_available()}});
         }));

  s.Get("/sessions/:id/export", h([this](const httplib::Request& req, httplib::Response& res) {
          auto sess = session(req);
          const std::string fmt_text = req.has_param("format") ? req.get_param_value("format") : "nrrd";
          auto fmt = parse_volume_format(fmt_text);
          if (!fmt) throw Error(ErrorCode::UnsupportedFormat, "unknown export format " + fmt_text, {{"format", fmt_text}});
          static const std::map<VolumeFormat, std::pair<const char*, const char*>> kExt = {
              {VolumeFormat::Nrrd, {".nrrd", "application/octet-stream"}},
              {VolumeFormat::TiffStack, {".tif", "image/tiff"}},
              {VolumeFormat::RawJson, {".raw", "application/octet-stream"}}};
          const auto& [ext, mime] = kExt.at(*fmt);
          fs::create_directories(opts.work_dir);
          const fs::path tmp = opts.work_dir / (sess->id + ".export-" + std::to_string(::getpid()) + ext);
          {
            std::lock_guard lock(sess->mutex);
            export_labelmap(sess->labels, tmp, *fmt);
          }
          std::ifstream in(tmp, std::ios::binary);
          std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
          in.close();
          std::error_code ec;
          for (const fs::path& p : {tmp, segments_sidecar_path(tmp), fs::path(tmp.string() + ".json")}) fs::remove(p, ec);
          const Dims& d = sess->volume.dims();
          res.set_header("X-VoxelSAM-Dims", std::to_string(d.nx) + "," + std::to_string(d.ny) + "," + std::to_string(d.nz));
          res.set_header("Content-Disposition", "attachment; filename=\"" + sess->id + "-labels" + ext + "\"");
          res.set_content(std::move(bytes), mime);
        }));

  s.Post("/sessions/:id/export", h([this](const httplib::Request& req, httplib::Response& res) {
           auto sess = session(req);
           const json body = parse_body(req);
           const fs::path out = field<std::string>(body, "path");
           std::optional<VolumeFormat> fmt =
               body.contains("format") ? parse_volume_format(field<std::string>(body, "format")) : sniff_volume_format(out);
           if (!fmt) throw Error(ErrorCode::UnsupportedFormat, "unknown export format");
           std::lock_guard lock(sess->mutex);
           export_labelmap(sess->labels, out, *fmt);
           send_json(res, {{"path", out.string()}, {"format", std::string(to_string(*fmt))},
                           {"segments_path", segments_sidecar_path(out).string()}});
         }));

  // Rendering -----------------------------------------------------------------------

  s.Get("/sessions/:id/slice", h([this](const httplib::Request& req, httplib::Response& res) {
          auto sess = session(req);
          const Axis axis = to_axis(query(req, "axis"));
          const auto index = to_int(query(req, "index"), "index");
          const Volume3D& vol = sess->volume;  // immutable after creation
          if (index < 0 || index >= vol.dims().extent(axis)) {
            throw ApiError{416, "IndexOutOfRange", "slice index outside axis extent",
                           {{"axis", axis_str(axis)}, {"index", index}, {"extent", vol.dims().extent(axis)}}};
          }
          double lo = vol.intensity_min(), hi = vol.intensity_max();
          if (req.has_param("window")) {
            const std::string w = req.get_param_value("window");
            const auto comma = w.find(',');
            try {
              if (comma == std::string::npos) throw std::invalid_argument("window");
              lo = std::stod(w.substr(0, comma));
              hi = std::stod(w.substr(comma + 1));
            } catch (const std::exception&) {
              throw ApiError{400, "BadRequest", "window must be 'min,max'", {{"window", w}}};
            }
            if (!(hi >= lo)) throw Error(ErrorCode::InvalidParams, "window max must not be below min", {{"window", w}});
          }
          const SliceImage img = extract_slice(vol, axis, index);
          const auto u8 = rescale_to_u8(img.pixels, lo, hi);
          res.set_header("X-VoxelSAM-Window", std::to_string(lo) + "," + std::to_string(hi));
          res.set_content(encode_png_gray8(u8, img.shape.rows, img.shape.cols), "image/png");
        }));

  // Debug ---------------------------------------------------------------------------

  s.Post("/sessions/:id/debug/echo-point", h([this](const httplib::Request& req, httplib::Response& res) {
           auto sess = session(req);
           const json body = parse_body(req);
           const Axis axis = to_axis(field<std::string>(body, "axis"));
           const Dims& d = sess->volume.dims();
           VoxelCoord v;
           if (body.contains("voxel")) {
             const auto a = field<std::array<std::int64_t, 3>>(body, "voxel");
             v = {a[0], a[1], a[2]};
           } else {
             v = pixel_to_voxel(axis, field<std::int64_t>(body, "index"), field<std::int64_t>(body, "row"),
                                field<std::int64_t>(body, "col"));
           }
           const SlicePixel px = to_slice_coords(v, axis);
           json out = {{"voxel", {v.x, v.y, v.z}},
                       {"axis", axis_str(axis)},
                       {"index", px.index},
                       {"row", px.row},
                       {"col", px.col},
                       {"inside", d.contains(v.x, v.y, v.z)}};
           std::lock_guard lock(sess->mutex);
           if (sess->cache && d.contains(v.x, v.y, v.z) && sess->cache->contains(axis, px.index)) {
             const auto mc = to_model_coords(px.row, px.col, slice_shape(d, axis), sess->cache->scale(axis, px.index));
             out["model_coords"] = {mc[0], mc[1]};
           }
           send_json(res, out);
         }));
}

// ---------------------------------------------------------------------- Service

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Service::~Service() { stop(); }

int Service::bind() {
  if (impl_->bound_port >= 0) return impl_->bound_port;
  const auto& o = impl_->opts;
  int port = -1;
  if (o.port == 0) {
    port = impl_->server.bind_to_any_port(o.host);
  } else if (impl_->server.bind_to_port(o.host, o.port)) {
    port = o.port;
  }
  if (port <= 0) {
    throw Error(ErrorCode::PortInUse, "cannot listen on " + o.host + ":" + std::to_string(o.port),
                {{"host", o.host}, {"port", o.port}});
  }
  impl_->bound_port = port;
  const auto ttl = o.session_ttl;
  const auto period = std::clamp<std::chrono::seconds>(ttl / 4, std::chrono::seconds(1), std::chrono::seconds(60));
  impl_->reaper = std::jthread([this, period](std::stop_token st) {
    std::mutex m;
    std::condition_variable_any cv;
    std::unique_lock lock(m);
    while (!st.stop_requested()) {
      cv.wait_for(lock, st, period, [] { return false; });
      if (!st.stop_requested()) evict_idle();
    }
  });
  return port;
}

void Service::run() {
  bind();
  spdlog::info("listening on http://{}:{}", impl_->opts.host, impl_->bound_port);
  {
    std::lock_guard lock(impl_->run_mutex);
    if (impl_->stopping) return;
    impl_->serving = true;
  }
  impl_->server.listen_after_bind();
}

int Service::start() {
  const int port = bind();
  {
    std::lock_guard lock(impl_->run_mutex);
    impl_->serving = true;
  }
  impl_->runner = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Service::stop() {
  if (!impl_) return;
  // httplib ignores stop() until the accept loop is up; a signal can land earlier.
  bool serving = false;
  {
    std::lock_guard lock(impl_->run_mutex);
    impl_->stopping = true;
    serving = impl_->serving;
  }
  if (serving) impl_->server.wait_until_ready();
  impl_->server.stop();
  if (impl_->runner.joinable()) impl_->runner.join();
  if (impl_->reaper.joinable()) {
    impl_->reaper.request_stop();
    impl_->reaper.join();
  }
}

int Service::port() const noexcept { return impl_->bound_port; }

std::size_t Service::evict_idle(Clock::time_point now) { return impl_->evict(now); }

}  // namespace voxelsam
