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
#include <zlib.h>

#include <random>
#include <thread>

#include "doctest.h"
#include "http_support.hpp"
#include "test_support.hpp"
#include "voxelsam/embedding_cache.hpp"
#include "voxelsam/enhance.hpp"
#include "voxelsam/error.hpp"
#include "voxelsam/labelmap.hpp"
#include "voxelsam/png.hpp"
#include "voxelsam/service.hpp"

using namespace voxelsam;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Service on an OS-assigned port with the stub graphs. `delay_ms` slows the
/// stub encoder so jobs can be observed mid-run.
struct Server {
  vtest::TempDir tmp;
  std::unique_ptr<Service> svc;
  int port = 0;

  explicit Server(int delay_ms = 0, std::optional<fs::path> log = std::nullopt) {
    const fs::path models = tmp / "models";
    fs::create_directories(models);
    for (const char* f : {"decoder.json", "decoder.json.meta.json", "encoder.json.meta.json"})
      fs::copy_file(vtest::stub_model_dir() / f, models / f);
    json enc = json::parse(vtest::read_file(vtest::stub_model_dir() / "encoder.json"));
    enc["delay_ms"] = delay_ms;
    std::ofstream(models / "encoder.json") << enc.dump(2);
    ServiceOptions o;
    o.port = 0;
    o.model_dir = models;
    o.work_dir = tmp / "work";
    o.workers = 1;
    o.request_log = std::move(log);
    svc = std::make_unique<Service>(o);
    port = svc->start();
  }

  fs::path volume(Dims d, std::uint64_t seed = 1, const std::string& name = "vol.raw") {
    std::mt19937_64 rng(seed);
    std::vector<std::uint16_t> v(static_cast<std::size_t>(d.voxel_count()));
    for (auto& x : v) x = static_cast<std::uint16_t>(rng() % 4000);
    const fs::path p = tmp / name;
    vtest::write_raw(p, d, v, "uint16");
    return p;
  }
};

std::vector<json> parse_sse(const std::string& text) {
  std::vector<json> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (line.rfind("data: ", 0) == 0) out.push_back(json::parse(line.substr(6)));
  return out;
}

std::string embed_and_wait(vtest::Api& api, const std::string& sid, const std::string& axes = "xyz") {
  const auto r = api.post("/sessions/" + sid + "/embed", {{"axes", axes}, {"enhance", "none"}, {"created", "2026-01-01T00:00:00Z"}});
  REQUIRE(r.status == 202);
  const auto done = api.wait_job(r.body["job_id"]);
  CHECK(done["phase"] == "done");
  return r.body["cache_path"];
}

/// Independent PNG reader for 8-bit grayscale, filter type 0 only.
std::vector<std::uint8_t> decode_png_gray8(const std::string& png, std::int64_t& rows, std::int64_t& cols) {
  REQUIRE(png.substr(0, 8) == std::string("\x89PNG\r\n\x1a\n", 8));
  auto be32 = [&](std::size_t at) {
    return (std::uint32_t(std::uint8_t(png[at])) << 24) | (std::uint32_t(std::uint8_t(png[at + 1])) << 16) |
           (std::uint32_t(std::uint8_t(png[at + 2])) << 8) | std::uint32_t(std::uint8_t(png[at + 3]));
  };
  std::string idat;
  for (std::size_t at = 8; at + 8 <= png.size();) {
    const auto len = be32(at);
    const std::string type = png.substr(at + 4, 4);
    if (type == "IHDR") {
      cols = be32(at + 8);
      rows = be32(at + 12);
      CHECK(png[at + 16] == 8);
      CHECK(png[at + 17] == 0);
    } else if (type == "IDAT") {
      idat += png.substr(at + 8, len);
    }
    at += 12 + len;
  }
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(rows * (cols + 1)));
  uLongf n = raw.size();
  REQUIRE(uncompress(raw.data(), &n, reinterpret_cast<const Bytef*>(idat.data()), idat.size()) == Z_OK);
  std::vector<std::uint8_t> out;
  for (std::int64_t r = 0; r < rows; ++r) {
    CHECK(raw[static_cast<std::size_t>(r * (cols + 1))] == 0);
    out.insert(out.end(), raw.begin() + r * (cols + 1) + 1, raw.begin() + (r + 1) * (cols + 1));
  }
  return out;
}

}  // namespace

TEST_CASE("status mapping") {
  CHECK(http_status(ErrorCode::UnreadableFile) == 404);
  CHECK(http_status(ErrorCode::DimensionMismatch) == 409);
  CHECK(http_status(ErrorCode::MissingEntry) == 409);
  CHECK(http_status(ErrorCode::NothingToUndo) == 409);
  CHECK(http_status(ErrorCode::IndexOutOfRange) == 422);
  CHECK(http_status(ErrorCode::EmptyPrompt) == 422);
  CHECK(http_status(ErrorCode::TooFewKeyframes) == 422);
  CHECK(http_status(ErrorCode::CorruptPayload) == 422);
  CHECK(http_status(ErrorCode::NoEncoder) == 503);
  CHECK(http_status(ErrorCode::DiskFull) == 507);
}

TEST_CASE("sessions") {
  Server s;
  vtest::Api api(s.port);
  CHECK(api.get("/health").body["status"] == "ok");

  const auto missing = api.post("/sessions", {{"volume_path", (s.tmp / "nope.raw").string()}});
  CHECK(missing.status == 404);
  CHECK(missing.code() == "UnreadableFile");
  CHECK(missing.body.contains("message"));
  CHECK(missing.body["details"].is_object());

  CHECK(api.post("/sessions", json::object()).status == 400);
  CHECK(api.get("/sessions/s-999999").code() == "UnknownSession");
  CHECK(api.get("/sessions/s-999999").status == 404);

  const auto vol = s.volume({4, 5, 6});
  const auto r = api.post("/sessions", {{"volume_path", vol.string()}});
  REQUIRE(r.status == 200);
  CHECK(r.body["session_id"] == "s-000001");
  CHECK(r.body["dims"] == json{4, 5, 6});
  CHECK(r.body["spacing"] == json{1.0, 1.0, 1.0});
  CHECK(r.body["has_cache"] == false);

  // No cache yet: embedding-dependent endpoints answer 409.
  REQUIRE(api.post("/sessions/s-000001/segments", {{"name", "a"}}).status == 200);
  REQUIRE(api.post("/sessions/s-000001/points", {{"segment", 1}, {"axis", "z"}, {"voxel", {1, 1, 1}}}).status == 200);
  const auto nocache = api.get("/sessions/s-000001/mask?axis=z&index=1&segment=1");
  CHECK(nocache.status == 409);
  CHECK(nocache.code() == "NoCache");

  CHECK(api.del("/sessions/s-000001").status == 200);
  CHECK(api.get("/sessions/s-000001").status == 404);
}

TEST_CASE("attaching caches") {
  Server s;
  vtest::Api api(s.port);
  const auto vol = s.volume({4, 5, 6});
  const auto other = s.volume({4, 5, 7}, 2, "other.raw");
  PrecomputeOptions o;
  o.workers = 1;
  o.axes = {Axis::Z};
  const auto enc = load_encoder(vtest::stub_model_dir() / "encoder.json");
  precompute(load_volume(other), enc, s.tmp / "other.vsemb", o);
  precompute(load_volume(vol), enc, s.tmp / "good.vsemb", o);

  const auto wrong = api.post("/sessions", {{"volume_path", vol.string()}, {"cache_path", (s.tmp / "other.vsemb").string()}});
  CHECK(wrong.status == 409);
  CHECK(wrong.code() == "DimensionMismatch");

  std::string bytes = vtest::read_file(s.tmp / "good.vsemb");
  bytes[0] = 'Q';
  std::ofstream(s.tmp / "bad.vsemb", std::ios::binary) << bytes;
  const auto bad = api.post("/sessions", {{"volume_path", vol.string()}, {"cache_path", (s.tmp / "bad.vsemb").string()}});
  CHECK(bad.status == 422);
  CHECK(bad.code() == "CorruptHeader");

  const auto good = api.post("/sessions", {{"volume_path", vol.string()}, {"cache_path", (s.tmp / "good.vsemb").string()}});
  REQUIRE(good.status == 200);
  CHECK(good.body["has_cache"] == true);
  CHECK(good.body["cache_axes"] == "z");
  // Built with a different encoder file than the one the service is configured with.
  REQUIRE(good.body["warnings"].size() == 1);
  CHECK(good.body["warnings"][0]["code"] == "ModelHashMismatch");

  const auto own = load_encoder(s.tmp / "models" / "encoder.json");
  precompute(load_volume(vol), own, s.tmp / "own.vsemb", o);
  const std::string sid = good.body["session_id"];
  const auto swapped = api.post("/sessions/" + sid + "/cache", {{"cache_path", (s.tmp / "own.vsemb").string()}});
  REQUIRE(swapped.status == 200);
  CHECK(swapped.body["warnings"].empty());
}

TEST_CASE("embedding job streams progress") {
  Server s;
  vtest::Api api(s.port);
  const auto sid = api.post("/sessions", {{"volume_path", s.volume({4, 5, 6}).string()}}).body["session_id"].get<std::string>();
  const auto r = api.post("/sessions/" + sid + "/embed", {{"axes", "xyz"}, {"enhance", "none"}});
  REQUIRE(r.status == 202);
  CHECK(r.body["total"] == 15);
  std::string stream;
  auto res = api.client().Get("/jobs/" + r.body["job_id"].get<std::string>() + "/events",
                              [&](const char* data, std::size_t n) {
                                stream.append(data, n);
                                return true;
                              });
  REQUIRE(res);
  CHECK(res->get_header_value("Content-Type") == "text/event-stream");
  const auto events = parse_sse(stream);
  REQUIRE_FALSE(events.empty());
  CHECK(std::count_if(events.begin(), events.end(), [](const json& e) { return e["terminal"] == true; }) == 1);
  CHECK(events.back()["terminal"] == true);
  CHECK(events.back()["phase"] == "done");
  CHECK(events.back()["done"] == 15);
  CHECK(events.back()["total"] == 15);
  for (std::size_t i = 1; i < events.size(); ++i) CHECK(events[i]["done"] >= events[i - 1]["done"]);
  CHECK(api.get("/sessions/" + sid).body["has_cache"] == true);
  CHECK(verify_cache(events.back()["cache_path"].get<std::string>()).ok);

  CHECK(api.get("/jobs/j-424242").status == 404);
  CHECK(api.post("/sessions/" + sid + "/embed", {{"axes", "w"}}).status == 400);
}

TEST_CASE("concurrent embed and cancel") {
  Server s(40);
  vtest::Api api(s.port);
  const auto sid = api.post("/sessions", {{"volume_path", s.volume({10, 10, 10}).string()}}).body["session_id"].get<std::string>();
  const auto first = api.post("/sessions/" + sid + "/embed", json::object());
  REQUIRE(first.status == 202);
  const auto second = api.post("/sessions/" + sid + "/embed", json::object());
  CHECK(second.status == 409);
  CHECK(second.code() == "JobRunning");
  const std::string job = first.body["job_id"];
  CHECK(api.post("/jobs/" + job + "/cancel").status == 200);
  const auto end = api.wait_job(job);
  CHECK(end["phase"] == "cancelled");
  CHECK(end["terminal"] == true);
  CHECK(end["done"] < 30);
  const auto report = verify_cache(first.body["cache_path"].get<std::string>());
  CHECK_FALSE(report.complete);
  CHECK(api.get("/sessions/" + sid).body["has_cache"] == false);
  // A new job may start once the previous one is terminal.
  const auto again = api.post("/sessions/" + sid + "/embed", {{"axes", "z"}});
  CHECK(again.status == 202);
  api.post("/jobs/" + again.body["job_id"].get<std::string>() + "/cancel");
  api.wait_job(again.body["job_id"]);
}

TEST_CASE("annotation workflow") {
  Server s;
  vtest::Api api(s.port);
  const std::string sid = api.post("/sessions", {{"volume_path", s.volume({24, 20, 30}).string()}}).body["session_id"];
  embed_and_wait(api, sid, "z");
  const std::string base = "/sessions/" + sid;

  const auto seg = api.post(base + "/segments", {{"name", "grain"}, {"tag", "instance"}});
  REQUIRE(seg.status == 200);
  CHECK(seg.body["id"] == 1);
  CHECK(api.post(base + "/segments", {{"name", "x"}, {"tag", "bogus"}}).status == 400);
  CHECK(api.get(base + "/segments").body.size() == 1);

  const auto empty = api.get(base + "/mask?axis=z&index=4&segment=1");
  CHECK(empty.status == 422);
  CHECK(empty.code() == "EmptyPrompt");

  const auto p = api.post(base + "/points", {{"segment", 1}, {"axis", "z"}, {"kind", "include"}, {"voxel", {5, 5, 4}}});
  REQUIRE(p.status == 200);
  CHECK(p.body["id"] == "p-000001");
  CHECK(p.body["index"] == 4);
  CHECK(p.body["row"] == 5);
  CHECK(p.body["col"] == 5);

  const auto outside = api.post(base + "/points", {{"segment", 1}, {"axis", "z"}, {"voxel", {24, 5, 4}}});
  CHECK(outside.status == 422);
  CHECK(outside.code() == "IndexOutOfRange");
  CHECK(api.post(base + "/points", {{"segment", 9}, {"axis", "z"}, {"voxel", {1, 1, 1}}}).status == 404);
  CHECK(api.del(base + "/points/p-000077").code() == "UnknownPoint");

  const auto m = api.get(base + "/mask?axis=z&index=4&segment=1");
  REQUIRE(m.status == 200);
  const Mask2D mask = mask_from_json(m.body);
  CHECK(mask == vtest::stub_oracle({20, 24}, {{5, 5, true}}));
  CHECK(m.body["provenance"] == "decoded");
  CHECK(m.body["quality"] == 1.0);

  // Z-only cache: an X slice has no entry.
  api.post(base + "/points", {{"segment", 1}, {"axis", "x"}, {"voxel", {3, 3, 3}}});
  const auto miss = api.get(base + "/mask?axis=x&index=3&segment=1");
  CHECK(miss.status == 409);
  CHECK(miss.code() == "MissingEntry");

  CHECK(api.post(base + "/accept", {{"segment", 1}, {"axis", "z"}, {"index", 9}}).code() == "NoDecodedMask");
  const auto acc = api.post(base + "/accept", {{"segment", 1}, {"axis", "z"}, {"index", 4}});
  REQUIRE(acc.status == 200);
  CHECK(acc.body["voxels"] == 25);
  const auto lab = api.get(base + "/labels?axis=z&index=4&segment=1");
  CHECK(mask_from_json(lab.body) == mask);
  const auto all = api.get(base + "/labels?axis=z&index=4");
  CHECK(all.body["labels"].size() == 480);
  CHECK(all.body["labels"][5 * 24 + 5] == 1);

  const auto few = api.post(base + "/interpolate", {{"segment", 1}, {"axis", "z"}});
  CHECK(few.status == 422);
  CHECK(few.code() == "TooFewKeyframes");

  api.post(base + "/points", {{"segment", 1}, {"axis", "z"}, {"voxel", {12, 10, 24}}});
  REQUIRE(api.get(base + "/mask?axis=z&index=24&segment=1").status == 200);
  REQUIRE(api.post(base + "/accept", {{"segment", 1}, {"axis", "z"}, {"index", 24}}).status == 200);
  const auto kf = api.get(base + "/keyframes");
  CHECK(kf.body.dump().find("24") != std::string::npos);

  const auto fill = api.post(base + "/interpolate", {{"segment", 1}, {"axis", "z"}});
  REQUIRE(fill.status == 200);
  REQUIRE(fill.body["pairs"].size() == 1);
  CHECK(fill.body["pairs"][0]["from"] == 4);
  CHECK(fill.body["pairs"][0]["to"] == 24);
  CHECK(fill.body["pairs"][0]["slices"].size() == 19);
  CHECK(api.get(base + "/labels?axis=z&index=6&segment=1").body["rle"].size() > 1);

  for (int i = 0; i < 3; ++i) CHECK(api.post(base + "/undo").status == 200);
  const auto none = api.post(base + "/undo");
  CHECK(none.status == 409);
  CHECK(none.code() == "NothingToUndo");

  // Explicit mask upload.
  Mask2D up({20, 24});
  up.at(0, 0) = 1;
  const auto upl = api.post(base + "/accept", {{"segment", 1}, {"axis", "z"}, {"index", 0}, {"mask", mask_to_json(up)}});
  CHECK(upl.status == 200);
  CHECK(api.post(base + "/accept", {{"segment", 1}, {"axis", "z"}, {"index", 0}, {"mask", mask_to_json(Mask2D({3, 3}))}})
            .code() == "ShapeMismatch");

  CHECK(api.post(base + "/points/clear", {{"segment", 1}, {"axis", "z"}, {"index", 4}}).body["points"].empty());
  CHECK(api.post(base + "/prior", {{"enabled", false}}).body["prior_enabled"] == false);
  CHECK(api.del(base + "/segments/1").status == 200);
  CHECK(api.del(base + "/segments/1").code() == "UnknownSegment");
}

TEST_CASE("export") {
  Server s;
  vtest::Api api(s.port);
  const std::string sid = api.post("/sessions", {{"volume_path", s.volume({6, 5, 4}).string()}}).body["session_id"];
  const std::string base = "/sessions/" + sid;
  api.post(base + "/segments", {{"name", "a"}});
  Mask2D m({5, 6});
  m.at(2, 3) = 1;
  m.at(4, 5) = 1;
  REQUIRE(api.post(base + "/accept", {{"segment", 1}, {"axis", "z"}, {"index", 2}, {"mask", mask_to_json(m)}}).status == 200);

  const auto raw = api.get(base + "/export?format=raw");
  REQUIRE(raw.status == 200);
  CHECK(raw.raw.size() == 6u * 5u * 4u * 2u);
  CHECK(vtest::find_header(raw.headers, "X-VoxelSAM-Dims") == "6,5,4");
  const auto at = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    const auto o = static_cast<std::size_t>(2 * (x + 6 * (y + 5 * z)));
    return std::uint8_t(raw.raw[o]) | (std::uint8_t(raw.raw[o + 1]) << 8);
  };
  CHECK(at(3, 2, 2) == 1);
  CHECK(at(5, 4, 2) == 1);
  CHECK(at(0, 0, 2) == 0);

  const auto nrrd = api.get(base + "/export?format=nrrd");
  REQUIRE(nrrd.status == 200);
  CHECK(nrrd.raw.find("sizes: 6 5 4") != std::string::npos);
  CHECK(api.get(base + "/export?format=png").code() == "UnsupportedFormat");

  const auto out = s.tmp / "server" / "labels.nrrd";
  fs::create_directories(out.parent_path());
  REQUIRE(api.post(base + "/export", {{"path", out.string()}}).status == 200);
  CHECK(vtest::read_file(out) == nrrd.raw);
  const LabelMap back = import_labelmap(out);
  CHECK(back.segments().at(1).name == "a");
  CHECK(back.keyframes().anchors(1, Axis::Z) == std::vector<std::int64_t>{2});
}

TEST_CASE("slice rendering") {
  Server s;
  vtest::Api api(s.port);
  const auto vpath = s.volume({9, 7, 5});
  const std::string sid = api.post("/sessions", {{"volume_path", vpath.string()}}).body["session_id"];
  const Volume3D vol = load_volume(vpath);

  const auto png = api.get("/sessions/" + sid + "/slice?axis=y&index=3");
  REQUIRE(png.status == 200);
  CHECK(vtest::find_header(png.headers, "Content-Type") == "image/png");
  std::int64_t rows = 0, cols = 0;
  const auto px = decode_png_gray8(png.raw, rows, cols);
  CHECK(rows == 5);
  CHECK(cols == 9);
  const SliceImage img = extract_slice(vol, Axis::Y, 3);
  const auto expected = rescale_to_u8(img.pixels, vol.intensity_min(), vol.intensity_max());
  CHECK(px == expected);
  CHECK(api.get("/sessions/" + sid + "/slice?axis=y&index=3").raw == png.raw);

  // Window equal to the slice range reproduces the un-enhanced 8-bit path.
  const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const auto w = api.get("/sessions/" + sid + "/slice?axis=y&index=3&window=" + std::to_string(*lo) + "," + std::to_string(*hi));
  const SliceImage none = enhance_contrast(img, EnhanceParams{EnhanceMethod::None});
  const auto wpx = decode_png_gray8(w.raw, rows, cols);
  for (std::size_t i = 0; i < wpx.size(); ++i) CHECK(double(wpx[i]) == none.pixels[i]);

  CHECK(api.get("/sessions/" + sid + "/slice?axis=y&index=7").status == 416);
  CHECK(api.get("/sessions/" + sid + "/slice?axis=y&index=-1").status == 416);
  CHECK(api.get("/sessions/" + sid + "/slice?axis=y&index=0&window=abc").status == 400);

  std::vector<std::uint8_t> flat(3 * 4 * 2, 77);
  vtest::write_raw(s.tmp / "flat.raw", {3, 4, 2}, flat, "uint8");
  const std::string fid = api.post("/sessions", {{"volume_path", (s.tmp / "flat.raw").string()}}).body["session_id"];
  const auto fpng = api.get("/sessions/" + fid + "/slice?axis=z&index=1");
  const auto fpx = decode_png_gray8(fpng.raw, rows, cols);
  CHECK(std::all_of(fpx.begin(), fpx.end(), [&](std::uint8_t v) { return v == fpx[0]; }));
}

TEST_CASE("cross-origin requests from localhost") {
  Server s;
  vtest::Api api(s.port);
  const auto ok = api.get("/health", httplib::Headers{{"Origin", "http://localhost:5173"}});
  CHECK(vtest::find_header(ok.headers, "Access-Control-Allow-Origin") == "http://localhost:5173");
  const auto foreign = api.get("/health", httplib::Headers{{"Origin", "http://example.com"}});
  CHECK(vtest::find_header(foreign.headers, "Access-Control-Allow-Origin").empty());
  auto pre = api.client().Options("/sessions", {{"Origin", "http://127.0.0.1:3000"}});
  REQUIRE(pre);
  CHECK(pre->status == 204);
  CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
}

TEST_CASE("echo point") {
  Server s;
  vtest::Api api(s.port);
  const std::string sid = api.post("/sessions", {{"volume_path", s.volume({100, 100, 12}).string()}}).body["session_id"];
  const std::string path = "/sessions/" + sid + "/debug/echo-point";
  auto r = api.post(path, {{"axis", "z"}, {"voxel", {3, 7, 10}}});
  CHECK(r.body["row"] == 7);
  CHECK(r.body["col"] == 3);
  CHECK(r.body["index"] == 10);
  CHECK(r.body["inside"] == true);
  CHECK_FALSE(r.body.contains("model_coords"));
  r = api.post(path, {{"axis", "x"}, {"index", 3}, {"row", 10}, {"col", 7}});
  CHECK(r.body["voxel"] == json{3, 7, 10});
  CHECK(api.post(path, {{"axis", "z"}, {"voxel", {100, 0, 0}}}).body["inside"] == false);

  embed_and_wait(api, sid, "z");
  r = api.post(path, {{"axis", "z"}, {"voxel", {3, 3, 1}}});
  REQUIRE(r.body.contains("model_coords"));
  CHECK(r.body["model_coords"][0].get<double>() == doctest::Approx(3.5 * 0.64));
  CHECK(r.body["model_coords"][1].get<double>() == doctest::Approx(3.5 * 0.64));
}

TEST_CASE("idle sessions are evicted with a recovery file") {
  Server s;
  vtest::Api api(s.port);
  const std::string sid = api.post("/sessions", {{"volume_path", s.volume({4, 4, 4}).string()}}).body["session_id"];
  api.post("/sessions/" + sid + "/segments", {{"name", "a"}});
  CHECK(s.svc->evict_idle() == 0);
  CHECK(s.svc->evict_idle(std::chrono::steady_clock::now() + std::chrono::hours(5)) == 1);
  CHECK(fs::exists(s.tmp / "work" / (sid + ".recovery.nrrd")));
  CHECK(fs::exists(s.tmp / "work" / (sid + ".recovery.segments.json")));
  CHECK(api.get("/sessions/" + sid).status == 404);
}

TEST_CASE("a busy port is reported") {
  Server s;
  ServiceOptions o;
  o.port = s.port;
  Service second(o);
  try {
    second.bind();
    FAIL("expected PortInUse");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PortInUse);
  }
}

TEST_CASE("sessions decode concurrently") {
  Server s;
  vtest::Api setup(s.port);
  const auto vol = s.volume({32, 32, 4});
  std::vector<std::string> ids;
  for (int i = 0; i < 3; ++i) {
    const std::string sid = setup.post("/sessions", {{"volume_path", vol.string()}}).body["session_id"];
    embed_and_wait(setup, sid, "z");
    setup.post("/sessions/" + sid + "/segments", {{"name", "a"}});
    ids.push_back(sid);
  }
  std::atomic<int> bad{0};
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    threads.emplace_back([&, t] {
      vtest::Api api(s.port);
      const std::string base = "/sessions/" + ids[t];
      for (int k = 0; k < 10; ++k) {
        const std::int64_t x = 2 + k * 2, y = 3 + static_cast<std::int64_t>(t) * 5;
        api.post(base + "/points", {{"segment", 1}, {"axis", "z"}, {"voxel", {x, y, 1}}});
        const auto m = api.get(base + "/mask?axis=z&index=1&segment=1");
        if (m.status != 200 || mask_from_json(m.body).count() != 25 + 10 * k) ++bad;
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(bad == 0);
}

TEST_CASE("request log replays to an identical export") {
  vtest::TempDir logs;
  const fs::path log = logs / "requests.jsonl";
  std::string first_export;
  fs::path vol;
  {
    Server a(0, log);
    vol = a.volume({20, 16, 12});
    fs::copy_file(vol, logs / "vol.raw");
    fs::copy_file(vol.string() + ".json", logs / "vol.raw.json");
    vtest::Api api(a.port);
    const std::string sid = api.post("/sessions", {{"volume_path", (logs / "vol.raw").string()}}).body["session_id"];
    const std::string base = "/sessions/" + sid;
    embed_and_wait(api, sid, "z");
    api.post(base + "/segments", {{"name", "a"}});
    for (std::int64_t z : {1, 6, 10}) {
      api.post(base + "/points", {{"segment", 1}, {"axis", "z"}, {"voxel", {4 + z, 5, z}}});
      api.post(base + "/points", {{"segment", 1}, {"axis", "z"}, {"voxel", {6 + z, 7, z}}});
      REQUIRE(api.get(base + "/mask?axis=z&index=" + std::to_string(z) + "&segment=1").status == 200);
      REQUIRE(api.post(base + "/accept", {{"segment", 1}, {"axis", "z"}, {"index", z}}).status == 200);
    }
    REQUIRE(api.post(base + "/interpolate", {{"segment", 1}, {"axis", "z"}}).status == 200);
    first_export = api.get(base + "/export?format=nrrd").raw;
  }
  Server b;
  vtest::Api api(b.port);
  CHECK(vtest::replay_log(api, log) == 0);
  CHECK(api.get("/sessions/s-000001/export?format=nrrd").raw == first_export);
  CHECK_FALSE(first_export.empty());
}
