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
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <regex>
#include <set>

#include "doctest.h"
#include "http_support.hpp"
#include "test_support.hpp"
#include "voxelsam/embedding_cache.hpp"
#include "voxelsam/interpolation.hpp"
#include "voxelsam/labelmap.hpp"

using namespace voxelsam;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int exit = -1;
  std::string out;
  std::string err;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

/// Runs the CLI through the shell. `env` is a prefix of VAR=value words; HOME
/// and XDG_CONFIG_HOME always point into `home` so no user defaults leak in.
Run run(const vtest::TempDir& home, const std::string& args, const std::string& env = "") {
  const fs::path out = home / "stdout.txt", err = home / "stderr.txt";
  const std::string cmd = "env -u VOXELSAM_MODEL_DIR -u VOXELSAM_WORKERS -u VOXELSAM_CONFIG HOME=" +
                          quote(home.path().string()) + " XDG_CONFIG_HOME=" + quote((home / "xdg").string()) + " " + env +
                          " " + quote(vtest::cli_binary().string()) + " " + args + " >" + quote(out.string()) + " 2>" +
                          quote(err.string());
  const int status = std::system(cmd.c_str());
  Run r;
  r.exit = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = vtest::read_file(out);
  r.err = vtest::read_file(err);
  return r;
}

std::string models() { return quote(vtest::stub_model_dir().string()); }

fs::path make_volume(const vtest::TempDir& tmp, Dims d, const std::string& name = "vol.raw") {
  std::vector<std::uint8_t> v(static_cast<std::size_t>(d.voxel_count()));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<std::uint8_t>((i * 37) % 251);
  vtest::write_raw(tmp / name, d, v, "uint8");
  return tmp / name;
}

/// Every long flag mentioned in a help text.
std::set<std::string> flags_in(const std::string& help) {
  std::set<std::string> out;
  static const std::regex re(R"((^|[\s,])(--[a-z][a-z0-9-]*))");
  for (auto it = std::sregex_iterator(help.begin(), help.end(), re); it != std::sregex_iterator(); ++it)
    out.insert((*it)[2]);
  return out;
}

/// Background `voxelsam serve` with its first stdout line captured.
struct ServeProcess {
  pid_t pid = -1;
  int out_fd = -1;
  std::string first_line;
  fs::path err_path;

  ServeProcess(const vtest::TempDir& home, std::vector<std::string> args) {
    int fds[2];
    REQUIRE(pipe(fds) == 0);
    err_path = home / ("serve-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++) + ".err");
    pid = fork();
    if (pid == 0) {
      dup2(fds[1], 1);
      FILE* e = std::fopen(err_path.c_str(), "w");
      if (e) dup2(fileno(e), 2);
      close(fds[0]);
      ::setenv("HOME", home.path().c_str(), 1);
      ::setenv("XDG_CONFIG_HOME", (home / "xdg").c_str(), 1);
      ::unsetenv("VOXELSAM_MODEL_DIR");
      std::vector<char*> argv;
      const std::string bin = vtest::cli_binary().string();
      argv.push_back(const_cast<char*>(bin.c_str()));
      for (auto& a : args) argv.push_back(a.data());
      argv.push_back(nullptr);
      execv(bin.c_str(), argv.data());
      _exit(127);
    }
    close(fds[1]);
    out_fd = fds[0];
    char c;
    while (read(out_fd, &c, 1) == 1 && c != '\n') first_line += c;
  }
  ~ServeProcess() {
    if (pid > 0) {
      kill(pid, SIGTERM);
      waitpid(pid, nullptr, 0);
    }
    if (out_fd >= 0) close(out_fd);
  }
  int wait_exit() {
    int status = 0;
    waitpid(pid, &status, 0);
    pid = -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  static int& counter() {
    static int n = 0;
    return n;
  }
};

}  // namespace

TEST_CASE("help lists every flag") {
  vtest::TempDir home;
  const Run root = run(home, "--help");
  CHECK(root.exit == 0);
  for (const char* sub : {"embed", "serve", "interpolate", "export", "verify", "info"})
    CHECK(root.out.find(sub) != std::string::npos);
  CHECK(flags_in(root.out) == std::set<std::string>{"--help", "--model-dir", "--workers", "--log-level", "--config",
                                                     "--verbose"});
  const std::map<std::string, std::set<std::string>> expected = {
      {"embed", {"--in", "--out", "--axes", "--enhance", "--clip-limit", "--tiles", "--scalar", "--created"}},
      {"serve", {"--port", "--host", "--work-dir", "--ttl-hours", "--record"}},
      {"interpolate", {"--labels", "--segment", "--axis", "--out", "--format", "--mode"}},
      {"export", {"--labels", "--out", "--in-format", "--format"}},
      {"verify", {}},
      {"info", {}}};
  for (const auto& [sub, flags] : expected) {
    CAPTURE(sub);
    const Run r = run(home, sub + " --help");
    CHECK(r.exit == 0);
    std::set<std::string> want = flags;
    want.insert("--help");
    CHECK(flags_in(r.out) == want);
  }
}

TEST_CASE("usage errors") {
  vtest::TempDir home;
  CHECK(run(home, "").exit == 2);
  CHECK(run(home, "frobnicate").exit == 2);
  CHECK(run(home, "embed").exit == 2);
  CHECK(run(home, "verify --bogus x").exit == 2);
  const auto vol = make_volume(home, {4, 5, 6});
  CHECK(run(home, "--model-dir " + models() + " embed " + quote(vol.string()) + " --axes q").exit == 2);
}

TEST_CASE("embed, verify and info") {
  vtest::TempDir home;
  const auto vol = make_volume(home, {4, 5, 6});
  const Run e = run(home, "--model-dir " + models() + " embed " + quote(vol.string()) +
                              " --axes xyz --created 2026-01-01T00:00:00Z -o " + quote((home / "a.vsemb").string()));
  CHECK(e.exit == 0);
  CHECK(e.out.find("15/15") != std::string::npos);
  CHECK(e.out.find("progress 1/15") != std::string::npos);

  // Same inputs, same bytes; the --in spelling is equivalent.
  const Run again = run(home, "embed --in " + quote(vol.string()) + " --created 2026-01-01T00:00:00Z --out " +
                                  quote((home / "b.vsemb").string()),
                        "VOXELSAM_MODEL_DIR=" + models());
  CHECK(again.exit == 0);
  CHECK(vtest::read_file(home / "a.vsemb") == vtest::read_file(home / "b.vsemb"));

  const Run v = run(home, "verify " + quote((home / "a.vsemb").string()));
  CHECK(v.exit == 0);
  CHECK(json::parse(v.out)["ok"] == true);

  const Run z = run(home, "--model-dir " + models() + " embed " + quote(vol.string()) + " --axes z -o " +
                              quote((home / "z.vsemb").string()));
  CHECK(z.exit == 0);
  CHECK(z.out.find("6/6") != std::string::npos);
  const json zr = json::parse(run(home, "verify " + quote((home / "z.vsemb").string())).out);
  CHECK(zr["valid_entries"] == json{{"z", 6}});

  const Run missing = run(home, "--model-dir " + quote((home / "nothing").string()) + " embed " + quote(vol.string()));
  CHECK(missing.exit == 3);
  CHECK(missing.err.find("NoEncoder") != std::string::npos);
  CHECK(run(home, "embed " + quote(vol.string())).exit == 3);

  const Run info = run(home, "info " + quote(vol.string()));
  CHECK(info.exit == 0);
  const json ij = json::parse(info.out);
  CHECK(ij["dims"] == json{4, 5, 6});
  CHECK(ij["spacing"] == json{1.0, 1.0, 1.0});
  CHECK(ij["dtype"] == "uint8");
  const json cj = json::parse(run(home, "info " + quote((home / "z.vsemb").string())).out);
  CHECK(cj["dims"] == json{4, 5, 6});
  CHECK(run(home, "info " + quote((home / "absent.nrrd").string())).exit == 4);
}

TEST_CASE("verify names the corrupted entry") {
  vtest::TempDir home;
  const auto vol = make_volume(home, {4, 5, 6});
  REQUIRE(run(home, "--model-dir " + models() + " embed " + quote(vol.string()) + " --axes z -o " +
                        quote((home / "c.vsemb").string()))
              .exit == 0);
  std::string bytes = vtest::read_file(home / "c.vsemb");
  bytes[bytes.size() - 30] ^= 0x01;  // last entry payload
  std::ofstream(home / "c.vsemb", std::ios::binary | std::ios::trunc) << bytes;
  const Run v = run(home, "verify " + quote((home / "c.vsemb").string()));
  CHECK(v.exit == 4);
  const json r = json::parse(v.out);
  CHECK(r["ok"] == false);
  REQUIRE(r["issues"].size() == 1);
  CHECK(r["issues"][0]["code"] == "CorruptPayload");
  CHECK(r["issues"][0]["axis"] == "z");
  CHECK(r["issues"][0]["index"] == 5);

  std::ofstream(home / "junk.vsemb") << "not a cache";
  CHECK(run(home, "verify " + quote((home / "junk.vsemb").string())).exit == 4);
}

TEST_CASE("interpolate and export") {
  vtest::TempDir home;
  LabelMap m({16, 14, 12});
  const auto seg = m.create_segment("grain").id;
  const auto a = vtest::disk({14, 16}, 6, 6, 2), b = vtest::disk({14, 16}, 7, 8, 5);
  m.write_mask(seg, Axis::Z, 1, a, WriteMode::Overwrite, Provenance::Decoded);
  m.write_mask(seg, Axis::Z, 9, b, WriteMode::Overwrite, Provenance::Decoded);
  export_labelmap(m, home / "seg.nrrd", VolumeFormat::Nrrd);

  const Run r = run(home, "interpolate --labels " + quote((home / "seg.nrrd").string()) + " --segment 1 --axis z -o " +
                              quote((home / "filled.nrrd").string()));
  CHECK(r.exit == 0);
  const LabelMap filled = import_labelmap(home / "filled.nrrd");
  for (std::int64_t k = 2; k < 9; ++k) CHECK(filled.get_mask(seg, Axis::Z, k) == vtest::brute_interpolate(a, b, (k - 1) / 8.0));
  CHECK(filled.get_mask(seg, Axis::Z, 0).empty());
  CHECK(filled.get_mask(seg, Axis::Z, 10).empty());
  CHECK(filled.keyframes().entries(seg, Axis::Z).size() == 9);

  // In place, and identical to the library result.
  LabelMap lib = import_labelmap(home / "seg.nrrd");
  fill_between(lib, seg, Axis::Z);
  REQUIRE(run(home, "interpolate --labels " + quote((home / "seg.nrrd").string()) + " --segment 1").exit == 0);
  const LabelMap inplace = import_labelmap(home / "seg.nrrd");
  CHECK(std::equal(inplace.voxels().begin(), inplace.voxels().end(), lib.voxels().begin(), lib.voxels().end()));

  // Without a sidecar the non-empty slices act as keyframes.
  LabelMap bare({16, 14, 12});
  bare.create_segment("s");
  bare.write_mask(1, Axis::Z, 0, a);
  bare.write_mask(1, Axis::Z, 4, a);
  export_labelmap(bare, home / "bare.raw", VolumeFormat::RawJson);
  fs::remove(segments_sidecar_path(home / "bare.raw"));
  CHECK(run(home, "interpolate --labels " + quote((home / "bare.raw").string()) + " --segment 1").exit == 0);
  CHECK(import_labelmap(home / "bare.raw").get_mask(1, Axis::Z, 2) == a);

  LabelMap single({8, 8, 8});
  single.create_segment("s");
  single.write_mask(1, Axis::Z, 3, vtest::disk({8, 8}, 4, 4, 2), WriteMode::Overwrite, Provenance::Decoded);
  export_labelmap(single, home / "one.nrrd", VolumeFormat::Nrrd);
  const Run one = run(home, "interpolate --labels " + quote((home / "one.nrrd").string()) + " --segment 1");
  CHECK(one.exit == 5);
  CHECK(one.err.find("TooFewKeyframes") != std::string::npos);
  CHECK(run(home, "interpolate --labels " + quote((home / "one.nrrd").string()) + " --segment 1 --axis w").exit == 2);

  // Export: nrrd -> tiff -> raw -> nrrd keeps every voxel and the segment table.
  REQUIRE(run(home, "export --labels " + quote((home / "filled.nrrd").string()) + " -o " + quote((home / "e.tif").string()))
              .exit == 0);
  REQUIRE(run(home, "export --labels " + quote((home / "e.tif").string()) + " -o " + quote((home / "e.raw").string())).exit == 0);
  REQUIRE(run(home, "export --labels " + quote((home / "e.raw").string()) + " -o " + quote((home / "e.nrrd").string()) +
                        " --format nrrd")
              .exit == 0);
  const LabelMap round = import_labelmap(home / "e.nrrd");
  CHECK(std::equal(round.voxels().begin(), round.voxels().end(), filled.voxels().begin(), filled.voxels().end()));
  CHECK(round.segments().at(1).name == "grain");
  CHECK(round.keyframes() == filled.keyframes());
  REQUIRE(run(home, "export --labels " + quote((home / "e.nrrd").string()) + " -o " + quote((home / "f.nrrd").string())).exit ==
          0);
  CHECK(vtest::read_file(home / "f.nrrd") == vtest::read_file(home / "e.nrrd"));
}

TEST_CASE("configuration precedence") {
  vtest::TempDir home;
  const auto vol = make_volume(home, {2, 2, 2});
  fs::create_directories(home / "xdg" / "voxelsam");
  std::ofstream(home / "xdg" / "voxelsam" / "defaults.json") << json{{"model_dir", "/from/file"}, {"workers", 3}}.dump();
  auto effective = [&](const std::string& args, const std::string& env = "") {
    const Run r = run(home, "-v " + args + " info " + quote(vol.string()), env);
    REQUIRE(r.exit == 0);
    const auto at = r.err.find("effective config: ");
    REQUIRE(at != std::string::npos);
    const auto line = r.err.substr(at + 18, r.err.find('\n', at) - at - 18);
    return json::parse(line);
  };
  json c = effective("");
  CHECK(c["model_dir"] == "/from/file");
  CHECK(c["workers"] == 3);
  CHECK(c["log_level"] == "info");
  CHECK(c["origin"]["model_dir"] == "file");
  CHECK(c["origin"]["log_level"] == "default");

  c = effective("", "VOXELSAM_MODEL_DIR=/from/env VOXELSAM_WORKERS=5");
  CHECK(c["model_dir"] == "/from/env");
  CHECK(c["workers"] == 5);
  CHECK(c["origin"]["workers"] == "env");

  c = effective("--model-dir /from/flag --workers 7", "VOXELSAM_MODEL_DIR=/from/env VOXELSAM_WORKERS=5");
  CHECK(c["model_dir"] == "/from/flag");
  CHECK(c["workers"] == 7);
  CHECK(c["origin"]["model_dir"] == "flag");

  std::ofstream(home / "other.json") << json{{"workers", 9}}.dump();
  c = effective("--config " + quote((home / "other.json").string()));
  CHECK(c["workers"] == 9);
  CHECK(c["model_dir"] == "");
  c = effective("", "VOXELSAM_CONFIG=" + quote((home / "other.json").string()));
  CHECK(c["workers"] == 9);

  CHECK(run(home, "info " + quote(vol.string()), "VOXELSAM_WORKERS=many").exit == 2);
}

TEST_CASE("serve") {
  vtest::TempDir home;
  {
    ServeProcess p(home, {"--model-dir", vtest::stub_model_dir().string(), "serve", "--port", "0", "--work-dir",
                          (home / "work").string()});
    std::smatch m;
    REQUIRE(std::regex_match(p.first_line, m, std::regex(R"(listening on http://127\.0\.0\.1:(\d+))")));
    const int port = std::stoi(m[1]);
    CHECK(port > 0);
    vtest::Api api(port);
    CHECK(api.get("/health").body["status"] == "ok");

    ServeProcess clash(home, {"serve", "--port", std::to_string(port)});
    CHECK(clash.wait_exit() == 5);
    CHECK(vtest::read_file(clash.err_path).find("PortInUse") != std::string::npos);
  }
  {
    ServeProcess p(home, {"serve"});
    CHECK(p.first_line == "listening on http://127.0.0.1:8642");
  }
}
