#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ctrlgs/windows.hpp"

using namespace ctrlgs;

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

struct Workspace {
  fs::path dir = fs::temp_directory_path() / "ctrlgs_cli_test";

  Workspace() {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }

  Run run(const std::string& args) const {
    const std::string cmd = std::string(CTRLGS_CLI_PATH) + " " + args + " >" + (dir / "stdout").string() + " 2>" +
                            (dir / "stderr").string();
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(dir / "stdout");
    r.err = slurp(dir / "stderr");
    return r;
  }

  std::string p(const std::string& name) const { return (dir / name).string(); }
};

// One line, "error: <kind>: message".
void check_error(const Run& r, int code, const std::string& kind) {
  CHECK(r.code == code);
  CHECK(r.err.rfind("error: " + kind + ": ", 0) == 0);
  CHECK(r.err.find('\n') == r.err.size() - 1);
}

}  // namespace

TEST_CASE("pipeline commands and their error exits") {
  Workspace ws;
  REQUIRE(ws.run("gen --out " + ws.p("scene") + " --frames 12 --gaussians 40 --width 32 --height 32").code == 0);
  const std::string manifest = ws.p("scene/manifest.json");
  CHECK(fs::exists(ws.p("scene/trajectory.txt")));

  Run r = ws.run("flow --manifest " + manifest + " --out " + ws.p("flow.txt"));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("peaks") != std::string::npos);
  CHECK(slurp(ws.p("flow.txt")).rfind("frame_pair_flow_v1\n", 0) == 0);
  CHECK(fs::exists(ws.p("flow.csv")));

  REQUIRE(ws.run("segment --method equal -n 4 --out " + ws.p("w4.txt")).code == 0);
  CHECK(slurp(ws.p("w4.txt")) == "windows_v1\n0\n0.25\n0.5\n0.75\n1\n");

  std::ofstream(ws.p("greedy_flow.txt")) << "frame_pair_flow_v1\n1\n2\n3\n2\n1\n3\n";
  REQUIRE(ws.run("segment --method threshold -n 3 --flow " + ws.p("greedy_flow.txt") + " --out " + ws.p("g.txt")).code == 0);
  const WindowSet g = read_windows_file(ws.p("g.txt"));
  REQUIRE(g.count() == 3);
  CHECK(g.boundaries[1] == doctest::Approx(2.5 / 6).epsilon(1e-15));
  CHECK(g.boundaries[2] == doctest::Approx(5.5 / 6).epsilon(1e-15));

  check_error(ws.run("segment --method equal -n 0 --out " + ws.p("w0.txt")), 2, "usage_error");
  check_error(ws.run("segment --method nhighest -n 3 --out " + ws.p("w3.txt")), 2, "usage_error");

  check_error(ws.run("train --manifest " + manifest + " --out " + ws.p("bad") + " --set iterations=5"), 1, "config_error");
  check_error(ws.run("train --manifest " + manifest + " --out " + ws.p("bad") + " --set window_method=threshold"), 2,
              "usage_error");
  check_error(ws.run("train --manifest " + manifest + " --out " + ws.p("bad") + " --set iterationz=5"), 1, "config_error");

  // Zero iterations: the checkpoint holds zero-initialized heads.
  REQUIRE(ws.run("train --manifest " + manifest + " --out " + ws.p("zero") +
                 " --set iterations=0 --set warmup_iterations=0 --windows " + ws.p("w4.txt") + " --quiet")
              .code == 0);
  REQUIRE(ws.run("render --checkpoint " + ws.p("zero/checkpoint.ckpt") + " --manifest " + manifest +
                 " --t 0.1,0.9 --out " + ws.p("renders"))
              .code == 0);
  CHECK(slurp(ws.p("renders/render_000.pfm")) == slurp(ws.p("renders/render_001.pfm")));
  check_error(ws.run("render --checkpoint " + ws.p("zero/checkpoint.ckpt") + " --manifest " + manifest +
                     " --t 1.5 --out " + ws.p("renders")),
              2, "usage_error");

  REQUIRE(ws.run("train --manifest " + manifest + " --out " + ws.p("run") + " --flow " + ws.p("flow.txt") +
                 " --set iterations=40 --set warmup_iterations=10 --set eval_interval=20 --set window_count=3 --quiet")
              .code == 0);
  CHECK(fs::exists(ws.p("run/config.json")));
  CHECK(fs::exists(ws.p("run/windows.txt")));
  const std::string metrics = slurp(ws.p("run/metrics.csv"));
  CHECK(metrics.rfind("iter,loss,psnr,ssim\n20,", 0) == 0);
  CHECK(metrics.find("\n40,") != std::string::npos);

  r = ws.run("eval --checkpoint " + ws.p("run/checkpoint.ckpt") + " --manifest " + manifest + " --split val --csv " +
             ws.p("eval.csv"));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("frames/s") != std::string::npos);
  CHECK(slurp(ws.p("eval.csv")).rfind("t,psnr,ssim,ms_ssim,ms_ssim_scales\n", 0) == 0);

  // Evaluating against the checkpoint's own renders reports the sentinel.
  json doc = json::parse(slurp(manifest));
  for (std::size_t k = 0; k < doc["frames"].size(); ++k) {
    auto& f = doc["frames"][k];
    if (f["split"] != "val") continue;
    std::ostringstream t;
    t.precision(17);
    t << f["t"].get<double>();
    const std::string out = ws.p("self" + std::to_string(k));
    REQUIRE(ws.run("render --checkpoint " + ws.p("run/checkpoint.ckpt") + " --manifest " + manifest + " --frame " +
                   std::to_string(k) + " --t " + t.str() + " --out " + out)
                .code == 0);
    f["image"] = fs::path(out + "/render_000.pfm").lexically_relative(ws.p("scene")).generic_string();
  }
  std::ofstream(ws.p("scene/self.json")) << doc.dump();
  r = ws.run("eval --checkpoint " + ws.p("run/checkpoint.ckpt") + " --manifest " + ws.p("scene/self.json") +
             " --split val --csv " + ws.p("self.csv"));
  REQUIRE(r.code == 0);
  CHECK(slurp(ws.p("self.csv")).find("\nmean,100,") != std::string::npos);

  for (auto& f : doc["frames"]) f["split"] = "train";
  std::ofstream(ws.p("scene/allTrain.json")) << doc.dump();
  check_error(ws.run("eval --checkpoint " + ws.p("run/checkpoint.ckpt") + " --manifest " + ws.p("scene/allTrain.json") +
                     " --split val --csv " + ws.p("x.csv")),
              2, "usage_error");

  // Resume picks up from the saved iteration.
  REQUIRE(ws.run("train --manifest " + manifest + " --out " + ws.p("run") + " --resume " + ws.p("run/checkpoint.ckpt") +
                 " --set iterations=60 --quiet")
              .code == 0);
  CHECK(slurp(ws.p("run/metrics.csv")).find("\n60,") != std::string::npos);

  std::string ckpt = slurp(ws.p("run/checkpoint.ckpt"));
  std::ofstream(ws.p("broken.ckpt"), std::ios::binary) << ckpt.substr(0, ckpt.size() / 2);
  r = ws.run("render --checkpoint " + ws.p("broken.ckpt") + " --manifest " + manifest + " --t 0.5 --out " +
             ws.p("renders"));
  check_error(r, 1, "load_error");
  CHECK(r.err.find("checkpoint section ") != std::string::npos);

  std::ofstream(ws.p("scene/empty.json")) << R"({"format": "ctrlgs_manifest_v1", "frames": []})";
  check_error(ws.run("train --manifest " + ws.p("scene/empty.json") + " --out " + ws.p("e")), 1, "ingestion_error");
}
