#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "ctrlgs/checkpoint.hpp"
#include "ctrlgs/error.hpp"
#include "toy_problem.hpp"

using namespace ctrlgs;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path dir = fs::temp_directory_path() / "ctrlgs_checkpoint_test";
  testing::ToyProblem problem;
  TrainConfig config;

  Fixture() {
    fs::remove_all(dir);
    fs::create_directories(dir);
    SyntheticSceneSpec spec;
    spec.gaussian_count = 25;
    spec.width = 32;
    spec.height = 32;
    spec.frame_count = 8;
    problem = testing::make_toy_problem(spec);
    config.iterations = 60;
    config.warmup_iterations = 10;
    config.densify_interval = 20;
    config.densify_grad_threshold = 1e-5;
    config.max_gaussians = 40;
    config.grid.spatial_resolution = 6;
    config.grid.temporal_resolution = 4;
    config.encoder_width = 12;
    config.head_hidden = 12;
    config.window_count = 3;
  }
  ~Fixture() { fs::remove_all(dir); }

  TrainState fresh() const { return init_state(config, problem.dataset, equal_windows(config.window_count)); }
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void spit(const fs::path& p, const std::string& bytes) { std::ofstream(p, std::ios::binary) << bytes; }

std::string load_error(const fs::path& p) {
  try {
    load_checkpoint(p);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kLoad);
    return e.what();
  }
  FAIL("expected a load error");
  return {};
}

// Offset of a section's 4-byte tag.
std::size_t find_section(const std::string& bytes, const char* tag) {
  std::size_t pos = 12;
  while (pos + 12 <= bytes.size()) {
    std::uint64_t len;
    std::memcpy(&len, bytes.data() + pos + 4, 8);
    if (bytes.compare(pos, 4, tag) == 0) return pos;
    pos += 12 + len;
  }
  return std::string::npos;
}

}  // namespace

TEST_CASE_FIXTURE(Fixture, "round trip preserves the whole state") {
  TrainState s = fresh();
  TrainOptions o;
  o.stop_at = 45;
  train(s, problem.data, o);
  save_checkpoint(dir / "a.ckpt", s);
  const TrainState back = load_checkpoint(dir / "a.ckpt");
  CHECK(back == s);
  save_checkpoint(dir / "b.ckpt", back);
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));

  const Camera cam = problem.data.val[0].camera;
  CHECK(render_at(back, cam, 0.37).image == render_at(s, cam, 0.37).image);

  save_checkpoint(dir / "light.ckpt", s, false);
  const TrainState light = load_checkpoint(dir / "light.ckpt");
  CHECK(light.canonical == s.canonical);
  CHECK(light.field == s.field);
  CHECK(light.optim.m.size() == s.canonical.size());
}

TEST_CASE_FIXTURE(Fixture, "resume continues bit-for-bit") {
  TrainState full = fresh();
  std::vector<double> losses;
  TrainOptions o;
  o.on_step = [&](const StepRecord& r) { losses.push_back(r.loss); };
  train(full, problem.data, o);

  TrainState part = fresh();
  TrainOptions stop;
  stop.stop_at = 37;
  train(part, problem.data, stop);
  save_checkpoint(dir / "mid.ckpt", part);
  TrainState resumed = load_checkpoint(dir / "mid.ckpt");
  const StepRecord next = train_step(resumed, problem.data);
  CHECK(next.loss == losses[37]);
  train(resumed, problem.data);
  CHECK(resumed == full);
}

TEST_CASE_FIXTURE(Fixture, "corrupt checkpoints name the failing section") {
  save_checkpoint(dir / "ok.ckpt", fresh());
  const std::string good = slurp(dir / "ok.ckpt");

  std::string bad = good;
  bad[0] = 'X';
  spit(dir / "magic.ckpt", bad);
  CHECK(load_error(dir / "magic.ckpt").find("section header") != std::string::npos);

  bad = good;
  bad[8] = 2;  // version 2
  spit(dir / "version.ckpt", bad);
  CHECK(load_error(dir / "version.ckpt").find("unsupported format version 2") != std::string::npos);

  spit(dir / "short.ckpt", good.substr(0, good.size() - 7));
  CHECK(load_error(dir / "short.ckpt").find("STAT") != std::string::npos);

  bad = good;
  const std::size_t fild = find_section(good, "FILD");
  REQUIRE(fild != std::string::npos);
  bad[fild + 12] = 0;  // grid feature count 0
  bad[fild + 13] = 0;
  spit(dir / "field.ckpt", bad);
  CHECK(load_error(dir / "field.ckpt").find("section FILD") != std::string::npos);

  bad = good;
  const std::size_t gaus = find_section(good, "GAUS");
  bad.replace(gaus, 4, "GAUZ");
  spit(dir / "unknown.ckpt", bad);
  CHECK(load_error(dir / "unknown.ckpt").find("GAUZ") != std::string::npos);

  CHECK(load_error(dir / "absent.ckpt").find("cannot open") != std::string::npos);
}
