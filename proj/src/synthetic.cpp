#include "ctrlgs/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "ctrlgs/error.hpp"
#include "ctrlgs/rasterizer.hpp"
#include "ctrlgs/windows.hpp"

namespace ctrlgs {

const char* motion_preset_name(MotionPreset m) {
  switch (m) {
    case MotionPreset::kStatic: return "static";
    case MotionPreset::kLinear: return "linear";
    case MotionPreset::kTwoBurst: return "two_burst";
  }
  return "static";
}

MotionPreset parse_motion_preset(const std::string& name) {
  if (name == "static") return MotionPreset::kStatic;
  if (name == "linear") return MotionPreset::kLinear;
  if (name == "two_burst") return MotionPreset::kTwoBurst;
  fail(ErrorKind::kConfig, "unknown motion preset '" + name + "' (expected static, linear or two_burst)");
}

namespace {

// Platform-independent uniform double in [0, 1).
double uniform(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform(rng); }

Vec3 random_unit(std::mt19937_64& rng) {
  for (;;) {
    const Vec3 v(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    const double n = v.norm();
    if (n > 1e-3 && n <= 1.0) return v / n;
  }
}

Vec4 axis_angle_quaternion(const Vec3& axis, double angle) {
  const double s = std::sin(0.5 * angle);
  return Vec4(std::cos(0.5 * angle), axis[0] * s, axis[1] * s, axis[2] * s);
}

Vec4 quaternion_multiply(const Vec4& a, const Vec4& b) {
  return Vec4(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
              a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
              a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
              a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

}  // namespace

double motion_progress(const SyntheticSceneSpec& spec, double t) {
  t = std::clamp(t, 0.0, 1.0);
  switch (spec.motion) {
    case MotionPreset::kStatic: return 0.0;
    case MotionPreset::kLinear: return t;
    case MotionPreset::kTwoBurst: {
      const double b = spec.burst_fraction;
      const double lengths[4] = {0.5 - b, b, 0.5 - b, b};
      const double speed[4] = {spec.quiet_speed, 1.0, spec.quiet_speed, 1.0};
      double p = 0.0, total = 0.0, start = 0.0;
      for (int k = 0; k < 4; ++k) {
        p += speed[k] * std::clamp(t - start, 0.0, lengths[k]);
        total += speed[k] * lengths[k];
        start += lengths[k];
      }
      return p / total;
    }
  }
  return 0.0;
}

double frame_time(int k, int frame_count) { return frame_count == 1 ? 0.0 : double(k) / (frame_count - 1); }

SyntheticScene make_synthetic_scene(const SyntheticSceneSpec& spec) {
  require(spec.gaussian_count >= 1 && spec.frame_count >= 2 && spec.groups >= 1, ErrorKind::kConfig,
          "synthetic scene needs >= 1 Gaussian, >= 2 frames and >= 1 group");
  require(spec.width >= 1 && spec.height >= 1, ErrorKind::kConfig, "synthetic resolution must be positive");
  require(spec.burst_fraction > 0.0 && spec.burst_fraction < 0.5 && spec.quiet_speed >= 0.0, ErrorKind::kConfig,
          "burst_fraction must lie in (0, 0.5) and quiet_speed must be >= 0");
  std::mt19937_64 rng(spec.seed);
  SyntheticScene s;
  s.spec = spec;
  s.canonical.sh_degree = 0;
  for (int i = 0; i < spec.gaussian_count; ++i) {
    GaussianParams g = GaussianParams::zeros();
    Vec3 p;
    do {
      p = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    } while (p.squaredNorm() > 1.0);
    g.mean = p * spec.scene_radius;
    Vec4 q(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    g.rotation = q / q.norm();
    for (int a = 0; a < 3; ++a) g.log_scale[a] = std::log(uniform(rng, 0.03, 0.08));
    g.opacity_logit = logit(uniform(rng, 0.7, 0.95));
    for (int c = 0; c < 3; ++c) g.sh[c] = uniform(rng, 0.1, 0.9) / kShC0;
    s.canonical.items.push_back(g);
    s.group.push_back(i % spec.groups);
  }
  s.group_center.assign(spec.groups, Vec3::Zero());
  std::vector<int> members(spec.groups, 0);
  for (int i = 0; i < spec.gaussian_count; ++i) {
    s.group_center[s.group[i]] += s.canonical.items[i].mean;
    ++members[s.group[i]];
  }
  for (int g = 0; g < spec.groups; ++g) {
    if (members[g] > 0) s.group_center[g] /= members[g];
    s.group_direction.push_back(random_unit(rng));
    s.group_axis.push_back(random_unit(rng));
    s.group_scale.push_back(g == 0 && spec.groups > 1 ? 0.0 : uniform(rng, 0.5, 1.0));
  }
  return s;
}

GaussianSet ground_truth_at(const SyntheticScene& scene, double t) {
  const auto& spec = scene.spec;
  const double p = motion_progress(spec, t);
  GaussianSet out = scene.canonical;
  if (p == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int g = scene.group[i];
    const double k = scene.group_scale[g] * p;
    if (k == 0.0) continue;
    const Vec4 turn = axis_angle_quaternion(scene.group_axis[g], spec.max_turn * k);
    const Mat3 r = quaternion_to_matrix(turn);
    GaussianParams& gp = out.items[i];
    gp.mean = scene.group_center[g] + r * (gp.mean - scene.group_center[g]) +
              scene.group_direction[g] * (spec.amplitude * k);
    gp.rotation = quaternion_multiply(turn, gp.rotation);
  }
  return out;
}

Camera synthetic_camera(const SyntheticSceneSpec& spec, double t) {
  const double phi = spec.orbit_arc * (t - 0.5);
  const Vec3 eye(spec.orbit_radius * std::sin(phi), -spec.orbit_height, -spec.orbit_radius * std::cos(phi));
  return Camera::look_at(eye, Vec3::Zero(), Vec3(0, -1, 0), spec.fov_x, spec.width, spec.height);
}

void write_trajectory(const std::filesystem::path& path, const SyntheticScene& scene) {
  std::ofstream os(path);
  require(bool(os), ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  os << kTrajectoryFormat << '\n';
  os << "# frame t index x y z qw qx qy qz\n";
  for (int k = 0; k < scene.spec.frame_count; ++k) {
    const double t = frame_time(k, scene.spec.frame_count);
    const GaussianSet gt = ground_truth_at(scene, t);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const auto& g = gt.items[i];
      os << k << ' ' << format_shortest(t) << ' ' << i;
      for (int a = 0; a < 3; ++a) os << ' ' << format_shortest(g.mean[a]);
      for (int a = 0; a < 4; ++a) os << ' ' << format_shortest(g.rotation[a]);
      os << '\n';
    }
  }
  require(bool(os), ErrorKind::kIo, "failed writing " + path.string());
}

GeneratedDataset generate_synthetic(const SyntheticSceneSpec& spec, const std::filesystem::path& dir) {
  const SyntheticScene scene = make_synthetic_scene(spec);
  std::filesystem::create_directories(dir / "images");
  GeneratedDataset out;
  out.manifest = dir / "manifest.json";
  out.points = dir / "points.txt";
  out.trajectory = dir / "trajectory.txt";
  Dataset& ds = out.dataset;
  ds.manifest_path = out.manifest;
  ds.bounds_min = Vec3::Constant(-(spec.scene_radius + spec.amplitude + 0.2));
  ds.bounds_max = Vec3::Constant(spec.scene_radius + spec.amplitude + 0.2);
  ds.background = spec.background;
  for (int k = 0; k < spec.frame_count; ++k) {
    DatasetFrame f;
    f.t = frame_time(k, spec.frame_count);
    f.camera = synthetic_camera(spec, f.t);
    f.split = spec.val_every > 1 && k % spec.val_every == spec.val_every / 2 ? Split::kVal : Split::kTrain;
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.pfm", k);
    f.image_path = dir / "images" / name;
    const Framebuffer fb = render_reference(ground_truth_at(scene, f.t), f.camera, spec.background);
    write_pfm(f.image_path, fb.image());
    ds.frames.push_back(std::move(f));
  }
  for (const auto& g : scene.canonical.items)
    ds.points.push_back({g.mean, sh_to_color(g.sh, 0, Vec3(0, 0, 1)).rgb});
  write_points(out.points, ds.points);
  write_trajectory(out.trajectory, scene);
  write_manifest(out.manifest, ds, out.points);
  return out;
}

}  // namespace ctrlgs
