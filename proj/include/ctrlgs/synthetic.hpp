#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctrlgs/dataset.hpp"
#include "ctrlgs/geometry.hpp"

namespace ctrlgs {

enum class MotionPreset { kStatic, kLinear, kTwoBurst };

const char* motion_preset_name(MotionPreset m);
MotionPreset parse_motion_preset(const std::string& name);  // static | linear | two_burst

struct SyntheticSceneSpec {
  int gaussian_count = 200;
  int width = 64;
  int height = 64;
  int frame_count = 60;
  std::uint64_t seed = 1;
  MotionPreset motion = MotionPreset::kTwoBurst;
  int groups = 4;                 // rigid groups; group 0 stays still
  double amplitude = 0.8;         // world units travelled by a moving group over the clip
  double max_turn = 0.6;          // radians turned by a moving group over the clip
  double quiet_speed = 0.1;       // quiet-phase speed relative to a burst (two_burst)
  double burst_fraction = 0.25;   // length of each burst as a fraction of the clip (two_burst)
  double scene_radius = 0.6;
  double orbit_radius = 3.0;
  double orbit_height = 0.8;
  double orbit_arc = 0.4;         // radians swept by the camera over the clip
  double fov_x = 0.55;
  int val_every = 4;              // frame k validates when k % val_every == val_every / 2
  Vec3 background = Vec3::Zero();
};

struct SyntheticScene {
  SyntheticSceneSpec spec;
  GaussianSet canonical;               // state at t = 0
  std::vector<int> group;              // per Gaussian
  std::vector<Vec3> group_center;
  std::vector<Vec3> group_direction;   // unit translation direction
  std::vector<Vec3> group_axis;        // unit rotation axis
  std::vector<double> group_scale;     // 0 for the still group, else in [0.5, 1]
};

/// Motion progress in [0, 1]; two_burst runs quiet / fast / quiet / fast, each
/// burst lasting burst_fraction and each quiet phase 0.5 - burst_fraction.
double motion_progress(const SyntheticSceneSpec& spec, double t);

SyntheticScene make_synthetic_scene(const SyntheticSceneSpec& spec);
GaussianSet ground_truth_at(const SyntheticScene& scene, double t);
Camera synthetic_camera(const SyntheticSceneSpec& spec, double t);
double frame_time(int k, int frame_count);

struct GeneratedDataset {
  std::filesystem::path manifest;
  std::filesystem::path points;
  std::filesystem::path trajectory;
  Dataset dataset;
};

/// Renders every frame with the reference renderer and writes PF images,
/// manifest, point file and ground-truth trajectory table under `dir`.
GeneratedDataset generate_synthetic(const SyntheticSceneSpec& spec, const std::filesystem::path& dir);

void write_trajectory(const std::filesystem::path& path, const SyntheticScene& scene);

}  // namespace ctrlgs
