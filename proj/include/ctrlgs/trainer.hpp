#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ctrlgs/dataset.hpp"
#include "ctrlgs/deform_field.hpp"
#include "ctrlgs/geometry.hpp"
#include "ctrlgs/image.hpp"
#include "ctrlgs/rasterizer.hpp"
#include "ctrlgs/windows.hpp"

namespace ctrlgs {

enum class WindowMethod { kEqual, kNHighest, kThreshold };

const char* window_method_name(WindowMethod m);
WindowMethod parse_window_method(const std::string& name);  // equal | nhighest | threshold

struct LearningRates {
  double means = 1.6e-4;
  double means_final = 1.6e-6;  // exponential decay target at the last iteration
  double rotations = 5e-3;
  double log_scales = 5e-3;
  double opacity = 5e-2;
  double sh = 2.5e-3;
  double grid = 1.6e-2;
  double networks = 1.6e-3;
  double field_final_ratio = 1.0;  // grid and network rates decay exponentially to this fraction

  bool operator==(const LearningRates&) const = default;
};

/// Every tunable of a run. Serialized key-for-key by config.hpp.
struct TrainConfig {
  int iterations = 5000;
  int warmup_iterations = 3000;
  int warmup_downscale = 2;
  int densify_interval = 100;
  int densify_until = 10000;
  double densify_grad_threshold = 2e-4;  // mean NDC-space positional gradient norm
  double percent_dense = 0.01;           // clone/split scale boundary as a fraction of the scene extent
  double opacity_prune_threshold = 0.005;
  int max_gaussians = 4000;
  std::uint64_t seed = 0;
  double tv_weight = 1e-4;
  LearningRates lr;
  int eval_interval = 500;
  int threads = 1;
  bool deterministic = true;

  bool segment_heads = true;
  WindowMethod window_method = WindowMethod::kThreshold;
  int window_count = 4;
  double q = 0.5;

  HexPlaneConfig grid;  // bounds come from the dataset at initialization
  int encoder_width = 32;
  int head_hidden = 32;

  int sh_degree = 0;
  double init_opacity = 0.1;
  int init_random_count = 200;  // used when the dataset carries no point file
  int tile_size = 16;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Adaptive-moment state; rows stay aligned with the parameters they track.
struct OptimizerState {
  std::int64_t step = 0;
  std::vector<GaussianParams> m, v;
  DeformationField field_m, field_v;

  bool operator==(const OptimizerState&) const = default;
};

struct DensifyStats {
  std::vector<double> grad_accum;
  std::vector<int> count;

  void reset(std::size_t n);
  bool operator==(const DensifyStats&) const = default;
};

struct TrainState {
  TrainConfig config;
  GaussianSet canonical;
  DeformationField field;
  TemporalQuantizer quantizer;
  OptimizerState optim;
  DensifyStats stats;
  Vec3 background = Vec3::Zero();
  double scene_extent = 1.0;
  int iteration = 0;  // completed steps

  bool operator==(const TrainState& o) const;
};

struct TrainFrame {
  Camera camera;
  double t = 0.0;
  Image target;
  Image target_warmup;  // target downsampled by warmup_downscale (empty when not divisible)
};

/// Targets resident in memory, split-wise.
struct TrainData {
  std::vector<TrainFrame> train;
  std::vector<TrainFrame> val;
  Vec3 background = Vec3::Zero();
};

TrainData load_train_data(const Dataset& dataset, const TrainConfig& config);

/// Initial canonical Gaussians from a point list (or random inside the bounds).
GaussianSet initial_gaussians(const std::vector<ScenePoint>& points, const Vec3& bounds_min, const Vec3& bounds_max,
                              const TrainConfig& config);

TrainState init_state(const TrainConfig& config, const Dataset& dataset, const WindowSet& windows);

struct LossResult {
  double loss = 0.0;
  Image grad;  // dL/d(rendered image)
};

/// Mean absolute difference over all values. Throws kUsage on a shape mismatch.
LossResult photometric_loss(const Image& rendered, const Image& target);

double learning_rate(const TrainConfig& config, ParamClass cls, int iteration);

struct StepRecord {
  int iteration = 0;  // index of the step just taken
  int frame = 0;      // index into TrainData::train
  int downscale = 1;
  double loss = 0.0;  // photometric + weighted TV
  std::size_t gaussians = 0;
  bool densified = false;
};

/// Training frame visited at `iteration`: per-epoch shuffles seeded from the config seed.
int frame_for_iteration(const TrainConfig& config, int iteration, int train_frames);

/// Downscale factor used at `iteration`.
int resolution_factor(const TrainConfig& config, int iteration);

bool is_densify_iteration(const TrainConfig& config, int completed_steps);

StepRecord train_step(TrainState& state, const TrainData& data);

struct DensifyReport {
  int cloned = 0;
  int split = 0;
  int pruned = 0;
};

DensifyReport densify_and_prune(TrainState& state);

/// Deterministic major-axis split: children at mean +/- 1.2 sigma along the
/// largest axis with every scale divided by 1.6.
std::array<GaussianParams, 2> split_gaussian(const GaussianParams& g);

RenderResult render_at(const TrainState& state, const Camera& camera, double t);

struct EvalFrame {
  double t = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
  int ms_ssim_scales = 0;
};

struct EvalSummary {
  std::vector<EvalFrame> frames;
  double psnr = 0.0;  // means over frames
  double ssim = 0.0;
  double ms_ssim = 0.0;
  double seconds = 0.0;  // render time only
};

EvalSummary evaluate(const TrainState& state, const std::vector<TrainFrame>& frames);

struct MetricRecord {
  int iteration = 0;
  double loss = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

std::string format_metric_line(const MetricRecord& r);  // iter,loss,psnr,ssim

struct TrainOptions {
  int stop_at = -1;  // run until this many completed steps (default: config.iterations)
  std::filesystem::path dump_dir;  // receives a checkpoint if the loss turns non-finite
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const MetricRecord&)> on_eval;
};

/// Runs steps until the iteration budget is spent, evaluating every
/// eval_interval steps and at the end. Returns the evaluation records.
std::vector<MetricRecord> train(TrainState& state, const TrainData& data, const TrainOptions& options = {});

}  // namespace ctrlgs
