#include "ctrlgs/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "ctrlgs/checkpoint.hpp"
#include "ctrlgs/error.hpp"
#include "ctrlgs/metrics.hpp"

namespace ctrlgs {

const char* window_method_name(WindowMethod m) {
  switch (m) {
    case WindowMethod::kEqual: return "equal";
    case WindowMethod::kNHighest: return "nhighest";
    case WindowMethod::kThreshold: return "threshold";
  }
  return "equal";
}

WindowMethod parse_window_method(const std::string& name) {
  if (name == "equal") return WindowMethod::kEqual;
  if (name == "nhighest") return WindowMethod::kNHighest;
  if (name == "threshold") return WindowMethod::kThreshold;
  fail(ErrorKind::kUsage, "unknown window method '" + name + "' (expected equal, nhighest or threshold)");
}

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorKind::kConfig, msg); };
  check(iterations >= 0, "iterations must be >= 0");
  check(warmup_iterations >= 0 && warmup_iterations <= iterations, "warmup_iterations must lie in [0, iterations]");
  check(warmup_downscale >= 1, "warmup_downscale must be >= 1");
  check(densify_interval >= 1, "densify_interval must be >= 1");
  check(densify_grad_threshold >= 0.0, "densify_grad_threshold must be >= 0");
  check(percent_dense >= 0.0, "percent_dense must be >= 0");
  check(opacity_prune_threshold > 0.0 && opacity_prune_threshold < 1.0, "opacity_prune_threshold must lie in (0, 1)");
  check(max_gaussians >= 1, "max_gaussians must be >= 1");
  check(tv_weight >= 0.0, "tv_weight must be >= 0");
  for (double v : {lr.means, lr.means_final, lr.rotations, lr.log_scales, lr.opacity, lr.sh, lr.grid, lr.networks})
    check(std::isfinite(v) && v >= 0.0, "learning rates must be finite and >= 0");
  check(lr.means == 0.0 || lr.means_final > 0.0, "lr_means_final must be > 0 when lr_means is");
  check(lr.field_final_ratio > 0.0 && lr.field_final_ratio <= 1.0, "lr_field_final_ratio must lie in (0, 1]");
  check(eval_interval >= 1, "eval_interval must be >= 1");
  check(threads >= 1, "threads must be >= 1");
  check(window_count >= 1, "window_count must be >= 1");
  check(q >= 0.0 && q < 1.0, "q must lie in [0, 1)");
  check(grid.features >= 1 && grid.levels >= 1 && grid.upsample >= 1, "grid dimensions must be >= 1");
  check(grid.spatial_resolution >= 2 && grid.temporal_resolution >= 2, "grid resolutions must be >= 2");
  check(grid.init_noise >= 0.0, "grid_init_noise must be >= 0");
  check(encoder_width >= 1 && head_hidden >= 1, "network widths must be >= 1");
  check(sh_degree == 0 || sh_degree == 1, "sh_degree must be 0 or 1");
  check(init_opacity > 0.0 && init_opacity < 1.0, "init_opacity must lie in (0, 1)");
  check(init_random_count >= 1, "init_random_count must be >= 1");
  check(tile_size >= 1, "tile_size must be >= 1");
}

void DensifyStats::reset(std::size_t n) {
  grad_accum.assign(n, 0.0);
  count.assign(n, 0);
}

bool TrainState::operator==(const TrainState& o) const {
  return config == o.config && canonical == o.canonical && field == o.field &&
         quantizer.windows() == o.quantizer.windows() && quantizer.q() == o.quantizer.q() &&
         quantizer.known_timestamps() == o.quantizer.known_timestamps() && optim == o.optim && stats == o.stats &&
         background == o.background && scene_extent == o.scene_extent && iteration == o.iteration;
}

TrainData load_train_data(const Dataset& dataset, const TrainConfig& config) {
  TrainData data;
  data.background = dataset.background;
  for (const auto& f : dataset.frames) {
    if (f.split == Split::kUnused) continue;
    TrainFrame tf;
    tf.camera = f.camera;
    tf.t = f.t;
    tf.target = read_image(f.image_path);
    require(tf.target.width == f.camera.width && tf.target.height == f.camera.height, ErrorKind::kIngestion,
            f.image_path.string() + ": image size disagrees with its camera");
    const int d = config.warmup_downscale;
    if (d > 1 && f.camera.width % d == 0 && f.camera.height % d == 0) tf.target_warmup = downsample(tf.target, d);
    (f.split == Split::kTrain ? data.train : data.val).push_back(std::move(tf));
  }
  require(!data.train.empty(), ErrorKind::kUsage, "dataset has no training frames");
  return data;
}

GaussianSet initial_gaussians(const std::vector<ScenePoint>& points, const Vec3& bounds_min, const Vec3& bounds_max,
                              const TrainConfig& config) {
  std::vector<ScenePoint> pts = points;
  if (pts.empty()) {
    std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ull);
    for (int i = 0; i < config.init_random_count; ++i) {
      ScenePoint p;
      for (int a = 0; a < 3; ++a)
        p.position[a] = bounds_min[a] + (bounds_max[a] - bounds_min[a]) * (double(rng() >> 11) * 0x1.0p-53);
      pts.push_back(p);
    }
  }
  GaussianSet set;
  set.sh_degree = config.sh_degree;
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    // Scale from the mean squared distance to the three nearest neighbours.
    std::array<double, 3> best{1e30, 1e30, 1e30};
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d2 = (pts[i].position - pts[j].position).squaredNorm();
      if (d2 < best[2]) {
        best[2] = d2;
        std::sort(best.begin(), best.end());
      }
    }
    int used = 0;
    double sum = 0.0;
    for (double d2 : best)
      if (d2 < 1e30) {
        sum += d2;
        ++used;
      }
    const double dist2 = used > 0 ? std::max(sum / used, 1e-7) : 0.01;
    GaussianParams g = GaussianParams::zeros();
    g.mean = pts[i].position;
    g.rotation = Vec4(1, 0, 0, 0);
    g.log_scale = Vec3::Constant(std::log(std::sqrt(dist2)));
    g.opacity_logit = logit(config.init_opacity);
    for (int c = 0; c < 3; ++c) g.sh[c] = std::clamp(pts[i].color[c], 0.0, 1.0) / kShC0;
    set.items.push_back(g);
  }
  return set;
}

TrainState init_state(const TrainConfig& config, const Dataset& dataset, const WindowSet& windows) {
  config.validate();
  TrainState s;
  s.config = config;
  s.canonical = initial_gaussians(dataset.points, dataset.bounds_min, dataset.bounds_max, config);
  DeformConfig dc;
  dc.grid = config.grid;
  dc.grid.bounds_min = dataset.bounds_min;
  dc.grid.bounds_max = dataset.bounds_max;
  dc.encoder_width = config.encoder_width;
  dc.head_hidden = config.head_hidden;
  dc.segment_heads = config.segment_heads;
  s.field = DeformationField::create(dc, config.seed);
  s.quantizer = TemporalQuantizer(windows, config.q, dataset.timestamps(Split::kTrain));
  s.optim.m.assign(s.canonical.size(), GaussianParams::zeros());
  s.optim.v = s.optim.m;
  s.optim.field_m = s.field.zeros_like();
  s.optim.field_v = s.optim.field_m;
  s.stats.reset(s.canonical.size());
  s.background = dataset.background;
  s.scene_extent = 0.5 * (dataset.bounds_max - dataset.bounds_min).maxCoeff();
  return s;
}

LossResult photometric_loss(const Image& rendered, const Image& target) {
  require(rendered.same_shape(target), ErrorKind::kUsage,
          "photometric loss: rendered " + std::to_string(rendered.width) + "x" + std::to_string(rendered.height) +
              " vs target " + std::to_string(target.width) + "x" + std::to_string(target.height));
  LossResult r;
  r.grad = Image(rendered.width, rendered.height);
  const double inv = 1.0 / double(std::max<std::size_t>(rendered.data.size(), 1));
  for (std::size_t i = 0; i < rendered.data.size(); ++i) {
    const double d = rendered.data[i] - target.data[i];
    r.loss += std::abs(d);
    r.grad.data[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
  }
  r.loss *= inv;
  return r;
}

double learning_rate(const TrainConfig& config, ParamClass cls, int iteration) {
  const LearningRates& lr = config.lr;
  switch (cls) {
    case ParamClass::kMeans: {
      if (lr.means == 0.0) return 0.0;
      const double r = config.iterations > 0 ? std::clamp(double(iteration) / config.iterations, 0.0, 1.0) : 0.0;
      return std::exp(std::log(lr.means) * (1.0 - r) + std::log(lr.means_final) * r);
    }
    case ParamClass::kRotations: return lr.rotations;
    case ParamClass::kLogScales: return lr.log_scales;
    case ParamClass::kOpacity: return lr.opacity;
    case ParamClass::kSh: return lr.sh;
    default: {
      const double base = cls == ParamClass::kGrid ? lr.grid : lr.networks;
      if (lr.field_final_ratio == 1.0) return base;
      const double r = config.iterations > 0 ? std::clamp(double(iteration) / config.iterations, 0.0, 1.0) : 0.0;
      return base * std::pow(lr.field_final_ratio, r);
    }
  }
}

int frame_for_iteration(const TrainConfig& config, int iteration, int train_frames) {
  const int epoch = iteration / train_frames;
  std::vector<int> order(train_frames);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed * 0x100000001B3ull + std::uint64_t(epoch));
  for (int i = train_frames - 1; i > 0; --i) std::swap(order[i], order[rng() % std::uint64_t(i + 1)]);
  return order[iteration % train_frames];
}

int resolution_factor(const TrainConfig& config, int iteration) {
  return iteration < config.warmup_iterations ? config.warmup_downscale : 1;
}

bool is_densify_iteration(const TrainConfig& config, int completed_steps) {
  return completed_steps > 0 && completed_steps % config.densify_interval == 0 &&
         completed_steps <= config.densify_until;
}

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-15;

void adam_update(double* p, double* m, double* v, const double* g, int n, double lr, double c1, double c2) {
  for (int i = 0; i < n; ++i) {
    m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
    v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
    if (lr != 0.0) p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
  }
}

void optimizer_step(TrainState& s, std::vector<GaussianParams>& grad_canonical, DeformationField& grad_field) {
  OptimizerState& o = s.optim;
  ++o.step;
  const double c1 = 1.0 - std::pow(kBeta1, double(o.step));
  const double c2 = 1.0 - std::pow(kBeta2, double(o.step));
  const int it = s.iteration;
  double lrs[5];
  for (int k = 0; k < 5; ++k) lrs[k] = learning_rate(s.config, ParamClass(k), it);
  for (std::size_t i = 0; i < s.canonical.size(); ++i) {
    GaussianParams& p = s.canonical.items[i];
    double* ptrs[5];
    for_each_field(p, [&](int k, double* d, int) { ptrs[k] = d; });
    double* ms[5];
    for_each_field(o.m[i], [&](int k, double* d, int) { ms[k] = d; });
    double* vs[5];
    for_each_field(o.v[i], [&](int k, double* d, int) { vs[k] = d; });
    for_each_field(grad_canonical[i], [&](int k, double* g, int n) { adam_update(ptrs[k], ms[k], vs[k], g, n, lrs[k], c1, c2); });
    if (lrs[1] != 0.0) {
      const double norm = p.rotation.norm();
      if (norm > 0.0) p.rotation /= norm;
    }
  }
  auto params = s.field.tensors();
  auto grads = grad_field.tensors();
  auto ms = o.field_m.tensors();
  auto vs = o.field_v.tensors();
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!s.field.config.segment_heads && params[k].cls >= ParamClass::kSegmentHeadX) continue;
    adam_update(params[k].values.data(), ms[k].values.data(), vs[k].values.data(), grads[k].values.data(),
                static_cast<int>(params[k].values.size()), learning_rate(s.config, params[k].cls, it), c1, c2);
  }
}

bool all_finite(const std::vector<GaussianParams>& g) {
  for (const auto& p : g) {
    bool ok = true;
    for_each_field(p, [&](int, const double* d, int n) {
      for (int i = 0; i < n; ++i) ok = ok && std::isfinite(d[i]);
    });
    if (!ok) return false;
  }
  return true;
}

RenderOptions render_options(const TrainConfig& c) {
  RenderOptions ro;
  ro.tile_size = c.tile_size;
  ro.composite.threads = c.threads;
  return ro;
}

}  // namespace

StepRecord train_step(TrainState& state, const TrainData& data) {
  require(!data.train.empty(), ErrorKind::kUsage, "train_step: no training frames");
  const TrainConfig& cfg = state.config;
  StepRecord rec;
  rec.iteration = state.iteration;
  rec.frame = frame_for_iteration(cfg, state.iteration, static_cast<int>(data.train.size()));
  const TrainFrame& frame = data.train[rec.frame];
  rec.downscale = resolution_factor(cfg, state.iteration);
  if (rec.downscale > 1 && frame.target_warmup.data.empty()) rec.downscale = 1;
  const Camera camera = frame.camera.downscaled(rec.downscale);
  const Image& target = rec.downscale > 1 ? frame.target_warmup : frame.target;

  DeformTrace trace;
  const GaussianSet deformed = deform(state.canonical, frame.t, state.quantizer, state.field, &trace);
  const RenderOptions ro = render_options(cfg);
  const RenderResult rendered = render(deformed, camera, state.background, ro);
  const LossResult loss = photometric_loss(rendered.image, target);

  DeformationField grad_field = state.field.zeros_like();
  const double tv = cfg.tv_weight > 0.0 ? state.field.grid.total_variation(&grad_field.grid, cfg.tv_weight) : 0.0;
  rec.loss = loss.loss + cfg.tv_weight * tv;
  if (!std::isfinite(rec.loss))
    fail(ErrorKind::kNumeric, "non-finite loss at iteration " + std::to_string(state.iteration));

  const GaussianGradients gg = render_backward(deformed, rendered, loss.grad, ro);
  std::vector<GaussianParams> grad_canonical(state.canonical.size(), GaussianParams::zeros());
  deform_backward(state.canonical, state.field, trace, gg.params, grad_canonical, grad_field);
  if (!all_finite(grad_canonical))
    fail(ErrorKind::kNumeric, "non-finite gradient at iteration " + std::to_string(state.iteration));

  for (std::size_t i = 0; i < state.canonical.size(); ++i)
    if (gg.visible[i]) {
      state.stats.grad_accum[i] += gg.screen_grad_norm[i];
      ++state.stats.count[i];
    }

  optimizer_step(state, grad_canonical, grad_field);
  ++state.iteration;
  if (is_densify_iteration(cfg, state.iteration)) {
    densify_and_prune(state);
    rec.densified = true;
  }
  rec.gaussians = state.canonical.size();
  return rec;
}

std::array<GaussianParams, 2> split_gaussian(const GaussianParams& g) {
  int axis = 0;
  for (int a = 1; a < 3; ++a)
    if (g.log_scale[a] > g.log_scale[axis]) axis = a;
  const Vec3 dir = quaternion_to_matrix(g.rotation).col(axis);
  const double offset = 1.2 * std::exp(g.log_scale[axis]);
  std::array<GaussianParams, 2> out{g, g};
  out[0].mean = g.mean + offset * dir;
  out[1].mean = g.mean - offset * dir;
  for (auto& c : out) c.log_scale = g.log_scale - Vec3::Constant(std::log(1.6));
  return out;
}

DensifyReport densify_and_prune(TrainState& state) {
  const TrainConfig& cfg = state.config;
  const std::size_t n = state.canonical.size();
  const double scale_limit = cfg.percent_dense * state.scene_extent;
  DensifyReport report;

  std::vector<GaussianParams> items, m, v;
  std::vector<GaussianParams> added;
  std::vector<char> keep(n, 1);
  std::size_t budget = cfg.max_gaussians > int(n) ? std::size_t(cfg.max_gaussians) - n : 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = state.stats.count[i];
    const double grad = c > 0 ? state.stats.grad_accum[i] / c : 0.0;
    if (grad < cfg.densify_grad_threshold || c == 0 || budget == 0) continue;
    const GaussianParams& g = state.canonical.items[i];
    if (g.scale().maxCoeff() <= scale_limit) {
      added.push_back(g);
      ++report.cloned;
    } else {
      const auto children = split_gaussian(g);
      added.push_back(children[0]);
      added.push_back(children[1]);
      keep[i] = 0;
      ++report.split;
    }
    --budget;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    items.push_back(state.canonical.items[i]);
    m.push_back(state.optim.m[i]);
    v.push_back(state.optim.v[i]);
  }
  for (const auto& g : added) {
    items.push_back(g);
    m.push_back(GaussianParams::zeros());
    v.push_back(GaussianParams::zeros());
  }

  GaussianSet pruned;
  pruned.sh_degree = state.canonical.sh_degree;
  std::vector<GaussianParams> pm, pv;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].opacity() < cfg.opacity_prune_threshold) {
      ++report.pruned;
      continue;
    }
    pruned.items.push_back(items[i]);
    pm.push_back(m[i]);
    pv.push_back(v[i]);
  }
  state.canonical = std::move(pruned);
  state.optim.m = std::move(pm);
  state.optim.v = std::move(pv);
  state.stats.reset(state.canonical.size());
  return report;
}

RenderResult render_at(const TrainState& state, const Camera& camera, double t) {
  const GaussianSet deformed = deform(state.canonical, t, state.quantizer, state.field);
  return render(deformed, camera, state.background, render_options(state.config));
}

EvalSummary evaluate(const TrainState& state, const std::vector<TrainFrame>& frames) {
  require(!frames.empty(), ErrorKind::kUsage, "evaluation split is empty");
  EvalSummary s;
  for (const auto& f : frames) {
    const auto start = std::chrono::steady_clock::now();
    const RenderResult r = render_at(state, f.camera, f.t);
    s.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EvalFrame e;
    e.t = f.t;
    e.psnr = psnr(r.image, f.target);
    const bool windowed = f.target.width >= 11 && f.target.height >= 11;
    e.ssim = windowed ? ssim(r.image, f.target) : 0.0;
    if (windowed) {
      const MsSsimResult ms = ms_ssim(r.image, f.target);
      e.ms_ssim = ms.value;
      e.ms_ssim_scales = ms.scales;
    }
    s.psnr += e.psnr;
    s.ssim += e.ssim;
    s.ms_ssim += e.ms_ssim;
    s.frames.push_back(e);
  }
  const double n = double(frames.size());
  s.psnr /= n;
  s.ssim /= n;
  s.ms_ssim /= n;
  return s;
}

std::string format_metric_line(const MetricRecord& r) {
  return std::to_string(r.iteration) + "," + format_shortest(r.loss) + "," + format_shortest(r.psnr) + "," +
         format_shortest(r.ssim);
}

std::vector<MetricRecord> train(TrainState& state, const TrainData& data, const TrainOptions& options) {
  const int stop = options.stop_at >= 0 ? options.stop_at : state.config.iterations;
  const auto& eval_frames = data.val.empty() ? data.train : data.val;
  std::vector<MetricRecord> records;
  double loss_sum = 0.0;
  int loss_count = 0;
  while (state.iteration < stop) {
    StepRecord rec;
    try {
      rec = train_step(state, data);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kNumeric && !options.dump_dir.empty()) {
        std::filesystem::create_directories(options.dump_dir);
        save_checkpoint(options.dump_dir / "nonfinite_dump.ckpt", state);
      }
      throw;
    }
    loss_sum += rec.loss;
    ++loss_count;
    if (options.on_step) options.on_step(rec);
    if (state.iteration % state.config.eval_interval == 0 || state.iteration == stop) {
      const EvalSummary e = evaluate(state, eval_frames);
      MetricRecord m{state.iteration, loss_sum / loss_count, e.psnr, e.ssim};
      records.push_back(m);
      if (options.on_eval) options.on_eval(m);
      loss_sum = 0.0;
      loss_count = 0;
    }
  }
  return records;
}

}  // namespace ctrlgs
