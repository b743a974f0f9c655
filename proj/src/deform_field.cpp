#include "ctrlgs/deform_field.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ctrlgs/error.hpp"

namespace ctrlgs {

const char* param_class_name(ParamClass c) {
  switch (c) {
    case ParamClass::kMeans: return "means";
    case ParamClass::kRotations: return "rotations";
    case ParamClass::kLogScales: return "log_scales";
    case ParamClass::kOpacity: return "opacity_logits";
    case ParamClass::kSh: return "sh";
    case ParamClass::kGrid: return "grid_features";
    case ParamClass::kEncoderMlp: return "phi_d";
    case ParamClass::kHeadX: return "phi_x";
    case ParamClass::kHeadR: return "phi_r";
    case ParamClass::kHeadS: return "phi_s";
    case ParamClass::kSegmentHeadX: return "phi_xT";
    case ParamClass::kSegmentHeadR: return "phi_rT";
    case ParamClass::kSegmentHeadS: return "phi_sT";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// HexPlane

namespace {

int axis_resolution(const HexPlaneConfig& c, int level, int axis) {
  int scale = 1;
  for (int l = 0; l < level; ++l) scale *= c.upsample;
  return (axis < 3 ? c.spatial_resolution : c.temporal_resolution) * scale;
}

struct Cell {
  int i0, j0;
  double wu, wv;
};

Cell locate(const FeaturePlane& p, double cu, double cv) {
  const double u = cu * (p.res_u - 1);
  const double v = cv * (p.res_v - 1);
  Cell c;
  c.i0 = std::min(static_cast<int>(std::floor(u)), p.res_u - 2);
  c.j0 = std::min(static_cast<int>(std::floor(v)), p.res_v - 2);
  c.wu = u - c.i0;
  c.wv = v - c.j0;
  return c;
}

}  // namespace

HexPlaneGrid::HexPlaneGrid(const HexPlaneConfig& config, std::uint64_t seed) : config_(config) {
  require(config.features >= 1 && config.levels >= 1 && config.upsample >= 1, ErrorKind::kConfig,
          "hexplane: features, levels and upsample must be >= 1");
  require(config.spatial_resolution >= 2 && config.temporal_resolution >= 2, ErrorKind::kConfig,
          "hexplane: resolutions must be >= 2");
  require((config.bounds_max - config.bounds_min).minCoeff() > 0.0, ErrorKind::kConfig,
          "hexplane: bounds_max must exceed bounds_min on every axis");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(-config.init_noise, config.init_noise);
  for (int l = 0; l < config.levels; ++l)
    for (const auto& axes : kPlaneAxes) {
      FeaturePlane p;
      p.axis_u = axes[0];
      p.axis_v = axes[1];
      p.res_u = axis_resolution(config, l, axes[0]);
      p.res_v = axis_resolution(config, l, axes[1]);
      p.data.resize(std::size_t(p.res_u) * p.res_v * config.features);
      for (double& v : p.data) v = 1.0 + (config.init_noise > 0.0 ? noise(rng) : 0.0);
      planes_.push_back(std::move(p));
    }
}

HexPlaneGrid HexPlaneGrid::zeros_like() const {
  HexPlaneGrid g = *this;
  for (auto& p : g.planes_) std::fill(p.data.begin(), p.data.end(), 0.0);
  return g;
}

void HexPlaneGrid::encode(const Vec3& mean, double t, std::span<double> out, EncodeTrace* trace) const {
  const int F = config_.features;
  std::array<double, 4> coord{};
  std::array<bool, 3> clamped{};
  for (int a = 0; a < 3; ++a) {
    const double n = (mean[a] - config_.bounds_min[a]) / (config_.bounds_max[a] - config_.bounds_min[a]);
    coord[a] = std::clamp(n, 0.0, 1.0);
    clamped[a] = coord[a] != n;
  }
  coord[3] = std::clamp(t, 0.0, 1.0);
  if (trace) {
    trace->coord = coord;
    trace->clamped = clamped;
    trace->plane_features.resize(planes_.size() * F);
  }
  std::fill(out.begin(), out.end(), 1.0);
  for (std::size_t pi = 0; pi < planes_.size(); ++pi) {
    const FeaturePlane& p = planes_[pi];
    const int level = static_cast<int>(pi / kPlaneAxes.size());
    const Cell c = locate(p, coord[p.axis_u], coord[p.axis_v]);
    const double* f00 = &p.data[(std::size_t(c.j0) * p.res_u + c.i0) * F];
    const double* f10 = f00 + F;
    const double* f01 = f00 + std::size_t(p.res_u) * F;
    const double* f11 = f01 + F;
    const double w00 = (1.0 - c.wu) * (1.0 - c.wv), w10 = c.wu * (1.0 - c.wv);
    const double w01 = (1.0 - c.wu) * c.wv, w11 = c.wu * c.wv;
    for (int k = 0; k < F; ++k) {
      const double v = w00 * f00[k] + w10 * f10[k] + w01 * f01[k] + w11 * f11[k];
      if (trace) trace->plane_features[pi * F + k] = v;
      out[level * F + k] *= v;
    }
  }
}

void HexPlaneGrid::encode_backward(const EncodeTrace& trace, std::span<const double> grad_out, HexPlaneGrid& grad,
                                   Vec3* grad_mean) const {
  const int F = config_.features;
  const int per_level = static_cast<int>(kPlaneAxes.size());
  for (std::size_t pi = 0; pi < planes_.size(); ++pi) {
    const FeaturePlane& p = planes_[pi];
    FeaturePlane& gp = grad.planes_[pi];
    const int level = static_cast<int>(pi) / per_level;
    const Cell c = locate(p, trace.coord[p.axis_u], trace.coord[p.axis_v]);
    const std::size_t base = (std::size_t(c.j0) * p.res_u + c.i0) * F;
    const std::size_t row = std::size_t(p.res_u) * F;
    const double w00 = (1.0 - c.wu) * (1.0 - c.wv), w10 = c.wu * (1.0 - c.wv);
    const double w01 = (1.0 - c.wu) * c.wv, w11 = c.wu * c.wv;
    double d_u = 0.0, d_v = 0.0;
    for (int k = 0; k < F; ++k) {
      double others = 1.0;
      for (int q = 0; q < per_level; ++q)
        if (q != static_cast<int>(pi) % per_level)
          others *= trace.plane_features[(std::size_t(level) * per_level + q) * F + k];
      const double g = grad_out[level * F + k] * others;
      if (g == 0.0) continue;
      gp.data[base + k] += w00 * g;
      gp.data[base + F + k] += w10 * g;
      gp.data[base + row + k] += w01 * g;
      gp.data[base + row + F + k] += w11 * g;
      if (grad_mean) {
        const double f00 = p.data[base + k], f10 = p.data[base + F + k];
        const double f01 = p.data[base + row + k], f11 = p.data[base + row + F + k];
        d_u += g * ((1.0 - c.wv) * (f10 - f00) + c.wv * (f11 - f01));
        d_v += g * ((1.0 - c.wu) * (f01 - f00) + c.wu * (f11 - f10));
      }
    }
    if (grad_mean) {
      const int axes[2] = {p.axis_u, p.axis_v};
      const double d[2] = {d_u * (p.res_u - 1), d_v * (p.res_v - 1)};
      for (int s = 0; s < 2; ++s) {
        const int a = axes[s];
        if (a >= 3 || trace.clamped[a]) continue;
        (*grad_mean)[a] += d[s] / (config_.bounds_max[a] - config_.bounds_min[a]);
      }
    }
  }
}

double HexPlaneGrid::total_variation(HexPlaneGrid* grad, double weight) const {
  const int F = config_.features;
  double total = 0.0;
  for (std::size_t pi = 0; pi < planes_.size(); ++pi) {
    const FeaturePlane& p = planes_[pi];
    const double count_u = double(p.res_u - 1) * p.res_v * F;
    const double count_v = double(p.res_u) * (p.res_v - 1) * F;
    double sum_u = 0.0, sum_v = 0.0;
    for (int j = 0; j < p.res_v; ++j)
      for (int i = 0; i < p.res_u; ++i)
        for (int k = 0; k < F; ++k) {
          const std::size_t idx = (std::size_t(j) * p.res_u + i) * F + k;
          if (i + 1 < p.res_u) {
            const double d = p.data[idx + F] - p.data[idx];
            sum_u += d * d;
            if (grad) {
              const double g = weight * 2.0 * d / count_u;
              grad->planes_[pi].data[idx + F] += g;
              grad->planes_[pi].data[idx] -= g;
            }
          }
          if (j + 1 < p.res_v) {
            const std::size_t up = idx + std::size_t(p.res_u) * F;
            const double d = p.data[up] - p.data[idx];
            sum_v += d * d;
            if (grad) {
              const double g = weight * 2.0 * d / count_v;
              grad->planes_[pi].data[up] += g;
              grad->planes_[pi].data[idx] -= g;
            }
          }
        }
    total += sum_u / count_u + sum_v / count_v;
  }
  return total;
}

// ---------------------------------------------------------------------------
// TinyMLP

TinyMLP TinyMLP::create(int in, int hidden, int out, std::uint64_t seed, bool zero_output) {
  require(in >= 1 && hidden >= 1 && out >= 1, ErrorKind::kConfig, "mlp widths must be >= 1");
  TinyMLP m;
  m.in = in;
  m.hidden = hidden;
  m.out = out;
  std::mt19937_64 rng(seed);
  auto fill = [&](std::vector<double>& v, std::size_t n, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    v.resize(n);
    for (double& x : v) x = u(rng);
  };
  fill(m.w1, std::size_t(hidden) * in, 1.0 / std::sqrt(double(in)));
  fill(m.b1, hidden, 1.0 / std::sqrt(double(in)));
  if (zero_output) {
    m.w2.assign(std::size_t(out) * hidden, 0.0);
    m.b2.assign(out, 0.0);
  } else {
    fill(m.w2, std::size_t(out) * hidden, 1.0 / std::sqrt(double(hidden)));
    fill(m.b2, out, 1.0 / std::sqrt(double(hidden)));
  }
  return m;
}

TinyMLP TinyMLP::zeros_like() const {
  TinyMLP m = *this;
  for (auto* v : {&m.w1, &m.b1, &m.w2, &m.b2}) std::fill(v->begin(), v->end(), 0.0);
  return m;
}

void TinyMLP::forward(std::span<const double> x, std::span<double> pre_hidden, std::span<double> y) const {
  for (int h = 0; h < hidden; ++h) {
    double s = b1[h];
    const double* w = &w1[std::size_t(h) * in];
    for (int i = 0; i < in; ++i) s += w[i] * x[i];
    pre_hidden[h] = s;
  }
  for (int o = 0; o < out; ++o) {
    double s = b2[o];
    const double* w = &w2[std::size_t(o) * hidden];
    for (int h = 0; h < hidden; ++h) s += w[h] * std::max(0.0, pre_hidden[h]);
    y[o] = s;
  }
}

void TinyMLP::backward(std::span<const double> x, std::span<const double> pre_hidden, std::span<const double> grad_y,
                       TinyMLP& grad, std::span<double> grad_x) const {
  thread_local std::vector<double> grad_pre;
  grad_pre.assign(hidden, 0.0);
  for (int o = 0; o < out; ++o) {
    const double g = grad_y[o];
    if (g == 0.0) continue;
    grad.b2[o] += g;
    double* gw = &grad.w2[std::size_t(o) * hidden];
    const double* w = &w2[std::size_t(o) * hidden];
    for (int h = 0; h < hidden; ++h) {
      gw[h] += g * std::max(0.0, pre_hidden[h]);
      grad_pre[h] += g * w[h];
    }
  }
  if (!grad_x.empty()) std::fill(grad_x.begin(), grad_x.end(), 0.0);
  for (int h = 0; h < hidden; ++h) {
    if (pre_hidden[h] <= 0.0 || grad_pre[h] == 0.0) continue;
    const double g = grad_pre[h];
    grad.b1[h] += g;
    double* gw = &grad.w1[std::size_t(h) * in];
    const double* w = &w1[std::size_t(h) * in];
    for (int i = 0; i < in; ++i) {
      gw[i] += g * x[i];
      if (!grad_x.empty()) grad_x[i] += g * w[i];
    }
  }
}

// ---------------------------------------------------------------------------
// DeformationField

DeformationField DeformationField::create(const DeformConfig& config, std::uint64_t seed) {
  DeformationField f;
  f.config = config;
  f.grid = HexPlaneGrid(config.grid, seed);
  const int fused = f.grid.output_width();
  f.encoder = TinyMLP::create(fused, config.encoder_width, config.encoder_width, seed + 1, false);
  for (int k = 0; k < 3; ++k) {
    f.frame_heads[k] = TinyMLP::create(config.encoder_width, config.head_hidden, kHeadOutputs[k], seed + 2 + k, true);
    f.segment_heads[k] =
        TinyMLP::create(config.encoder_width + 1, config.head_hidden, kHeadOutputs[k], seed + 5 + k, true);
  }
  return f;
}

DeformationField DeformationField::zeros_like() const {
  DeformationField f;
  f.config = config;
  f.grid = grid.zeros_like();
  f.encoder = encoder.zeros_like();
  for (int k = 0; k < 3; ++k) {
    f.frame_heads[k] = frame_heads[k].zeros_like();
    f.segment_heads[k] = segment_heads[k].zeros_like();
  }
  return f;
}

std::vector<DeformationField::Tensor> DeformationField::tensors() {
  std::vector<Tensor> out;
  for (auto& p : grid.planes()) out.push_back({ParamClass::kGrid, p.data});
  auto add_mlp = [&](ParamClass c, TinyMLP& m) {
    for (auto* v : {&m.w1, &m.b1, &m.w2, &m.b2}) out.push_back({c, *v});
  };
  add_mlp(ParamClass::kEncoderMlp, encoder);
  add_mlp(ParamClass::kHeadX, frame_heads[0]);
  add_mlp(ParamClass::kHeadR, frame_heads[1]);
  add_mlp(ParamClass::kHeadS, frame_heads[2]);
  add_mlp(ParamClass::kSegmentHeadX, segment_heads[0]);
  add_mlp(ParamClass::kSegmentHeadR, segment_heads[1]);
  add_mlp(ParamClass::kSegmentHeadS, segment_heads[2]);
  return out;
}

std::size_t DeformationField::parameter_count() {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.values.size();
  return n;
}

// ---------------------------------------------------------------------------
// Temporal quantization

TemporalQuantizer::TemporalQuantizer(WindowSet windows, double q, std::span<const double> known_timestamps)
    : windows_(std::move(windows)), q_(q), known_(known_timestamps.begin(), known_timestamps.end()) {
  windows_.validate();
  require(q >= 0.0 && q < 1.0, ErrorKind::kInvalidParameter, "quantization coefficient q must lie in [0, 1)");
  table_ = SegmentIndexTable(windows_, known_);
}

double TemporalQuantizer::quantize(double t) const {
  const int k = table_.lookup(std::clamp(t, 0.0, 1.0));
  const double start = windows_.start(k);
  return start + q_ * (windows_.end(k) - start);
}

double quantize_time(double t, const TemporalQuantizer& quantizer) { return quantizer.quantize(t); }

// ---------------------------------------------------------------------------
// Encoding, decoding and the cascaded deformation

std::vector<double> encode(const DeformationField& field, const Vec3& mean, double t) {
  std::vector<double> fused(field.grid.output_width());
  field.grid.encode(mean, t, fused);
  std::vector<double> pre(field.encoder.hidden), h(field.encoder.out);
  field.encoder.forward(fused, pre, h);
  return h;
}

namespace {

Deltas run_heads(const std::array<TinyMLP, 3>& heads, std::span<const double> input,
                 std::array<std::vector<double>, 3>* pre_out) {
  Deltas d;
  double* outs[3] = {d.position.data(), d.rotation.data(), d.log_scale.data()};
  std::vector<double> scratch;
  for (int k = 0; k < 3; ++k) {
    std::vector<double>& pre = pre_out ? (*pre_out)[k] : scratch;
    pre.resize(heads[k].hidden);
    heads[k].forward(input, pre, std::span<double>(outs[k], kHeadOutputs[k]));
  }
  return d;
}

}  // namespace

Deltas decode_frame(const DeformationField& field, std::span<const double> feature) {
  require(static_cast<int>(feature.size()) == field.frame_heads[0].in, ErrorKind::kUsage,
          "decode_frame: feature width does not match the heads");
  return run_heads(field.frame_heads, feature, nullptr);
}

Deltas decode_segment(const DeformationField& field, std::span<const double> feature, double t_quantized) {
  require(static_cast<int>(feature.size()) + 1 == field.segment_heads[0].in, ErrorKind::kUsage,
          "decode_segment: feature width does not match the heads");
  std::vector<double> input(feature.begin(), feature.end());
  input.push_back(t_quantized);
  return run_heads(field.segment_heads, input, nullptr);
}

GaussianSet deform(const GaussianSet& canonical, double t, const TemporalQuantizer& quantizer,
                   const DeformationField& field, DeformTrace* trace) {
  DeformTrace local;
  DeformTrace& tr = trace ? *trace : local;
  const bool segments = field.config.segment_heads;
  const int fused_width = field.grid.output_width();
  const int width = field.encoder.out;
  tr.t = t;
  tr.t_quantized = segments ? quantizer.quantize(t) : t;
  tr.segments = segments;
  tr.items.resize(canonical.size());
  tr.clamped_queries = 0;

  GaussianSet out;
  out.sh_degree = canonical.sh_degree;
  out.items.resize(canonical.size());
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    const GaussianParams& g = canonical.items[i];
    auto& it = tr.items[i];
    const int passes = segments ? 2 : 1;
    for (int pass = 0; pass < passes; ++pass) {
      it.fused[pass].resize(fused_width);
      it.encoder_pre[pass].resize(field.encoder.hidden);
      it.hidden[pass].resize(width);
      field.grid.encode(g.mean, pass == 0 ? t : tr.t_quantized, it.fused[pass], &it.enc[pass]);
      for (bool c : it.enc[pass].clamped) tr.clamped_queries += c ? 1 : 0;
      field.encoder.forward(it.fused[pass], it.encoder_pre[pass], it.hidden[pass]);
    }
    const Deltas frame = run_heads(field.frame_heads, it.hidden[0], &it.frame_pre);
    Deltas segment;
    if (segments) {
      it.segment_input.assign(it.hidden[1].begin(), it.hidden[1].end());
      it.segment_input.push_back(tr.t_quantized);
      segment = run_heads(field.segment_heads, it.segment_input, &it.segment_pre);
    }
    GaussianParams& d = out.items[i];
    d = g;
    d.mean = g.mean + segment.position + frame.position;
    d.rotation = g.rotation + segment.rotation + frame.rotation;
    d.log_scale = g.log_scale + segment.log_scale + frame.log_scale;
  }
  return out;
}

void deform_backward(const GaussianSet& canonical, const DeformationField& field, const DeformTrace& trace,
                     const std::vector<GaussianParams>& grad_deformed, std::vector<GaussianParams>& grad_canonical,
                     DeformationField& grad_field) {
  require(trace.items.size() == canonical.size() && grad_deformed.size() == canonical.size() &&
              grad_canonical.size() == canonical.size(),
          ErrorKind::kUsage, "deform_backward: trace, gradients and Gaussian set disagree in size");
  const int width = field.encoder.out;
  std::vector<double> grad_hidden(width), grad_tmp(width + 1), grad_fused(field.grid.output_width());
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    const auto& it = trace.items[i];
    const GaussianParams& gd = grad_deformed[i];
    GaussianParams& gc = grad_canonical[i];
    gc.mean += gd.mean;
    gc.rotation += gd.rotation;
    gc.log_scale += gd.log_scale;
    gc.opacity_logit += gd.opacity_logit;
    for (std::size_t k = 0; k < gc.sh.size(); ++k) gc.sh[k] += gd.sh[k];

    const double* grads[3] = {gd.mean.data(), gd.rotation.data(), gd.log_scale.data()};
    bool any = false;
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < kHeadOutputs[k]; ++j) any = any || grads[k][j] != 0.0;
    if (!any) continue;

    const int passes = trace.segments ? 2 : 1;
    for (int pass = 0; pass < passes; ++pass) {
      const auto& heads = pass == 0 ? field.frame_heads : field.segment_heads;
      auto& grad_heads = pass == 0 ? grad_field.frame_heads : grad_field.segment_heads;
      const auto& input = pass == 0 ? it.hidden[0] : it.segment_input;
      const auto& pre = pass == 0 ? it.frame_pre : it.segment_pre;
      std::fill(grad_hidden.begin(), grad_hidden.end(), 0.0);
      std::span<double> gx(grad_tmp.data(), input.size());
      for (int k = 0; k < 3; ++k) {
        heads[k].backward(input, pre[k], std::span<const double>(grads[k], kHeadOutputs[k]), grad_heads[k], gx);
        for (int j = 0; j < width; ++j) grad_hidden[j] += gx[j];
      }
      field.encoder.backward(it.fused[pass], it.encoder_pre[pass], grad_hidden, grad_field.encoder, grad_fused);
      field.grid.encode_backward(it.enc[pass], grad_fused, grad_field.grid, &gc.mean);
    }
  }
}

}  // namespace ctrlgs
