#include "test_support.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "ctrlgs/rasterizer.hpp"
#include "ctrlgs/windows.hpp"

namespace ctrlgs::testing {

std::uint64_t SplitMix64::next() {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

GaussianSet random_gaussians(SplitMix64& rng, int count, int sh_degree, const SceneRanges& r) {
  GaussianSet set;
  set.sh_degree = sh_degree;
  for (int i = 0; i < count; ++i) {
    GaussianParams g;
    for (int k = 0; k < 3; ++k) g.mean[k] = rng.uniform(-r.extent, r.extent);
    Vec4 q;
    do {
      for (int k = 0; k < 4; ++k) q[k] = rng.uniform(-1.0, 1.0);
    } while (q.norm() < 0.1);
    g.rotation = q.normalized();
    for (int k = 0; k < 3; ++k) g.log_scale[k] = std::log(rng.uniform(r.min_scale, r.max_scale));
    g.opacity_logit = logit(rng.uniform(r.min_opacity, r.max_opacity));
    for (int c = 0; c < 3; ++c) g.sh[c] = rng.uniform(r.min_color, r.max_color) / kShC0;
    if (sh_degree >= 1)
      for (int k = 3; k < 12; ++k) g.sh[k] = rng.uniform(-r.sh1_amplitude, r.sh1_amplitude);
    set.items.push_back(g);
  }
  return set;
}

Camera front_camera(int width, int height, double fov_x) {
  return Camera::look_at(Vec3(0.0, 0.0, -4.0), Vec3::Zero(), Vec3(0.0, -1.0, 0.0), fov_x, width, height);
}

std::pair<Image, Image> ssim_pair(int index) {
  SplitMix64 rng(0x5EED0000ULL + static_cast<std::uint64_t>(index));
  const int w = 16 + static_cast<int>(rng.next() % 17);
  const int h = 16 + static_cast<int>(rng.next() % 17);
  const double mix = rng.uniform();
  Image a(w, h), b(w, h);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double u = rng.uniform();
    const double u2 = rng.uniform();
    a.data[i] = u;
    b.data[i] = index % 5 == 4 ? 1.0 - u : (1.0 - mix) * u + mix * u2;
  }
  return {a, b};
}

Image constant_image(int w, int h, double v) { return Image(w, h, v); }

bool GradientSuiteReport::passed(int min_per_class) const {
  for (const auto& c : classes)
    if (c.failed > 0 || c.checked < min_per_class) return false;
  return !classes.empty();
}

namespace {

struct Problem {
  GaussianSet canonical;
  DeformationField field;
  TemporalQuantizer quantizer;
  Camera camera;
  double t = 0.0;
  Image weights;

  double loss() const {
    const GaussianSet deformed = deform(canonical, t, quantizer, field);
    const RenderResult r = render(deformed, camera, Vec3::Zero());
    double s = 0.0;
    for (std::size_t i = 0; i < r.image.data.size(); ++i) s += weights.data[i] * r.image.data[i];
    return s;
  }
};

void randomize(TinyMLP& m, SplitMix64& rng, double amplitude) {
  for (auto& w : m.w2) w = rng.uniform(-amplitude, amplitude);
  for (auto& b : m.b2) b = rng.uniform(-amplitude, amplitude);
}

Problem make_problem(SplitMix64& rng, const GradientSuiteOptions& o) {
  Problem p;
  SceneRanges ranges;
  ranges.extent = 0.5;
  ranges.min_scale = 0.08;
  ranges.max_scale = 0.25;
  ranges.min_opacity = 0.2;
  ranges.max_opacity = 0.6;
  ranges.min_color = 0.3;
  ranges.max_color = 0.7;
  ranges.sh1_amplitude = 0.1;
  p.canonical = random_gaussians(rng, o.gaussians, 1, ranges);

  DeformConfig dc;
  dc.grid.init_noise = 0.3;
  p.field = DeformationField::create(dc, rng.next());
  // Non-zero output layers so gradients reach the encoder and grid; small enough
  // that the deformed Gaussians stay in view.
  for (auto& h : p.field.frame_heads) randomize(h, rng, 0.05);
  for (auto& h : p.field.segment_heads) randomize(h, rng, 0.05);

  p.quantizer = TemporalQuantizer(equal_windows(3), 0.5);
  // Keep t away from window boundaries so the quantized time is locally constant.
  p.t = (rng.below(3) + rng.uniform(0.1, 0.9)) / 3.0;
  p.camera = Camera::look_at(Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), -3.0), Vec3::Zero(),
                             Vec3(0.0, -1.0, 0.0), 0.8, o.image_size, o.image_size);
  p.weights = Image(o.image_size, o.image_size);
  for (auto& w : p.weights.data) w = rng.uniform(-1.0, 1.0);
  return p;
}

// Piecewise structure of the loss: grid cell of every query and sign of every
// ReLU pre-activation. Where it changes inside [x - h, x + h] the loss has a
// kink and a central difference does not estimate the one-sided derivative.
std::vector<int> kink_signature(const Problem& p) {
  DeformTrace tr;
  deform(p.canonical, p.t, p.quantizer, p.field, &tr);
  const HexPlaneConfig& g = p.field.config.grid;
  std::vector<int> sig;
  for (const auto& item : tr.items) {
    for (const auto& enc : item.enc) {
      int scale = 1;
      for (int l = 0; l < g.levels; ++l, scale *= g.upsample)
        for (int a = 0; a < 4; ++a) {
          const int res = (a < 3 ? g.spatial_resolution : g.temporal_resolution) * scale;
          sig.push_back(std::min(static_cast<int>(std::floor(enc.coord[a] * (res - 1))), res - 2));
        }
      for (bool c : enc.clamped) sig.push_back(c);
    }
    auto signs = [&](const std::vector<double>& pre) {
      for (double v : pre) sig.push_back(v > 0.0);
    };
    for (const auto& pre : item.encoder_pre) signs(pre);
    for (const auto& pre : item.frame_pre) signs(pre);
    for (const auto& pre : item.segment_pre) signs(pre);
  }
  return sig;
}

struct Slot {
  double* value;
  double analytic;
};

}  // namespace

GradientSuiteReport run_gradient_suite(const GradientSuiteOptions& o) {
  constexpr int kClasses = 13;
  GradientSuiteReport report;
  for (int c = 0; c < kClasses; ++c) report.classes.push_back(ClassReport{static_cast<ParamClass>(c), 0, 0, 0, 0.0, {}});
  SplitMix64 rng(o.seed);

  auto done = [&] {
    for (const auto& c : report.classes)
      if (c.checked < o.min_per_class) return false;
    return true;
  };

  while (!done() && report.scenes < o.max_scenes) {
    ++report.scenes;
    Problem p = make_problem(rng, o);

    DeformTrace trace;
    const GaussianSet deformed = deform(p.canonical, p.t, p.quantizer, p.field, &trace);
    const RenderResult r = render(deformed, p.camera, Vec3::Zero());
    const GaussianGradients gg = render_backward(deformed, r, p.weights);
    std::vector<GaussianParams> grad_canonical(p.canonical.size(), GaussianParams::zeros());
    DeformationField grad_field = p.field.zeros_like();
    deform_backward(p.canonical, p.field, trace, gg.params, grad_canonical, grad_field);

    std::vector<std::vector<Slot>> slots(kClasses);
    for (std::size_t i = 0; i < p.canonical.size(); ++i) {
      std::array<const double*, 5> g{};
      for_each_field(grad_canonical[i], [&](int k, const double* d, int) { g[k] = d; });
      for_each_field(p.canonical.items[i], [&](int k, double* v, int n) {
        for (int j = 0; j < n; ++j) slots[k].push_back(Slot{v + j, g[k][j]});
      });
    }
    auto tensors = p.field.tensors();
    auto grads = grad_field.tensors();
    for (std::size_t k = 0; k < tensors.size(); ++k)
      for (std::size_t j = 0; j < tensors[k].values.size(); ++j)
        slots[static_cast<int>(tensors[k].cls)].push_back(Slot{&tensors[k].values[j], grads[k].values[j]});

    for (int c = 0; c < kClasses; ++c) {
      ClassReport& cr = report.classes[c];
      if (cr.checked >= o.min_per_class) continue;
      // Prefer parameters the render actually depends on; zero-gradient entries
      // only fill the quota when nothing else is left.
      std::vector<Slot> live, idle;
      for (const Slot& s : slots[c]) (s.analytic != 0.0 ? live : idle).push_back(s);
      for (std::size_t i = live.size(); i > 1; --i) std::swap(live[i - 1], live[rng.below(static_cast<int>(i))]);
      for (std::size_t i = idle.size(); i > 1; --i) std::swap(idle[i - 1], idle[rng.below(static_cast<int>(i))]);
      std::vector<Slot> picked(live.begin(), live.begin() + std::min<std::size_t>(live.size(), o.per_scene));
      for (std::size_t i = 0; picked.size() < std::size_t(o.per_scene) / 4 && i < idle.size(); ++i)
        picked.push_back(idle[i]);

      for (const Slot& s : picked) {
        const double saved = *s.value;
        auto central = [&](double h) {
          *s.value = saved + h;
          const double up = p.loss();
          *s.value = saved - h;
          const double down = p.loss();
          *s.value = saved;
          return (up - down) / (2.0 * h);
        };
        const double a = s.analytic;
        const double n = central(o.h);
        auto ok = [&](double fd) { return std::abs(a - fd) <= std::max(o.abs_floor, o.rel_tol * std::max(std::abs(a), std::abs(fd))); };
        if (!ok(n)) {
          *s.value = saved + o.h;
          const auto up = kink_signature(p);
          *s.value = saved - o.h;
          const auto down = kink_signature(p);
          *s.value = saved;
          if (up != down) {
            ++cr.skipped;
            continue;
          }
          const double n2 = central(0.5 * o.h);
          if (std::abs(n - n2) > std::max(o.abs_floor, o.rel_tol * std::max(std::abs(n), std::abs(n2)))) {
            ++cr.skipped;
            continue;
          }
          ++cr.failed;
          if (cr.worst.empty()) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "analytic %.9g fd %.9g (scene %d)", a, n, report.scenes);
            cr.worst = buf;
          }
        }
        ++cr.checked;
        const double diff = std::abs(a - n);
        if (diff > o.abs_floor) cr.max_error = std::max(cr.max_error, diff / std::max(std::abs(a), std::abs(n)));
      }
    }
  }
  return report;
}

}  // namespace ctrlgs::testing
