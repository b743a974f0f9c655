#include "ctrlgs/rasterizer.hpp"

#include <algorithm>
#include <cmath>

#include "ctrlgs/error.hpp"
#include "ctrlgs/parallel.hpp"

namespace ctrlgs {

namespace {

double max_eigenvalue(const Mat2& m) {
  const double mid = 0.5 * (m(0, 0) + m(1, 1));
  const double half_diff = 0.5 * (m(0, 0) - m(1, 1));
  return mid + std::sqrt(half_diff * half_diff + m(0, 1) * m(1, 0));
}

bool depth_less(const std::vector<SplatInstance>& splats, int a, int b) {
  const auto& sa = splats[a];
  const auto& sb = splats[b];
  if (sa.depth != sb.depth) return sa.depth < sb.depth;
  return sa.source_index < sb.source_index;
}

struct Contribution {
  int splat;
  double weight;  // G(offset)
  double a;       // alpha * G
  double t;       // transmittance before this splat
};

// Walks one pixel's sorted list front to back. `visit` sees each blended splat.
template <class Visit>
double blend_pixel(const std::vector<SplatInstance>& splats, const std::vector<int>& list, int x, int y,
                   double termination, Visit&& visit) {
  const Vec2 center(x + 0.5, y + 0.5);
  double t = 1.0;
  for (int idx : list) {
    if (t < termination) break;
    const SplatInstance& s = splats[idx];
    if (!s.rect.contains(x, y)) continue;
    const double g = evaluate_gaussian(s.conic_inv, center - s.mean2d);
    const double a = s.alpha * g;
    visit(Contribution{idx, g, a, t});
    t *= 1.0 - a;
  }
  return t;
}

}  // namespace

PixelRect splat_pixel_rect(const Vec2& mean2d, double radius, int width, int height) {
  PixelRect r;
  r.x0 = std::max(0, static_cast<int>(std::ceil(mean2d.x() - radius - 0.5)));
  r.x1 = std::min(width - 1, static_cast<int>(std::floor(mean2d.x() + radius - 0.5)));
  r.y0 = std::max(0, static_cast<int>(std::ceil(mean2d.y() - radius - 0.5)));
  r.y1 = std::min(height - 1, static_cast<int>(std::floor(mean2d.y() + radius - 0.5)));
  return r;
}

ProjectedScene cull_and_project(const GaussianSet& gaussians, const Camera& camera) {
  ProjectedScene out;
  out.camera = camera;
  out.sh_degree = gaussians.sh_degree;
  out.gaussian_count = gaussians.size();
  const Vec3 cam_center = camera.center();
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    const GaussianParams& g = gaussians.items[i];
    SplatCache cache;
    cache.mean_cam = camera.to_camera(g.mean);
    const Covariance3D cov = build_covariance(g.rotation, g.scale());
    cache.cov_cam = camera.rotation * cov.sigma * camera.rotation.transpose();
    Conic2D conic;
    if (!project_covariance(Covariance3D{cache.cov_cam}, cache.mean_cam, camera.fx, camera.fy,
                            camera.near_plane, conic))
      continue;
    const double inv_z = 1.0 / cache.mean_cam.z();
    SplatInstance s;
    s.mean2d = Vec2(camera.fx * cache.mean_cam.x() * inv_z + camera.cx,
                    camera.fy * cache.mean_cam.y() * inv_z + camera.cy);
    s.radius = 3.0 * std::sqrt(max_eigenvalue(conic.sigma2d));
    s.rect = splat_pixel_rect(s.mean2d, s.radius, camera.width, camera.height);
    if (s.rect.empty()) continue;
    s.conic_inv = conic.inverse();
    s.depth = cache.mean_cam.z();
    s.alpha = g.opacity();
    const Vec3 dir = g.mean - cam_center;
    cache.view_dist = dir.norm();
    cache.view_dir = cache.view_dist > 0.0 ? Vec3(dir / cache.view_dist) : Vec3(0.0, 0.0, 1.0);
    cache.color = sh_to_color(g.sh, gaussians.sh_degree, cache.view_dir);
    s.color = cache.color.rgb;
    s.source_index = static_cast<int>(i);
    out.splats.push_back(s);
    out.cache.push_back(cache);
  }
  return out;
}

TileBins bin_tiles(const std::vector<SplatInstance>& splats, int width, int height, int tile_size) {
  require(tile_size >= 1, ErrorKind::kInvalidParameter, "tile_size must be >= 1");
  TileBins bins;
  bins.width = width;
  bins.height = height;
  bins.tile_size = tile_size;
  bins.tiles_x = (width + tile_size - 1) / tile_size;
  bins.tiles_y = (height + tile_size - 1) / tile_size;
  bins.lists.assign(std::size_t(bins.tiles_x) * bins.tiles_y, {});
  for (int i = 0; i < static_cast<int>(splats.size()); ++i) {
    const PixelRect& r = splats[i].rect;
    if (r.empty()) continue;
    for (int ty = r.y0 / tile_size; ty <= r.y1 / tile_size; ++ty)
      for (int tx = r.x0 / tile_size; tx <= r.x1 / tile_size; ++tx)
        bins.lists[std::size_t(ty) * bins.tiles_x + tx].push_back(i);
  }
  for (auto& list : bins.lists)
    std::sort(list.begin(), list.end(), [&](int a, int b) { return depth_less(splats, a, b); });
  return bins;
}

Image Framebuffer::image() const {
  Image img(width, height);
  for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = std::clamp(raw[i], 0.0, 1.0);
  return img;
}

Framebuffer composite_forward(const std::vector<SplatInstance>& splats, const TileBins& bins,
                              const Vec3& background, const CompositeOptions& options) {
  Framebuffer fb;
  fb.width = bins.width;
  fb.height = bins.height;
  fb.raw.assign(std::size_t(fb.width) * fb.height * 3, 0.0);
  fb.transmittance.assign(std::size_t(fb.width) * fb.height, 1.0);
  const int ts = bins.tile_size;
  parallel_for(bins.tiles_y, options.threads, [&](int ty) {
    for (int tx = 0; tx < bins.tiles_x; ++tx) {
      const auto& list = bins.tile(tx, ty);
      for (int y = ty * ts; y < std::min(fb.height, (ty + 1) * ts); ++y)
        for (int x = tx * ts; x < std::min(fb.width, (tx + 1) * ts); ++x) {
          Vec3 c = Vec3::Zero();
          const double t = blend_pixel(splats, list, x, y, options.termination_threshold,
                                       [&](const Contribution& k) { c += splats[k.splat].color * (k.a * k.t); });
          const std::size_t p = std::size_t(y) * fb.width + x;
          const Vec3 out = c + background * t;
          for (int ch = 0; ch < 3; ++ch) fb.raw[3 * p + ch] = out[ch];
          fb.transmittance[p] = t;
        }
    }
  });
  fb.has_forward_state = true;
  return fb;
}

GradientBuffer composite_backward(const std::vector<SplatInstance>& splats, const TileBins& bins,
                                  const Framebuffer& framebuffer, const Vec3& background,
                                  const Image& grad_image, const CompositeOptions& options) {
  require(framebuffer.has_forward_state, ErrorKind::kUsage,
          "composite_backward requires a framebuffer produced by composite_forward");
  require(grad_image.width == framebuffer.width && grad_image.height == framebuffer.height &&
              bins.width == framebuffer.width && bins.height == framebuffer.height,
          ErrorKind::kUsage, "composite_backward: gradient image shape does not match the framebuffer");

  // One partial buffer per tile row, summed in row order afterwards.
  std::vector<std::vector<SplatGrad>> partial(bins.tiles_y, std::vector<SplatGrad>(splats.size()));
  const int ts = bins.tile_size;
  parallel_for(bins.tiles_y, options.threads, [&](int ty) {
    auto& acc = partial[ty];
    std::vector<Contribution> contribs;
    for (int tx = 0; tx < bins.tiles_x; ++tx) {
      const auto& list = bins.tile(tx, ty);
      if (list.empty()) continue;
      for (int y = ty * ts; y < std::min(framebuffer.height, (ty + 1) * ts); ++y)
        for (int x = tx * ts; x < std::min(framebuffer.width, (tx + 1) * ts); ++x) {
          const std::size_t p = std::size_t(y) * framebuffer.width + x;
          Vec3 dl_dc;
          for (int ch = 0; ch < 3; ++ch) {
            const double v = framebuffer.raw[3 * p + ch];
            dl_dc[ch] = (v < 0.0 || v > 1.0) ? 0.0 : grad_image.data[3 * p + ch];
          }
          if (dl_dc.isZero()) continue;
          contribs.clear();
          blend_pixel(splats, list, x, y, options.termination_threshold,
                      [&](const Contribution& k) { contribs.push_back(k); });
          const Vec2 center(x + 0.5, y + 0.5);
          // behind = composite of everything after splat i, seen through (1 - a_i).
          Vec3 behind = background;
          for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
            const SplatInstance& s = splats[it->splat];
            SplatGrad& g = acc[it->splat];
            const double wt = it->a * it->t;
            g.color += dl_dc * wt;
            const double dl_da = it->t * dl_dc.dot(s.color - behind);
            behind = s.color * it->a + behind * (1.0 - it->a);
            g.alpha += dl_da * it->weight;
            const double dl_dg = dl_da * s.alpha;
            // G = exp(-0.5 d^T A d), d = center - mean2d
            const Vec2 d = center - s.mean2d;
            const double dl_dq = -0.5 * it->weight * dl_dg;  // q = d^T A d
            g.conic_inv += dl_dq * (d * d.transpose());
            g.mean2d += -2.0 * dl_dq * (s.conic_inv * d);
          }
        }
    }
  });
  GradientBuffer out;
  out.splats.assign(splats.size(), SplatGrad{});
  for (const auto& rows : partial)
    for (std::size_t i = 0; i < splats.size(); ++i) {
      out.splats[i].mean2d += rows[i].mean2d;
      out.splats[i].conic_inv += rows[i].conic_inv;
      out.splats[i].alpha += rows[i].alpha;
      out.splats[i].color += rows[i].color;
    }
  return out;
}

Framebuffer render_reference(const GaussianSet& gaussians, const Camera& camera, const Vec3& background) {
  const ProjectedScene projected = cull_and_project(gaussians, camera);
  const auto& splats = projected.splats;
  Framebuffer fb;
  fb.width = camera.width;
  fb.height = camera.height;
  fb.raw.assign(std::size_t(fb.width) * fb.height * 3, 0.0);
  fb.transmittance.assign(std::size_t(fb.width) * fb.height, 1.0);
  std::vector<int> covering;
  for (int y = 0; y < fb.height; ++y)
    for (int x = 0; x < fb.width; ++x) {
      covering.clear();
      for (int i = 0; i < static_cast<int>(splats.size()); ++i)
        if (splats[i].rect.contains(x, y)) covering.push_back(i);
      std::sort(covering.begin(), covering.end(), [&](int a, int b) { return depth_less(splats, a, b); });
      Vec3 c = Vec3::Zero();
      const double t = blend_pixel(splats, covering, x, y, 0.0,
                                   [&](const Contribution& k) { c += splats[k.splat].color * (k.a * k.t); });
      const std::size_t p = std::size_t(y) * fb.width + x;
      const Vec3 out = c + background * t;
      for (int ch = 0; ch < 3; ++ch) fb.raw[3 * p + ch] = out[ch];
      fb.transmittance[p] = t;
    }
  fb.has_forward_state = true;
  return fb;
}

RenderResult render(const GaussianSet& gaussians, const Camera& camera, const Vec3& background,
                    const RenderOptions& options) {
  RenderResult r;
  r.background = background;
  r.projected = cull_and_project(gaussians, camera);
  r.bins = bin_tiles(r.projected.splats, camera.width, camera.height, options.tile_size);
  r.framebuffer = composite_forward(r.projected.splats, r.bins, background, options.composite);
  r.image = r.framebuffer.image();
  return r;
}

GaussianGradients project_backward(const GaussianSet& gaussians, const ProjectedScene& projected,
                                   const GradientBuffer& splat_grads) {
  require(splat_grads.splats.size() == projected.splats.size(), ErrorKind::kUsage,
          "project_backward: gradient buffer does not match the projected splats");
  require(projected.gaussian_count == gaussians.size(), ErrorKind::kUsage,
          "project_backward: Gaussian set changed since projection");
  const Camera& cam = projected.camera;
  GaussianGradients out;
  out.params.assign(gaussians.size(), GaussianParams::zeros());
  out.screen_grad_norm.assign(gaussians.size(), 0.0);
  out.visible.assign(gaussians.size(), 0);
  for (std::size_t k = 0; k < projected.splats.size(); ++k) {
    const SplatInstance& s = projected.splats[k];
    const SplatCache& c = projected.cache[k];
    const SplatGrad& sg = splat_grads.splats[k];
    const GaussianParams& g = gaussians.items[s.source_index];
    GaussianParams& out_g = out.params[s.source_index];
    out.visible[s.source_index] = 1;

    const Vec3& p = c.mean_cam;
    const double inv_z = 1.0 / p.z();
    const double inv_z2 = inv_z * inv_z;
    const double inv_z3 = inv_z2 * inv_z;

    // Screen-space mean.
    Vec3 dl_dpcam(cam.fx * inv_z * sg.mean2d.x(), cam.fy * inv_z * sg.mean2d.y(),
                  -cam.fx * p.x() * inv_z2 * sg.mean2d.x() - cam.fy * p.y() * inv_z2 * sg.mean2d.y());
    out.screen_grad_norm[s.source_index] =
        Vec2(sg.mean2d.x() * 0.5 * cam.width, sg.mean2d.y() * 0.5 * cam.height).norm();

    // Conic inverse -> screen covariance -> camera covariance and Jacobian.
    const Mat2& a = s.conic_inv;
    const Mat2 dl_dsigma2d = -a.transpose() * sg.conic_inv * a.transpose();
    const auto j = perspective_jacobian(p, cam.fx, cam.fy);
    const Mat3 dl_dcov_cam = j.transpose() * dl_dsigma2d * j;
    const Eigen::Matrix<double, 2, 3> dl_dj = (dl_dsigma2d + dl_dsigma2d.transpose()) * j * c.cov_cam;
    dl_dpcam.x() += dl_dj(0, 2) * (-cam.fx * inv_z2);
    dl_dpcam.y() += dl_dj(1, 2) * (-cam.fy * inv_z2);
    dl_dpcam.z() += dl_dj(0, 0) * (-cam.fx * inv_z2) + dl_dj(0, 2) * (2.0 * cam.fx * p.x() * inv_z3) +
                    dl_dj(1, 1) * (-cam.fy * inv_z2) + dl_dj(1, 2) * (2.0 * cam.fy * p.y() * inv_z3);

    const Mat3 dl_dsigma = cam.rotation.transpose() * dl_dcov_cam * cam.rotation;
    const CovarianceGrad cg = build_covariance_backward(g.rotation, g.log_scale, dl_dsigma);
    out_g.rotation += cg.rotation;
    out_g.log_scale += cg.log_scale;

    out_g.mean += cam.rotation.transpose() * dl_dpcam;

    const double alpha = s.alpha;
    out_g.opacity_logit += sg.alpha * alpha * (1.0 - alpha);

    Vec3 dl_ddir;
    sh_to_color_backward(g.sh, projected.sh_degree, c.view_dir, c.color, sg.color, out_g.sh, dl_ddir);
    if (projected.sh_degree > 0 && c.view_dist > 0.0) {
      const Vec3& d = c.view_dir;
      out_g.mean += (dl_ddir - d * d.dot(dl_ddir)) / c.view_dist;
    }
  }
  return out;
}

GaussianGradients render_backward(const GaussianSet& gaussians, const RenderResult& forward,
                                  const Image& grad_image, const RenderOptions& options) {
  const GradientBuffer buf = composite_backward(forward.projected.splats, forward.bins, forward.framebuffer,
                                                forward.background, grad_image, options.composite);
  return project_backward(gaussians, forward.projected, buf);
}

}  // namespace ctrlgs
