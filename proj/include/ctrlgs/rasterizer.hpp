#pragma once

#include <vector>

#include "ctrlgs/geometry.hpp"
#include "ctrlgs/image.hpp"

namespace ctrlgs {

/// Inclusive pixel-index range covered by a splat's 3-sigma square.
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;

  bool empty() const { return x0 > x1 || y0 > y1; }
  bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

struct SplatInstance {
  Vec2 mean2d = Vec2::Zero();
  Mat2 conic_inv = Mat2::Identity();
  double depth = 0.0;
  double alpha = 0.0;
  Vec3 color = Vec3::Zero();
  int source_index = -1;
  double radius = 0.0;
  PixelRect rect;
};

/// Intermediates of the projection kept for the backward pass.
struct SplatCache {
  Vec3 mean_cam = Vec3::Zero();
  Mat3 cov_cam = Mat3::Zero();
  Vec3 view_dir = Vec3::Zero();  // unit, camera center -> mean
  double view_dist = 1.0;
  ShColor color;
};

struct ProjectedScene {
  Camera camera;
  int sh_degree = 0;
  std::size_t gaussian_count = 0;
  std::vector<SplatInstance> splats;
  std::vector<SplatCache> cache;
};

/// Projects every Gaussian, dropping those behind the near plane or whose
/// 3-sigma square covers no pixel center.
ProjectedScene cull_and_project(const GaussianSet& gaussians, const Camera& camera);

PixelRect splat_pixel_rect(const Vec2& mean2d, double radius, int width, int height);

struct TileBins {
  int width = 0;
  int height = 0;
  int tile_size = 16;
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::vector<int>> lists;  // per tile, indices into the splat array

  const std::vector<int>& tile(int tx, int ty) const { return lists[std::size_t(ty) * tiles_x + tx]; }
};

/// Bins splats into square tiles; each list is sorted by (depth, source_index).
TileBins bin_tiles(const std::vector<SplatInstance>& splats, int width, int height, int tile_size);

struct CompositeOptions {
  double termination_threshold = 1e-4;
  int threads = 1;
};

struct Framebuffer {
  int width = 0;
  int height = 0;
  std::vector<double> raw;            // unclamped composite, RGB interleaved
  std::vector<double> transmittance;  // per pixel, after the last blended splat
  bool has_forward_state = false;

  /// Composite clamped to [0, 1].
  Image image() const;
};

Framebuffer composite_forward(const std::vector<SplatInstance>& splats, const TileBins& bins,
                              const Vec3& background, const CompositeOptions& options = {});

struct SplatGrad {
  Vec2 mean2d = Vec2::Zero();
  Mat2 conic_inv = Mat2::Zero();  // full-matrix gradient (both off-diagonal entries)
  double alpha = 0.0;
  Vec3 color = Vec3::Zero();
};

struct GradientBuffer {
  std::vector<SplatGrad> splats;  // aligned with the splat array
};

/// Exact reverse of composite_forward. Throws kUsage when `framebuffer` carries
/// no forward state or its shape disagrees with `grad_image`.
GradientBuffer composite_backward(const std::vector<SplatInstance>& splats, const TileBins& bins,
                                  const Framebuffer& framebuffer, const Vec3& background,
                                  const Image& grad_image, const CompositeOptions& options = {});

/// Brute-force oracle: per pixel global sort of every covering splat, no tiles,
/// no early termination.
Framebuffer render_reference(const GaussianSet& gaussians, const Camera& camera, const Vec3& background);

struct RenderOptions {
  int tile_size = 16;
  CompositeOptions composite;
};

struct RenderResult {
  ProjectedScene projected;
  TileBins bins;
  Framebuffer framebuffer;
  Vec3 background = Vec3::Zero();
  Image image;
};

RenderResult render(const GaussianSet& gaussians, const Camera& camera, const Vec3& background,
                    const RenderOptions& options = {});

struct GaussianGradients {
  std::vector<GaussianParams> params;       // dL/d(parameters), zero for culled Gaussians
  std::vector<double> screen_grad_norm;     // |dL/d mean2d| in NDC units
  std::vector<char> visible;
};

/// Chains splat gradients back to the Gaussian parameters.
GaussianGradients project_backward(const GaussianSet& gaussians, const ProjectedScene& projected,
                                   const GradientBuffer& splat_grads);

GaussianGradients render_backward(const GaussianSet& gaussians, const RenderResult& forward,
                                  const Image& grad_image, const RenderOptions& options = {});

}  // namespace ctrlgs
