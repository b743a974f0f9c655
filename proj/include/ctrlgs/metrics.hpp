#pragma once

#include "ctrlgs/image.hpp"

namespace ctrlgs {

inline constexpr double kPsnrSentinel = 100.0;  // reported for identical images

/// 10 log10(1 / MSE) over all channels; kPsnrSentinel when MSE is zero.
double psnr(const Image& a, const Image& b);

/// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, data range 1),
/// averaged over the valid region and the three channels. Both sides need
/// at least 11 pixels in each dimension.
double ssim(const Image& a, const Image& b);

struct MsSsimResult {
  double value = 0.0;
  int scales = 0;  // may be fewer than 5 for small images
};

/// Multi-scale SSIM with the standard five weights. Scales whose image would
/// drop below the 11 px window are omitted and the remaining weights renormalized.
MsSsimResult ms_ssim(const Image& a, const Image& b);

}  // namespace ctrlgs
