#include "ctrlgs/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "ctrlgs/error.hpp"

namespace ctrlgs {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr std::array<double, 5> kMsWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

void check_shapes(const Image& a, const Image& b, const char* what) {
  require(a.same_shape(b), ErrorKind::kUsage,
          std::string(what) + ": image dimensions differ (" + std::to_string(a.width) + "x" +
              std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
}

std::array<double, kWindow> gaussian_kernel() {
  std::array<double, kWindow> k{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    k[i] = std::exp(-0.5 * x * x / (kSigma * kSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable filter restricted to positions where the whole window fits.
std::vector<double> filter_valid(const std::vector<double>& src, int w, int h) {
  static const auto k = gaussian_kernel();
  const int ow = w - kWindow + 1, oh = h - kWindow + 1;
  std::vector<double> rows(std::size_t(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWindow; ++i) s += k[i] * src[std::size_t(y) * w + x + i];
      rows[std::size_t(y) * ow + x] = s;
    }
  std::vector<double> out(std::size_t(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWindow; ++i) s += k[i] * rows[std::size_t(y + i) * ow + x];
      out[std::size_t(y) * ow + x] = s;
    }
  return out;
}

struct SsimTerms {
  double ssim = 0.0;
  double cs = 0.0;
};

SsimTerms channel_terms(const std::vector<double>& x, const std::vector<double>& y, int w, int h) {
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, w, h), my = filter_valid(y, w, h);
  const auto mxx = filter_valid(xx, w, h), myy = filter_valid(yy, w, h), mxy = filter_valid(xy, w, h);
  SsimTerms t;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cov = mxy[i] - mx[i] * my[i];
    const double cs = (2.0 * cov + kC2) / (vx + vy + kC2);
    const double l = (2.0 * mx[i] * my[i] + kC1) / (mx[i] * mx[i] + my[i] * my[i] + kC1);
    t.ssim += l * cs;
    t.cs += cs;
  }
  t.ssim /= double(mx.size());
  t.cs /= double(mx.size());
  return t;
}

std::vector<double> channel(const Image& img, int c) {
  std::vector<double> v(img.pixel_count());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.data[i * 3 + c];
  return v;
}

SsimTerms image_terms(const Image& a, const Image& b) {
  SsimTerms t;
  for (int c = 0; c < 3; ++c) {
    const SsimTerms ct = channel_terms(channel(a, c), channel(b, c), a.width, a.height);
    t.ssim += ct.ssim / 3.0;
    t.cs += ct.cs / 3.0;
  }
  return t;
}

// 2x2 average, dropping a trailing odd row or column.
Image halve(const Image& img) {
  Image out(img.width / 2, img.height / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(x, y, c) = 0.25 * (img.at(2 * x, 2 * y, c) + img.at(2 * x + 1, 2 * y, c) +
                                  img.at(2 * x, 2 * y + 1, c) + img.at(2 * x + 1, 2 * y + 1, c));
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  check_shapes(a, b, "psnr");
  require(!a.data.empty(), ErrorKind::kUsage, "psnr: empty image");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= double(a.data.size());
  if (mse == 0.0) return kPsnrSentinel;
  return std::min(kPsnrSentinel, -10.0 * std::log10(mse));
}

double ssim(const Image& a, const Image& b) {
  check_shapes(a, b, "ssim");
  require(a.width >= kWindow && a.height >= kWindow, ErrorKind::kUsage, "ssim: images must be at least 11x11");
  return image_terms(a, b).ssim;
}

MsSsimResult ms_ssim(const Image& a, const Image& b) {
  check_shapes(a, b, "ms_ssim");
  require(a.width >= kWindow && a.height >= kWindow, ErrorKind::kUsage, "ms_ssim: images must be at least 11x11");
  int scales = 1;
  for (int w = a.width / 2, h = a.height / 2; scales < int(kMsWeights.size()) && w >= kWindow && h >= kWindow;
       w /= 2, h /= 2)
    ++scales;
  double weight_sum = 0.0;
  for (int s = 0; s < scales; ++s) weight_sum += kMsWeights[s];

  Image x = a, y = b;
  double log_value = 0.0;
  for (int s = 0; s < scales; ++s) {
    const SsimTerms t = image_terms(x, y);
    const double term = std::max(0.0, s + 1 == scales ? t.ssim : t.cs);
    log_value += kMsWeights[s] / weight_sum * std::log(term);
    if (s + 1 < scales) {
      x = halve(x);
      y = halve(y);
    }
  }
  return {std::exp(log_value), scales};
}

}  // namespace ctrlgs
