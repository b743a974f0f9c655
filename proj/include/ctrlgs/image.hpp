#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ctrlgs {

/// Interleaved RGB image in linear [0, 1] units, row-major, origin top-left.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0) : width(w), height(h), data(std::size_t(w) * h * 3, fill) {}

  double& at(int x, int y, int c) { return data[(std::size_t(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return data[(std::size_t(y) * width + x) * 3 + c]; }
  std::size_t pixel_count() const { return std::size_t(width) * height; }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }

  bool operator==(const Image&) const = default;
};

/// Box-filter downsample by an integer factor (dimensions must divide).
Image downsample(const Image& img, int factor);

/// Luma (Rec. 601 weights), one value per pixel.
std::vector<double> luminance(const Image& img);

/// Image with every value rounded through float32, matching what the PF writer stores.
Image quantize_to_float(const Image& img);

void write_ppm(const std::filesystem::path& path, const Image& img);  // P6, 8 bit
void write_pfm(const std::filesystem::path& path, const Image& img);  // PF, float32 little-endian

/// Reads P6 or PF, dispatching on the magic.
Image read_image(const std::filesystem::path& path);

}  // namespace ctrlgs
