#include "ctrlgs/image.hpp"

#include <algorithm>
#include <cctype>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ctrlgs/error.hpp"

namespace ctrlgs {

static_assert(std::endian::native == std::endian::little, "PF and checkpoint I/O assume little-endian hosts");

Image downsample(const Image& img, int factor) {
  require(factor >= 1, ErrorKind::kInvalidParameter, "downsample factor must be >= 1");
  if (factor == 1) return img;
  require(img.width % factor == 0 && img.height % factor == 0, ErrorKind::kInvalidParameter,
          "image dimensions are not divisible by the downsample factor");
  Image out(img.width / factor, img.height / factor);
  const double norm = 1.0 / (factor * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) s += img.at(x * factor + dx, y * factor + dy, c);
        out.at(x, y, c) = s * norm;
      }
  return out;
}

std::vector<double> luminance(const Image& img) {
  std::vector<double> out(img.pixel_count());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.299 * img.data[3 * i] + 0.587 * img.data[3 * i + 1] + 0.114 * img.data[3 * i + 2];
  return out;
}

Image quantize_to_float(const Image& img) {
  Image out = img;
  for (double& v : out.data) v = static_cast<double>(static_cast<float>(v));
  return out;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  require(bool(os), ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(bool(os), ErrorKind::kIo, "failed writing " + path.string());
}

void write_pfm(const std::filesystem::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  require(bool(os), ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  os << "PF\n" << img.width << " " << img.height << "\n-1.0\n";
  std::vector<float> row(std::size_t(img.width) * 3);
  // PFM stores scanlines bottom to top.
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) row[std::size_t(x) * 3 + c] = static_cast<float>(img.at(x, y, c));
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  require(bool(os), ErrorKind::kIo, "failed writing " + path.string());
}

namespace {

std::string next_token(std::istream& is) {
  std::string tok;
  while (is) {
    int ch = is.peek();
    if (ch == '#') {
      std::string skip;
      std::getline(is, skip);
    } else if (std::isspace(ch)) {
      is.get();
    } else {
      break;
    }
  }
  is >> tok;
  return tok;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), ErrorKind::kIngestion, "cannot open image " + path.string());
  const std::string magic = next_token(is);
  int w = 0, h = 0;
  try {
    w = std::stoi(next_token(is));
    h = std::stoi(next_token(is));
  } catch (const std::exception&) {
    fail(ErrorKind::kIngestion, "malformed image header in " + path.string());
  }
  require(w > 0 && h > 0, ErrorKind::kIngestion, "bad image dimensions in " + path.string());
  Image img(w, h);
  if (magic == "P6") {
    const int maxval = std::stoi(next_token(is));
    require(maxval == 255, ErrorKind::kIngestion, "only 8-bit P6 is supported: " + path.string());
    is.get();
    std::vector<unsigned char> bytes(img.data.size());
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(is.gcount() == static_cast<std::streamsize>(bytes.size()), ErrorKind::kIngestion,
            "truncated image " + path.string());
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
  } else if (magic == "PF") {
    const double scale = std::stod(next_token(is));
    require(scale < 0.0, ErrorKind::kIngestion, "big-endian PF is not supported: " + path.string());
    is.get();
    std::vector<float> row(std::size_t(w) * 3);
    for (int y = h - 1; y >= 0; --y) {
      is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
      require(is.gcount() == static_cast<std::streamsize>(row.size() * sizeof(float)),
              ErrorKind::kIngestion, "truncated image " + path.string());
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = row[std::size_t(x) * 3 + c];
    }
  } else {
    fail(ErrorKind::kIngestion, "unsupported image format '" + magic + "' in " + path.string());
  }
  return img;
}

}  // namespace ctrlgs
