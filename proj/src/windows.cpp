#include "ctrlgs/windows.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ctrlgs/error.hpp"

namespace ctrlgs {

double FlowSeries::total() const { return std::accumulate(magnitudes.begin(), magnitudes.end(), 0.0); }

FlowSeries FlowSeries::uniform(std::vector<double> magnitudes) {
  FlowSeries f;
  const int frames = static_cast<int>(magnitudes.size()) + 1;
  f.magnitudes = std::move(magnitudes);
  f.timestamps.resize(frames);
  for (int k = 0; k < frames; ++k) f.timestamps[k] = frames == 1 ? 0.0 : static_cast<double>(k) / (frames - 1);
  return f;
}

void FlowSeries::validate() const {
  require(timestamps.size() >= 2, ErrorKind::kInvalidParameter, "flow series needs at least two frames");
  require(magnitudes.size() + 1 == timestamps.size(), ErrorKind::kInvalidParameter,
          "flow series length must be frame_count - 1");
  for (double m : magnitudes)
    require(std::isfinite(m) && m >= 0.0, ErrorKind::kInvalidParameter,
            "flow magnitudes must be finite and non-negative");
  for (std::size_t k = 0; k < timestamps.size(); ++k) {
    require(timestamps[k] >= 0.0 && timestamps[k] <= 1.0, ErrorKind::kInvalidParameter,
            "frame timestamps must lie in [0, 1]");
    if (k > 0)
      require(timestamps[k] > timestamps[k - 1], ErrorKind::kInvalidParameter,
              "frame timestamps must be strictly increasing");
  }
}

void WindowSet::validate() const {
  require(boundaries.size() >= 2, ErrorKind::kInvalidParameter, "window set needs at least one window");
  require(boundaries.front() == 0.0 && boundaries.back() == 1.0, ErrorKind::kInvalidParameter,
          "window boundaries must start at 0 and end at 1");
  for (std::size_t k = 1; k < boundaries.size(); ++k)
    require(boundaries[k] > boundaries[k - 1], ErrorKind::kInvalidParameter,
            "window boundaries must be strictly increasing");
}

WindowSet equal_windows(int n) {
  require(n >= 1, ErrorKind::kInvalidParameter, "window count must be >= 1");
  WindowSet w;
  w.boundaries.resize(n + 1);
  for (int k = 0; k <= n; ++k) w.boundaries[k] = static_cast<double>(k) / n;
  return w;
}

namespace {

double cut_between(const FlowSeries& flow, int pair) {
  return 0.5 * (flow.timestamps[pair] + flow.timestamps[pair + 1]);
}

WindowSet from_cut_pairs(const FlowSeries& flow, std::vector<int> pairs) {
  std::sort(pairs.begin(), pairs.end());
  WindowSet w;
  w.boundaries.assign(1, 0.0);
  for (int p : pairs) w.boundaries.push_back(cut_between(flow, p));
  w.boundaries.push_back(1.0);
  return w;
}

}  // namespace

WindowSet n_highest_windows(const FlowSeries& flow, int n) {
  flow.validate();
  require(n >= 1, ErrorKind::kInvalidParameter, "window count must be >= 1");
  require(n <= flow.frame_count(), ErrorKind::kInvalidParameter,
          "window count " + std::to_string(n) + " exceeds frame count " + std::to_string(flow.frame_count()));
  std::vector<int> order(flow.magnitudes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return flow.magnitudes[a] > flow.magnitudes[b]; });
  order.resize(n - 1);
  return from_cut_pairs(flow, order);
}

WindowSet greedy_threshold_windows(const FlowSeries& flow, int n, bool* fell_back) {
  flow.validate();
  require(n >= 1, ErrorKind::kInvalidParameter, "window count must be >= 1");
  const double total = flow.total();
  if (fell_back) *fell_back = false;
  if (!(total > 0.0)) {
    if (fell_back) *fell_back = true;
    return equal_windows(n);
  }
  const double threshold = total / n;
  std::vector<int> cuts;
  double running = 0.0;
  for (int k = 0; k < static_cast<int>(flow.magnitudes.size()); ++k) {
    if (static_cast<int>(cuts.size()) + 1 >= n) break;
    running += flow.magnitudes[k];
    if (running >= threshold) {
      cuts.push_back(k);
      running = 0.0;
    }
  }
  return from_cut_pairs(flow, cuts);
}

std::vector<double> window_flow_sums(const FlowSeries& flow, const WindowSet& windows) {
  std::vector<double> sums(windows.count(), 0.0);
  for (std::size_t k = 0; k < flow.magnitudes.size(); ++k)
    sums[segment_index(flow.timestamps[k], windows)] += flow.magnitudes[k];
  return sums;
}

int segment_index(double t, const WindowSet& windows) {
  const auto& b = windows.boundaries;
  // First boundary strictly greater than t, minus one; t == 1 falls into the last window.
  const auto it = std::upper_bound(b.begin() + 1, b.end() - 1, t);
  return static_cast<int>(it - b.begin()) - 1;
}

SegmentIndexTable::SegmentIndexTable(const WindowSet& windows, std::span<const double> timestamps)
    : windows_(windows) {
  for (double t : timestamps) table_.emplace(std::bit_cast<std::uint64_t>(t), segment_index(t, windows_));
}

int SegmentIndexTable::lookup(double t) const {
  if (const auto it = table_.find(std::bit_cast<std::uint64_t>(t)); it != table_.end()) return it->second;
  return segment_index(t, windows_);
}

bool SegmentIndexTable::cached(double t) const { return table_.contains(std::bit_cast<std::uint64_t>(t)); }

FlowSeries estimate_flow_proxy(std::span<const Image> frames, int block_size, int search_radius) {
  require(frames.size() >= 2, ErrorKind::kIngestion, "flow estimation needs at least two frames");
  require(block_size >= 1 && search_radius >= 0, ErrorKind::kInvalidParameter,
          "block_size must be >= 1 and search_radius >= 0");
  const int w = frames[0].width;
  const int h = frames[0].height;
  for (const auto& f : frames)
    require(f.width == w && f.height == h, ErrorKind::kIngestion, "all frames must share one resolution");

  std::vector<double> magnitudes;
  std::vector<double> prev = luminance(frames[0]);
  const double area = static_cast<double>(block_size) * block_size;
  for (std::size_t f = 1; f < frames.size(); ++f) {
    std::vector<double> next = luminance(frames[f]);
    auto sad = [&](int bx, int by, int dx, int dy) {
      double s = 0.0;
      for (int y = 0; y < block_size; ++y)
        for (int x = 0; x < block_size; ++x)
          s += std::abs(prev[std::size_t(by + y) * w + bx + x] - next[std::size_t(by + y + dy) * w + bx + x + dx]);
      return s;
    };
    double sum = 0.0;
    int counted = 0;
    for (int by = 0; by + block_size <= h; by += block_size)
      for (int bx = 0; bx + block_size <= w; bx += block_size) {
        double mean = 0.0, sq = 0.0;
        for (int y = 0; y < block_size; ++y)
          for (int x = 0; x < block_size; ++x) {
            const double v = prev[std::size_t(by + y) * w + bx + x];
            mean += v;
            sq += v * v;
          }
        mean /= area;
        const double variance = sq / area - mean * mean;
        const double sad0 = sad(bx, by, 0, 0);
        if (variance <= 1e-10 || sad0 <= 1e-12 * area) continue;  // flat or unchanged
        double best = sad0;
        int best_d2 = 0;
        double best_mag = 0.0;
        for (int dy = -search_radius; dy <= search_radius; ++dy)
          for (int dx = -search_radius; dx <= search_radius; ++dx) {
            if (bx + dx < 0 || by + dy < 0 || bx + dx + block_size > w || by + dy + block_size > h) continue;
            const double s = sad(bx, by, dx, dy);
            const int d2 = dx * dx + dy * dy;
            if (s < best || (s == best && d2 < best_d2)) {
              best = s;
              best_d2 = d2;
              best_mag = std::sqrt(static_cast<double>(d2));
            }
          }
        sum += best_mag;
        ++counted;
      }
    magnitudes.push_back(counted > 0 ? sum / counted : 0.0);
    prev = std::move(next);
  }
  return FlowSeries::uniform(std::move(magnitudes));
}

std::vector<int> flow_peaks(const FlowSeries& flow) {
  std::vector<int> peaks;
  const auto& m = flow.magnitudes;
  if (m.empty()) return peaks;
  const double mean = flow.total() / double(m.size());
  if (!(mean > 0.0)) return peaks;
  for (std::size_t k = 0; k < m.size();) {
    if (m[k] <= mean) {
      ++k;
      continue;
    }
    const std::size_t first = k;
    std::size_t best = k;
    for (; k < m.size() && m[k] > mean; ++k)
      if (m[k] > m[best]) best = k;
    if (k - first >= 2) peaks.push_back(static_cast<int>(best));
  }
  return peaks;
}

std::string format_shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && std::isspace(static_cast<unsigned char>(*first))) ++first;
  while (last > first && std::isspace(static_cast<unsigned char>(last[-1]))) --last;
  const auto res = std::from_chars(first, last, v);
  require(res.ec == std::errc() && res.ptr == last, ErrorKind::kIngestion, "not a decimal number: '" + text + "'");
  return v;
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(bool(is), ErrorKind::kIngestion, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::string& header, const std::vector<double>& values) {
  std::ofstream os(path);
  require(bool(os), ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  os << header << '\n';
  for (double v : values) os << format_shortest(v) << '\n';
  require(bool(os), ErrorKind::kIo, "failed writing " + path.string());
}

std::vector<double> parse_body(const std::vector<std::string>& lines, const std::filesystem::path& path) {
  std::vector<double> values;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    try {
      values.push_back(parse_double(lines[i]));
    } catch (const Error&) {
      fail(ErrorKind::kIngestion, path.string() + ":" + std::to_string(i + 1) + ": not a decimal number");
    }
  }
  return values;
}

}  // namespace

void write_flow_file(const std::filesystem::path& path, const FlowSeries& flow) {
  write_lines(path, "frame_pair_flow_v1", flow.magnitudes);
}

FlowSeries read_flow_file(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  require(!lines.empty() && lines[0] == "frame_pair_flow_v1", ErrorKind::kIngestion,
          path.string() + ": expected header 'frame_pair_flow_v1'");
  FlowSeries flow = FlowSeries::uniform(parse_body(lines, path));
  flow.validate();
  return flow;
}

void write_windows_file(const std::filesystem::path& path, const WindowSet& windows) {
  write_lines(path, "windows_v1", windows.boundaries);
}

WindowSet read_windows_file(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  require(!lines.empty() && lines[0] == "windows_v1", ErrorKind::kIngestion,
          path.string() + ": expected header 'windows_v1'");
  WindowSet w;
  w.boundaries = parse_body(lines, path);
  try {
    w.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kIngestion, path.string() + ": " + e.what());
  }
  return w;
}

}  // namespace ctrlgs
