#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctrlgs/image.hpp"

namespace ctrlgs {

/// Scalar motion between consecutive frames: magnitudes[k] is the flow between
/// frames k and k + 1, timestamps are the frame times in [0, 1].
struct FlowSeries {
  std::vector<double> magnitudes;
  std::vector<double> timestamps;

  int frame_count() const { return static_cast<int>(timestamps.size()); }
  double total() const;

  /// Frames at k / (M - 1).
  static FlowSeries uniform(std::vector<double> magnitudes);
  void validate() const;
};

/// Ordered partition of [0, 1]: window k is [b_k, b_{k+1}), the last one closed.
struct WindowSet {
  std::vector<double> boundaries{0.0, 1.0};

  int count() const { return static_cast<int>(boundaries.size()) - 1; }
  double start(int k) const { return boundaries[k]; }
  double end(int k) const { return boundaries[k + 1]; }
  void validate() const;

  bool operator==(const WindowSet&) const = default;
};

WindowSet equal_windows(int n);

/// Cuts at the midpoints of the n - 1 highest-flow frame pairs (ties: earlier pair).
WindowSet n_highest_windows(const FlowSeries& flow, int n);

/// Greedy running-sum segmentation with threshold total / n. Falls back to
/// equal windows (and sets *fell_back) when the total flow is zero.
WindowSet greedy_threshold_windows(const FlowSeries& flow, int n, bool* fell_back = nullptr);

/// Flow assigned to each window: pair k counts toward the window holding frame k.
std::vector<double> window_flow_sums(const FlowSeries& flow, const WindowSet& windows);

/// Binary search under the half-open convention.
int segment_index(double t, const WindowSet& windows);

/// Segment lookup with a table precomputed over the known (training) timestamps
/// and binary search for anything else.
class SegmentIndexTable {
 public:
  SegmentIndexTable() = default;
  SegmentIndexTable(const WindowSet& windows, std::span<const double> timestamps);

  int lookup(double t) const;
  bool cached(double t) const;
  std::size_t size() const { return table_.size(); }

 private:
  WindowSet windows_;
  std::unordered_map<std::uint64_t, int> table_;
};

/// Coarse block-matching motion proxy: per frame pair, the mean displacement
/// magnitude over blocks whose content changed.
FlowSeries estimate_flow_proxy(std::span<const Image> frames, int block_size, int search_radius);

/// Motion peaks: runs of at least two pairs whose flow exceeds the mean flow;
/// the argmax of each run is reported.
std::vector<int> flow_peaks(const FlowSeries& flow);

/// Shortest decimal that round-trips to the same double.
std::string format_shortest(double v);
double parse_double(const std::string& text);

void write_flow_file(const std::filesystem::path& path, const FlowSeries& flow);
FlowSeries read_flow_file(const std::filesystem::path& path);
void write_windows_file(const std::filesystem::path& path, const WindowSet& windows);
WindowSet read_windows_file(const std::filesystem::path& path);

}  // namespace ctrlgs
