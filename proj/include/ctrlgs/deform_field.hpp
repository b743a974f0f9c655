#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctrlgs/geometry.hpp"
#include "ctrlgs/windows.hpp"

namespace ctrlgs {

/// Trainable tensor families. Gaussian classes come first so the values match
/// the field order of for_each_field.
enum class ParamClass {
  kMeans,
  kRotations,
  kLogScales,
  kOpacity,
  kSh,
  kGrid,
  kEncoderMlp,
  kHeadX,
  kHeadR,
  kHeadS,
  kSegmentHeadX,
  kSegmentHeadR,
  kSegmentHeadS,
};

const char* param_class_name(ParamClass c);

struct HexPlaneConfig {
  int features = 8;
  int spatial_resolution = 16;
  int temporal_resolution = 8;
  int levels = 2;
  int upsample = 2;
  Vec3 bounds_min = Vec3::Constant(-1.0);
  Vec3 bounds_max = Vec3::Constant(1.0);
  double init_noise = 0.1;  // features start at 1 + U(-init_noise, init_noise)

  bool operator==(const HexPlaneConfig&) const = default;
};

/// One 2D feature plane over coordinate axes (u, v); axis 3 is time.
/// Feature c of vertex (i, j) lives at data[(j * res_u + i) * F + c].
struct FeaturePlane {
  int axis_u = 0;
  int axis_v = 1;
  int res_u = 2;
  int res_v = 2;
  std::vector<double> data;

  bool operator==(const FeaturePlane&) const = default;
};

inline constexpr std::array<std::array<int, 2>, 6> kPlaneAxes{{{0, 1}, {0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}}};

/// Per-query record needed to backpropagate one encoder evaluation.
struct EncodeTrace {
  std::array<double, 4> coord{};        // normalized query, [0, 1]
  std::array<bool, 3> clamped{};        // spatial coordinate was clamped to the bounds
  std::vector<double> plane_features;   // levels * 6 * F interpolated plane values
};

class HexPlaneGrid {
 public:
  HexPlaneGrid() = default;
  /// All features set to 1 + U(-noise, noise) from `seed`.
  HexPlaneGrid(const HexPlaneConfig& config, std::uint64_t seed);

  const HexPlaneConfig& config() const { return config_; }
  int output_width() const { return config_.levels * config_.features; }

  /// Fused feature: product over the six planes per level, levels concatenated.
  void encode(const Vec3& mean, double t, std::span<double> out, EncodeTrace* trace = nullptr) const;

  /// Accumulates into `grad` (same shape) and, if non-null, *grad_mean.
  void encode_backward(const EncodeTrace& trace, std::span<const double> grad_out, HexPlaneGrid& grad,
                       Vec3* grad_mean) const;

  /// Mean squared neighbour difference over every plane; gradient accumulated
  /// into `grad` scaled by `weight` when non-null.
  double total_variation(HexPlaneGrid* grad, double weight) const;

  std::vector<FeaturePlane>& planes() { return planes_; }
  const std::vector<FeaturePlane>& planes() const { return planes_; }
  HexPlaneGrid zeros_like() const;

  bool operator==(const HexPlaneGrid&) const = default;

 private:
  HexPlaneConfig config_;
  std::vector<FeaturePlane> planes_;  // level-major, kPlaneAxes order
};

/// in -> hidden (ReLU) -> out (identity). Weights row-major [rows x cols].
struct TinyMLP {
  int in = 0;
  int hidden = 0;
  int out = 0;
  std::vector<double> w1, b1, w2, b2;

  static TinyMLP create(int in, int hidden, int out, std::uint64_t seed, bool zero_output);
  TinyMLP zeros_like() const;

  /// `pre_hidden` receives the hidden pre-activations (size hidden).
  void forward(std::span<const double> x, std::span<double> pre_hidden, std::span<double> y) const;
  /// Accumulates parameter gradients into `grad`; writes dL/dx into `grad_x` when non-empty.
  void backward(std::span<const double> x, std::span<const double> pre_hidden, std::span<const double> grad_y,
                TinyMLP& grad, std::span<double> grad_x) const;

  bool operator==(const TinyMLP&) const = default;
};

struct DeformConfig {
  HexPlaneConfig grid;
  int encoder_width = 32;  // phi_d hidden and output width
  int head_hidden = 32;
  bool segment_heads = true;

  bool operator==(const DeformConfig&) const = default;
};

inline constexpr std::array<int, 3> kHeadOutputs{3, 4, 3};  // position, rotation, log-scale

struct DeformationField {
  DeformConfig config;
  HexPlaneGrid grid;
  TinyMLP encoder;                       // phi_d
  std::array<TinyMLP, 3> frame_heads;    // phi_x, phi_r, phi_s
  std::array<TinyMLP, 3> segment_heads;  // phi_xT, phi_rT, phi_sT (input: hidden + quantized time)

  /// Hidden layers small-uniform, head output layers zero.
  static DeformationField create(const DeformConfig& config, std::uint64_t seed);
  DeformationField zeros_like() const;

  struct Tensor {
    ParamClass cls;
    std::span<double> values;
  };
  /// Every trainable tensor in a fixed order (segment heads included even when disabled).
  std::vector<Tensor> tensors();
  std::size_t parameter_count();

  bool operator==(const DeformationField&) const = default;
};

/// Maps a timestamp to its window's representative time start_k + q * (end_k - start_k).
class TemporalQuantizer {
 public:
  TemporalQuantizer() = default;
  TemporalQuantizer(WindowSet windows, double q, std::span<const double> known_timestamps = {});

  double quantize(double t) const;
  int window_of(double t) const { return table_.lookup(t); }
  const WindowSet& windows() const { return windows_; }
  double q() const { return q_; }
  const std::vector<double>& known_timestamps() const { return known_; }
  const SegmentIndexTable& table() const { return table_; }

 private:
  WindowSet windows_ = equal_windows(1);
  double q_ = 0.5;
  std::vector<double> known_;
  SegmentIndexTable table_{windows_, {}};
};

double quantize_time(double t, const TemporalQuantizer& quantizer);

struct Deltas {
  Vec3 position = Vec3::Zero();
  Vec4 rotation = Vec4::Zero();
  Vec3 log_scale = Vec3::Zero();
};

/// Encoder H(mean, t): plane fusion followed by phi_d.
std::vector<double> encode(const DeformationField& field, const Vec3& mean, double t);
Deltas decode_frame(const DeformationField& field, std::span<const double> feature);
Deltas decode_segment(const DeformationField& field, std::span<const double> feature, double t_quantized);

/// Everything deform_backward needs, reusable across calls.
struct DeformTrace {
  struct PerGaussian {
    EncodeTrace enc[2];                    // [0] continuous t, [1] quantized t
    std::vector<double> fused[2];
    std::vector<double> encoder_pre[2];
    std::vector<double> hidden[2];
    std::vector<double> segment_input;     // hidden[1] + quantized time
    std::array<std::vector<double>, 3> frame_pre;
    std::array<std::vector<double>, 3> segment_pre;
  };
  double t = 0.0;
  double t_quantized = 0.0;
  bool segments = false;
  std::vector<PerGaussian> items;
  std::size_t clamped_queries = 0;
};

/// Cascaded residue deformation: mean, rotation and log-scale receive
/// segment-constant plus frame-specific offsets; opacity and SH are copied.
/// The rotation sum is left unnormalized here; covariance construction normalizes it.
GaussianSet deform(const GaussianSet& canonical, double t, const TemporalQuantizer& quantizer,
                   const DeformationField& field, DeformTrace* trace = nullptr);

/// Accumulates dL/d(canonical) into grad_canonical and dL/d(field) into grad_field.
void deform_backward(const GaussianSet& canonical, const DeformationField& field, const DeformTrace& trace,
                     const std::vector<GaussianParams>& grad_deformed, std::vector<GaussianParams>& grad_canonical,
                     DeformationField& grad_field);

}  // namespace ctrlgs
