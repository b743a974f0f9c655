#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctrlgs/geometry.hpp"
#include "ctrlgs/image.hpp"

namespace ctrlgs {

inline constexpr const char* kManifestFormat = "ctrlgs_manifest_v1";
inline constexpr const char* kPointsFormat = "ctrlgs_points_v1";
inline constexpr const char* kTrajectoryFormat = "ctrlgs_trajectory_v1";

enum class Split { kTrain, kVal, kUnused };

const char* split_name(Split s);
Split parse_split(const std::string& name);  // "train" | "val" | "unused"

struct DatasetFrame {
  std::filesystem::path image_path;  // absolute, resolved against the manifest directory
  Camera camera;
  double t = 0.0;
  Split split = Split::kTrain;
};

struct ScenePoint {
  Vec3 position = Vec3::Zero();
  Vec3 color = Vec3::Constant(0.5);
};

struct Dataset {
  std::filesystem::path manifest_path;
  std::vector<DatasetFrame> frames;  // sorted by t
  Vec3 bounds_min = Vec3::Constant(-1.0);
  Vec3 bounds_max = Vec3::Constant(1.0);
  Vec3 background = Vec3::Zero();
  std::vector<ScenePoint> points;  // empty when the manifest names no point file

  std::vector<const DatasetFrame*> split(Split s) const;
  std::vector<double> timestamps(Split s) const;
};

struct LoadOptions {
  /// Ignore manifest split tags: every `stride`-th frame trains and the frame
  /// midway between two consecutive training frames validates.
  bool auto_split = false;
  int stride = 4;
  bool check_images = true;  // confirm each image exists and matches its camera
};

Dataset load_dataset(const std::filesystem::path& manifest, const LoadOptions& options = {});

/// Applies the stride rule to frames already sorted by t.
void apply_auto_split(std::vector<DatasetFrame>& frames, int stride);

/// Writes a manifest whose image paths are relative to the manifest directory.
void write_manifest(const std::filesystem::path& manifest, const Dataset& dataset,
                    const std::filesystem::path& points_file = {});

void write_points(const std::filesystem::path& path, const std::vector<ScenePoint>& points);
std::vector<ScenePoint> read_points(const std::filesystem::path& path);

}  // namespace ctrlgs
