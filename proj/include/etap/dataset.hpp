#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "etap/heatmap.hpp"

namespace etap {

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetConfig {
  std::string skeleton = "humanoid15";
  RigConfig rig;
  RenderConfig render;
  OcclusionPolicy occlusion;
  std::uint64_t seed = 1;
  std::size_t samples = 100;
};

/// Samples stacked along the leading axis:
///   joint [S, 2 N_J, R, R], limb [S, 2 N_L, 2, R, R], poses [S, N_J, 3].
struct Dataset {
  DatasetConfig config;
  SkeletonTree tree;
  Tensor<float> joint;
  Tensor<float> limb;
  Tensor<float> poses;
  std::size_t occluded_views = 0;
  /// Free-form provenance copied into the manifest (e.g. the CLI run config).
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const { return poses.dim(0); }
  std::size_t joint_count() const { return tree.joint_count(); }
  std::size_t resolution() const { return joint.dim(2); }
  StereoHeatmapSet heatmaps(std::size_t i) const;
  Pose3D pose(std::size_t i) const;
  /// Copies the listed samples into a new dataset.
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

/// Per-sample generation with Rng::derive(seed, index): pose, render, occlude.
/// Output is independent of `workers`.
Dataset generate_dataset(const DatasetConfig& config, std::size_t workers = 1);

nlohmann::json dataset_manifest(const Dataset& ds);
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

}  // namespace etap
