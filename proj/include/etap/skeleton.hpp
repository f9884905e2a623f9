#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "etap/rng.hpp"

namespace etap {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
/// Joint positions in the rig frame (x right, y up, z forward), centimeters.
using Pose3D = std::vector<Vec3>;

/// Per-joint local rotation limits in radians, [lo, hi] per axis (x, y, z).
struct AngleRange {
  std::array<double, 3> lo{0, 0, 0};
  std::array<double, 3> hi{0, 0, 0};
};

struct SkeletonConfig {
  std::vector<std::string> names;
  /// parent[i] = -1 marks the root. Need not be topologically ordered.
  std::vector<int> parent;
  /// Rest offset from the parent, parent-local frame. Ignored for the root.
  std::vector<Vec3> offset;
  std::vector<AngleRange> range;
};

/// Topologically indexed joint tree: root at 0, parent(i) < i.
class SkeletonTree {
 public:
  std::size_t joint_count() const { return parent_.size(); }
  std::size_t limb_count() const { return parent_.size() - 1; }
  int parent(std::size_t i) const { return parent_[i]; }
  const std::vector<int>& parents() const { return parent_; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  const Vec3& offset(std::size_t i) const { return offset_[i]; }
  double bone_length(std::size_t i) const { return offset_[i].norm(); }
  const AngleRange& range(std::size_t i) const { return range_[i]; }
  /// Limb l joins parent(l + 1) and l + 1.
  std::vector<std::pair<int, int>> limbs() const;
  std::vector<std::vector<int>> children() const;
  /// True if `a` is `d` or one of its ancestors.
  bool is_ancestor_or_self(std::size_t a, std::size_t d) const;

 private:
  friend SkeletonTree build_skeleton(const SkeletonConfig&);
  std::vector<std::string> names_;
  std::vector<int> parent_;
  std::vector<Vec3> offset_;
  std::vector<AngleRange> range_;
};

/// Validates and reindexes the config so that parents precede children.
/// Already topological configs keep their indices.
SkeletonTree build_skeleton(const SkeletonConfig& config);

/// 15-joint humanoid: head (root), neck, pelvis, arms and legs of 3 joints each.
SkeletonConfig default_skeleton_config();
/// Straight chain of `joints` joints hanging down from the root.
SkeletonConfig chain_skeleton_config(std::size_t joints, double bone_length = 10.0);

Mat3 euler_xyz(double ax, double ay, double az);

/// Forward kinematics: R_i = R_parent * local[i], pos_i = pos_parent + R_parent * offset_i.
/// The root sits at the origin.
Pose3D forward_kinematics(const SkeletonTree& tree, const std::vector<Mat3>& local);
Pose3D rest_pose(const SkeletonTree& tree);

/// Draws three angles per joint (x, y, z in joint order) inside its range.
Pose3D sample_pose(const SkeletonTree& tree, Rng& rng);

}  // namespace etap

namespace etap {

/// "humanoid15", "fork4" (head, neck, two arms) or "chainN" for N >= 2.
SkeletonConfig skeleton_preset(const std::string& name);

}  // namespace etap
