#pragma once

#include <vector>

#include "etap/skeleton.hpp"
#include "etap/tensor.hpp"

namespace etap {

/// Tensor [J, 3] <-> list of points.
template <typename T>
Pose3D to_pose(const Tensor<T>& t);
Tensor<double> to_tensor(const Pose3D& p);

std::vector<double> per_joint_errors(const Pose3D& pred, const Pose3D& gt);
double mpjpe(const Pose3D& pred, const Pose3D& gt);

struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

/// Least-squares similarity taking `from` onto `to` (SVD with reflection guard).
/// Throws std::domain_error when `from` is a single repeated point.
Similarity procrustes(const Pose3D& from, const Pose3D& to);
/// MPJPE after aligning pred to gt with procrustes().
double pa_mpjpe(const Pose3D& pred, const Pose3D& gt);

struct PropagationRow {
  std::size_t sample = 0;
  std::size_t joint = 0;
  double pp = 0.0;  // child-minus-parent error gap of the no-propagation model
  double pe = 0.0;  // child error reduction from propagation
};

/// errors_np[s][j], errors_p[s][j]: per-sample per-joint errors of the two
/// models on the same samples. One row per (sample, non-root joint):
///   PP = e_np[child] - e_np[parent],  PE = e_np[child] - e_p[child].
std::vector<PropagationRow> propagation_metrics(const std::vector<std::vector<double>>& errors_np,
                                                const std::vector<std::vector<double>>& errors_p,
                                                const SkeletonTree& tree);

struct Regression {
  double slope = 0.0;
  double intercept = 0.0;
  double r = 0.0;
  /// Two-sided p-value of the zero-slope null (Student t, n - 2 dof).
  double p_value = 1.0;
  std::size_t n = 0;
};

Regression linear_regression(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace etap
