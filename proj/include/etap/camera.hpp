#pragma once

#include <array>
#include <vector>

#include "etap/skeleton.hpp"

namespace etap {

struct RigConfig {
  double baseline = 8.0;    // cm between the two cameras
  double drop = 2.0;        // cm below the rig origin
  double pitch_deg = 60.0;  // downward tilt of both optical axes
  double focal_scale = 0.35;
  std::size_t resolution = 64;
};

/// Pinhole camera. Camera frame: x image-right, y image-down, z along the
/// optical axis. Pixel centers sit at integer coordinates.
struct PinholeCamera {
  Vec3 center = Vec3::Zero();
  /// Rows are the camera axes expressed in the rig frame.
  Mat3 axes = Mat3::Identity();
  double focal = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::size_t resolution = 64;

  Vec3 to_camera(const Vec3& rig_point) const { return axes * (rig_point - center); }
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  /// In front of the camera and inside [-0.5, R - 0.5) on both axes.
  bool in_view = false;
};

/// Projects a camera-frame point. Points with z <= 0 get u = v = 0 and in_view = false.
Projection project_camera_point(const PinholeCamera& cam, const Vec3& p_cam);
Projection project_point(const PinholeCamera& cam, const Vec3& rig_point);

struct StereoCamera {
  std::array<PinholeCamera, 2> view;  // left, right

  static StereoCamera make(const RigConfig& rig);
};

/// Per view, one projection per joint.
std::array<std::vector<Projection>, 2> project(const Pose3D& pose, const StereoCamera& cam);

}  // namespace etap
