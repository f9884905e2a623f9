#include "etap/camera.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace etap {

Projection project_camera_point(const PinholeCamera& cam, const Vec3& p) {
  Projection out;
  out.depth = p.z();
  if (!(p.z() > 0)) return out;
  out.u = cam.focal * p.x() / p.z() + cam.cx;
  out.v = cam.focal * p.y() / p.z() + cam.cy;
  const double hi = static_cast<double>(cam.resolution) - 0.5;
  out.in_view = out.u >= -0.5 && out.u < hi && out.v >= -0.5 && out.v < hi;
  return out;
}

Projection project_point(const PinholeCamera& cam, const Vec3& rig_point) {
  return project_camera_point(cam, cam.to_camera(rig_point));
}

StereoCamera StereoCamera::make(const RigConfig& rig) {
  if (!(rig.baseline > 0)) throw std::invalid_argument("rig: baseline must be positive");
  if (rig.resolution < 2) throw std::invalid_argument("rig: resolution must be at least 2");
  if (!(rig.focal_scale > 0)) throw std::invalid_argument("rig: focal_scale must be positive");
  const double pitch = rig.pitch_deg * std::numbers::pi / 180.0;
  const double s = std::sin(pitch), c = std::cos(pitch);
  Mat3 axes;
  axes.row(0) = Vec3(1, 0, 0);
  axes.row(1) = Vec3(0, -c, -s);
  axes.row(2) = Vec3(0, -s, c);
  StereoCamera out;
  for (int k = 0; k < 2; ++k) {
    PinholeCamera& cam = out.view[k];
    cam.center = Vec3((k == 0 ? -0.5 : 0.5) * rig.baseline, -rig.drop, 0);
    cam.axes = axes;
    cam.resolution = rig.resolution;
    cam.focal = rig.focal_scale * static_cast<double>(rig.resolution);
    cam.cx = cam.cy = (static_cast<double>(rig.resolution) - 1.0) / 2.0;
  }
  return out;
}

std::array<std::vector<Projection>, 2> project(const Pose3D& pose, const StereoCamera& cam) {
  std::array<std::vector<Projection>, 2> out;
  for (int k = 0; k < 2; ++k) {
    out[k].reserve(pose.size());
    for (const auto& p : pose) out[k].push_back(project_point(cam.view[k], p));
  }
  return out;
}

}  // namespace etap
