#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "etap/camera.hpp"
#include "etap/tensor.hpp"

namespace etap {

/// Stereo heatmaps of one sample. Heatmap 2i is the left view of joint (or
/// limb) i and 2i + 1 the right view, 0-based. Limb l ends at joint l + 1.
struct StereoHeatmapSet {
  Tensor<float> joint;  // [2 N_J, R, R], values in [0, 1]
  Tensor<float> limb;   // [2 N_L, 2, R, R], values in [-1, 1]
};

/// exp(-d^2 / 2 sigma^2) around the nearest pixel center; zeros when !p.in_view.
Tensor<double> render_joint_heatmap(const Projection& p, double sigma, std::size_t resolution);

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by);

/// Paints (sin_theta, cos_theta) on every pixel within `width` of segment a-b.
void paint_limb(Tensor<double>& map, double ax, double ay, double bx, double by, double sin_theta,
                double cos_theta, double width);

/// Two-channel limb heatmap for the segment parent-child seen by `cam`.
/// theta is the limb's elevation out of the image plane: sin = d_z / |d| in the
/// camera frame. The segment is clipped to z >= near before projection. All
/// zeros when neither endpoint is in view.
Tensor<double> render_limb_heatmap(const PinholeCamera& cam, const Vec3& parent, const Vec3& child, double width,
                                   double near = 1.0);

struct RenderConfig {
  double sigma = 2.0;
  double limb_width = 1.5;
};

StereoHeatmapSet render_heatmaps(const SkeletonTree& tree, const Pose3D& pose, const StereoCamera& cam,
                                 const RenderConfig& cfg);

enum class OcclusionMode { kZero, kAttenuate };

struct OcclusionPolicy {
  double rate = 0.0;
  /// Scales the rate per view by depth / mean depth of the in-front joints, capped at 1.
  bool depth_weighted = false;
  OcclusionMode mode = OcclusionMode::kZero;
  double attenuation = 0.25;
};

OcclusionMode parse_occlusion_mode(const std::string& s);
std::string to_string(OcclusionMode m);

/// occluded[2i + view] for joint i.
struct OcclusionResult {
  StereoHeatmapSet set;
  std::vector<std::uint8_t> occluded;
  std::size_t count() const;
};

/// One uniform draw per (non-root joint, view) in joint-major order. An
/// occluded view zeroes (or attenuates) the joint's heatmap and the heatmaps of
/// every limb touching the joint in that view. `depth` holds per-view,
/// per-joint camera depths and is only read when depth weighting is on.
OcclusionResult occlude(const StereoHeatmapSet& set, const SkeletonTree& tree, const OcclusionPolicy& policy,
                        Rng& rng, const std::array<std::vector<Projection>, 2>* projections = nullptr);

}  // namespace etap
