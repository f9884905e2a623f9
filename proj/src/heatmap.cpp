#include "etap/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace etap {

Tensor<double> render_joint_heatmap(const Projection& p, double sigma, std::size_t resolution) {
  if (!(sigma > 0)) throw std::invalid_argument("render_joint_heatmap: sigma must be positive");
  Tensor<double> map(Shape{resolution, resolution});
  if (!p.in_view) return map;
  const double px = std::round(p.u), py = std::round(p.v);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> gx(resolution), gy(resolution);
  for (std::size_t k = 0; k < resolution; ++k) {
    const double dx = static_cast<double>(k) - px, dy = static_cast<double>(k) - py;
    gx[k] = std::exp(-dx * dx * inv);
    gy[k] = std::exp(-dy * dy * inv);
  }
  for (std::size_t y = 0; y < resolution; ++y)
    for (std::size_t x = 0; x < resolution; ++x) map.at(y, x) = gy[y] * gx[x];
  return map;
}

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0) t = std::clamp(((px - ax) * dx + (py - ay) * dy) / len2, 0.0, 1.0);
  const double qx = ax + t * dx - px, qy = ay + t * dy - py;
  return std::sqrt(qx * qx + qy * qy);
}

void paint_limb(Tensor<double>& map, double ax, double ay, double bx, double by, double sin_theta,
                double cos_theta, double width) {
  const std::size_t r = map.dim(1);
  const std::size_t plane = r * r;
  // Only scan the bounding box of the band.
  const double lo_x = std::min(ax, bx) - width, hi_x = std::max(ax, bx) + width;
  const double lo_y = std::min(ay, by) - width, hi_y = std::max(ay, by) + width;
  const auto clamp_idx = [&](double v) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(r - 1)));
  };
  if (hi_x < 0 || hi_y < 0 || lo_x > static_cast<double>(r - 1) || lo_y > static_cast<double>(r - 1)) return;
  for (std::size_t y = clamp_idx(std::floor(lo_y)); y <= clamp_idx(std::ceil(hi_y)); ++y)
    for (std::size_t x = clamp_idx(std::floor(lo_x)); x <= clamp_idx(std::ceil(hi_x)); ++x) {
      if (point_segment_distance(static_cast<double>(x), static_cast<double>(y), ax, ay, bx, by) <= width) {
        map[y * r + x] = sin_theta;
        map[plane + y * r + x] = cos_theta;
      }
    }
}

Tensor<double> render_limb_heatmap(const PinholeCamera& cam, const Vec3& parent, const Vec3& child, double width,
                                   double near) {
  const std::size_t r = cam.resolution;
  Tensor<double> map(Shape{2, r, r});
  Vec3 a = cam.to_camera(parent), b = cam.to_camera(child);
  const Projection pa = project_camera_point(cam, a), pb = project_camera_point(cam, b);
  if (!pa.in_view && !pb.in_view) return map;
  const Vec3 d = b - a;
  const double len = d.norm();
  if (!(len > 0)) return map;
  const double sin_theta = d.z() / len;
  const double cos_theta = std::sqrt(std::max(0.0, d.x() * d.x() + d.y() * d.y())) / len;
  // Clip to the near plane so the behind-camera part does not wrap around.
  if (a.z() < near) a = a + (near - a.z()) / (b.z() - a.z()) * (b - a);
  if (b.z() < near) b = b + (near - b.z()) / (a.z() - b.z()) * (a - b);
  const Projection ca = project_camera_point(cam, a), cb = project_camera_point(cam, b);
  paint_limb(map, ca.u, ca.v, cb.u, cb.v, sin_theta, cos_theta, width);
  return map;
}

StereoHeatmapSet render_heatmaps(const SkeletonTree& tree, const Pose3D& pose, const StereoCamera& cam,
                                 const RenderConfig& cfg) {
  const std::size_t nj = tree.joint_count(), r = cam.view[0].resolution;
  if (pose.size() != nj) throw std::invalid_argument("render_heatmaps: pose/skeleton joint count mismatch");
  const auto proj = project(pose, cam);
  StereoHeatmapSet out{Tensor<float>(Shape{2 * nj, r, r}), Tensor<float>(Shape{2 * (nj - 1), 2, r, r})};
  const std::size_t plane = r * r;
  for (std::size_t i = 0; i < nj; ++i)
    for (int k = 0; k < 2; ++k) {
      const auto map = render_joint_heatmap(proj[k][i], cfg.sigma, r);
      std::transform(map.data().begin(), map.data().end(), out.joint.ptr() + (2 * i + k) * plane,
                     [](double v) { return static_cast<float>(v); });
    }
  for (std::size_t i = 1; i < nj; ++i)
    for (int k = 0; k < 2; ++k) {
      const auto map = render_limb_heatmap(cam.view[k], pose[tree.parent(i)], pose[i], cfg.limb_width);
      std::transform(map.data().begin(), map.data().end(), out.limb.ptr() + (2 * (i - 1) + k) * 2 * plane,
                     [](double v) { return static_cast<float>(v); });
    }
  return out;
}

OcclusionMode parse_occlusion_mode(const std::string& s) {
  if (s == "zero") return OcclusionMode::kZero;
  if (s == "attenuate") return OcclusionMode::kAttenuate;
  throw std::invalid_argument("unknown occlusion mode '" + s + "' (expected zero|attenuate)");
}

std::string to_string(OcclusionMode m) { return m == OcclusionMode::kZero ? "zero" : "attenuate"; }

std::size_t OcclusionResult::count() const {
  return static_cast<std::size_t>(std::count(occluded.begin(), occluded.end(), std::uint8_t{1}));
}

OcclusionResult occlude(const StereoHeatmapSet& set, const SkeletonTree& tree, const OcclusionPolicy& policy,
                        Rng& rng, const std::array<std::vector<Projection>, 2>* projections) {
  if (!(policy.rate >= 0 && policy.rate <= 1)) {
    throw std::invalid_argument("occlusion rate must be in [0, 1], got " + std::to_string(policy.rate));
  }
  if (!(policy.attenuation >= 0 && policy.attenuation <= 1)) {
    throw std::invalid_argument("occlusion attenuation must be in [0, 1]");
  }
  if (policy.depth_weighted && projections == nullptr) {
    throw std::invalid_argument("depth-weighted occlusion needs joint projections");
  }
  const std::size_t nj = tree.joint_count();
  if (set.joint.dim(0) != 2 * nj) throw std::invalid_argument("occlude: heatmap count does not match skeleton");
  std::array<double, 2> mean_depth{1.0, 1.0};
  if (policy.depth_weighted) {
    for (int k = 0; k < 2; ++k) {
      double s = 0;
      std::size_t n = 0;
      for (std::size_t i = 1; i < nj; ++i) {
        if ((*projections)[k][i].depth > 0) {
          s += (*projections)[k][i].depth;
          ++n;
        }
      }
      mean_depth[k] = n > 0 ? s / static_cast<double>(n) : 1.0;
    }
  }

  OcclusionResult out{set, std::vector<std::uint8_t>(2 * nj, 0)};
  for (std::size_t i = 1; i < nj; ++i)
    for (int k = 0; k < 2; ++k) {
      double p = policy.rate;
      if (policy.depth_weighted) p = std::min(1.0, p * std::max(0.0, (*projections)[k][i].depth) / mean_depth[k]);
      if (rng.uniform() < p) out.occluded[2 * i + k] = 1;
    }
  if (out.count() == 0) return out;

  const float factor = policy.mode == OcclusionMode::kZero ? 0.0f : static_cast<float>(policy.attenuation);
  const std::size_t plane = set.joint.dim(1) * set.joint.dim(2);
  auto scale_range = [factor](float* p, std::size_t n) {
    if (factor == 0.0f) {
      std::fill(p, p + n, 0.0f);
    } else {
      for (std::size_t q = 0; q < n; ++q) p[q] *= factor;
    }
  };
  // Limbs are scaled once even when both ends are occluded.
  std::vector<std::uint8_t> limb_hit(2 * (nj - 1), 0);
  for (std::size_t i = 1; i < nj; ++i)
    for (int k = 0; k < 2; ++k) {
      if (!out.occluded[2 * i + k]) continue;
      scale_range(out.set.joint.ptr() + (2 * i + k) * plane, plane);
      limb_hit[2 * (i - 1) + k] = 1;
      for (std::size_t c = i + 1; c < nj; ++c) {
        if (static_cast<std::size_t>(tree.parent(c)) == i) limb_hit[2 * (c - 1) + k] = 1;
      }
    }
  for (std::size_t l = 0; l < limb_hit.size(); ++l) {
    if (limb_hit[l]) scale_range(out.set.limb.ptr() + l * 2 * plane, 2 * plane);
  }
  return out;
}

}  // namespace etap
