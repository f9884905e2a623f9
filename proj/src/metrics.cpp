#include "etap/metrics.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <stdexcept>

namespace etap {

template <typename T>
Pose3D to_pose(const Tensor<T>& t) {
  if (t.rank() != 2 || t.dim(1) != 3) throw ShapeError("to_pose: expected [J, 3], got " + shape_str(t.shape()));
  Pose3D p(t.dim(0));
  for (std::size_t j = 0; j < p.size(); ++j) p[j] = Vec3(t[3 * j], t[3 * j + 1], t[3 * j + 2]);
  return p;
}

template Pose3D to_pose<float>(const Tensor<float>&);
template Pose3D to_pose<double>(const Tensor<double>&);

Tensor<double> to_tensor(const Pose3D& p) {
  Tensor<double> t(Shape{p.size(), 3});
  for (std::size_t j = 0; j < p.size(); ++j)
    for (int a = 0; a < 3; ++a) t[3 * j + a] = p[j][a];
  return t;
}

std::vector<double> per_joint_errors(const Pose3D& pred, const Pose3D& gt) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw ShapeError("pose error: " + std::to_string(pred.size()) + " predicted vs " + std::to_string(gt.size()) +
                     " true joints");
  }
  std::vector<double> e(pred.size());
  for (std::size_t j = 0; j < e.size(); ++j) e[j] = (pred[j] - gt[j]).norm();
  return e;
}

double mpjpe(const Pose3D& pred, const Pose3D& gt) {
  double s = 0;
  for (double e : per_joint_errors(pred, gt)) s += e;
  return s / static_cast<double>(pred.size());
}

Similarity procrustes(const Pose3D& from, const Pose3D& to) {
  if (from.size() != to.size() || from.empty()) throw ShapeError("procrustes: point counts differ");
  const double n = static_cast<double>(from.size());
  Vec3 mu_x = Vec3::Zero(), mu_y = Vec3::Zero();
  for (std::size_t j = 0; j < from.size(); ++j) {
    mu_x += from[j];
    mu_y += to[j];
  }
  mu_x /= n;
  mu_y /= n;
  Mat3 cov = Mat3::Zero();
  double var_x = 0;
  for (std::size_t j = 0; j < from.size(); ++j) {
    const Vec3 x = from[j] - mu_x, y = to[j] - mu_y;
    cov += y * x.transpose();
    var_x += x.squaredNorm();
  }
  if (!(var_x > 0)) throw std::domain_error("procrustes: degenerate point set (all points coincide)");
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 d(1, 1, 1);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) d[2] = -1;
  Similarity s;
  s.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  s.scale = svd.singularValues().dot(d) / var_x;
  s.translation = mu_y - s.scale * (s.rotation * mu_x);
  return s;
}

double pa_mpjpe(const Pose3D& pred, const Pose3D& gt) {
  const Similarity s = procrustes(pred, gt);
  Pose3D aligned(pred.size());
  for (std::size_t j = 0; j < pred.size(); ++j) aligned[j] = s.apply(pred[j]);
  return mpjpe(aligned, gt);
}

std::vector<PropagationRow> propagation_metrics(const std::vector<std::vector<double>>& errors_np,
                                                const std::vector<std::vector<double>>& errors_p,
                                                const SkeletonTree& tree) {
  if (errors_np.size() != errors_p.size()) {
    throw std::invalid_argument("propagation metrics: " + std::to_string(errors_np.size()) + " vs " +
                                std::to_string(errors_p.size()) + " samples");
  }
  const std::size_t nj = tree.joint_count();
  std::vector<PropagationRow> rows;
  rows.reserve(errors_np.size() * (nj - 1));
  for (std::size_t s = 0; s < errors_np.size(); ++s) {
    if (errors_np[s].size() < nj || errors_p[s].size() < nj) {
      throw std::invalid_argument("propagation metrics: sample " + std::to_string(s) + " has too few joints");
    }
    for (std::size_t i = 1; i < nj; ++i) {
      const double child = errors_np[s][i];
      rows.push_back({s, i, child - errors_np[s][tree.parent(i)], child - errors_p[s][i]});
    }
  }
  return rows;
}

Regression linear_regression(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("regression: x and y lengths differ");
  if (x.size() < 3) throw std::invalid_argument("regression: need at least 3 points");
  Regression r;
  r.n = x.size();
  const double n = static_cast<double>(r.n);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < r.n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < r.n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0)) throw std::invalid_argument("regression: x has zero variance");
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  r.r = syy > 0 ? sxy / std::sqrt(sxx * syy) : 0.0;
  const double sse = std::max(0.0, syy - r.slope * sxy);
  const double se = std::sqrt(sse / (n - 2) / sxx);
  if (se > 0) {
    const double t = std::abs(r.slope / se);
    boost::math::students_t dist(n - 2);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, t));
  } else {
    r.p_value = r.slope == 0.0 ? 1.0 : 0.0;
  }
  return r;
}

}  // namespace etap
