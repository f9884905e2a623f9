#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <limits>

#include "etap/grad_check.hpp"
#include "etap/losses.hpp"
#include "etap/metrics.hpp"
#include "test_util.hpp"

using namespace etap;
using namespace etap::testing;

namespace {

Pose3D random_pose(Rng& rng, std::size_t n, double a = 30.0) {
  Pose3D p(n);
  for (auto& v : p) v = Vec3(rng.uniform(-a, a), rng.uniform(-a, a), rng.uniform(-a, a));
  return p;
}

Pose3D noisy(Rng& rng, const Pose3D& p, double sigma) {
  Pose3D out = p;
  for (auto& v : out) v += Vec3(rng.normal(0, sigma), rng.normal(0, sigma), rng.normal(0, sigma));
  return out;
}

Mat3 random_rotation(Rng& rng) {
  Vec3 axis(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1));
  return Eigen::AngleAxisd(rng.uniform(-M_PI, M_PI), axis.normalized()).toRotationMatrix();
}

struct Losses {
  double pose, cosine, total;
  std::size_t degenerate;
};

Losses losses(const Pose3D& pred, const Pose3D& gt, const SkeletonTree& tree, LossWeights w = {}) {
  Tape<double> tape(false);
  auto p = tape.constant(to_tensor(pred)), g = tape.constant(to_tensor(gt));
  auto t = total_loss(p, g, tree, w);
  return {t.pose.value()[0], t.cosine.value()[0], t.value.value()[0], t.degenerate};
}

/// PA-MPJPE by direct search over rotations (axis-angle grid, then pattern
/// refinement) with the least-squares scale and translation for each rotation.
double pa_mpjpe_search(const Pose3D& pred, const Pose3D& gt) {
  const std::size_t n = pred.size();
  Vec3 mx = Vec3::Zero(), my = Vec3::Zero();
  for (std::size_t j = 0; j < n; ++j) {
    mx += pred[j];
    my += gt[j];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0;
  for (std::size_t j = 0; j < n; ++j) sxx += (pred[j] - mx).squaredNorm();
  auto rot = [](const Vec3& r) {
    const double a = r.norm();
    return a < 1e-15 ? Mat3(Mat3::Identity()) : Mat3(Eigen::AngleAxisd(a, r / a).toRotationMatrix());
  };
  auto corr = [&](const Vec3& r) {
    const Mat3 R = rot(r);
    double c = 0;
    for (std::size_t j = 0; j < n; ++j) c += (gt[j] - my).dot(R * (pred[j] - mx));
    return std::max(c, 0.0);
  };
  Vec3 best = Vec3::Zero();
  double best_c = corr(best);
  const int g = 12;
  for (int i = -g; i <= g; ++i)
    for (int j = -g; j <= g; ++j)
      for (int k = -g; k <= g; ++k) {
        const Vec3 r = Vec3(i, j, k) * (M_PI / g);
        if (r.norm() > M_PI + 1e-9) continue;
        const double c = corr(r);
        if (c > best_c) {
          best_c = c;
          best = r;
        }
      }
  for (double step = M_PI / g; step > 1e-10; step *= 0.5) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (int axis = 0; axis < 3; ++axis)
        for (double sgn : {-1.0, 1.0}) {
          Vec3 r = best;
          r[axis] += sgn * step;
          const double c = corr(r);
          if (c > best_c) {
            best_c = c;
            best = r;
            moved = true;
          }
        }
    }
  }
  const Mat3 R = rot(best);
  const double s = best_c / sxx;
  double err = 0;
  for (std::size_t j = 0; j < n; ++j) err += (s * R * (pred[j] - mx) + my - gt[j]).norm();
  return err / static_cast<double>(n);
}

/// Two-sided Student t tail by Simpson integration of the density.
double t_two_sided(double t, double dof) {
  const double c = std::exp(std::lgamma((dof + 1) / 2) - std::lgamma(dof / 2)) / std::sqrt(dof * M_PI);
  // Substitute x = t + u / (1 - u), u in [0, 1).
  auto f = [&](double u) {
    if (u >= 1) return 0.0;
    const double x = std::abs(t) + u / (1 - u);
    return c * std::pow(1 + x * x / dof, -(dof + 1) / 2) / ((1 - u) * (1 - u));
  };
  const int m = 200000;
  const double h = 1.0 / m;
  double s = f(0) + f(1);
  for (int i = 1; i < m; ++i) s += (i % 2 ? 4 : 2) * f(i * h);
  return 2 * s * h / 3;
}

}  // namespace

TEST(PoseLoss, Examples) {
  auto tree = build_skeleton(default_skeleton_config());
  Rng rng(1);
  const auto gt = random_pose(rng, 15);
  EXPECT_EQ(losses(gt, gt, tree).pose, 0.0);
  Pose3D shifted = gt;
  for (auto& v : shifted) v += Vec3(3, 4, 0);
  EXPECT_NEAR(losses(shifted, gt, tree).pose, 5.0, 1e-12);
}

TEST(PoseLoss, MatchesPerJointNormOracle) {
  auto tree = build_skeleton(default_skeleton_config());
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_pose(rng, 15), b = random_pose(rng, 15);
    double s = 0;
    for (std::size_t j = 0; j < 15; ++j) {
      const double dx = a[j][0] - b[j][0], dy = a[j][1] - b[j][1], dz = a[j][2] - b[j][2];
      s += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    EXPECT_NEAR(losses(a, b, tree).pose, s / 15, 1e-7);
    EXPECT_NEAR(mpjpe(a, b), s / 15, 1e-7);
    EXPECT_DOUBLE_EQ(mpjpe(a, b), losses(a, b, tree).pose);
  }
}

TEST(PoseLoss, CountMismatchThrows) {
  Tape<double> tape(false);
  EXPECT_THROW(pose_loss(tape.constant(Tensor<double>(Shape{4, 3})), tape.constant(Tensor<double>(Shape{5, 3}))),
               ShapeError);
  EXPECT_THROW(mpjpe(Pose3D(4), Pose3D(5)), ShapeError);
}

TEST(CosineLoss, IdenticalAndOpposite) {
  auto tree = build_skeleton(default_skeleton_config());
  Rng rng(3);
  const auto gt = random_pose(rng, 15);
  EXPECT_NEAR(losses(gt, gt, tree).cosine, 1.0, 1e-12);
  Pose3D neg = gt;
  for (auto& v : neg) v = -v;
  EXPECT_NEAR(losses(neg, gt, tree).cosine, -1.0, 1e-12);
}

TEST(CosineLoss, MatchesDotNormOracle) {
  auto tree = build_skeleton(default_skeleton_config());
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_pose(rng, 15), b = random_pose(rng, 15);
    double s = 0;
    for (std::size_t i = 1; i < 15; ++i) {
      const auto p = static_cast<std::size_t>(tree.parent(i));
      const Vec3 u = a[i] - a[p], v = b[i] - b[p];
      s += u.dot(v) / (u.norm() * v.norm());
    }
    const double c = losses(a, b, tree).cosine;
    EXPECT_NEAR(c, s / 14, 1e-7);
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
  }
}

TEST(CosineLoss, OneExactlyForPositiveMultiples) {
  auto tree = build_skeleton(default_skeleton_config());
  Rng rng(5);
  const auto gt = random_pose(rng, 15);
  // Rebuild a pose whose limb vectors are positive multiples of the true ones.
  Pose3D scaled(15);
  scaled[0] = Vec3(1, 2, 3);
  for (std::size_t i = 1; i < 15; ++i) {
    const auto p = static_cast<std::size_t>(tree.parent(i));
    scaled[i] = scaled[p] + rng.uniform(0.2, 5.0) * (gt[i] - gt[p]);
  }
  EXPECT_NEAR(losses(scaled, gt, tree).cosine, 1.0, 1e-12);
  // Turning one limb away drops it below 1.
  Pose3D bent = scaled;
  bent[14] += Vec3(0, 0, 10);
  EXPECT_LT(losses(bent, gt, tree).cosine, 1.0 - 1e-6);
}

TEST(CosineLoss, DegenerateLimbsAreCountedAndSkipped) {
  auto tree = build_skeleton(chain_skeleton_config(3));
  Pose3D gt{{0, 0, 0}, {0, -10, 0}, {0, -20, 0}};
  Pose3D pred{{0, 0, 0}, {0, 0, 0}, {5, 0, 0}};
  const auto l = losses(pred, gt, tree);
  EXPECT_EQ(l.degenerate, 1u);
  // Only limb 2: pred (5, 0, 0) vs gt (0, -10, 0).
  EXPECT_NEAR(l.cosine, 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(l.total));
  Pose3D flat(3, Vec3::Zero());
  const auto all = losses(flat, gt, tree);
  EXPECT_EQ(all.degenerate, 2u);
  EXPECT_EQ(all.cosine, 0.0);
}

TEST(TotalLoss, PerfectPredictionGivesDefaultWeightedValue) {
  auto tree = build_skeleton(default_skeleton_config());
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto gt = random_pose(rng, 15);
    const auto l = losses(gt, gt, tree);
    EXPECT_NEAR(l.pose, 0.0, 1e-12);
    EXPECT_NEAR(l.cosine, 1.0, 1e-12);
    EXPECT_NEAR(l.total, -0.01, 1e-12);
  }
}

TEST(TotalLoss, IsWeightedSum) {
  auto tree = build_skeleton(default_skeleton_config());
  Rng rng(7);
  const auto a = random_pose(rng, 15), b = random_pose(rng, 15);
  const auto l = losses(a, b, tree);
  EXPECT_NEAR(l.total, 0.1 * l.pose - 0.01 * l.cosine, 1e-12);
  EXPECT_DOUBLE_EQ(losses(a, b, tree, {1.0, 0.0}).total, l.pose);
}

TEST(TotalLoss, GradientWrtPredictionMatchesFiniteDifferences) {
  auto tree = build_skeleton(default_skeleton_config());
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto gt = to_tensor(random_pose(rng, 15));
    ParamSet<double> ps;
    ps.add("pred", to_tensor(random_pose(rng, 15)));
    ScalarFn<double> f = [&](ParamBinder<double>& b) {
      return total_loss(b("pred"), b.tape().constant(gt), tree).value;
    };
    ScalarFn<long double> oracle = [&](ParamBinder<long double>& b) {
      return total_loss(b("pred"), b.tape().constant(gt.cast<long double>()), tree).value;
    };
    EXPECT_LT((grad_check_mixed<double, long double>(f, oracle, ps).max_rel_error), 1e-6);
  }
}

TEST(Mpjpe, ConstantOffset) {
  Rng rng(9);
  const auto gt = random_pose(rng, 6);
  EXPECT_EQ(mpjpe(gt, gt), 0.0);
  Pose3D p = gt;
  for (auto& v : p) v += Vec3(0, 0, 2);
  EXPECT_NEAR(mpjpe(p, gt), 2.0, 1e-12);
  const auto e = per_joint_errors(p, gt);
  for (double v : e) EXPECT_NEAR(v, 2.0, 1e-12);
}

TEST(PaMpjpe, RemovesSimilarityTransforms) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const auto gt = random_pose(rng, 15);
    const Mat3 R = random_rotation(rng);
    const double s = rng.uniform(0.2, 5.0);
    const Vec3 t(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-100, 100));
    Pose3D pred(gt.size());
    for (std::size_t j = 0; j < gt.size(); ++j) pred[j] = s * (R * gt[j]) + t;
    EXPECT_LT(pa_mpjpe(pred, gt), 1e-6);
  }
  const auto gt = random_pose(rng, 15);
  Pose3D twice = gt;
  for (auto& v : twice) v *= 2;
  EXPECT_LT(pa_mpjpe(twice, gt), 1e-6);
}

TEST(PaMpjpe, InvariantUnderTransformOfPrediction) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto gt = random_pose(rng, 15);
    const auto pred = noisy(rng, gt, 5.0);
    const Mat3 R = random_rotation(rng);
    const double s = rng.uniform(0.2, 5.0);
    const Vec3 t(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50));
    Pose3D moved(pred.size());
    for (std::size_t j = 0; j < pred.size(); ++j) moved[j] = s * (R * pred[j]) + t;
    EXPECT_NEAR(pa_mpjpe(moved, gt), pa_mpjpe(pred, gt), 1e-6);
  }
}

TEST(PaMpjpe, AlignedRootMeanSquareNeverExceedsUnaligned) {
  // The alignment minimises squared error, so only the RMS bound is guaranteed.
  Rng rng(12);
  auto rms = [](const Pose3D& a, const Pose3D& b) {
    double s = 0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]).squaredNorm();
    return std::sqrt(s / static_cast<double>(a.size()));
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const auto gt = random_pose(rng, 15);
    const auto pred = noisy(rng, gt, rng.uniform(0.5, 20.0));
    const Similarity sim = procrustes(pred, gt);
    Pose3D aligned(pred.size());
    for (std::size_t j = 0; j < pred.size(); ++j) aligned[j] = sim.apply(pred[j]);
    EXPECT_LE(rms(aligned, gt), rms(pred, gt) + 1e-9);
  }
}

TEST(PaMpjpe, MeanErrorBoundFailsOnRareNoisyDraws) {
  Rng rng(12);
  int above = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto gt = random_pose(rng, 15);
    const auto pred = noisy(rng, gt, rng.uniform(0.5, 20.0));
    if (pa_mpjpe(pred, gt) > mpjpe(pred, gt) + 1e-9) ++above;
  }
  EXPECT_GT(above, 0);
  EXPECT_LT(above, 20);
}

TEST(PaMpjpe, CanExceedMpjpeWithOneOutlier) {
  // Alignment minimises squared error, so one far joint drags the others.
  Pose3D gt{{2.743, 0.279, 0.527},   {-1.826, -0.206, -3.168}, {2.465, 0.638, -0.512}, {-1.153, 1.347, 0.071},
            {0.516, -0.546, -1.067}, {2.184, 1.338, 0.118},    {0.038, -0.353, -0.512}, {0.505, 0.650, -0.031}};
  Pose3D pred = gt;
  pred[1] = Vec3(2.086, 1.145, 1.656);
  EXPECT_GT(pa_mpjpe(pred, gt), mpjpe(pred, gt) * 1.5);
}

TEST(PaMpjpe, MatchesRotationSearchOracle) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto gt = random_pose(rng, 4, 20.0);
    const auto pred = noisy(rng, gt, 6.0);
    EXPECT_NEAR(pa_mpjpe(pred, gt), pa_mpjpe_search(pred, gt), 1e-4);
  }
}

TEST(PaMpjpe, CoincidentPointsAreRejected) {
  Pose3D same(4, Vec3(1, 2, 3));
  Rng rng(14);
  EXPECT_THROW(pa_mpjpe(same, random_pose(rng, 4)), std::domain_error);
}

TEST(PropagationMetrics, Examples) {
  auto tree = build_skeleton(chain_skeleton_config(3));
  const std::vector<std::vector<double>> np{{0, 4, 4}, {0, 2, 7}};
  const std::vector<std::vector<double>> p{{0, 3, 1}, {0, 2, 7}};
  const auto rows = propagation_metrics(np, p, tree);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].sample, 0u);
  EXPECT_EQ(rows[0].joint, 1u);
  EXPECT_DOUBLE_EQ(rows[0].pp, 4.0);
  EXPECT_DOUBLE_EQ(rows[0].pe, 1.0);
  EXPECT_DOUBLE_EQ(rows[1].pp, 0.0);  // equal child and parent errors
  EXPECT_DOUBLE_EQ(rows[1].pe, 3.0);
  EXPECT_DOUBLE_EQ(rows[3].pp, 5.0);
  EXPECT_DOUBLE_EQ(rows[3].pe, 0.0);
  for (const auto& r : propagation_metrics(np, np, tree)) EXPECT_EQ(r.pe, 0.0);
  EXPECT_THROW(propagation_metrics(np, {{0, 1, 2}}, tree), std::invalid_argument);
  EXPECT_THROW(propagation_metrics(np, {{0, 1}, {0, 1, 2}}, tree), std::invalid_argument);
}

TEST(Regression, ExactLine) {
  std::vector<double> x, y;
  for (int i = 0; i < 10; ++i) {
    x.push_back(i);
    y.push_back(2.5 * i - 1);
  }
  const auto r = linear_regression(x, y);
  EXPECT_NEAR(r.slope, 2.5, 1e-12);
  EXPECT_NEAR(r.intercept, -1.0, 1e-12);
  EXPECT_NEAR(r.r, 1.0, 1e-12);
  EXPECT_EQ(r.p_value, 0.0);
  const auto flat = linear_regression(x, std::vector<double>(10, 3.0));
  EXPECT_EQ(flat.slope, 0.0);
  EXPECT_EQ(flat.p_value, 1.0);
  EXPECT_THROW(linear_regression({1, 1, 1}, {1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(linear_regression({1, 2}, {1, 2}), std::invalid_argument);
}

TEST(Regression, PValueMatchesIntegratedStudentT) {
  Rng rng(15);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 8 + 10 * static_cast<std::size_t>(trial);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.normal(0, 1);
      y[i] = 0.3 * x[i] + rng.normal(0, 1);
    }
    const auto r = linear_regression(x, y);
    // Independent t statistic from the correlation coefficient.
    const double dof = static_cast<double>(n) - 2;
    const double t = r.r * std::sqrt(dof / (1 - r.r * r.r));
    EXPECT_NEAR(r.p_value, t_two_sided(t, dof), 1e-7);
  }
}

TEST(ReconLoss, IdenticalIsZero) {
  Rng rng(16);
  auto t = init::uniform<double>(rng, {4, 8, 8}, 0.0, 1.0);
  Tape<double> tape(false);
  auto l = recon_loss(tape.constant(t), tape.constant(t));
  EXPECT_EQ(l.value.value()[0], 0.0);
  EXPECT_FALSE(l.minmax_active);
  EXPECT_EQ(l.l_m, 0.0);
}

TEST(ReconLoss, ZeroReconstructionAddsMinMaxTerm) {
  Tensor<double> t(Shape{2, 8, 8});
  t[0 * 64 + 3 * 8 + 3] = 1.0;
  t[1 * 64 + 5 * 8 + 2] = 0.6;
  t[1 * 64] = -0.1;
  Tape<double> tape(false);
  auto l = recon_loss(tape.constant(t), tape.constant(Tensor<double>(t.shape())));
  const double lr = (1.0 + 0.36 + 0.01) / 128;
  ASSERT_GT(lr, 5.5e-4);
  EXPECT_TRUE(l.minmax_active);
  EXPECT_NEAR(l.l_r, lr, 1e-15);
  // mean |min| = (0 + 0.1) / 2, mean |max| = (1 + 0.6) / 2.
  EXPECT_NEAR(l.l_m, 0.05 + 0.8, 1e-15);
  EXPECT_NEAR(l.value.value()[0], lr + 1e-3 * 0.85, 1e-15);
  EXPECT_THROW(recon_loss(tape.constant(t), tape.constant(Tensor<double>(Shape{2, 8, 7}))), ShapeError);
}

TEST(ReconLoss, ThresholdIsStrict) {
  Rng rng(17);
  auto t = init::uniform<double>(rng, {3, 8, 8}, 0.0, 0.1);
  auto r = init::uniform<double>(rng, {3, 8, 8}, 0.0, 0.1);
  Tape<double> tape(false);
  const double lr = recon_loss(tape.constant(t), tape.constant(r)).l_r;
  ReconLossConfig at;
  at.theta = lr;
  auto l = recon_loss(tape.constant(t), tape.constant(r), at);
  EXPECT_FALSE(l.minmax_active);
  EXPECT_EQ(l.l_m, 0.0);
  EXPECT_EQ(l.value.value()[0], lr);
  ReconLossConfig below = at;
  below.theta = std::nextafter(lr, 0.0);
  EXPECT_TRUE(recon_loss(tape.constant(t), tape.constant(r), below).minmax_active);
}
