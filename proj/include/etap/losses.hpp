#pragma once

#include "etap/ops.hpp"
#include "etap/skeleton.hpp"

namespace etap {

struct LossWeights {
  double w_p = 0.1;
  double w_c = -0.01;
};

/// (1 / J) sum_i |pred_i - gt_i|. pred, gt: [J, 3].
template <typename T>
Var<T> pose_loss(Var<T> pred, Var<T> gt);

template <typename T>
struct CosineLoss {
  Var<T> value;
  /// Limbs left out because the predicted or true limb vector has zero length.
  std::size_t degenerate = 0;
};

/// Mean cosine similarity of limb vectors p_i - p_parent(i) over non-root
/// joints of `tree` (the first N_J rows of pred and gt).
template <typename T>
CosineLoss<T> cosine_loss(Var<T> pred, Var<T> gt, const SkeletonTree& tree);

template <typename T>
struct TotalLoss {
  Var<T> value;
  Var<T> pose;
  Var<T> cosine;
  std::size_t degenerate = 0;
};

/// w_p * L_p + w_c * L_c.
template <typename T>
TotalLoss<T> total_loss(Var<T> pred, Var<T> gt, const SkeletonTree& tree, const LossWeights& w = {});

struct ReconLossConfig {
  double theta = 5.5e-4;
  double w_r = 1.0;
  double w_m = 1e-3;
};

template <typename T>
struct ReconLoss {
  Var<T> value;
  double l_r = 0.0;
  /// L_min + L_max when active, 0 otherwise.
  double l_m = 0.0;
  bool minmax_active = false;
};

/// L = w_r (L_r + w_m L_m); L_r is the pixel MSE, L_m = mean_j |min - min'| +
/// mean_j |max - max'| over heatmaps j, switched on only when L_r > theta.
/// Both inputs [maps, R, R]; `target` carries no gradient.
template <typename T>
ReconLoss<T> recon_loss(Var<T> target, Var<T> recon, const ReconLossConfig& cfg = {});

}  // namespace etap
