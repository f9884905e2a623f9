#include "etap/losses.hpp"

#include <cmath>

namespace etap {

namespace {

template <typename T>
void check_pose_pair(Var<T> pred, Var<T> gt, const char* what) {
  if (pred.shape().size() != 2 || pred.shape()[1] != 3 || pred.shape() != gt.shape()) {
    throw ShapeError(std::string(what) + ": pred " + shape_str(pred.shape()) + " vs gt " + shape_str(gt.shape()) +
                     " (expected matching [J, 3])");
  }
}

}  // namespace

template <typename T>
Var<T> pose_loss(Var<T> pred, Var<T> gt) {
  check_pose_pair(pred, gt, "pose_loss");
  return mean(row_norms(sub(pred, gt)));
}

template <typename T>
CosineLoss<T> cosine_loss(Var<T> pred, Var<T> gt, const SkeletonTree& tree) {
  check_pose_pair(pred, gt, "cosine_loss");
  const std::size_t nj = tree.joint_count();
  if (pred.shape()[0] < nj) throw ShapeError("cosine_loss: fewer pose rows than skeleton joints");
  const auto& pv = pred.value();
  const auto& gv = gt.value();
  std::vector<std::size_t> child, parent;
  CosineLoss<T> out;
  for (std::size_t i = 1; i < nj; ++i) {
    const auto p = static_cast<std::size_t>(tree.parent(i));
    double np = 0, ng = 0;
    for (int a = 0; a < 3; ++a) {
      const double dp = static_cast<double>(pv[3 * i + a]) - pv[3 * p + a];
      const double dg = static_cast<double>(gv[3 * i + a]) - gv[3 * p + a];
      np += dp * dp;
      ng += dg * dg;
    }
    if (np == 0 || ng == 0) {
      ++out.degenerate;
      continue;
    }
    child.push_back(i);
    parent.push_back(p);
  }
  if (child.empty()) {
    out.value = pred.tape->constant(Tensor<T>::scalar(T(0)));
    return out;
  }
  Var<T> vp = sub(gather_rows(pred, child), gather_rows(pred, parent));
  Var<T> vg = sub(gather_rows(gt, child), gather_rows(gt, parent));
  out.value = mean(row_cosine(vp, vg));
  return out;
}

template <typename T>
TotalLoss<T> total_loss(Var<T> pred, Var<T> gt, const SkeletonTree& tree, const LossWeights& w) {
  TotalLoss<T> out;
  out.pose = pose_loss(pred, gt);
  auto c = cosine_loss(pred, gt, tree);
  out.cosine = c.value;
  out.degenerate = c.degenerate;
  out.value = add(scale(out.pose, static_cast<T>(w.w_p)), scale(out.cosine, static_cast<T>(w.w_c)));
  return out;
}

template <typename T>
ReconLoss<T> recon_loss(Var<T> target, Var<T> recon, const ReconLossConfig& cfg) {
  if (target.shape() != recon.shape() || target.shape().size() != 3) {
    throw ShapeError("recon_loss: target " + shape_str(target.shape()) + " vs reconstruction " +
                     shape_str(recon.shape()));
  }
  if (!(cfg.theta > 0)) throw std::invalid_argument("recon_loss: theta must be positive");
  ReconLoss<T> out;
  Var<T> l_r = mean(square(sub(recon, target)));
  out.l_r = static_cast<double>(l_r.value()[0]);
  Var<T> inner = l_r;
  if (out.l_r > cfg.theta) {
    out.minmax_active = true;
    const Shape flat{target.shape()[0], target.shape()[1] * target.shape()[2]};
    Var<T> t2 = reshape(target, flat), r2 = reshape(recon, flat);
    Var<T> l_min = mean(etap::abs(sub(row_min(r2), row_min(t2))));
    Var<T> l_max = mean(etap::abs(sub(row_max(r2), row_max(t2))));
    Var<T> l_m = add(l_min, l_max);
    out.l_m = static_cast<double>(l_m.value()[0]);
    inner = add(l_r, scale(l_m, static_cast<T>(cfg.w_m)));
  }
  out.value = scale(inner, static_cast<T>(cfg.w_r));
  return out;
}

#define ETAP_INSTANTIATE_LOSSES(T)                                                                      \
  template Var<T> pose_loss<T>(Var<T>, Var<T>);                                                          \
  template CosineLoss<T> cosine_loss<T>(Var<T>, Var<T>, const SkeletonTree&);                            \
  template TotalLoss<T> total_loss<T>(Var<T>, Var<T>, const SkeletonTree&, const LossWeights&);          \
  template ReconLoss<T> recon_loss<T>(Var<T>, Var<T>, const ReconLossConfig&);

ETAP_INSTANTIATE_LOSSES(float)
ETAP_INSTANTIATE_LOSSES(double)
ETAP_INSTANTIATE_LOSSES(long double)

}  // namespace etap
