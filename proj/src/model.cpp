#include "etap/model.hpp"

#include <stdexcept>

namespace etap {

bool is_frozen_param(const std::string& name) { return name.rfind("norm.", 0) == 0; }

std::size_t output_rows(const ModelConfig& cfg, const SkeletonTree& tree) {
  return tree.joint_count() + (cfg.head == HeadMode::kGlobal ? cfg.extra_targets : 0);
}

template <typename T>
ParamSet<T> init_model_params(const ModelConfig& cfg, const SkeletonTree& tree, std::uint64_t seed) {
  cfg.validate();
  const std::size_t nj = tree.joint_count();
  Rng rng(seed, 0x6d6f64656cULL);
  ParamSet<T> ps;
  if (cfg.encoder == EncoderKind::kCnn) {
    add_cnn_encoder_params(ps, cfg, 2 * nj, nj * cfg.state(), rng);
    add_linear_params(ps, "head", nj * cfg.state(), 3 * output_rows(cfg, tree), rng);
  } else {
    add_encoder_params(ps, cfg, 2 * nj, rng);
    if (cfg.propagation) {
      add_limb_encoder_params(ps, cfg, rng);
      add_propagation_params(ps, cfg, rng);
    }
    add_head_params(ps, cfg, nj, rng);
  }
  ps.add(kNormScale, Tensor<T>(Shape{1}, T(1)));
  ps.add(kNormOffset, Tensor<T>(Shape{output_rows(cfg, tree), 3}));
  return ps;
}

template <typename T>
void set_output_norm(ParamSet<T>& params, double scale, const Tensor<double>& offset) {
  if (!(scale > 0)) throw std::invalid_argument("output normalization scale must be positive");
  Tensor<T>& off = params.get(kNormOffset);
  if (off.shape() != offset.shape()) {
    throw ShapeError("output normalization offset " + shape_str(offset.shape()) + " != " + shape_str(off.shape()));
  }
  params.get(kNormScale)[0] = static_cast<T>(scale);
  off = offset.template cast<T>();
}

template <typename T>
ModelOutputs<T> model_forward(ParamBinder<T>& b, const ModelConfig& cfg, const SkeletonTree& tree,
                              const Tensor<T>& joint_heatmaps, const Tensor<T>& limb_heatmaps,
                              const PropagationOptions& opts) {
  const std::size_t nj = tree.joint_count();
  if (joint_heatmaps.rank() != 3 || joint_heatmaps.dim(0) != 2 * nj) {
    throw ShapeError("model: joint heatmaps " + shape_str(joint_heatmaps.shape()) + " do not match a " +
                     std::to_string(nj) + "-joint skeleton");
  }
  auto& tape = b.tape();
  ModelOutputs<T> out;
  Var<T> raw;
  if (cfg.encoder == EncoderKind::kCnn) {
    out.embedding = cnn_encode(b, cfg, joint_heatmaps);
    Var<T> flat = affine(b, "head", out.embedding);
    raw = reshape(flat, {flat.shape()[1] / 3, 3});
  } else {
    Var<T> f_j = encode_joint_features(b, cfg, joint_heatmaps);
    out.f_j = f_j;
    out.embedding = reshape(f_j, {1, f_j.value().size()});
    if (cfg.propagation) {
      if (limb_heatmaps.rank() != 4 || limb_heatmaps.dim(0) != 2 * (nj - 1)) {
        throw ShapeError("model: limb heatmaps " + shape_str(limb_heatmaps.shape()) + " do not match a " +
                         std::to_string(nj) + "-joint skeleton");
      }
      Var<T> f_r = encode_limb_features(b, cfg, limb_heatmaps);
      out.f_p = propagate(b, tree, f_j, f_r, opts).f_p;
    }
    raw = project_pose(b, cfg, out.f_p, f_j);
  }
  const auto& ps = b.params();
  Var<T> scaled = scale(raw, ps.get(kNormScale)[0]);
  out.pose = add(scaled, tape.constant(ps.get(kNormOffset)));
  return out;
}

#define ETAP_INSTANTIATE_MODEL(T)                                                                      \
  template ParamSet<T> init_model_params<T>(const ModelConfig&, const SkeletonTree&, std::uint64_t);  \
  template void set_output_norm<T>(ParamSet<T>&, double, const Tensor<double>&);                       \
  template ModelOutputs<T> model_forward<T>(ParamBinder<T>&, const ModelConfig&, const SkeletonTree&,  \
                                            const Tensor<T>&, const Tensor<T>&, const PropagationOptions&);

ETAP_INSTANTIATE_MODEL(float)
ETAP_INSTANTIATE_MODEL(double)
ETAP_INSTANTIATE_MODEL(long double)

}  // namespace etap
