#pragma once

#include <optional>

#include "etap/cnn.hpp"
#include "etap/encoder.hpp"
#include "etap/propagation.hpp"

namespace etap {

/// Fixed (not trained) output map pose = raw * scale + offset. Stored in the
/// parameter set under "norm." so checkpoints carry it.
inline constexpr const char* kNormScale = "norm.scale";
inline constexpr const char* kNormOffset = "norm.offset";
bool is_frozen_param(const std::string& name);

/// Rows of the predicted pose: N_J, plus extra targets for the global head.
std::size_t output_rows(const ModelConfig& cfg, const SkeletonTree& tree);

/// Every learnable weight for `cfg` on `tree`, drawn from Rng(seed), plus an
/// identity output normalization.
template <typename T>
ParamSet<T> init_model_params(const ModelConfig& cfg, const SkeletonTree& tree, std::uint64_t seed);

template <typename T>
void set_output_norm(ParamSet<T>& params, double scale, const Tensor<double>& offset);

template <typename T>
struct ModelOutputs {
  Var<T> pose;       // [rows, 3]
  Var<T> embedding;  // [1, N_J * 2k]: flattened F_J, or the CNN embedding
  std::optional<Var<T>> f_j;
  std::optional<Var<T>> f_p;
};

template <typename T>
ModelOutputs<T> model_forward(ParamBinder<T>& b, const ModelConfig& cfg, const SkeletonTree& tree,
                              const Tensor<T>& joint_heatmaps, const Tensor<T>& limb_heatmaps,
                              const PropagationOptions& opts = {});

}  // namespace etap
