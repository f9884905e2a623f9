#pragma once

#include <optional>
#include <vector>

#include "etap/layers.hpp"
#include "etap/model_config.hpp"
#include "etap/skeleton.hpp"

namespace etap {

template <typename T>
struct CellState {
  Var<T> h;  // [1, S]
  Var<T> c;  // [1, S]
};

struct PropagationOptions {
  /// Debug switch: replaces the outputs of f', f'' and g with exact ones.
  bool pin_extra_gates = false;
};

template <typename T>
void add_limb_encoder_params(ParamSet<T>& ps, const ModelConfig& cfg, Rng& rng);
template <typename T>
void add_propagation_params(ParamSet<T>& ps, const ModelConfig& cfg, Rng& rng);

/// Limb heatmaps [2 N_L, 2, R, R] -> F_R [N_L, 2k]; row l belongs to joint l + 1.
template <typename T>
Var<T> encode_limb_features(ParamBinder<T>& b, const ModelConfig& cfg, const Tensor<T>& limb_heatmaps);

/// f' = s(F_J W_f' + b), f'' = s(F_J W_f'' + b), h' = f' * h_parent, r' = f'' * F_R,
/// LSTM gates over [h', r', F_J] with the parent's cell.
template <typename T>
CellState<T> pu_layer1_step(ParamBinder<T>& b, const CellState<T>& parent, Var<T> f_j, Var<T> f_r,
                            const PropagationOptions& opts = {});

/// g = s(h1 W_g + b_g), h'2 = g * h2_parent, LSTM gates over [h'2, h1].
template <typename T>
CellState<T> pu_layer2_step(ParamBinder<T>& b, const CellState<T>& parent, Var<T> h1,
                            const PropagationOptions& opts = {});

/// Standard LSTM cell with fused gate weights [in, 4S] laid out (f, i, o, c~).
template <typename T>
CellState<T> lstm_cell(Var<T> input, Var<T> c_parent, Var<T> w, Var<T> bias);

template <typename T>
struct PropagationResult {
  Var<T> f_p;  // [N_J - 1, S], second-layer hidden state per non-root joint
  std::vector<CellState<T>> layer1;
  std::vector<CellState<T>> layer2;
};

/// Visits joints in ascending index; the root holds zero states.
/// f_j: [N_J, S] (row 0 unused), f_r: [N_J - 1, S].
template <typename T>
PropagationResult<T> propagate(ParamBinder<T>& b, const SkeletonTree& tree, Var<T> f_j, Var<T> f_r,
                               const PropagationOptions& opts = {});

template <typename T>
void add_head_params(ParamSet<T>& ps, const ModelConfig& cfg, std::size_t joints, Rng& rng);

/// Maps features to raw joint coordinates [rows, 3].
///   per-joint: one shared affine map on [F_P,i, F_J,i] (or F_J,i without
///              propagation) for each non-root joint; the root row is 0.
///   global:    one affine map from all non-root features to
///              (N_J + extra_targets) x 3.
/// f_p may be empty when cfg.propagation is false.
template <typename T>
Var<T> project_pose(ParamBinder<T>& b, const ModelConfig& cfg, std::optional<Var<T>> f_p, Var<T> f_j);

}  // namespace etap
