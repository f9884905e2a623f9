#include "etap/propagation.hpp"

#include <stdexcept>

#include "etap/encoder.hpp"

namespace etap {

template <typename T>
void add_limb_encoder_params(ParamSet<T>& ps, const ModelConfig& cfg, Rng& rng) {
  std::vector<std::size_t> dims{2 * cfg.resolution * cfg.resolution};
  dims.insert(dims.end(), cfg.er_hidden.begin(), cfg.er_hidden.end());
  dims.push_back(cfg.embed);
  add_mlp_params(ps, "er", dims, rng);
}

template <typename T>
void add_propagation_params(ParamSet<T>& ps, const ModelConfig& cfg, Rng& rng) {
  const std::size_t s = cfg.state();
  add_linear_params(ps, "pu1.fj", s, s, rng);  // f'
  add_linear_params(ps, "pu1.fr", s, s, rng);  // f''
  ps.add("pu1.gates.w", init::xavier_uniform<T>(rng, {3 * s, 4 * s}, 3 * s, s));
  ps.add("pu1.gates.b", init::zeros<T>({4 * s}));
  add_linear_params(ps, "pu2.g", s, s, rng);
  ps.add("pu2.gates.w", init::xavier_uniform<T>(rng, {2 * s, 4 * s}, 2 * s, s));
  ps.add("pu2.gates.b", init::zeros<T>({4 * s}));
}

template <typename T>
Var<T> encode_limb_features(ParamBinder<T>& b, const ModelConfig& cfg, const Tensor<T>& limb) {
  const std::size_t r = cfg.resolution;
  if (limb.rank() != 4 || limb.dim(1) != 2 || limb.dim(2) != r || limb.dim(3) != r || limb.dim(0) % 2 != 0) {
    throw ShapeError("encode_limb_features: expected [2 N_L, 2, " + std::to_string(r) + ", " + std::to_string(r) +
                     "], got " + shape_str(limb.shape()));
  }
  Var<T> x = b.tape().constant(limb.reshaped({limb.dim(0), 2 * r * r}));
  return stereo_concat(mlp(b, "er", x, cfg.er_hidden.size() + 1));
}

template <typename T>
CellState<T> lstm_cell(Var<T> input, Var<T> c_parent, Var<T> w, Var<T> bias) {
  const std::size_t s = c_parent.shape()[1];
  if (w.shape()[1] != 4 * s) throw ShapeError("lstm_cell: gate width does not match state size");
  Var<T> g = linear(input, w, bias);
  Var<T> f = sigmoid(slice_cols(g, 0, s));
  Var<T> i = sigmoid(slice_cols(g, s, 2 * s));
  Var<T> o = sigmoid(slice_cols(g, 2 * s, 3 * s));
  Var<T> cand = etap::tanh(slice_cols(g, 3 * s, 4 * s));
  Var<T> c = add(mul(f, c_parent), mul(i, cand));
  return {mul(o, etap::tanh(c)), c};
}

namespace {

template <typename T>
void check_row(Var<T> v, std::size_t s, const char* what) {
  if (v.shape().size() != 2 || v.shape()[0] != 1 || v.shape()[1] != s) {
    throw ShapeError(std::string("propagation unit: ") + what + " has shape " + shape_str(v.shape()) +
                     ", expected [1x" + std::to_string(s) + "]");
  }
}

template <typename T>
Var<T> extra_gate(ParamBinder<T>& b, const std::string& prefix, Var<T> x, bool pinned) {
  if (pinned) return b.tape().constant(Tensor<T>(Shape{1, x.shape()[1]}, T(1)));
  return sigmoid(affine(b, prefix, x));
}

}  // namespace

template <typename T>
CellState<T> pu_layer1_step(ParamBinder<T>& b, const CellState<T>& parent, Var<T> f_j, Var<T> f_r,
                            const PropagationOptions& opts) {
  const std::size_t s = parent.h.shape()[1];
  check_row(parent.c, s, "parent cell");
  check_row(f_j, s, "F_J");
  check_row(f_r, s, "F_R");
  Var<T> h_mod = mul(extra_gate(b, "pu1.fj", f_j, opts.pin_extra_gates), parent.h);
  Var<T> r_mod = mul(extra_gate(b, "pu1.fr", f_j, opts.pin_extra_gates), f_r);
  return lstm_cell(concat_cols<T>({h_mod, r_mod, f_j}), parent.c, b("pu1.gates.w"), b("pu1.gates.b"));
}

template <typename T>
CellState<T> pu_layer2_step(ParamBinder<T>& b, const CellState<T>& parent, Var<T> h1, const PropagationOptions& opts) {
  const std::size_t s = parent.h.shape()[1];
  check_row(parent.c, s, "parent cell");
  check_row(h1, s, "layer-1 hidden");
  Var<T> h_mod = mul(extra_gate(b, "pu2.g", h1, opts.pin_extra_gates), parent.h);
  return lstm_cell(concat_cols<T>({h_mod, h1}), parent.c, b("pu2.gates.w"), b("pu2.gates.b"));
}

template <typename T>
PropagationResult<T> propagate(ParamBinder<T>& b, const SkeletonTree& tree, Var<T> f_j, Var<T> f_r,
                               const PropagationOptions& opts) {
  const std::size_t n = tree.joint_count();
  for (std::size_t i = 1; i < n; ++i) {
    if (tree.parent(i) < 0 || static_cast<std::size_t>(tree.parent(i)) >= i) {
      throw std::invalid_argument("propagate: tree is not topologically ordered at joint " + std::to_string(i));
    }
  }
  if (f_j.shape()[0] != n || f_r.shape()[0] != n - 1 || f_j.shape()[1] != f_r.shape()[1]) {
    throw ShapeError("propagate: F_J " + shape_str(f_j.shape()) + " / F_R " + shape_str(f_r.shape()) +
                     " do not match a " + std::to_string(n) + "-joint tree");
  }
  const std::size_t s = f_j.shape()[1];
  auto& tape = b.tape();
  Var<T> zero = tape.constant(Tensor<T>(Shape{1, s}));
  PropagationResult<T> out;
  out.layer1.assign(n, {zero, zero});
  out.layer2.assign(n, {zero, zero});
  std::vector<Var<T>> hidden;
  for (std::size_t i = 1; i < n; ++i) {
    const int p = tree.parent(i);
    out.layer1[i] = pu_layer1_step(b, out.layer1[p], slice_rows(f_j, i, i + 1), slice_rows(f_r, i - 1, i), opts);
    out.layer2[i] = pu_layer2_step(b, out.layer2[p], out.layer1[i].h, opts);
    hidden.push_back(out.layer2[i].h);
  }
  out.f_p = concat_rows(hidden);
  return out;
}

template <typename T>
void add_head_params(ParamSet<T>& ps, const ModelConfig& cfg, std::size_t joints, Rng& rng) {
  const std::size_t per_joint = cfg.propagation ? 2 * cfg.state() : cfg.state();
  if (cfg.head == HeadMode::kPerJoint) {
    add_linear_params(ps, "head", per_joint, 3, rng);
  } else {
    add_linear_params(ps, "head", (joints - 1) * per_joint, 3 * (joints + cfg.extra_targets), rng);
  }
}

template <typename T>
Var<T> project_pose(ParamBinder<T>& b, const ModelConfig& cfg, std::optional<Var<T>> f_p, Var<T> f_j) {
  const std::size_t n = f_j.shape()[0];
  if (n < 2) throw ShapeError("project_pose: need at least 2 joints");
  Var<T> feats = slice_rows(f_j, 1, n);
  if (cfg.propagation) {
    if (!f_p) throw std::invalid_argument("project_pose: propagation enabled but no F_P given");
    if (f_p->shape()[0] != n - 1) throw ShapeError("project_pose: F_P rows do not match F_J");
    feats = concat_cols<T>({*f_p, feats});
  }
  if (cfg.head == HeadMode::kPerJoint) {
    Var<T> rows = affine(b, "head", feats);
    return concat_rows<T>({b.tape().constant(Tensor<T>(Shape{1, 3})), rows});
  }
  Var<T> flat = reshape(feats, {1, feats.shape()[0] * feats.shape()[1]});
  Var<T> w = b("head.w");
  if (w.shape()[0] != flat.shape()[1]) {
    throw ShapeError("project_pose: global head expects " + std::to_string(w.shape()[0]) + " features, got " +
                     std::to_string(flat.shape()[1]));
  }
  Var<T> out = affine(b, "head", flat);
  return reshape(out, {out.shape()[1] / 3, 3});
}

#define ETAP_INSTANTIATE_PROPAGATION(T)                                                                     \
  template void add_limb_encoder_params<T>(ParamSet<T>&, const ModelConfig&, Rng&);                          \
  template void add_propagation_params<T>(ParamSet<T>&, const ModelConfig&, Rng&);                           \
  template Var<T> encode_limb_features<T>(ParamBinder<T>&, const ModelConfig&, const Tensor<T>&);            \
  template CellState<T> lstm_cell<T>(Var<T>, Var<T>, Var<T>, Var<T>);                                        \
  template CellState<T> pu_layer1_step<T>(ParamBinder<T>&, const CellState<T>&, Var<T>, Var<T>,              \
                                          const PropagationOptions&);                                       \
  template CellState<T> pu_layer2_step<T>(ParamBinder<T>&, const CellState<T>&, Var<T>, const PropagationOptions&); \
  template PropagationResult<T> propagate<T>(ParamBinder<T>&, const SkeletonTree&, Var<T>, Var<T>,           \
                                             const PropagationOptions&);                                    \
  template void add_head_params<T>(ParamSet<T>&, const ModelConfig&, std::size_t, Rng&);                     \
  template Var<T> project_pose<T>(ParamBinder<T>&, const ModelConfig&, std::optional<Var<T>>, Var<T>);

ETAP_INSTANTIATE_PROPAGATION(float)
ETAP_INSTANTIATE_PROPAGATION(double)
ETAP_INSTANTIATE_PROPAGATION(long double)

}  // namespace etap
