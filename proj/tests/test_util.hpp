#pragma once

#include <cmath>
#include <vector>

#include "etap/model.hpp"

namespace etap::testing {

using Vec = std::vector<double>;

inline double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// y = x W + b for W stored [in, out].
inline Vec affine_ref(const Vec& x, const Tensor<double>& w, const Tensor<double>& b) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  Vec y(out);
  for (std::size_t j = 0; j < out; ++j) {
    double s = b[j];
    for (std::size_t i = 0; i < in; ++i) s += x[i] * w[i * out + j];
    y[j] = s;
  }
  return y;
}

inline Vec concat(std::initializer_list<Vec> parts) {
  Vec out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

struct LstmRef {
  Vec h, c;
};

/// Textbook LSTM step with gate blocks (f, i, o, candidate) along the output axis.
inline LstmRef lstm_ref(const Vec& input, const Vec& c_parent, const Tensor<double>& w, const Tensor<double>& b) {
  const std::size_t s = c_parent.size();
  const Vec g = affine_ref(input, w, b);
  LstmRef out{Vec(s), Vec(s)};
  for (std::size_t k = 0; k < s; ++k) {
    const double f = sigmoid_ref(g[k]), i = sigmoid_ref(g[s + k]), o = sigmoid_ref(g[2 * s + k]);
    const double cand = std::tanh(g[3 * s + k]);
    out.c[k] = f * c_parent[k] + i * cand;
    out.h[k] = o * std::tanh(out.c[k]);
  }
  return out;
}

inline Vec row(const Tensor<double>& t, std::size_t r) {
  const std::size_t n = t.dim(1);
  return Vec(t.ptr() + r * n, t.ptr() + (r + 1) * n);
}

struct JointRef {
  LstmRef l1, l2;
};

/// Plain two-layer tree LSTM: layer 1 input [F_R, F_J], layer 2 input h1.
inline JointRef tree_lstm_ref(const ParamSet<double>& ps, const SkeletonTree& tree, const Tensor<double>& fj,
                              const Tensor<double>& fr, std::size_t i) {
  const std::size_t s = fj.dim(1);
  if (i == 0) return {{Vec(s, 0.0), Vec(s, 0.0)}, {Vec(s, 0.0), Vec(s, 0.0)}};
  const JointRef p = tree_lstm_ref(ps, tree, fj, fr, static_cast<std::size_t>(tree.parent(i)));
  JointRef out;
  out.l1 = lstm_ref(concat({p.l1.h, row(fr, i - 1), row(fj, i)}), p.l1.c, ps.get("pu1.gates.w"), ps.get("pu1.gates.b"));
  out.l2 = lstm_ref(concat({p.l2.h, out.l1.h}), p.l2.c, ps.get("pu2.gates.w"), ps.get("pu2.gates.b"));
  return out;
}

inline SkeletonTree random_tree(Rng& rng, std::size_t n) {
  SkeletonConfig c = chain_skeleton_config(n);
  for (std::size_t i = 1; i < n; ++i) c.parent[i] = static_cast<int>(rng.below(i));
  return build_skeleton(c);
}

/// Random tensor with entries in [-a, a].
inline Tensor<double> rand_t(Rng& rng, Shape s, double a = 1.0) { return init::uniform<double>(rng, std::move(s), -a, a); }

/// Replaces every parameter with U(-a, a) noise (biases included).
template <typename T>
void randomize(ParamSet<T>& ps, Rng& rng, double a = 0.5) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (is_frozen_param(ps.name(i))) continue;
    ps.at(i) = init::uniform<T>(rng, ps.at(i).shape(), -a, a);
  }
}

}  // namespace etap::testing
