#pragma once

#include <string>
#include <vector>

#include "etap/ops.hpp"
#include "etap/param_set.hpp"

namespace etap {

/// Adds `prefix.w{l}` [dims[l], dims[l+1]] (Xavier-uniform) and `prefix.b{l}` (zeros).
template <typename T>
void add_mlp_params(ParamSet<T>& ps, const std::string& prefix, const std::vector<std::size_t>& dims, Rng& rng);

/// Affine layers with ReLU between them (none after the last).
template <typename T>
Var<T> mlp(ParamBinder<T>& b, const std::string& prefix, Var<T> x, std::size_t layers);

template <typename T>
void add_linear_params(ParamSet<T>& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);

template <typename T>
Var<T> affine(ParamBinder<T>& b, const std::string& prefix, Var<T> x);

}  // namespace etap
