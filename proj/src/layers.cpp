#include "etap/layers.hpp"

namespace etap {

template <typename T>
void add_linear_params(ParamSet<T>& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  ps.add(prefix + ".w", init::xavier_uniform<T>(rng, {in, out}, in, out));
  ps.add(prefix + ".b", init::zeros<T>({out}));
}

template <typename T>
Var<T> affine(ParamBinder<T>& b, const std::string& prefix, Var<T> x) {
  return linear(x, b(prefix + ".w"), b(prefix + ".b"));
}

template <typename T>
void add_mlp_params(ParamSet<T>& ps, const std::string& prefix, const std::vector<std::size_t>& dims, Rng& rng) {
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    ps.add(prefix + ".w" + std::to_string(l), init::xavier_uniform<T>(rng, {dims[l], dims[l + 1]}, dims[l], dims[l + 1]));
    ps.add(prefix + ".b" + std::to_string(l), init::zeros<T>({dims[l + 1]}));
  }
}

template <typename T>
Var<T> mlp(ParamBinder<T>& b, const std::string& prefix, Var<T> x, std::size_t layers) {
  for (std::size_t l = 0; l < layers; ++l) {
    x = linear(x, b(prefix + ".w" + std::to_string(l)), b(prefix + ".b" + std::to_string(l)));
    if (l + 1 < layers) x = relu(x);
  }
  return x;
}

#define ETAP_INSTANTIATE_LAYERS(T)                                                                        \
  template void add_mlp_params<T>(ParamSet<T>&, const std::string&, const std::vector<std::size_t>&, Rng&); \
  template Var<T> mlp<T>(ParamBinder<T>&, const std::string&, Var<T>, std::size_t);                        \
  template void add_linear_params<T>(ParamSet<T>&, const std::string&, std::size_t, std::size_t, Rng&);     \
  template Var<T> affine<T>(ParamBinder<T>&, const std::string&, Var<T>);

ETAP_INSTANTIATE_LAYERS(float)
ETAP_INSTANTIATE_LAYERS(double)
ETAP_INSTANTIATE_LAYERS(long double)

}  // namespace etap
