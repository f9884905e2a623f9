#include "etap/param_set.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace etap {

template <typename T>
void ParamSet<T>::add(std::string name, Tensor<T> value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  index_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

template <typename T>
bool ParamSet<T>::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

template <typename T>
std::size_t ParamSet<T>::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

template <typename T>
std::size_t ParamSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

template <typename T>
ParamSet<T> ParamSet<T>::zeros_like() const {
  ParamSet out;
  for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor<T>(values_[i].shape(), T(0)));
  return out;
}

template <typename T>
void ParamSet<T>::set_zero() {
  for (auto& v : values_) std::fill(v.data().begin(), v.data().end(), T(0));
}

template <typename T>
bool ParamSet<T>::same_layout(const ParamSet& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (names_[i] != other.names_[i] || values_[i].shape() != other.values_[i].shape()) return false;
  }
  return true;
}

template <typename T>
void ParamSet<T>::add_scaled(const ParamSet& other, T factor) {
  if (!same_layout(other)) throw ShapeError("add_scaled: parameter layouts differ");
  for (std::size_t i = 0; i < size(); ++i) {
    T* dst = values_[i].ptr();
    const T* src = other.values_[i].ptr();
    for (std::size_t j = 0; j < values_[i].size(); ++j) dst[j] += factor * src[j];
  }
}

template <typename T>
bool bitwise_equal(const ParamSet<T>& a, const ParamSet<T>& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!bitwise_equal(a.at(i), b.at(i))) return false;
  }
  return true;
}

template <typename T>
ParamBinder<T>::ParamBinder(Tape<T>& tape, const ParamSet<T>& params, bool trainable)
    : tape_(tape), params_(params), trainable_(trainable), bound_(params.size()) {}

template <typename T>
Var<T> ParamBinder<T>::operator()(std::string_view name) {
  const std::size_t i = params_.index_of(name);
  if (!bound_[i]) bound_[i] = tape_.external(params_.at(i), trainable_);
  return *bound_[i];
}

template <typename T>
void ParamBinder<T>::accumulate_grads(ParamSet<T>& grads) const {
  if (!grads.same_layout(params_)) throw ShapeError("accumulate_grads: gradient layout differs from parameters");
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    if (!bound_[i]) continue;
    const Tensor<T>* g = tape_.grad(*bound_[i]);
    if (!g) continue;
    T* dst = grads.at(i).ptr();
    const T* src = g->ptr();
    for (std::size_t j = 0; j < g->size(); ++j) dst[j] += src[j];
  }
}

namespace init {

template <typename T>
Tensor<T> xavier_uniform(Rng& rng, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform<T>(rng, std::move(shape), -a, a);
}

template <typename T>
Tensor<T> normal(Rng& rng, Shape shape, double stddev) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
Tensor<T> uniform(Rng& rng, Shape shape, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template Tensor<float> xavier_uniform<float>(Rng&, Shape, std::size_t, std::size_t);
template Tensor<double> xavier_uniform<double>(Rng&, Shape, std::size_t, std::size_t);
template Tensor<float> normal<float>(Rng&, Shape, double);
template Tensor<double> normal<double>(Rng&, Shape, double);
template Tensor<float> uniform<float>(Rng&, Shape, double, double);
template Tensor<double> uniform<double>(Rng&, Shape, double, double);
template Tensor<long double> xavier_uniform<long double>(Rng&, Shape, std::size_t, std::size_t);
template Tensor<long double> normal<long double>(Rng&, Shape, double);
template Tensor<long double> uniform<long double>(Rng&, Shape, double, double);

}  // namespace init

template class ParamSet<float>;
template class ParamSet<double>;
template class ParamBinder<float>;
template class ParamBinder<double>;
template class ParamSet<long double>;
template class ParamBinder<long double>;
template bool bitwise_equal(const ParamSet<float>&, const ParamSet<float>&);
template bool bitwise_equal(const ParamSet<double>&, const ParamSet<double>&);

}  // namespace etap
