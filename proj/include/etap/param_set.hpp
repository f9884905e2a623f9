#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "etap/rng.hpp"
#include "etap/tape.hpp"

namespace etap {

/// Insertion-ordered collection of named tensors (weights, gradients, moments).
template <typename T>
class ParamSet {
 public:
  /// Adds a tensor; names must be unique.
  void add(std::string name, Tensor<T> value);

  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  const Tensor<T>& get(std::string_view name) const { return values_[index_of(name)]; }
  Tensor<T>& get(std::string_view name) { return values_[index_of(name)]; }
  const Tensor<T>& at(std::size_t i) const { return values_[i]; }
  Tensor<T>& at(std::size_t i) { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return values_.size(); }
  std::size_t scalar_count() const;

  /// Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  void set_zero();
  /// this += factor * other (layouts must match).
  void add_scaled(const ParamSet& other, T factor);
  bool same_layout(const ParamSet& other) const;

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
bool bitwise_equal(const ParamSet<T>& a, const ParamSet<T>& b);

/// Lazily exposes the tensors of a ParamSet as leaves of one tape.
template <typename T>
class ParamBinder {
 public:
  ParamBinder(Tape<T>& tape, const ParamSet<T>& params, bool trainable = true);

  Var<T> operator()(std::string_view name);
  Tape<T>& tape() { return tape_; }
  const ParamSet<T>& params() const { return params_; }

  /// Adds the gradients that reached bound parameters into `grads`.
  void accumulate_grads(ParamSet<T>& grads) const;

 private:
  Tape<T>& tape_;
  const ParamSet<T>& params_;
  bool trainable_;
  std::vector<std::optional<Var<T>>> bound_;
};

namespace init {

template <typename T>
Tensor<T> zeros(Shape shape) {
  return Tensor<T>(std::move(shape), T(0));
}
/// Glorot/Xavier uniform: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> xavier_uniform(Rng& rng, Shape shape, std::size_t fan_in, std::size_t fan_out);
template <typename T>
Tensor<T> normal(Rng& rng, Shape shape, double stddev);
template <typename T>
Tensor<T> uniform(Rng& rng, Shape shape, double lo, double hi);

}  // namespace init

extern template class ParamSet<float>;
extern template class ParamSet<double>;
extern template class ParamBinder<float>;
extern template class ParamBinder<double>;
extern template class ParamSet<long double>;
extern template class ParamBinder<long double>;

}  // namespace etap
