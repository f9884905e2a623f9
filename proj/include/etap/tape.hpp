#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "etap/tensor.hpp"

namespace etap {

template <typename T>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Turns NaN/Inf detection on every recorded op on or off (process-wide).
/// Defaults to on unless built with ETAP_NO_FINITE_CHECKS.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

/// Reverse-mode differentiation record.
///
/// Nodes are appended in execution order, so the node vector is already a
/// topological order; backward() walks it once from the loss toward the
/// leaves. A tape belongs to one thread.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> value);
  Var<T> variable(Tensor<T> value);
  /// Leaf that borrows `value`; the tensor must outlive the tape.
  Var<T> external(const Tensor<T>& value, bool requires_grad);

  /// Appends an op result. `backward` runs only if some input requires grad.
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);
  Var<T> record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward);

  const Tensor<T>& value(std::uint32_t id) const;
  /// Name of the op that produced node `id` ("leaf" for leaves).
  const std::string& op(std::uint32_t id) const { return nodes_[id].op; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates. Loss must hold one element.
  void backward(Var<T> loss);

  /// Gradient reaching `v`, or nullptr when no path from the loss exists.
  const Tensor<T>* grad(Var<T> v) const;
  Tensor<T> grad_or_zero(Var<T> v) const;

  /// Zero-initialized accumulator for `v` (allocated on first use).
  Tensor<T>& grad_buffer(Var<T> v);
  void accumulate(Var<T> v, const Tensor<T>& g);

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    std::optional<Tensor<T>> grad;
    BackwardFn backward;
    std::string op = "leaf";
    bool requires_grad = false;
  };

  Var<T> push(Node node);

  std::deque<Node> nodes_;
  bool grad_enabled_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

extern template class Tape<float>;
extern template class Tape<double>;
extern template class Tape<long double>;

}  // namespace etap
