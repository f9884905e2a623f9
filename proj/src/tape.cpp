#include "etap/tape.hpp"

#include <atomic>
#include <string>

namespace etap {

namespace {
#ifdef ETAP_NO_FINITE_CHECKS
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif
}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

template <typename T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::external(const Tensor<T>& value, bool requires_grad) {
  Node n;
  n.borrowed = &value;
  n.requires_grad = requires_grad && grad_enabled_;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs,
                       BackwardFn backward) {
  if (finite_checks_enabled() && !value.all_finite()) {
    throw NonFiniteError("non-finite output from op '" + std::string(op) + "' with shape " +
                         shape_str(value.shape()));
  }
  Node n;
  n.owned = std::move(value);
  n.op = op;
  if (grad_enabled_) {
    for (const auto& in : inputs) {
      if (in.tape != this) throw std::logic_error("op '" + std::string(op) + "' mixes tapes");
      n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                       BackwardFn backward) {
  return record(op, std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.borrowed ? *n.borrowed : n.owned;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(Var<T> v) {
  Node& n = nodes_[v.id];
  if (!n.grad) n.grad.emplace(value(v.id).shape(), T(0));
  return *n.grad;
}

template <typename T>
void Tape<T>::accumulate(Var<T> v, const Tensor<T>& g) {
  if (!nodes_[v.id].requires_grad) return;
  Tensor<T>& buf = grad_buffer(v);
  if (buf.size() != g.size()) {
    throw ShapeError("gradient " + shape_str(g.shape()) + " does not fit node " + shape_str(buf.shape()));
  }
  T* dst = buf.ptr();
  const T* src = g.ptr();
  for (std::size_t i = 0; i < buf.size(); ++i) dst[i] += src[i];
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_str(value(loss.id).shape()));
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss)[0] = T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.grad || !n.backward) continue;
    // Closures only touch their inputs' accumulators, never this node's.
    n.backward(*this, *n.grad);
  }
}

template <typename T>
const Tensor<T>* Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[v.id];
  return n.grad ? &*n.grad : nullptr;
}

template <typename T>
Tensor<T> Tape<T>::grad_or_zero(Var<T> v) const {
  const Tensor<T>* g = grad(v);
  return g ? *g : Tensor<T>(value(v.id).shape(), T(0));
}

template class Tape<float>;
template class Tape<double>;
template class Tape<long double>;

}  // namespace etap
