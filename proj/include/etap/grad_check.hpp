#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "etap/param_set.hpp"

namespace etap {

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t coords_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Parameters for which this returns true are left out (e.g. frozen ones).
  std::function<bool(const std::string&)> skip;
  /// Leave out coordinates whose +h or -h evaluation flips the sign of any
  /// relu input seen at the unperturbed point (the function has a kink there).
  bool skip_kinks = true;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  /// Coordinates left out because the difference straddled a relu kink.
  std::size_t kinks_skipped = 0;
};

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

/// Scalar-valued function of the parameters, built on the binder's tape.
template <typename T>
using ScalarFn = std::function<Var<T>(ParamBinder<T>&)>;

/// Compares backward() against central differences (f(x+h) - f(x-h)) / 2h.
/// `params` is perturbed in place and restored before returning.
template <typename T>
GradCheckReport grad_check(const ScalarFn<T>& f, ParamSet<T>& params, const GradCheckOptions& opts = {});

/// backward() of `f` in T against central differences of `oracle` evaluated in
/// U at the same point (U wider than T lowers the rounding floor of the
/// difference quotient). Both must compute the same function.
template <typename T, typename U>
GradCheckReport grad_check_mixed(const ScalarFn<T>& f, const ScalarFn<U>& oracle, const ParamSet<T>& params,
                                 const GradCheckOptions& opts = {});

}  // namespace etap
