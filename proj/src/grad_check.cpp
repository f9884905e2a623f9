#include "etap/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace etap {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

namespace {

template <typename T>
struct Eval {
  T value;
  std::vector<bool> relu_active;
};

template <typename T>
Eval<T> evaluate(const ScalarFn<T>& f, const ParamSet<T>& params) {
  Tape<T> tape(false);
  ParamBinder<T> binder(tape, params, false);
  Eval<T> e{f(binder).value()[0], {}};
  if (!std::isfinite(e.value)) throw NonFiniteError("grad_check: non-finite function value");
  for (std::uint32_t id = 0; id < tape.node_count(); ++id) {
    if (tape.op(id) != "relu") continue;
    for (T y : tape.value(id).values()) e.relu_active.push_back(y > T(0));
  }
  return e;
}

}  // namespace

template <typename T, typename U>
GradCheckReport grad_check_mixed(const ScalarFn<T>& f, const ScalarFn<U>& oracle, const ParamSet<T>& params,
                                 const GradCheckOptions& opts) {
  if (!(opts.step > 0)) throw std::invalid_argument("grad_check: step must be positive");
  ParamSet<T> analytic = params.zeros_like();
  {
    Tape<T> tape;
    ParamBinder<T> binder(tape, params);
    Var<T> loss = f(binder);
    if (!std::isfinite(loss.value()[0])) throw NonFiniteError("grad_check: non-finite function value");
    tape.backward(loss);
    binder.accumulate_grads(analytic);
  }

  ParamSet<U> point = params.template cast<U>();
  const auto center = evaluate(oracle, point);
  GradCheckReport report;
  report.max_rel_error = -1.0;
  Rng rng(opts.seed, 0x6772616463686bULL);
  const U h = static_cast<U>(opts.step);
  for (std::size_t p = 0; p < point.size(); ++p) {
    if (opts.skip && opts.skip(point.name(p))) continue;
    Tensor<U>& value = point.at(p);
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (opts.coords_per_tensor != 0 && opts.coords_per_tensor < coords.size()) {
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(opts.coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t c : coords) {
      const U saved = value[c];
      value[c] = saved + h;
      const auto up = evaluate(oracle, point);
      value[c] = saved - h;
      const auto down = evaluate(oracle, point);
      value[c] = saved;
      if (opts.skip_kinks && (up.relu_active != center.relu_active || down.relu_active != center.relu_active)) {
        ++report.kinks_skipped;
        continue;
      }
      const double numeric = static_cast<double>((up.value - down.value) / (2 * h));
      const double a = analytic.at(p)[c];
      const double err = relative_error(a, numeric);
      ++report.coords_checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = point.name(p);
        report.worst_index = c;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.max_rel_error = std::max(report.max_rel_error, 0.0);
  return report;
}

template <typename T>
GradCheckReport grad_check(const ScalarFn<T>& f, ParamSet<T>& params, const GradCheckOptions& opts) {
  return grad_check_mixed<T, T>(f, f, params, opts);
}

template GradCheckReport grad_check<float>(const ScalarFn<float>&, ParamSet<float>&, const GradCheckOptions&);
template GradCheckReport grad_check<double>(const ScalarFn<double>&, ParamSet<double>&, const GradCheckOptions&);
template GradCheckReport grad_check_mixed<float, double>(const ScalarFn<float>&, const ScalarFn<double>&,
                                                         const ParamSet<float>&, const GradCheckOptions&);
template GradCheckReport grad_check_mixed<double, long double>(const ScalarFn<double>&, const ScalarFn<long double>&,
                                                               const ParamSet<double>&, const GradCheckOptions&);

}  // namespace etap
