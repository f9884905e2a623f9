#include "etap/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace etap {

MapKind parse_map_kind(std::string_view name) {
  if (name == "add") return MapKind::kAdd;
  if (name == "sub") return MapKind::kSub;
  if (name == "mul") return MapKind::kMul;
  if (name == "sigmoid") return MapKind::kSigmoid;
  if (name == "tanh") return MapKind::kTanh;
  if (name == "relu") return MapKind::kRelu;
  if (name == "gelu") return MapKind::kGelu;
  throw std::invalid_argument("unknown map kind '" + std::string(name) + "'");
}

namespace {

void require_same_shape(std::string_view op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

void require_rank2(std::string_view op, const Shape& s) {
  if (s.size() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(s));
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

bool is_binary(MapKind k) { return k == MapKind::kAdd || k == MapKind::kSub || k == MapKind::kMul; }

}  // namespace

template <typename T>
void gemm_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t kBlockK = 128;
  constexpr std::size_t kBlockN = 512;
  for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
    const std::size_t j1 = std::min(n, j0 + kBlockN);
    for (std::size_t p0 = 0; p0 < k; p0 += kBlockK) {
      const std::size_t p1 = std::min(k, p0 + kBlockK);
      for (std::size_t i = 0; i < m; ++i) {
        T* __restrict crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = p0; p < p1; ++p) {
          const T av = arow[p];
          if (av == T(0)) continue;  // heatmaps are mostly zeros
          const T* __restrict brow = b + p * n;
          for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  require_rank2("transpose", a.shape());
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> out(Shape{n, m});
  const T* src = a.ptr();
  T* dst = out.ptr();
  constexpr std::size_t kTile = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += kTile) {
    for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
      for (std::size_t i = i0; i < std::min(m, i0 + kTile); ++i) {
        for (std::size_t j = j0; j < std::min(n, j0 + kTile); ++j) dst[j * m + i] = src[i * n + j];
      }
    }
  }
  return out;
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank2("matmul", av.shape());
  require_rank2("matmul", bv.shape());
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  Tensor<T> out(Shape{m, n});
  gemm_accumulate(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
  return a.tape->record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) {
      Tensor<T> bt = transpose2d(b.value());
      gemm_accumulate(g.ptr(), bt.ptr(), t.grad_buffer(a).ptr(), m, n, k);
    }
    if (t.requires_grad(b)) {
      Tensor<T> at = transpose2d(a.value());
      gemm_accumulate(at.ptr(), g.ptr(), t.grad_buffer(b).ptr(), k, m, n);
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const Tensor<T>& bv = bias.value();
  require_rank2("linear", xv.shape());
  require_rank2("linear", wv.shape());
  const std::size_t m = xv.dim(0), k = xv.dim(1), n = wv.dim(1);
  if (wv.dim(0) != k) {
    throw ShapeError("linear: input " + shape_str(xv.shape()) + " does not fit weight " + shape_str(wv.shape()));
  }
  if (bv.size() != n) {
    throw ShapeError("linear: bias " + shape_str(bv.shape()) + " does not fit weight " + shape_str(wv.shape()));
  }
  Tensor<T> out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) std::copy(bv.ptr(), bv.ptr() + n, out.ptr() + i * n);
  gemm_accumulate(xv.ptr(), wv.ptr(), out.ptr(), m, k, n);
  return x.tape->record("linear", std::move(out), {x, w, bias},
                        [x, w, bias, m, k, n](Tape<T>& t, const Tensor<T>& g) {
                          if (t.requires_grad(x)) {
                            Tensor<T> wt = transpose2d(w.value());
                            gemm_accumulate(g.ptr(), wt.ptr(), t.grad_buffer(x).ptr(), m, n, k);
                          }
                          if (t.requires_grad(w)) {
                            Tensor<T> xt = transpose2d(x.value());
                            gemm_accumulate(xt.ptr(), g.ptr(), t.grad_buffer(w).ptr(), k, m, n);
                          }
                          if (t.requires_grad(bias)) {
                            T* gb = t.grad_buffer(bias).ptr();
                            for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                            }
                          }
                        });
}

template <typename T>
Var<T> map(MapKind kind, Var<T> a) {
  if (is_binary(kind)) throw std::invalid_argument("map: binary kind needs two operands");
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  const std::size_t n = av.size();
  const T* x = av.ptr();
  T* y = out.ptr();
  const char* name = "map";
  switch (kind) {
    case MapKind::kSigmoid:
      name = "sigmoid";
      for (std::size_t i = 0; i < n; ++i) y[i] = stable_sigmoid(x[i]);
      break;
    case MapKind::kTanh:
      name = "tanh";
      for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
      break;
    case MapKind::kRelu:
      name = "relu";
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case MapKind::kGelu:
      name = "gelu";
      for (std::size_t i = 0; i < n; ++i) {
        y[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * T(std::numbers::sqrt2 / 2)));
      }
      break;
    default:
      break;
  }
  const auto out_id = static_cast<std::uint32_t>(a.tape->node_count());
  return a.tape->record(name, std::move(out), {a}, [a, kind, out_id, n](Tape<T>& t, const Tensor<T>& g) {
    const T* x = a.value().ptr();
    const T* y = t.value(out_id).ptr();
    T* gx = t.grad_buffer(a).ptr();
    switch (kind) {
      case MapKind::kSigmoid:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
        break;
      case MapKind::kTanh:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
        break;
      case MapKind::kRelu:
        for (std::size_t i = 0; i < n; ++i) {
          if (x[i] > T(0)) gx[i] += g[i];
        }
        break;
      case MapKind::kGelu: {
        const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
        for (std::size_t i = 0; i < n; ++i) {
          const T cdf = T(0.5) * (T(1) + std::erf(x[i] * T(std::numbers::sqrt2 / 2)));
          const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
          gx[i] += g[i] * (cdf + x[i] * pdf);
        }
        break;
      }
      default:
        break;
    }
  });
}

template <typename T>
Var<T> map(MapKind kind, Var<T> a, Var<T> b) {
  if (!is_binary(kind)) return map(kind, a);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same_shape("map", av.shape(), bv.shape());
  Tensor<T> out(av.shape());
  const std::size_t n = av.size();
  const T* x = av.ptr();
  const T* z = bv.ptr();
  T* y = out.ptr();
  const char* name = "add";
  switch (kind) {
    case MapKind::kAdd:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + z[i];
      break;
    case MapKind::kSub:
      name = "sub";
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] - z[i];
      break;
    default:
      name = "mul";
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * z[i];
      break;
  }
  return a.tape->record(name, std::move(out), {a, b}, [a, b, kind, n](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) {
      T* ga = t.grad_buffer(a).ptr();
      if (kind == MapKind::kMul) {
        const T* z = b.value().ptr();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * z[i];
      } else {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
    }
    if (t.requires_grad(b)) {
      T* gb = t.grad_buffer(b).ptr();
      if (kind == MapKind::kMul) {
        const T* x = a.value().ptr();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * x[i];
      } else if (kind == MapKind::kSub) {
        for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
      } else {
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    }
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& rv = row.value();
  require_rank2("add_row", av.shape());
  const std::size_t m = av.dim(0), n = av.dim(1);
  if (rv.size() != n) throw ShapeError("add_row: row " + shape_str(rv.shape()) + " vs " + shape_str(av.shape()));
  Tensor<T> out = av;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
  }
  return a.tape->record("add_row", std::move(out), {a, row}, [a, row, m, n](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) {
      T* gr = t.grad_buffer(row).ptr();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
      }
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return a.tape->record("scale", std::move(out), {a}, [a, factor](Tape<T>& t, const Tensor<T>& g) {
    T* ga = t.grad_buffer(a).ptr();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> square(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= v;
  return a.tape->record("square", std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    const T* x = a.value().ptr();
    T* ga = t.grad_buffer(a).ptr();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += T(2) * x[i] * g[i];
  });
}

template <typename T>
Var<T> abs(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::abs(v);
  return a.tape->record("abs", std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    const T* x = a.value().ptr();
    T* ga = t.grad_buffer(a).ptr();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T(0)) ga[i] += g[i];
      else if (x[i] < T(0)) ga[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> softmax(Var<T> a, std::size_t axis) {
  const Tensor<T>& av = a.value();
  if (axis >= av.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(av.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= av.dim(d);
  for (std::size_t d = axis + 1; d < av.rank(); ++d) inner *= av.dim(d);
  const std::size_t len = av.dim(axis);
  Tensor<T> out(av.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = av[base];
      for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, av[base + l * inner]);
      T total = 0;
      for (std::size_t l = 0; l < len; ++l) {
        const T e = std::exp(av[base + l * inner] - mx);
        out[base + l * inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= total;
    }
  }
  const auto out_id = static_cast<std::uint32_t>(a.tape->node_count());
  return a.tape->record("softmax", std::move(out), {a},
                        [a, out_id, outer, inner, len](Tape<T>& t, const Tensor<T>& g) {
                          const Tensor<T>& y = t.value(out_id);
                          T* ga = t.grad_buffer(a).ptr();
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t in = 0; in < inner; ++in) {
                              const std::size_t base = o * len * inner + in;
                              T dot = 0;
                              for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * y[base + l * inner];
                              for (std::size_t l = 0; l < len; ++l) {
                                const std::size_t idx = base + l * inner;
                                ga[idx] += y[idx] * (g[idx] - dot);
                              }
                            }
                          }
                        });
}

template <typename T>
Var<T> layer_norm(Var<T> a, Var<T> gamma, Var<T> beta, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("layer_norm: eps must be positive");
  const Tensor<T>& av = a.value();
  const std::size_t n = av.shape().back();
  const std::size_t rows = av.size() / n;
  if (gamma.value().size() != n || beta.value().size() != n) {
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(n) + " elements");
  }
  const T* gm = gamma.value().ptr();
  const T* bt = beta.value().ptr();
  Tensor<T> out(av.shape());
  Tensor<T> xhat(av.shape());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = av.ptr() + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += x[j];
    mu /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= T(n);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (x[j] - mu) * rs;
      xhat[r * n + j] = h;
      out[r * n + j] = h * gm[j] + bt[j];
    }
  }
  return a.tape->record(
      "layer_norm", std::move(out), {a, gamma, beta},
      [a, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows, n](Tape<T>& t, const Tensor<T>& g) {
        const T* gm = gamma.value().ptr();
        if (t.requires_grad(gamma) || t.requires_grad(beta)) {
          T* gg = t.requires_grad(gamma) ? t.grad_buffer(gamma).ptr() : nullptr;
          T* gb = t.requires_grad(beta) ? t.grad_buffer(beta).ptr() : nullptr;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) {
              if (gg) gg[j] += g[r * n + j] * xhat[r * n + j];
              if (gb) gb[j] += g[r * n + j];
            }
          }
        }
        if (t.requires_grad(a)) {
          T* ga = t.grad_buffer(a).ptr();
          std::vector<T> dh(n);
          for (std::size_t r = 0; r < rows; ++r) {
            T sum_dh = 0, sum_dh_h = 0;
            for (std::size_t j = 0; j < n; ++j) {
              dh[j] = g[r * n + j] * gm[j];
              sum_dh += dh[j];
              sum_dh_h += dh[j] * xhat[r * n + j];
            }
            const T k = rstd[r] / T(n);
            for (std::size_t j = 0; j < n; ++j) {
              ga[r * n + j] += k * (T(n) * dh[j] - sum_dh - xhat[r * n + j] * sum_dh_h);
            }
          }
        }
      });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  return a.tape->record("transpose", transpose2d(a.value()), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, transpose2d(g));
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  return a.tape->record("reshape", a.value().reshaped(std::move(shape)), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
  });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  const Tensor<T>& av = a.value();
  if (begin >= end || end > av.dim(0)) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                     shape_str(av.shape()));
  }
  const std::size_t stride = av.size() / av.dim(0);
  Shape shape = av.shape();
  shape[0] = end - begin;
  std::vector<T> data(av.ptr() + begin * stride, av.ptr() + end * stride);
  return a.tape->record("slice_rows", Tensor<T>(std::move(shape), std::move(data)), {a},
                        [a, begin, stride](Tape<T>& t, const Tensor<T>& g) {
                          T* ga = t.grad_buffer(a).ptr() + begin * stride;
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  const Tensor<T>& av = a.value();
  require_rank2("slice_cols", av.shape());
  const std::size_t m = av.dim(0), n = av.dim(1);
  if (begin >= end || end > n) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                     shape_str(av.shape()));
  }
  const std::size_t w = end - begin;
  Tensor<T> out(Shape{m, w});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(av.ptr() + i * n + begin, w, out.ptr() + i * w);
  return a.tape->record("slice_cols", std::move(out), {a}, [a, begin, m, n, w](Tape<T>& t, const Tensor<T>& g) {
    T* ga = t.grad_buffer(a).ptr();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
    }
  });
}

template <typename T>
Var<T> gather_rows(Var<T> a, const std::vector<std::size_t>& rows) {
  const Tensor<T>& av = a.value();
  const std::size_t stride = av.size() / av.dim(0);
  if (rows.empty()) throw ShapeError("gather_rows: empty row list");
  Shape shape = av.shape();
  shape[0] = rows.size();
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.dim(0)) throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(av.ptr() + rows[i] * stride, stride, out.ptr() + i * stride);
  }
  return a.tape->record("gather_rows", std::move(out), {a}, [a, rows, stride](Tape<T>& t, const Tensor<T>& g) {
    T* ga = t.grad_buffer(a).ptr();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < stride; ++j) ga[rows[i] * stride + j] += g[i * stride + j];
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  Shape shape = parts.front().shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1)) {
      throw ShapeError("concat_rows: trailing extents differ, " + shape_str(s) + " vs " + shape_str(shape));
    }
    rows += s[0];
  }
  shape[0] = rows;
  std::vector<T> data;
  data.reserve(shape_numel(shape));
  for (const auto& p : parts) data.insert(data.end(), p.value().ptr(), p.value().ptr() + p.value().size());
  return parts.front().tape->record("concat_rows", Tensor<T>(std::move(shape), std::move(data)), parts,
                                    [parts](Tape<T>& t, const Tensor<T>& g) {
                                      std::size_t offset = 0;
                                      for (const auto& p : parts) {
                                        const std::size_t sz = p.value().size();
                                        if (t.requires_grad(p)) {
                                          T* gp = t.grad_buffer(p).ptr();
                                          for (std::size_t i = 0; i < sz; ++i) gp[i] += g[offset + i];
                                        }
                                        offset += sz;
                                      }
                                    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t m = parts.front().value().dim(0);
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank2("concat_cols", p.shape());
    if (p.value().dim(0) != m) throw ShapeError("concat_cols: row counts differ");
    n += p.value().dim(1);
  }
  Tensor<T> out(Shape{m, n});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.value().dim(1);
    for (std::size_t i = 0; i < m; ++i) std::copy_n(p.value().ptr() + i * w, w, out.ptr() + i * n + offset);
    offset += w;
  }
  return parts.front().tape->record("concat_cols", std::move(out), parts, [parts, m, n](Tape<T>& t, const Tensor<T>& g) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.value().dim(1);
      if (t.requires_grad(p)) {
        T* gp = t.grad_buffer(p).ptr();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + offset + j];
        }
      }
      offset += w;
    }
  });
}

template <typename T>
Var<T> pad_rows(Var<T> a, std::size_t rows) {
  const Tensor<T>& av = a.value();
  if (rows < av.dim(0)) throw ShapeError("pad_rows: cannot shrink " + shape_str(av.shape()));
  if (rows == av.dim(0)) return a;
  Shape shape = av.shape();
  shape[0] = rows;
  Tensor<T> out(shape, T(0));
  std::copy_n(av.ptr(), av.size(), out.ptr());
  const std::size_t used = av.size();
  return a.tape->record("pad_rows", std::move(out), {a}, [a, used](Tape<T>& t, const Tensor<T>& g) {
    T* ga = t.grad_buffer(a).ptr();
    for (std::size_t i = 0; i < used; ++i) ga[i] += g[i];
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T total = 0;
  for (T v : a.value().data()) total += v;
  return a.tape->record("sum", Tensor<T>::scalar(total), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    T* ga = t.grad_buffer(a).ptr();
    for (std::size_t i = 0; i < a.value().size(); ++i) ga[i] += g[0];
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / T(a.value().size()));
}

template <typename T>
Var<T> row_norms(Var<T> a) {
  const Tensor<T>& av = a.value();
  require_rank2("row_norms", av.shape());
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor<T> out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) s += av[i * n + j] * av[i * n + j];
    out[i] = std::sqrt(s);
  }
  const auto out_id = static_cast<std::uint32_t>(a.tape->node_count());
  return a.tape->record("row_norms", std::move(out), {a}, [a, out_id, m, n](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& norms = t.value(out_id);
    const T* x = a.value().ptr();
    T* ga = t.grad_buffer(a).ptr();
    for (std::size_t i = 0; i < m; ++i) {
      if (norms[i] == T(0)) continue;
      const T k = g[i] / norms[i];
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += k * x[i * n + j];
    }
  });
}

template <typename T>
Var<T> row_cosine(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank2("row_cosine", av.shape());
  require_same_shape("row_cosine", av.shape(), bv.shape());
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor<T> out(Shape{m});
  std::vector<T> na(m), nb(m);
  for (std::size_t i = 0; i < m; ++i) {
    T dot = 0, sa = 0, sb = 0;
    for (std::size_t j = 0; j < n; ++j) {
      dot += av[i * n + j] * bv[i * n + j];
      sa += av[i * n + j] * av[i * n + j];
      sb += bv[i * n + j] * bv[i * n + j];
    }
    na[i] = std::sqrt(sa);
    nb[i] = std::sqrt(sb);
    if (na[i] == T(0) || nb[i] == T(0)) throw std::domain_error("row_cosine: zero-length row " + std::to_string(i));
    out[i] = dot / (na[i] * nb[i]);
  }
  const auto out_id = static_cast<std::uint32_t>(a.tape->node_count());
  return a.tape->record("row_cosine", std::move(out), {a, b},
                        [a, b, out_id, m, n, na = std::move(na), nb = std::move(nb)](Tape<T>& t, const Tensor<T>& g) {
                          const Tensor<T>& c = t.value(out_id);
                          const T* x = a.value().ptr();
                          const T* y = b.value().ptr();
                          T* ga = t.requires_grad(a) ? t.grad_buffer(a).ptr() : nullptr;
                          T* gb = t.requires_grad(b) ? t.grad_buffer(b).ptr() : nullptr;
                          for (std::size_t i = 0; i < m; ++i) {
                            const T inv = T(1) / (na[i] * nb[i]);
                            for (std::size_t j = 0; j < n; ++j) {
                              const std::size_t k = i * n + j;
                              if (ga) ga[k] += g[i] * (y[k] * inv - c[i] * x[k] / (na[i] * na[i]));
                              if (gb) gb[k] += g[i] * (x[k] * inv - c[i] * y[k] / (nb[i] * nb[i]));
                            }
                          }
                        });
}

namespace {

template <typename T, typename Cmp>
Var<T> row_extreme(Var<T> a, const char* name, Cmp better) {
  const Tensor<T>& av = a.value();
  require_rank2(name, av.shape());
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor<T> out(Shape{m});
  std::vector<std::size_t> arg(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (better(av[i * n + j], av[i * n + best])) best = j;
    }
    arg[i] = best;
    out[i] = av[i * n + best];
  }
  return a.tape->record(name, std::move(out), {a}, [a, n, arg = std::move(arg)](Tape<T>& t, const Tensor<T>& g) {
    T* ga = t.grad_buffer(a).ptr();
    for (std::size_t i = 0; i < arg.size(); ++i) ga[i * n + arg[i]] += g[i];
  });
}

}  // namespace

template <typename T>
Var<T> row_max(Var<T> a) {
  return row_extreme(a, "row_max", [](T x, T y) { return x > y; });
}

template <typename T>
Var<T> row_min(Var<T> a) {
  return row_extreme(a, "row_min", [](T x, T y) { return x < y; });
}

namespace {

struct ConvGeometry {
  std::size_t c, h, w, o, k, stride, pad, ho, wo;
};

// cols: (C*K*K) x (Ho*Wo)
template <typename T>
Tensor<T> im2col(const T* x, const ConvGeometry& g) {
  Tensor<T> cols(Shape{g.c * g.k * g.k, g.ho * g.wo}, T(0));
  T* dst = cols.ptr();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = dst + ((ch * g.k + ky) * g.k + kx) * g.ho * g.wo;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            row[oy * g.wo + ox] = x[(ch * g.h + iy) * g.w + ix];
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
void col2im_accumulate(const T* cols, T* dx, const ConvGeometry& g) {
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((ch * g.k + ky) * g.k + kx) * g.ho * g.wo;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dx[(ch * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t pad) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(2) != wv.dim(3) || wv.dim(1) != xv.dim(0)) {
    throw ShapeError("conv2d: input " + shape_str(xv.shape()) + " does not fit kernel " + shape_str(wv.shape()));
  }
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  ConvGeometry geo{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(0), wv.dim(2), stride, pad, 0, 0};
  if (geo.h + 2 * pad < geo.k || geo.w + 2 * pad < geo.k) throw ShapeError("conv2d: kernel larger than padded input");
  geo.ho = (geo.h + 2 * pad - geo.k) / stride + 1;
  geo.wo = (geo.w + 2 * pad - geo.k) / stride + 1;
  if (bias.value().size() != geo.o) throw ShapeError("conv2d: bias must have " + std::to_string(geo.o) + " elements");
  Tensor<T> cols = im2col(xv.ptr(), geo);
  const std::size_t ckk = geo.c * geo.k * geo.k, hw = geo.ho * geo.wo;
  Tensor<T> out(Shape{geo.o, geo.ho, geo.wo});
  for (std::size_t o = 0; o < geo.o; ++o) std::fill_n(out.ptr() + o * hw, hw, bias.value()[o]);
  gemm_accumulate(wv.ptr(), cols.ptr(), out.ptr(), geo.o, ckk, hw);
  return x.tape->record("conv2d", std::move(out), {x, w, bias},
                        [x, w, bias, geo, ckk, hw, cols = std::move(cols)](Tape<T>& t, const Tensor<T>& g) {
                          if (t.requires_grad(w)) {
                            Tensor<T> colst = transpose2d(cols);
                            gemm_accumulate(g.ptr(), colst.ptr(), t.grad_buffer(w).ptr(), geo.o, hw, ckk);
                          }
                          if (t.requires_grad(bias)) {
                            T* gb = t.grad_buffer(bias).ptr();
                            for (std::size_t o = 0; o < geo.o; ++o) {
                              for (std::size_t i = 0; i < hw; ++i) gb[o] += g[o * hw + i];
                            }
                          }
                          if (t.requires_grad(x)) {
                            Tensor<T> wt = transpose2d(w.value().reshaped(Shape{geo.o, ckk}));
                            Tensor<T> dcols(Shape{ckk, hw}, T(0));
                            gemm_accumulate(wt.ptr(), g.ptr(), dcols.ptr(), ckk, geo.o, hw);
                            col2im_accumulate(dcols.ptr(), t.grad_buffer(x).ptr(), geo);
                          }
                        });
}

template <typename T>
Var<T> upsample2x(Var<T> x) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 3) throw ShapeError("upsample2x: expected C x H x W, got " + shape_str(xv.shape()));
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  Tensor<T> out(Shape{c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) {
        out[(ch * 2 * h + y) * 2 * w + xx] = xv[(ch * h + y / 2) * w + xx / 2];
      }
    }
  }
  return x.tape->record("upsample2x", std::move(out), {x}, [x, c, h, w](Tape<T>& t, const Tensor<T>& g) {
    T* gx = t.grad_buffer(x).ptr();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < 2 * h; ++y) {
        for (std::size_t xx = 0; xx < 2 * w; ++xx) {
          gx[(ch * h + y / 2) * w + xx / 2] += g[(ch * 2 * h + y) * 2 * w + xx];
        }
      }
    }
  });
}

#define ETAP_INSTANTIATE_OPS(T)                                                                   \
  template void gemm_accumulate<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t); \
  template Tensor<T> transpose2d<T>(const Tensor<T>&);                                           \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                     \
  template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                                             \
  template Var<T> map<T>(MapKind, Var<T>);                                                       \
  template Var<T> map<T>(MapKind, Var<T>, Var<T>);                                               \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                                    \
  template Var<T> scale<T>(Var<T>, T);                                                           \
  template Var<T> square<T>(Var<T>);                                                             \
  template Var<T> abs<T>(Var<T>);                                                                \
  template Var<T> softmax<T>(Var<T>, std::size_t);                                               \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                      \
  template Var<T> transpose<T>(Var<T>);                                                          \
  template Var<T> reshape<T>(Var<T>, Shape);                                                     \
  template Var<T> slice_rows<T>(Var<T>, std::size_t, std::size_t);                               \
  template Var<T> slice_cols<T>(Var<T>, std::size_t, std::size_t);                               \
  template Var<T> gather_rows<T>(Var<T>, const std::vector<std::size_t>&);                       \
  template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                                    \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                                    \
  template Var<T> pad_rows<T>(Var<T>, std::size_t);                                              \
  template Var<T> sum<T>(Var<T>);                                                                \
  template Var<T> mean<T>(Var<T>);                                                               \
  template Var<T> row_norms<T>(Var<T>);                                                          \
  template Var<T> row_cosine<T>(Var<T>, Var<T>);                                                 \
  template Var<T> row_max<T>(Var<T>);                                                            \
  template Var<T> row_min<T>(Var<T>);                                                            \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);                   \
  template Var<T> upsample2x<T>(Var<T>);

ETAP_INSTANTIATE_OPS(float)
ETAP_INSTANTIATE_OPS(double)
ETAP_INSTANTIATE_OPS(long double)

}  // namespace etap
