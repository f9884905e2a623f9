#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "etap/tape.hpp"

// Differentiable primitives. Every function records one node on the tape of
// its first operand and registers the analytic adjoint.

namespace etap {

enum class MapKind { kAdd, kSub, kMul, kSigmoid, kTanh, kRelu, kGelu };

MapKind parse_map_kind(std::string_view name);

/// Dense kernels shared by ops and models. C (m x n) += A (m x k) * B (k x n).
template <typename T>
void gemm_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a);

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// x (m x k) * w (k x n) + bias (n), bias broadcast over rows.
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> bias);

template <typename T> Var<T> map(MapKind kind, Var<T> a);
template <typename T> Var<T> map(MapKind kind, Var<T> a, Var<T> b);

template <typename T> Var<T> add(Var<T> a, Var<T> b) { return map(MapKind::kAdd, a, b); }
template <typename T> Var<T> sub(Var<T> a, Var<T> b) { return map(MapKind::kSub, a, b); }
template <typename T> Var<T> mul(Var<T> a, Var<T> b) { return map(MapKind::kMul, a, b); }
template <typename T> Var<T> sigmoid(Var<T> a) { return map(MapKind::kSigmoid, a); }
template <typename T> Var<T> tanh(Var<T> a) { return map(MapKind::kTanh, a); }
template <typename T> Var<T> relu(Var<T> a) { return map(MapKind::kRelu, a); }
/// Exact (erf-based) GELU.
template <typename T> Var<T> gelu(Var<T> a) { return map(MapKind::kGelu, a); }

/// a (m x n) + row (n) broadcast over rows.
template <typename T> Var<T> add_row(Var<T> a, Var<T> row);
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> square(Var<T> a);
template <typename T> Var<T> abs(Var<T> a);

/// Max-subtracted softmax along `axis`.
template <typename T> Var<T> softmax(Var<T> a, std::size_t axis);
/// Normalizes each row over the last axis, then applies gamma/beta.
template <typename T> Var<T> layer_norm(Var<T> a, Var<T> gamma, Var<T> beta, T eps);

template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> reshape(Var<T> a, Shape shape);
/// Rows [begin, end) along axis 0.
template <typename T> Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end);
/// Columns [begin, end) of a rank-2 tensor.
template <typename T> Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end);
/// Row selection (duplicates allowed) along axis 0.
template <typename T> Var<T> gather_rows(Var<T> a, const std::vector<std::size_t>& rows);
/// Concatenation along axis 0 (all trailing extents equal).
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
/// Concatenation of rank-2 tensors along axis 1.
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
/// Appends zero rows so axis 0 reaches `rows`.
template <typename T> Var<T> pad_rows(Var<T> a, std::size_t rows);

template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
/// Euclidean norm of every row of a rank-2 tensor; zero rows get zero gradient.
template <typename T> Var<T> row_norms(Var<T> a);
/// Cosine similarity of matching rows; rows must be non-zero.
template <typename T> Var<T> row_cosine(Var<T> a, Var<T> b);
/// Per-row maximum / minimum of a rank-2 tensor (gradient to first arg-extremum).
template <typename T> Var<T> row_max(Var<T> a);
template <typename T> Var<T> row_min(Var<T> a);

/// 2D cross-correlation. x: C x H x W, w: O x C x K x K, bias: O.
template <typename T> Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t pad);
/// Nearest-neighbour 2x upsampling of C x H x W.
template <typename T> Var<T> upsample2x(Var<T> x);

}  // namespace etap
