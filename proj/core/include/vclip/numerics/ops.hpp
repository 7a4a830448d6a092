#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vclip/numerics/graph.hpp"

namespace vclip {

/// Contiguous run of rows [begin, begin + count) inside a packed matrix.
struct RowRange {
  std::size_t begin = 0;
  std::size_t count = 0;
};

namespace ops {

// Elementwise. Operands must have the same number of elements.
template <typename T> Var add(Graph<T>& g, Var a, Var b);
template <typename T> Var mul(Graph<T>& g, Var a, Var b);
template <typename T> Var scale(Graph<T>& g, Var a, T factor);
/// x[r, :] + bias for every row; bias has cols(x) elements.
template <typename T> Var add_bias(Graph<T>& g, Var x, Var bias);

/// a * b, or a * b^T when trans_b is set.
template <typename T> Var matmul(Graph<T>& g, Var a, Var b, bool trans_b = false);
template <typename T> Var transpose(Graph<T>& g, Var a);

/// Exact GELU, x * Phi(x).
template <typename T> Var gelu(Graph<T>& g, Var x);
/// Per-row normalization followed by gamma * x_hat + beta.
template <typename T> Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps = T(1e-5));
/// Row-wise softmax(x / temperature), stabilized by max subtraction.
template <typename T> Var softmax_rows(Graph<T>& g, Var x, T temperature);
template <typename T> Var log_softmax_rows(Graph<T>& g, Var x, T temperature);
template <typename T> Var l2_normalize_rows(Graph<T>& g, Var x, T eps = T(1e-12));

/// Rows of `table` selected by `ids`. Throws InputError for ids outside [0, rows(table)).
template <typename T> Var embedding_lookup(Graph<T>& g, Var table, std::span<const int> ids);
template <typename T> Var gather_rows(Graph<T>& g, Var x, std::vector<std::size_t> rows);
template <typename T> Var concat_rows(Graph<T>& g, std::span<const Var> parts);
template <typename T> Var slice_rows(Graph<T>& g, Var x, std::size_t begin, std::size_t count);

/// Mean over rows: [R, C] -> [1, C].
template <typename T> Var mean_rows(Graph<T>& g, Var x);
/// One mean row per segment: [R, C] -> [S, C].
template <typename T> Var segment_mean_rows(Graph<T>& g, Var x, std::span<const RowRange> segments);

/// Multi-head scaled dot-product attention applied independently inside each
/// segment of a packed [R, d] batch (block-diagonal attention).
template <typename T>
Var segment_attention(Graph<T>& g, Var q, Var k, Var v, std::size_t heads,
                      std::span<const RowRange> segments);

template <typename T> Var sum(Graph<T>& g, Var x);
/// Sum of the diagonal of a square matrix, as a [1] tensor.
template <typename T> Var trace(Graph<T>& g, Var x);
/// Identity forward, zero gradient backward.
template <typename T> Var stop_gradient(Graph<T>& g, Var x);

}  // namespace ops
}  // namespace vclip
