#include "vclip/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vclip/errors.hpp"
#include "vclip/numerics/kernels.hpp"

namespace vclip::ops {
namespace {

template <typename T>
void require_same_numel(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.numel() != b.numel()) {
    throw ShapeError(std::string(op) + ": " + shape_string(a.dims()) + " vs " +
                     shape_string(b.dims()));
  }
}

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
  if (a.rank() < 1 || a.rank() > 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(a.dims()));
  }
}

}  // namespace

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require_same_numel(av, bv, "add");
  Tensor<T> out(av.dims());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& dy) {
    g.accumulate(a, dy);
    g.accumulate(b, dy);
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require_same_numel(av, bv, "mul");
  Tensor<T> out(av.dims());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& dy) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    if (g.requires_grad(a)) {
      auto& da = g.grad_ref(a);
      for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      auto& db = g.grad_ref(b);
      for (std::size_t i = 0; i < dy.numel(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

template <typename T>
Var scale(Graph<T>& g, Var a, T factor) {
  const auto& av = g.value(a);
  Tensor<T> out(av.dims());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * factor;
  return g.record(std::move(out), {a}, [a, factor](Graph<T>& g, const Tensor<T>& dy) {
    auto& da = g.grad_ref(a);
    for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * factor;
  });
}

template <typename T>
Var add_bias(Graph<T>& g, Var x, Var bias) {
  const auto& xv = g.value(x);
  const auto& bv = g.value(bias);
  require_matrix(xv, "add_bias");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (bv.numel() != cols) {
    throw ShapeError("add_bias: bias " + shape_string(bv.dims()) + " for input " +
                     shape_string(xv.dims()));
  }
  Tensor<T> out(xv.dims());
  const T* xp = xv.data();
  const T* bp = bv.data();
  T* op = out.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) op[r * cols + c] = xp[r * cols + c] + bp[c];
  return g.record(std::move(out), {x, bias},
                  [x, bias, rows, cols](Graph<T>& g, const Tensor<T>& dy) {
                    g.accumulate(x, dy);
                    if (g.requires_grad(bias)) {
                      T* db = g.grad_ref(bias).data();
                      const T* dp = dy.data();
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) db[c] += dp[r * cols + c];
                    }
                  });
}

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b, bool trans_b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols();
  const std::size_t bk = trans_b ? bv.cols() : bv.rows();
  const std::size_t n = trans_b ? bv.rows() : bv.cols();
  if (k != bk) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(av.dims()) + " x " +
                     shape_string(bv.dims()) + (trans_b ? "^T" : ""));
  }
  Tensor<T> out = Tensor<T>::matrix(m, n);
  kernels::gemm(false, trans_b, m, n, k, av.data(), bv.data(), out.data(), false);
  return g.record(std::move(out), {a, b},
                  [a, b, m, n, k, trans_b](Graph<T>& g, const Tensor<T>& dy) {
                    const auto& av = g.value(a);
                    const auto& bv = g.value(b);
                    if (g.requires_grad(a)) {
                      // dA = dY * op(B)^T
                      auto& da = g.grad_ref(a);
                      kernels::gemm(false, !trans_b, m, k, n, dy.data(), bv.data(), da.data(), true);
                    }
                    if (g.requires_grad(b)) {
                      auto& db = g.grad_ref(b);
                      if (trans_b) {
                        // B is n x k: dB = dY^T * A
                        kernels::gemm(true, false, n, k, m, dy.data(), av.data(), db.data(), true);
                      } else {
                        // dB = A^T * dY
                        kernels::gemm(true, false, k, n, m, av.data(), dy.data(), db.data(), true);
                      }
                    }
                  });
}

template <typename T>
Var transpose(Graph<T>& g, Var a) {
  const auto& av = g.value(a);
  require_matrix(av, "transpose");
  const std::size_t r = av.rows(), c = av.cols();
  Tensor<T> out = Tensor<T>::matrix(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  return g.record(std::move(out), {a}, [a, r, c](Graph<T>& g, const Tensor<T>& dy) {
    auto& da = g.grad_ref(a);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) da[i * c + j] += dy.at(j, i);
  });
}

template <typename T>
Var gelu(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  Tensor<T> out(xv.dims());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  const bool keep = g.requires_grad(x);
  std::vector<T> cdf(keep ? out.numel() : 0);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T phi = T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
    out[i] = xv[i] * phi;
    if (keep) cdf[i] = phi;
  }
  return g.record(std::move(out), {x},
                  [x, inv_sqrt2, cdf = std::move(cdf)](Graph<T>& g, const Tensor<T>& dy) {
                    const auto& xv = g.value(x);
                    auto& dx = g.grad_ref(x);
                    const T inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
                    for (std::size_t i = 0; i < dy.numel(); ++i) {
                      const T v = xv[i];
                      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
                      dx[i] += dy[i] * (cdf[i] + v * pdf);
                    }
                  });
}

template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps) {
  const auto& xv = g.value(x);
  require_matrix(xv, "layer_norm");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (g.value(gamma).numel() != cols || g.value(beta).numel() != cols) {
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(cols) + " elements");
  }
  const auto& gv = g.value(gamma);
  const auto& bv = g.value(beta);
  Tensor<T> out(xv.dims());
  std::vector<T> x_hat(xv.numel());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * cols;
    T mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += row[c];
    mean /= T(cols);
    T var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= T(cols);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (row[c] - mean) * rstd[r];
      x_hat[r * cols + c] = h;
      out.at(r, c) = h * gv[c] + bv[c];
    }
  }
  return g.record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, rows, cols, x_hat = std::move(x_hat), rstd = std::move(rstd)](
          Graph<T>& g, const Tensor<T>& dy) {
        const auto& gv = g.value(gamma);
        if (g.requires_grad(gamma)) {
          auto& dg = g.grad_ref(gamma);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) dg[c] += dy.at(r, c) * x_hat[r * cols + c];
        }
        if (g.requires_grad(beta)) {
          auto& db = g.grad_ref(beta);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) db[c] += dy.at(r, c);
        }
        if (!g.requires_grad(x)) return;
        auto& dx = g.grad_ref(x);
        std::vector<T> dxh(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_d = 0, mean_dx = 0;
          for (std::size_t c = 0; c < cols; ++c) {
            dxh[c] = dy.at(r, c) * gv[c];
            mean_d += dxh[c];
            mean_dx += dxh[c] * x_hat[r * cols + c];
          }
          mean_d /= T(cols);
          mean_dx /= T(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            dx.at(r, c) += rstd[r] * (dxh[c] - mean_d - x_hat[r * cols + c] * mean_dx);
          }
        }
      });
}

template <typename T>
Var softmax_rows(Graph<T>& g, Var x, T temperature) {
  if (!(temperature > T(0))) throw ConfigError("softmax temperature must be positive");
  const auto& xv = g.value(x);
  require_matrix(xv, "softmax_rows");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor<T> out(xv.dims());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * cols;
    T* o = out.data() + r * cols;
    T mx = in[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp((in[c] - mx) / temperature);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  const Var y = g.next_var();
  return g.record(std::move(out), {x}, [x, y, rows, cols, temperature](Graph<T>& g,
                                                                      const Tensor<T>& dy) {
    const auto& p = g.value(y);
    auto& dx = g.grad_ref(x);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy.at(r, c) * p.at(r, c);
      for (std::size_t c = 0; c < cols; ++c)
        dx.at(r, c) += p.at(r, c) * (dy.at(r, c) - dot) / temperature;
    }
  });
}

template <typename T>
Var log_softmax_rows(Graph<T>& g, Var x, T temperature) {
  if (!(temperature > T(0))) throw ConfigError("softmax temperature must be positive");
  const auto& xv = g.value(x);
  require_matrix(xv, "log_softmax_rows");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor<T> out(xv.dims());
  std::vector<T> probs(xv.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * cols;
    T mx = in[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp((in[c] - mx) / temperature);
    const T lse = std::log(total);
    for (std::size_t c = 0; c < cols; ++c) {
      const T v = (in[c] - mx) / temperature - lse;
      out.at(r, c) = v;
      probs[r * cols + c] = std::exp(v);
    }
  }
  return g.record(std::move(out), {x},
                  [x, rows, cols, temperature, probs = std::move(probs)](Graph<T>& g,
                                                                         const Tensor<T>& dy) {
                    auto& dx = g.grad_ref(x);
                    for (std::size_t r = 0; r < rows; ++r) {
                      T total = 0;
                      for (std::size_t c = 0; c < cols; ++c) total += dy.at(r, c);
                      for (std::size_t c = 0; c < cols; ++c)
                        dx.at(r, c) += (dy.at(r, c) - probs[r * cols + c] * total) / temperature;
                    }
                  });
}

template <typename T>
Var l2_normalize_rows(Graph<T>& g, Var x, T eps) {
  const auto& xv = g.value(x);
  require_matrix(xv, "l2_normalize_rows");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor<T> out(xv.dims());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = 0;
    for (std::size_t c = 0; c < cols; ++c) ss += xv.at(r, c) * xv.at(r, c);
    norms[r] = std::max(std::sqrt(ss), eps);
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = xv.at(r, c) / norms[r];
  }
  const Var y = g.next_var();
  return g.record(std::move(out), {x},
                  [x, y, rows, cols, norms = std::move(norms)](Graph<T>& g, const Tensor<T>& dy) {
                    const auto& yv = g.value(y);
                    auto& dx = g.grad_ref(x);
                    for (std::size_t r = 0; r < rows; ++r) {
                      T dot = 0;
                      for (std::size_t c = 0; c < cols; ++c) dot += dy.at(r, c) * yv.at(r, c);
                      for (std::size_t c = 0; c < cols; ++c)
                        dx.at(r, c) += (dy.at(r, c) - yv.at(r, c) * dot) / norms[r];
                    }
                  });
}

template <typename T>
Var gather_rows(Graph<T>& g, Var x, std::vector<std::size_t> rows) {
  const auto& xv = g.value(x);
  require_matrix(xv, "gather_rows");
  const std::size_t cols = xv.cols();
  if (rows.empty()) throw ShapeError("gather_rows: empty row list");
  Tensor<T> out = Tensor<T>::matrix(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of " +
                       std::to_string(xv.rows()));
    }
    std::copy_n(xv.data() + rows[i] * cols, cols, out.data() + i * cols);
  }
  return g.record(std::move(out), {x},
                  [x, cols, rows = std::move(rows)](Graph<T>& g, const Tensor<T>& dy) {
                    auto& dx = g.grad_ref(x);
                    for (std::size_t i = 0; i < rows.size(); ++i) {
                      T* dst = dx.data() + rows[i] * cols;
                      const T* src = dy.data() + i * cols;
                      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                    }
                  });
}

template <typename T>
Var embedding_lookup(Graph<T>& g, Var table, std::span<const int> ids) {
  const std::size_t vocab = g.value(table).rows();
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    rows.push_back(static_cast<std::size_t>(id));
  }
  return gather_rows(g, table, std::move(rows));
}

template <typename T>
Var concat_rows(Graph<T>& g, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = g.value(parts[0]).cols();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    const auto& pv = g.value(p);
    if (pv.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    offsets.push_back(total);
    total += pv.rows();
  }
  Tensor<T> out = Tensor<T>::matrix(total, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& pv = g.value(parts[i]);
    std::copy(pv.data(), pv.data() + pv.numel(), out.data() + offsets[i] * cols);
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  return g.record(std::move(out), std::span<const Var>(owned),
                  [owned, offsets = std::move(offsets), cols](Graph<T>& g, const Tensor<T>& dy) {
                    for (std::size_t i = 0; i < owned.size(); ++i) {
                      if (!g.requires_grad(owned[i])) continue;
                      auto& dp = g.grad_ref(owned[i]);
                      const T* src = dy.data() + offsets[i] * cols;
                      for (std::size_t j = 0; j < dp.numel(); ++j) dp[j] += src[j];
                    }
                  });
}

template <typename T>
Var slice_rows(Graph<T>& g, Var x, std::size_t begin, std::size_t count) {
  const auto& xv = g.value(x);
  require_matrix(xv, "slice_rows");
  if (count == 0 || begin + count > xv.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") outside " + shape_string(xv.dims()));
  }
  const std::size_t cols = xv.cols();
  Tensor<T> out = Tensor<T>::matrix(count, cols);
  std::copy_n(xv.data() + begin * cols, count * cols, out.data());
  return g.record(std::move(out), {x}, [x, begin, cols](Graph<T>& g, const Tensor<T>& dy) {
    auto& dx = g.grad_ref(x);
    T* dst = dx.data() + begin * cols;
    for (std::size_t i = 0; i < dy.numel(); ++i) dst[i] += dy[i];
  });
}

template <typename T>
Var mean_rows(Graph<T>& g, Var x) {
  const RowRange all{0, g.value(x).rows()};
  return segment_mean_rows(g, x, std::span<const RowRange>(&all, 1));
}

template <typename T>
Var segment_mean_rows(Graph<T>& g, Var x, std::span<const RowRange> segments) {
  const auto& xv = g.value(x);
  require_matrix(xv, "segment_mean_rows");
  const std::size_t cols = xv.cols();
  std::vector<RowRange> segs(segments.begin(), segments.end());
  if (segs.empty()) throw ShapeError("segment_mean_rows: no segments");
  Tensor<T> out = Tensor<T>::matrix(segs.size(), cols);
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const auto [begin, count] = segs[s];
    if (count == 0 || begin + count > xv.rows()) throw ShapeError("segment_mean_rows: bad segment");
    for (std::size_t r = begin; r < begin + count; ++r)
      for (std::size_t c = 0; c < cols; ++c) out.at(s, c) += xv.at(r, c);
    for (std::size_t c = 0; c < cols; ++c) out.at(s, c) /= T(count);
  }
  return g.record(std::move(out), {x},
                  [x, cols, segs = std::move(segs)](Graph<T>& g, const Tensor<T>& dy) {
                    auto& dx = g.grad_ref(x);
                    for (std::size_t s = 0; s < segs.size(); ++s) {
                      const T inv = T(1) / T(segs[s].count);
                      for (std::size_t r = segs[s].begin; r < segs[s].begin + segs[s].count; ++r)
                        for (std::size_t c = 0; c < cols; ++c) dx.at(r, c) += dy.at(s, c) * inv;
                    }
                  });
}

namespace {

template <typename T>
void copy_block(const Tensor<T>& src, RowRange rows, std::size_t col0, std::size_t width,
                T* dst) {
  const std::size_t cols = src.cols();
  for (std::size_t r = 0; r < rows.count; ++r) {
    std::copy_n(src.data() + (rows.begin + r) * cols + col0, width, dst + r * width);
  }
}

template <typename T>
void add_block(Tensor<T>& dst, RowRange rows, std::size_t col0, std::size_t width, const T* src) {
  const std::size_t cols = dst.cols();
  for (std::size_t r = 0; r < rows.count; ++r) {
    T* d = dst.data() + (rows.begin + r) * cols + col0;
    for (std::size_t c = 0; c < width; ++c) d[c] += src[r * width + c];
  }
}

}  // namespace

template <typename T>
Var segment_attention(Graph<T>& g, Var q, Var k, Var v, std::size_t heads,
                      std::span<const RowRange> segments) {
  const auto& qv = g.value(q);
  const auto& kv = g.value(k);
  const auto& vv = g.value(v);
  require_matrix(qv, "segment_attention");
  if (qv.dims() != kv.dims() || qv.dims() != vv.dims()) {
    throw ShapeError("segment_attention: q, k, v must share dimensions");
  }
  const std::size_t d = qv.cols();
  if (heads == 0 || d % heads != 0) throw ShapeError("segment_attention: d not divisible by heads");
  const std::size_t dh = d / heads;
  const T scale_factor = T(1) / std::sqrt(T(dh));
  std::vector<RowRange> segs(segments.begin(), segments.end());

  Tensor<T> out(qv.dims());
  // Attention probabilities per (segment, head), kept for the backward rule.
  std::vector<std::vector<T>> probs;
  probs.reserve(segs.size() * heads);
  std::vector<T> qh, kh, vh, oh;
  for (const auto& seg : segs) {
    if (seg.count == 0 || seg.begin + seg.count > qv.rows()) {
      throw ShapeError("segment_attention: bad segment");
    }
    const std::size_t len = seg.count;
    qh.resize(len * dh);
    kh.resize(len * dh);
    vh.resize(len * dh);
    oh.resize(len * dh);
    for (std::size_t h = 0; h < heads; ++h) {
      copy_block(qv, seg, h * dh, dh, qh.data());
      copy_block(kv, seg, h * dh, dh, kh.data());
      copy_block(vv, seg, h * dh, dh, vh.data());
      std::vector<T> p(len * len);
      kernels::gemm(false, true, len, len, dh, qh.data(), kh.data(), p.data(), false);
      for (std::size_t i = 0; i < len; ++i) {
        T* row = p.data() + i * len;
        T mx = row[0] * scale_factor;
        for (std::size_t j = 0; j < len; ++j) {
          row[j] *= scale_factor;
          mx = std::max(mx, row[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < len; ++j) {
          row[j] = std::exp(row[j] - mx);
          total += row[j];
        }
        for (std::size_t j = 0; j < len; ++j) row[j] /= total;
      }
      kernels::gemm(false, false, len, dh, len, p.data(), vh.data(), oh.data(), false);
      add_block(out, seg, h * dh, dh, oh.data());
      probs.push_back(std::move(p));
    }
  }
  return g.record(
      std::move(out), {q, k, v},
      [q, k, v, heads, dh, scale_factor, segs = std::move(segs), probs = std::move(probs)](
          Graph<T>& g, const Tensor<T>& dy) {
        const auto& qv = g.value(q);
        const auto& kv = g.value(k);
        const auto& vv = g.value(v);
        const bool need_q = g.requires_grad(q);
        const bool need_k = g.requires_grad(k);
        const bool need_v = g.requires_grad(v);
        std::vector<T> qh, kh, vh, doh, dp, tmp;
        std::size_t idx = 0;
        for (const auto& seg : segs) {
          const std::size_t len = seg.count;
          qh.resize(len * dh);
          kh.resize(len * dh);
          vh.resize(len * dh);
          doh.resize(len * dh);
          dp.resize(len * len);
          tmp.resize(len * dh);
          for (std::size_t h = 0; h < heads; ++h, ++idx) {
            const auto& p = probs[idx];
            copy_block(dy, seg, h * dh, dh, doh.data());
            copy_block(vv, seg, h * dh, dh, vh.data());
            if (need_v) {
              kernels::gemm(true, false, len, dh, len, p.data(), doh.data(), tmp.data(), false);
              add_block(g.grad_ref(v), seg, h * dh, dh, tmp.data());
            }
            if (!need_q && !need_k) continue;
            kernels::gemm(false, true, len, len, dh, doh.data(), vh.data(), dp.data(), false);
            for (std::size_t i = 0; i < len; ++i) {
              const T* pr = p.data() + i * len;
              T* dr = dp.data() + i * len;
              T dot = 0;
              for (std::size_t j = 0; j < len; ++j) dot += dr[j] * pr[j];
              for (std::size_t j = 0; j < len; ++j) dr[j] = pr[j] * (dr[j] - dot) * scale_factor;
            }
            if (need_q) {
              copy_block(kv, seg, h * dh, dh, kh.data());
              kernels::gemm(false, false, len, dh, len, dp.data(), kh.data(), tmp.data(), false);
              add_block(g.grad_ref(q), seg, h * dh, dh, tmp.data());
            }
            if (need_k) {
              copy_block(qv, seg, h * dh, dh, qh.data());
              kernels::gemm(true, false, len, dh, len, dp.data(), qh.data(), tmp.data(), false);
              add_block(g.grad_ref(k), seg, h * dh, dh, tmp.data());
            }
          }
        }
      });
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  T total = 0;
  for (std::size_t i = 0; i < xv.numel(); ++i) total += xv[i];
  return g.record(Tensor<T>(Shape{1}, {total}), {x}, [x](Graph<T>& g, const Tensor<T>& dy) {
    auto& dx = g.grad_ref(x);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += dy[0];
  });
}

template <typename T>
Var trace(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  require_matrix(xv, "trace");
  if (xv.rows() != xv.cols()) throw ShapeError("trace: matrix must be square");
  const std::size_t n = xv.rows();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) total += xv.at(i, i);
  return g.record(Tensor<T>(Shape{1}, {total}), {x}, [x, n](Graph<T>& g, const Tensor<T>& dy) {
    auto& dx = g.grad_ref(x);
    for (std::size_t i = 0; i < n; ++i) dx.at(i, i) += dy[0];
  });
}

template <typename T>
Var stop_gradient(Graph<T>& g, Var x) {
  return g.constant(g.value(x));
}

#define VCLIP_INSTANTIATE_OPS(T)                                                          \
  template Var add<T>(Graph<T>&, Var, Var);                                               \
  template Var mul<T>(Graph<T>&, Var, Var);                                               \
  template Var scale<T>(Graph<T>&, Var, T);                                               \
  template Var add_bias<T>(Graph<T>&, Var, Var);                                          \
  template Var matmul<T>(Graph<T>&, Var, Var, bool);                                      \
  template Var transpose<T>(Graph<T>&, Var);                                              \
  template Var gelu<T>(Graph<T>&, Var);                                                   \
  template Var layer_norm<T>(Graph<T>&, Var, Var, Var, T);                                \
  template Var softmax_rows<T>(Graph<T>&, Var, T);                                        \
  template Var log_softmax_rows<T>(Graph<T>&, Var, T);                                    \
  template Var l2_normalize_rows<T>(Graph<T>&, Var, T);                                   \
  template Var embedding_lookup<T>(Graph<T>&, Var, std::span<const int>);                 \
  template Var gather_rows<T>(Graph<T>&, Var, std::vector<std::size_t>);                  \
  template Var concat_rows<T>(Graph<T>&, std::span<const Var>);                           \
  template Var slice_rows<T>(Graph<T>&, Var, std::size_t, std::size_t);                   \
  template Var mean_rows<T>(Graph<T>&, Var);                                              \
  template Var segment_mean_rows<T>(Graph<T>&, Var, std::span<const RowRange>);           \
  template Var segment_attention<T>(Graph<T>&, Var, Var, Var, std::size_t,                \
                                    std::span<const RowRange>);                           \
  template Var sum<T>(Graph<T>&, Var);                                                    \
  template Var trace<T>(Graph<T>&, Var);                                                  \
  template Var stop_gradient<T>(Graph<T>&, Var);

VCLIP_INSTANTIATE_OPS(float)
VCLIP_INSTANTIATE_OPS(double)

}  // namespace vclip::ops
