#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "lfb/tape.hpp"
#include "lfb/tensor.hpp"

namespace lfb {

/// Visibility mask; nonzero entries are visible. Row-major m*n for a full
/// attention mask, length n for a per-key mask.
using Mask = std::vector<std::uint8_t>;

/// Additive logit for masked positions. Large enough that exp() underflows
/// to exactly zero after row-max subtraction, small enough to stay finite.
inline constexpr double kMaskedLogit = -1e30;

inline std::size_t mask_count(const Mask& mask) {
  std::size_t n = 0;
  for (auto v : mask) n += v ? 1 : 0;
  return n;
}

/// Expands a per-key mask (length n) to a full m x n attention mask.
inline Mask tile_key_mask(const Mask& key_mask, std::size_t m) {
  Mask full(m * key_mask.size());
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(key_mask.begin(), key_mask.end(),
              full.begin() + static_cast<std::ptrdiff_t>(i * key_mask.size()));
  }
  return full;
}

namespace detail {

template <typename T>
void require_rank2(const TensorT<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 operand, got " +
                     shape_str(t.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Kernels: plain-tensor forward / backward pairs.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  TensorT<T> c(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a.at(i, p);
      if (aip == T(0)) continue;
      for (std::size_t j = 0; j < n; ++j) {
        c.at(i, j) += aip * b.at(p, j);
      }
    }
  }
  check_finite(c, "matmul");
  return c;
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& x) {
  detail::require_rank2(x, "transpose");
  TensorT<T> y(Shape{x.cols(), x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      y.at(j, i) = x.at(i, j);
    }
  }
  return y;
}

/// dA = dC Bt, dB = At dC.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> matmul_backward(const TensorT<T>& a,
                                                  const TensorT<T>& b,
                                                  const TensorT<T>& dc) {
  return {matmul(dc, transpose(b)), matmul(transpose(a), dc)};
}

/// Row-wise softmax with optional full mask (nonzero = visible). Masked
/// entries receive kMaskedLogit before the shifted exp and are zeroed in the
/// output. A row with no visible entry has no defined distribution and is an
/// error; block-level callers decide about empty key sets before getting here.
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& x, const Mask* mask = nullptr) {
  detail::require_rank2(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (mask && mask->size() != m * n) {
    throw ShapeError("softmax_rows: mask size " + std::to_string(mask->size()) +
                     " for " + shape_str(x.shape()));
  }
  TensorT<T> y(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T row_max = -std::numeric_limits<T>::infinity();
    std::size_t visible = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask || (*mask)[i * n + j]) {
        row_max = std::max(row_max, x.at(i, j));
        ++visible;
      }
    }
    if (visible == 0) {
      throw ValueError("softmax_rows: fully masked row " + std::to_string(i));
    }
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const bool vis = !mask || (*mask)[i * n + j];
      const T z = vis ? x.at(i, j) : x.at(i, j) + T(kMaskedLogit);
      const T e = std::exp(z - row_max);
      y.at(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < n; ++j) {
      const bool vis = !mask || (*mask)[i * n + j];
      y.at(i, j) = vis ? y.at(i, j) / sum : T(0);
    }
  }
  check_finite(y, "softmax_rows");
  return y;
}

/// dX_ij = y_ij (dY_ij - sum_k dY_ik y_ik); masked positions get zero.
template <typename T>
TensorT<T> softmax_rows_backward(const TensorT<T>& y, const TensorT<T>& dy,
                                 const Mask* mask = nullptr) {
  const std::size_t m = y.rows(), n = y.cols();
  TensorT<T> dx(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T dot = T(0);
    for (std::size_t j = 0; j < n; ++j) dot += dy.at(i, j) * y.at(i, j);
    for (std::size_t j = 0; j < n; ++j) {
      const bool vis = !mask || (*mask)[i * n + j];
      dx.at(i, j) = vis ? y.at(i, j) * (dy.at(i, j) - dot) : T(0);
    }
  }
  return dx;
}

/// Per-row normalization with learned per-column gain/shift; biased variance.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps = T(1e-5)) {
  detail::require_rank2(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.rank() != 1 || gamma.size() != n || beta.rank() != 1 ||
      beta.size() != n) {
    throw ShapeError("layer_norm: gain/shift must be length-" +
                     std::to_string(n) + " vectors");
  }
  TensorT<T> y(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T mean = T(0);
    for (std::size_t j = 0; j < n; ++j) mean += x.at(i, j);
    mean /= T(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= T(n);
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      y.at(i, j) = gamma.at(j) * (x.at(i, j) - mean) * inv + beta.at(j);
    }
  }
  check_finite(y, "layer_norm");
  return y;
}

template <typename T>
struct LayerNormGrads {
  TensorT<T> dx;
  TensorT<T> dgamma;
  TensorT<T> dbeta;
};

template <typename T>
LayerNormGrads<T> layer_norm_backward(const TensorT<T>& x,
                                      const TensorT<T>& gamma,
                                      const TensorT<T>& dy, T eps = T(1e-5)) {
  const std::size_t m = x.rows(), n = x.cols();
  LayerNormGrads<T> g{TensorT<T>(Shape{m, n}), TensorT<T>(Shape{n}),
                      TensorT<T>(Shape{n})};
  std::vector<T> xhat(n), dxhat(n);
  for (std::size_t i = 0; i < m; ++i) {
    T mean = T(0);
    for (std::size_t j = 0; j < n; ++j) mean += x.at(i, j);
    mean /= T(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= T(n);
    const T inv = T(1) / std::sqrt(var + eps);
    T m1 = T(0), m2 = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[j] = (x.at(i, j) - mean) * inv;
      dxhat[j] = dy.at(i, j) * gamma.at(j);
      m1 += dxhat[j];
      m2 += dxhat[j] * xhat[j];
      g.dgamma.at(j) += dy.at(i, j) * xhat[j];
      g.dbeta.at(j) += dy.at(i, j);
    }
    m1 /= T(n);
    m2 /= T(n);
    for (std::size_t j = 0; j < n; ++j) {
      g.dx.at(i, j) = (dxhat[j] - m1 - xhat[j] * m2) * inv;
    }
  }
  return g;
}

/// Y = X W + b, bias broadcast over rows. Pass an empty bias for a bias-free
/// projection.
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w,
                  const TensorT<T>& b) {
  TensorT<T> y = matmul(x, w);
  if (!b.empty()) {
    if (b.rank() != 1 || b.size() != y.cols()) {
      throw ShapeError("linear: bias must be a length-" +
                       std::to_string(y.cols()) + " vector");
    }
    for (std::size_t i = 0; i < y.rows(); ++i) {
      for (std::size_t j = 0; j < y.cols(); ++j) y.at(i, j) += b.at(j);
    }
    check_finite(y, "linear");
  }
  return y;
}

template <typename T>
struct LinearGrads {
  TensorT<T> dx;
  TensorT<T> dw;
  TensorT<T> db;  // empty when the layer has no bias
};

template <typename T>
LinearGrads<T> linear_backward(const TensorT<T>& x, const TensorT<T>& w,
                               const TensorT<T>& dy, bool has_bias = true) {
  auto [dx, dw] = matmul_backward(x, w, dy);
  LinearGrads<T> g{std::move(dx), std::move(dw), {}};
  if (has_bias) {
    g.db = TensorT<T>(Shape{dy.cols()});
    for (std::size_t i = 0; i < dy.rows(); ++i) {
      for (std::size_t j = 0; j < dy.cols(); ++j) g.db.at(j) += dy.at(i, j);
    }
  }
  return g;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> y = x;
  for (T& v : y.data()) v = std::max(v, T(0));
  return y;
}

/// Subgradient 0 at the kink.
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& dy) {
  TensorT<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    dx.at(i) = x.at(i) > T(0) ? dy.at(i) : T(0);
  }
  return dx;
}

/// Inverted dropout: kept entries are rescaled by 1/(1-rate) so eval needs no
/// correction. Eval mode and rate 0 are exact identities (no draws consumed).
/// Returns the kept-entry mask for the backward pass.
template <typename T>
std::pair<TensorT<T>, Mask> dropout_forward(const TensorT<T>& x, T rate,
                                            RngStream& rng, bool training) {
  if (!(rate >= T(0) && rate < T(1))) {
    throw ValueError("dropout: rate must be in [0, 1)");
  }
  if (!training || rate == T(0)) {
    return {x, Mask(x.size(), 1)};
  }
  TensorT<T> y(x.shape());
  Mask keep(x.size());
  const T inv_keep = T(1) / (T(1) - rate);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool kept = rng.next_double() >= static_cast<double>(rate);
    keep[i] = kept ? 1 : 0;
    y.at(i) = kept ? x.at(i) * inv_keep : T(0);
  }
  return {std::move(y), std::move(keep)};
}

template <typename T>
TensorT<T> dropout_backward(const TensorT<T>& dy, const Mask& keep, T rate,
                            bool training) {
  if (!training || rate == T(0)) return dy;
  TensorT<T> dx(dy.shape());
  const T inv_keep = T(1) / (T(1) - rate);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    dx.at(i) = keep[i] ? dy.at(i) * inv_keep : T(0);
  }
  return dx;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T factor) {
  TensorT<T> y = x;
  for (T& v : y.data()) v *= factor;
  check_finite(y, "scale");
  return y;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("add: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  TensorT<T> c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.at(i) += b.at(i);
  check_finite(c, "add");
  return c;
}

/// Elementwise product.
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("mul: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  TensorT<T> c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.at(i) *= b.at(i);
  check_finite(c, "mul");
  return c;
}

/// [A | B] along columns; row counts must match.
template <typename T>
TensorT<T> concat_cols(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_rank2(a, "concat_cols");
  detail::require_rank2(b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  TensorT<T> c(Shape{a.rows(), a.cols() + b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) c.at(i, j) = a.at(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) {
      c.at(i, a.cols() + j) = b.at(i, j);
    }
  }
  return c;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_cols(const TensorT<T>& c,
                                             std::size_t left_cols) {
  TensorT<T> a(Shape{c.rows(), left_cols});
  TensorT<T> b(Shape{c.rows(), c.cols() - left_cols});
  for (std::size_t i = 0; i < c.rows(); ++i) {
    for (std::size_t j = 0; j < left_cols; ++j) a.at(i, j) = c.at(i, j);
    for (std::size_t j = left_cols; j < c.cols(); ++j) {
      b.at(i, j - left_cols) = c.at(i, j);
    }
  }
  return {std::move(a), std::move(b)};
}

/// [A; B] along rows; column counts must match.
template <typename T>
TensorT<T> concat_rows(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_rank2(a, "concat_rows");
  detail::require_rank2(b, "concat_rows");
  if (a.cols() != b.cols()) {
    throw ShapeError("concat_rows: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  TensorT<T> c(Shape{a.rows() + b.rows(), a.cols()});
  std::copy(a.data().begin(), a.data().end(), c.data().begin());
  std::copy(b.data().begin(), b.data().end(),
            c.data().begin() + static_cast<std::ptrdiff_t>(a.size()));
  return c;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_rows(const TensorT<T>& c,
                                             std::size_t top_rows) {
  TensorT<T> a(Shape{top_rows, c.cols()});
  TensorT<T> b(Shape{c.rows() - top_rows, c.cols()});
  std::copy(c.data().begin(),
            c.data().begin() + static_cast<std::ptrdiff_t>(a.size()),
            a.data().begin());
  std::copy(c.data().begin() + static_cast<std::ptrdiff_t>(a.size()),
            c.data().end(), b.data().begin());
  return {std::move(a), std::move(b)};
}

/// C_ij = u_i + v_j for column vectors u (m x 1) and v (n x 1).
template <typename T>
TensorT<T> outer_sum(const TensorT<T>& u, const TensorT<T>& v) {
  if (u.rank() != 2 || u.cols() != 1 || v.rank() != 2 || v.cols() != 1) {
    throw ShapeError("outer_sum: expects column vectors, got " +
                     shape_str(u.shape()) + " and " + shape_str(v.shape()));
  }
  TensorT<T> c(Shape{u.rows(), v.rows()});
  for (std::size_t i = 0; i < u.rows(); ++i) {
    for (std::size_t j = 0; j < v.rows(); ++j) {
      c.at(i, j) = u.at(i, 0) + v.at(j, 0);
    }
  }
  check_finite(c, "outer_sum");
  return c;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> outer_sum_backward(const TensorT<T>& dc) {
  TensorT<T> du(Shape{dc.rows(), 1});
  TensorT<T> dv(Shape{dc.cols(), 1});
  for (std::size_t i = 0; i < dc.rows(); ++i) {
    for (std::size_t j = 0; j < dc.cols(); ++j) {
      du.at(i, 0) += dc.at(i, j);
      dv.at(j, 0) += dc.at(i, j);
    }
  }
  return {std::move(du), std::move(dv)};
}

/// Zeroes the columns whose key-mask entry is zero. Used by the non-softmax
/// attention variants, where masked keys must contribute nothing.
template <typename T>
TensorT<T> mask_zero_cols(const TensorT<T>& x, const Mask& key_mask) {
  detail::require_rank2(x, "mask_zero_cols");
  if (key_mask.size() != x.cols()) {
    throw ShapeError("mask_zero_cols: mask length " +
                     std::to_string(key_mask.size()) + " for " +
                     shape_str(x.shape()));
  }
  TensorT<T> y = x;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    for (std::size_t j = 0; j < y.cols(); ++j) {
      if (!key_mask[j]) y.at(i, j) = T(0);
    }
  }
  return y;
}

/// Repeats a 1 x n row m times.
template <typename T>
TensorT<T> broadcast_rows(const TensorT<T>& row, std::size_t m) {
  if (row.rank() != 2 || row.rows() != 1) {
    throw ShapeError("broadcast_rows: expected 1-row tensor, got " +
                     shape_str(row.shape()));
  }
  TensorT<T> y(Shape{m, row.cols()});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < row.cols(); ++j) y.at(i, j) = row.at(0, j);
  }
  return y;
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
  T s = T(0);
  for (const T& v : x.data()) s += v;
  TensorT<T> y(Shape{1});
  y.at(0) = s;
  check_finite(y, "sum_all");
  return y;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x) {
  if (x.empty()) throw ValueError("mean_all: empty tensor");
  TensorT<T> y = sum_all(x);
  y.at(0) /= T(x.size());
  return y;
}

namespace detail {

template <typename T>
void check_row_mask(const TensorT<T>& x, const Mask& row_mask,
                    const char* op) {
  require_rank2(x, op);
  if (!row_mask.empty() && row_mask.size() != x.rows()) {
    throw ShapeError(std::string(op) + ": mask length " +
                     std::to_string(row_mask.size()) + " for " +
                     shape_str(x.shape()));
  }
}

}  // namespace detail

/// Column-wise mean over the visible rows (empty mask = all rows). No
/// visible rows pools to the zero row, mirroring the pooling operator.
template <typename T>
TensorT<T> mean_rows(const TensorT<T>& x, const Mask& row_mask) {
  detail::check_row_mask(x, row_mask, "mean_rows");
  TensorT<T> y(Shape{1, x.cols()});
  std::size_t visible = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (!row_mask.empty() && !row_mask[i]) continue;
    ++visible;
    for (std::size_t j = 0; j < x.cols(); ++j) y.at(0, j) += x.at(i, j);
  }
  if (visible == 0) return y;
  for (std::size_t j = 0; j < x.cols(); ++j) y.at(0, j) /= T(visible);
  check_finite(y, "mean_rows");
  return y;
}

/// Column-wise max over the visible rows; `argmax` (if given) receives the
/// first-max row index per column, which is also where the gradient goes.
/// No visible rows pools to the zero row with an empty argmax.
template <typename T>
TensorT<T> max_rows(const TensorT<T>& x, const Mask& row_mask,
                    std::vector<std::size_t>* argmax = nullptr) {
  detail::check_row_mask(x, row_mask, "max_rows");
  TensorT<T> y(Shape{1, x.cols()});
  if (argmax) argmax->clear();
  std::size_t visible = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (!row_mask.empty() && !row_mask[i]) continue;
    ++visible;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (visible == 1 || x.at(i, j) > y.at(0, j)) {
        y.at(0, j) = x.at(i, j);
        if (argmax) {
          if (argmax->size() < x.cols()) argmax->resize(x.cols());
          (*argmax)[j] = i;
        }
      }
    }
  }
  if (visible == 0) return TensorT<T>(Shape{1, x.cols()});
  check_finite(y, "max_rows");
  return y;
}

// ---------------------------------------------------------------------------
// Tape wrappers. Each records a closure that routes the output gradient to
// the inputs; Var copies in the captures keep the nodes alive.
// ---------------------------------------------------------------------------

template <typename T>
VarT<T> matmul(TapeT<T>& tape, const VarT<T>& a, const VarT<T>& b) {
  VarT<T> out(matmul(a.value(), b.value()));
  tape.record([a, b, out] {
    auto [da, db] = matmul_backward(a.value(), b.value(), out.grad());
    a.accumulate_grad(da);
    b.accumulate_grad(db);
  });
  return out;
}

template <typename T>
VarT<T> transpose(TapeT<T>& tape, const VarT<T>& x) {
  VarT<T> out(transpose(x.value()));
  tape.record([x, out] { x.accumulate_grad(transpose(out.grad())); });
  return out;
}

template <typename T>
VarT<T> softmax_rows(TapeT<T>& tape, const VarT<T>& x, Mask mask) {
  const Mask* mp = mask.empty() ? nullptr : &mask;
  VarT<T> out(softmax_rows(x.value(), mp));
  tape.record([x, out, mask = std::move(mask)] {
    const Mask* mp = mask.empty() ? nullptr : &mask;
    x.accumulate_grad(softmax_rows_backward(out.value(), out.grad(), mp));
  });
  return out;
}

template <typename T>
VarT<T> softmax_rows(TapeT<T>& tape, const VarT<T>& x) {
  return softmax_rows(tape, x, Mask{});
}

template <typename T>
VarT<T> layer_norm(TapeT<T>& tape, const VarT<T>& x, const VarT<T>& gamma,
                   const VarT<T>& beta, T eps = T(1e-5)) {
  VarT<T> out(layer_norm(x.value(), gamma.value(), beta.value(), eps));
  tape.record([x, gamma, beta, out, eps] {
    auto g = layer_norm_backward(x.value(), gamma.value(), out.grad(), eps);
    x.accumulate_grad(g.dx);
    gamma.accumulate_grad(g.dgamma);
    beta.accumulate_grad(g.dbeta);
  });
  return out;
}

template <typename T>
VarT<T> linear(TapeT<T>& tape, const VarT<T>& x, const VarT<T>& w,
               const VarT<T>& b) {
  const bool has_bias = b.defined() && !b.value().empty();
  VarT<T> out(linear(x.value(), w.value(),
                     has_bias ? b.value() : TensorT<T>{}));
  tape.record([x, w, b, out, has_bias] {
    auto g = linear_backward(x.value(), w.value(), out.grad(), has_bias);
    x.accumulate_grad(g.dx);
    w.accumulate_grad(g.dw);
    if (has_bias) b.accumulate_grad(g.db);
  });
  return out;
}

/// Bias-free projection.
template <typename T>
VarT<T> linear(TapeT<T>& tape, const VarT<T>& x, const VarT<T>& w) {
  return linear(tape, x, w, VarT<T>{});
}

template <typename T>
VarT<T> relu(TapeT<T>& tape, const VarT<T>& x) {
  VarT<T> out(relu(x.value()));
  tape.record([x, out] {
    x.accumulate_grad(relu_backward(x.value(), out.grad()));
  });
  return out;
}

template <typename T>
VarT<T> dropout(TapeT<T>& tape, const VarT<T>& x, T rate, RngStream& rng,
                bool training) {
  auto [y, keep] = dropout_forward(x.value(), rate, rng, training);
  VarT<T> out(std::move(y));
  tape.record([x, out, keep = std::move(keep), rate, training] {
    x.accumulate_grad(dropout_backward(out.grad(), keep, rate, training));
  });
  return out;
}

template <typename T>
VarT<T> scale(TapeT<T>& tape, const VarT<T>& x, T factor) {
  VarT<T> out(scale(x.value(), factor));
  tape.record([x, out, factor] {
    x.accumulate_grad(scale(out.grad(), factor));
  });
  return out;
}

template <typename T>
VarT<T> add(TapeT<T>& tape, const VarT<T>& a, const VarT<T>& b) {
  VarT<T> out(add(a.value(), b.value()));
  tape.record([a, b, out] {
    a.accumulate_grad(out.grad());
    b.accumulate_grad(out.grad());
  });
  return out;
}

template <typename T>
VarT<T> mul(TapeT<T>& tape, const VarT<T>& a, const VarT<T>& b) {
  VarT<T> out(mul(a.value(), b.value()));
  tape.record([a, b, out] {
    a.accumulate_grad(mul(out.grad(), b.value()));
    b.accumulate_grad(mul(out.grad(), a.value()));
  });
  return out;
}

template <typename T>
VarT<T> concat_cols(TapeT<T>& tape, const VarT<T>& a, const VarT<T>& b) {
  VarT<T> out(concat_cols(a.value(), b.value()));
  const std::size_t left = a.value().cols();
  tape.record([a, b, out, left] {
    auto [da, db] = split_cols(out.grad(), left);
    a.accumulate_grad(da);
    b.accumulate_grad(db);
  });
  return out;
}

template <typename T>
VarT<T> concat_rows(TapeT<T>& tape, const VarT<T>& a, const VarT<T>& b) {
  VarT<T> out(concat_rows(a.value(), b.value()));
  const std::size_t top = a.value().rows();
  tape.record([a, b, out, top] {
    auto [da, db] = split_rows(out.grad(), top);
    a.accumulate_grad(da);
    b.accumulate_grad(db);
  });
  return out;
}

template <typename T>
VarT<T> outer_sum(TapeT<T>& tape, const VarT<T>& u, const VarT<T>& v) {
  VarT<T> out(outer_sum(u.value(), v.value()));
  tape.record([u, v, out] {
    auto [du, dv] = outer_sum_backward(out.grad());
    u.accumulate_grad(du);
    v.accumulate_grad(dv);
  });
  return out;
}

template <typename T>
VarT<T> mask_zero_cols(TapeT<T>& tape, const VarT<T>& x, Mask key_mask) {
  VarT<T> out(mask_zero_cols(x.value(), key_mask));
  tape.record([x, out, key_mask = std::move(key_mask)] {
    x.accumulate_grad(mask_zero_cols(out.grad(), key_mask));
  });
  return out;
}

template <typename T>
VarT<T> broadcast_rows(TapeT<T>& tape, const VarT<T>& row, std::size_t m) {
  VarT<T> out(broadcast_rows(row.value(), m));
  tape.record([row, out] {
    TensorT<T> dr(Shape{1, out.grad().cols()});
    for (std::size_t i = 0; i < out.grad().rows(); ++i) {
      for (std::size_t j = 0; j < out.grad().cols(); ++j) {
        dr.at(0, j) += out.grad().at(i, j);
      }
    }
    row.accumulate_grad(dr);
  });
  return out;
}

template <typename T>
VarT<T> sum_all(TapeT<T>& tape, const VarT<T>& x) {
  VarT<T> out(sum_all(x.value()));
  tape.record([x, out] {
    x.accumulate_grad(TensorT<T>::full(x.value().shape(), out.grad().at(0)));
  });
  return out;
}

template <typename T>
VarT<T> mean_all(TapeT<T>& tape, const VarT<T>& x) {
  VarT<T> out(mean_all(x.value()));
  tape.record([x, out] {
    x.accumulate_grad(TensorT<T>::full(
        x.value().shape(), out.grad().at(0) / T(x.value().size())));
  });
  return out;
}

/// Wraps a tensor as a leaf: gradients accumulate but propagate nowhere.
template <typename T>
VarT<T> mean_rows(TapeT<T>& tape, const VarT<T>& x, Mask row_mask = {}) {
  VarT<T> out(mean_rows(x.value(), row_mask));
  std::size_t visible = 0;
  for (std::size_t i = 0; i < x.value().rows(); ++i) {
    if (row_mask.empty() || row_mask[i]) ++visible;
  }
  if (visible == 0) return out;  // zero row, nothing to differentiate
  tape.record([x, out, row_mask = std::move(row_mask), visible] {
    TensorT<T> dx(x.value().shape());
    for (std::size_t i = 0; i < dx.rows(); ++i) {
      if (!row_mask.empty() && !row_mask[i]) continue;
      for (std::size_t j = 0; j < dx.cols(); ++j) {
        dx.at(i, j) = out.grad().at(0, j) / T(visible);
      }
    }
    x.accumulate_grad(dx);
  });
  return out;
}

template <typename T>
VarT<T> max_rows(TapeT<T>& tape, const VarT<T>& x, Mask row_mask = {}) {
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  VarT<T> out(max_rows(x.value(), row_mask, argmax.get()));
  if (argmax->empty()) return out;  // no visible rows
  tape.record([x, out, argmax] {
    TensorT<T> dx(x.value().shape());
    for (std::size_t j = 0; j < dx.cols(); ++j) {
      dx.at((*argmax)[j], j) = out.grad().at(0, j);
    }
    x.accumulate_grad(dx);
  });
  return out;
}

template <typename T>
VarT<T> constant(TensorT<T> value) {
  return VarT<T>(std::move(value));
}

}  // namespace lfb
