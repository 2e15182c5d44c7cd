// Differentiable primitives over Tensor. Matrices are row-major; ops that
// talk about "rows" treat a tensor as [numel / cols x cols].
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "orthtd/numerics/tensor.hpp"

namespace orthtd {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
  require(a.rank() == 2, std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

}  // namespace detail

/// C = A B for A [m x k], B [k x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using namespace detail;
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions differ " + shape_str(a.shape()) + " * " +
                             shape_str(b.shape()));
  std::vector<T> out(m * n);
  MatrixMap<T>(out.data(), m, n).noalias() =
      ConstMatrixMap<T>(a.data().data(), m, k) * ConstMatrixMap<T>(b.data().data(), k, n);
  return Tensor<T>::make_result({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<T>& self) {
    ConstMatrixMap<T> dc(self.grad.data(), m, n);
    if (T* ga = parent_grad(self, 0))
      MatrixMap<T>(ga, m, k).noalias() += dc * ConstMatrixMap<T>(parent_data(self, 1), k, n).transpose();
    if (T* gb = parent_grad(self, 1))
      MatrixMap<T>(gb, k, n).noalias() += ConstMatrixMap<T>(parent_data(self, 0), m, k).transpose() * dc;
  });
}

/// y = x W + b for x [B x m], W [m x n], b [n].
template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  using namespace detail;
  require_matrix(x, "affine");
  require_matrix(weight, "affine");
  const std::size_t rows = x.dim(0), m = x.dim(1), n = weight.dim(1);
  require(weight.dim(0) == m, "affine: input width " + std::to_string(m) + " does not match weight " +
                                  shape_str(weight.shape()));
  require(bias.numel() == n, "affine: bias of shape " + shape_str(bias.shape()) +
                                 " does not match output width " + std::to_string(n));
  std::vector<T> out(rows * n);
  MatrixMap<T> y(out.data(), rows, n);
  y.noalias() = ConstMatrixMap<T>(x.data().data(), rows, m) * ConstMatrixMap<T>(weight.data().data(), m, n);
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), n);
  return Tensor<T>::make_result(
      {rows, n}, std::move(out), {x, weight, bias}, [rows, m, n](TensorNode<T>& self) {
        ConstMatrixMap<T> dy(self.grad.data(), rows, n);
        if (T* gx = parent_grad(self, 0))
          MatrixMap<T>(gx, rows, m).noalias() +=
              dy * ConstMatrixMap<T>(parent_data(self, 1), m, n).transpose();
        if (T* gw = parent_grad(self, 1))
          MatrixMap<T>(gw, m, n).noalias() +=
              ConstMatrixMap<T>(parent_data(self, 0), rows, m).transpose() * dy;
        // Plain row loop: Eigen's reduction peels by address alignment, which
        // would make the rounding depend on where the buffer was allocated.
        if (T* gb = parent_grad(self, 2)) {
          const T* g = self.grad.data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
        }
      });
}

namespace detail {

// Elementwise unary op with derivative expressed through input x and output y.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.numel());
  const auto& xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xs[i]);
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [deriv](TensorNode<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    const T* xs = parent_data(self, 0);
    for (std::size_t i = 0; i < self.data.size(); ++i) gx[i] += self.grad[i] * deriv(xs[i], self.data[i]);
  });
}

}  // namespace detail

/// Exact GELU, x * Phi(x) with Phi from erf.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
  return detail::unary(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x,
      [](T v) {
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

/// |x| with subgradient 0 at the origin.
template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::abs(v); }, [](T v, T) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

namespace detail {

template <typename T, typename Fwd>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, Fwd fwd, T da_sign, T db_sign,
                 bool product) {
  require_same_shape(a, b, op);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i], b.data()[i]);
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b},
                                [da_sign, db_sign, product](TensorNode<T>& self) {
                                  const T* ad = parent_data(self, 0);
                                  const T* bd = parent_data(self, 1);
                                  const std::size_t n = self.data.size();
                                  if (T* ga = parent_grad(self, 0))
                                    for (std::size_t i = 0; i < n; ++i)
                                      ga[i] += self.grad[i] * (product ? bd[i] : da_sign);
                                  if (T* gb = parent_grad(self, 1))
                                    for (std::size_t i = 0; i < n; ++i)
                                      gb[i] += self.grad[i] * (product ? ad[i] : db_sign);
                                });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, "add", [](T x, T y) { return x + y; }, T(1), T(1), false);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, "sub", [](T x, T y) { return x - y; }, T(1), T(-1), false);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, "mul", [](T x, T y) { return x * y; }, T(0), T(0), true);
}

/// a [R x n] + v [n] broadcast over rows.
template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& v) {
  const std::size_t n = a.cols(), rows = a.rows();
  detail::require(v.numel() == n, "add_row: vector of shape " + shape_str(v.shape()) +
                                      " does not match width " + std::to_string(n));
  std::vector<T> out(a.data());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += v.data()[j];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, v}, [rows, n](TensorNode<T>& self) {
    if (T* ga = parent_grad(self, 0))
      for (std::size_t i = 0; i < rows * n; ++i) ga[i] += self.grad[i];
    if (T* gv = parent_grad(self, 1))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gv[j] += self.grad[r * n + j];
  });
}

/// Repeats v [n] as `rows` rows.
template <typename T>
Tensor<T> broadcast_rows(const Tensor<T>& v, std::size_t rows) {
  const std::size_t n = v.numel();
  std::vector<T> out(rows * n);
  for (std::size_t r = 0; r < rows; ++r) std::copy(v.data().begin(), v.data().end(), out.begin() + r * n);
  return Tensor<T>::make_result({rows, n}, std::move(out), {v}, [rows, n](TensorNode<T>& self) {
    if (T* gv = parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gv[j] += self.grad[r * n + j];
  });
}

/// Per-row standardization with affine gain and bias; eps sits inside the sqrt.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  const std::size_t n = x.cols(), rows = x.rows();
  detail::require(n >= 2, "layer_norm: row width must be at least 2, got " + std::to_string(n));
  detail::require(gain.numel() == n && bias.numel() == n, "layer_norm: gain/bias width mismatch");
  std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(rows);
  const T* xs = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xs + r * n;
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(n);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (row[j] - mean) * inv_std[r];
      out[r * n + j] = xhat[r * n + j] * gain.data()[j] + bias.data()[j];
    }
  }
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode<T>& self) {
        const T* g = parent_data(self, 1);
        T* gx = parent_grad(self, 0);
        T* gg = parent_grad(self, 1);
        T* gb = parent_grad(self, 2);
        std::vector<T> dxhat(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* dy = self.grad.data() + r * n;
          const T* xh = xhat.data() + r * n;
          if (gg)
            for (std::size_t j = 0; j < n; ++j) gg[j] += dy[j] * xh[j];
          if (gb)
            for (std::size_t j = 0; j < n; ++j) gb[j] += dy[j];
          if (!gx) continue;
          T mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = dy[j] * g[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
          }
          mean_d /= T(n);
          mean_dx /= T(n);
          for (std::size_t j = 0; j < n; ++j)
            gx[r * n + j] += inv_std[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
      });
}

/// Row-wise softmax over the last dimension.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t n = x.cols(), rows = x.rows();
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data().data() + r * n;
    T* o = out.data() + r * n;
    const T top = *std::max_element(row, row + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) total += (o[j] = std::exp(row[j] - top));
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [rows, n](TensorNode<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * n;
      const T* dy = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (dy[j] - dot);
    }
  });
}

/// Gathers rows of table [V x d] by id.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  detail::require_matrix(table, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  std::vector<int> idx(ids.begin(), ids.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab)
      throw std::out_of_range("embedding: id " + std::to_string(idx[i]) + " outside table of " +
                              std::to_string(vocab) + " rows");
    std::copy_n(table.data().begin() + idx[i] * d, d, out.begin() + i * d);
  }
  const std::size_t n = idx.size();
  return Tensor<T>::make_result({n, d}, std::move(out), {table},
                                [d, idx = std::move(idx)](TensorNode<T>& self) {
                                  T* gt = parent_grad(self, 0);
                                  if (!gt) return;
                                  for (std::size_t i = 0; i < idx.size(); ++i)
                                    for (std::size_t j = 0; j < d; ++j)
                                      gt[idx[i] * d + j] += self.grad[i * d + j];
                                });
}

/// Concatenates matrices with equal row counts along columns.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == rows, "concat_cols: row count mismatch " + shape_str(p.shape()));
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<T> out(rows * total);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      std::copy_n(parts[i].data().begin() + r * widths[i], widths[i], out.begin() + r * total + offset);
      offset += widths[i];
    }
  }
  return Tensor<T>::make_result({rows, total}, std::move(out), parts,
                                [rows, total, widths](TensorNode<T>& self) {
                                  std::size_t offset = 0;
                                  for (std::size_t i = 0; i < widths.size(); ++i) {
                                    if (T* g = parent_grad(self, i))
                                      for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t j = 0; j < widths[i]; ++j)
                                          g[r * widths[i] + j] += self.grad[r * total + offset + j];
                                    offset += widths[i];
                                  }
                                });
}

/// Columns [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  const std::size_t rows = a.rows(), n = a.cols();
  detail::require(begin < end && end <= n, "slice_cols: bad range");
  const std::size_t w = end - begin;
  std::vector<T> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(a.data().begin() + r * n + begin, w, out.begin() + r * w);
  return Tensor<T>::make_result({rows, w}, std::move(out), {a}, [rows, n, begin, w](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) g[r * n + begin + j] += self.grad[r * w + j];
  });
}

/// Stacks S matrices [R x n] into a sequence matrix [R*S x n] with row r*S + s.
template <typename T>
Tensor<T> interleave_rows(const std::vector<Tensor<T>>& slots) {
  detail::require(!slots.empty(), "interleave_rows: no inputs");
  const std::size_t rows = slots.front().rows(), n = slots.front().cols(), count = slots.size();
  for (const auto& s : slots)
    detail::require(s.rows() == rows && s.cols() == n,
                    "interleave_rows: slot of shape " + shape_str(s.shape()) + " does not match " +
                        shape_str(slots.front().shape()));
  std::vector<T> out(rows * count * n);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t s = 0; s < count; ++s)
      std::copy_n(slots[s].data().begin() + r * n, n, out.begin() + (r * count + s) * n);
  return Tensor<T>::make_result({rows * count, n}, std::move(out), slots, [rows, n, count](TensorNode<T>& self) {
    for (std::size_t s = 0; s < count; ++s)
      if (T* g = parent_grad(self, s))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[(r * count + s) * n + j];
  });
}

/// Row s of every group of `group` consecutive rows: [R*S x n] -> [R x n].
template <typename T>
Tensor<T> take_slot(const Tensor<T>& seq, std::size_t group, std::size_t slot) {
  const std::size_t n = seq.cols();
  detail::require(group > 0 && seq.rows() % group == 0 && slot < group, "take_slot: bad grouping");
  const std::size_t rows = seq.rows() / group;
  std::vector<T> out(rows * n);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(seq.data().begin() + (r * group + slot) * n, n, out.begin() + r * n);
  return Tensor<T>::make_result({rows, n}, std::move(out), {seq}, [rows, n, group, slot](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) g[(r * group + slot) * n + j] += self.grad[r * n + j];
  });
}

/// Mean over each group of `group` consecutive rows: [R*S x n] -> [R x n].
template <typename T>
Tensor<T> mean_slots(const Tensor<T>& seq, std::size_t group) {
  const std::size_t n = seq.cols();
  detail::require(group > 0 && seq.rows() % group == 0, "mean_slots: bad grouping");
  const std::size_t rows = seq.rows() / group;
  std::vector<T> out(rows * n, T(0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t s = 0; s < group; ++s)
      for (std::size_t j = 0; j < n; ++j) out[r * n + j] += seq.data()[(r * group + s) * n + j] / T(group);
  return Tensor<T>::make_result({rows, n}, std::move(out), {seq}, [rows, n, group](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t s = 0; s < group; ++s)
          for (std::size_t j = 0; j < n; ++j) g[(r * group + s) * n + j] += self.grad[r * n + j] / T(group);
  });
}

/// Column j of a matrix as a vector [R].
template <typename T>
Tensor<T> column(const Tensor<T>& a, std::size_t j) {
  const std::size_t rows = a.rows(), n = a.cols();
  detail::require(j < n, "column: index out of range");
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = a.data()[r * n + j];
  return Tensor<T>::make_result({rows}, std::move(out), {a}, [rows, n, j](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r) g[r * n + j] += self.grad[r];
  });
}

/// Multiplies row r of a [R x n] by s[r].
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& a, const Tensor<T>& s) {
  const std::size_t rows = a.rows(), n = a.cols();
  detail::require(s.numel() == rows, "scale_rows: " + std::to_string(s.numel()) + " factors for " +
                                         std::to_string(rows) + " rows");
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = a.data()[r * n + j] * s.data()[r];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, s}, [rows, n](TensorNode<T>& self) {
    const T* ad = parent_data(self, 0);
    const T* sd = parent_data(self, 1);
    T* ga = parent_grad(self, 0);
    T* gs = parent_grad(self, 1);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) {
        const T g = self.grad[r * n + j];
        if (ga) ga[r * n + j] += g * sd[r];
        if (gs) gs[r] += g * ad[r * n + j];
      }
  });
}

/// a * s for a scalar tensor s.
template <typename T>
Tensor<T> scale_by(const Tensor<T>& a, const Tensor<T>& s) {
  detail::require(s.numel() == 1, "scale_by: factor must be a scalar");
  const T f = s.data()[0];
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * f;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, s}, [](TensorNode<T>& self) {
    const T* ad = parent_data(self, 0);
    const T f = parent_data(self, 1)[0];
    T* ga = parent_grad(self, 0);
    T* gs = parent_grad(self, 1);
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      if (ga) ga[i] += self.grad[i] * f;
      if (gs) gs[0] += self.grad[i] * ad[i];
    }
  });
}

/// Single element of a tensor as a scalar tensor.
template <typename T>
Tensor<T> element(const Tensor<T>& a, std::size_t index) {
  detail::require(index < a.numel(), "element: index out of range");
  return Tensor<T>::make_result({1}, {a.data()[index]}, {a}, [index](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0)) g[index] += self.grad[0];
  });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  return Tensor<T>::make_result({1}, {total}, {a}, [](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), T(1) / T(a.numel()));
}

/// Sum of scalar tensors.
template <typename T>
Tensor<T> add_scalars(const std::vector<Tensor<T>>& terms) {
  detail::require(!terms.empty(), "add_scalars: no terms");
  T total = 0;
  for (const auto& t : terms) {
    detail::require(t.numel() == 1, "add_scalars: term is not a scalar");
    total += t.data()[0];
  }
  return Tensor<T>::make_result({1}, {total}, terms, [](TensorNode<T>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i)
      if (T* g = parent_grad(self, i)) g[0] += self.grad[0];
  });
}

/// Copy with a new shape of equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(shape_numel(shape) == a.numel(), "reshape: element count mismatch " +
                                                       shape_str(a.shape()) + " -> " + shape_str(shape));
  return Tensor<T>::make_result(std::move(shape), a.data(), {a}, [](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.data.size(); ++i) g[i] += self.grad[i];
  });
}

/// Per-row cosine <a_i, b_i> / (max(|a_i|, eps) max(|b_i|, eps)).
template <typename T>
Tensor<T> row_cosine(const Tensor<T>& a, const Tensor<T>& b, T eps = T(1e-8)) {
  detail::require_same_shape(a, b, "row_cosine");
  const std::size_t rows = a.rows(), n = a.cols();
  std::vector<T> out(rows), norm_a(rows), norm_b(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* ar = a.data().data() + r * n;
    const T* br = b.data().data() + r * n;
    T dot = 0, aa = 0, bb = 0;
    for (std::size_t j = 0; j < n; ++j) {
      dot += ar[j] * br[j];
      aa += ar[j] * ar[j];
      bb += br[j] * br[j];
    }
    norm_a[r] = std::sqrt(aa);
    norm_b[r] = std::sqrt(bb);
    out[r] = dot / (std::max(norm_a[r], eps) * std::max(norm_b[r], eps));
    out[r] = std::clamp(out[r], T(-1), T(1));
  }
  return Tensor<T>::make_result(
      {rows}, std::move(out), {a, b},
      [rows, n, eps, norm_a = std::move(norm_a), norm_b = std::move(norm_b)](TensorNode<T>& self) {
        const T* ad = parent_data(self, 0);
        const T* bd = parent_data(self, 1);
        T* ga = parent_grad(self, 0);
        T* gb = parent_grad(self, 1);
        for (std::size_t r = 0; r < rows; ++r) {
          const T na = std::max(norm_a[r], eps), nb = std::max(norm_b[r], eps);
          const T c = self.data[r], g = self.grad[r];
          // Radial terms vanish where the norm is clamped at eps.
          const T ra = norm_a[r] > eps ? c / (na * na) : T(0);
          const T rb = norm_b[r] > eps ? c / (nb * nb) : T(0);
          for (std::size_t j = 0; j < n; ++j) {
            const T aj = ad[r * n + j], bj = bd[r * n + j];
            if (ga) ga[r * n + j] += g * (bj / (na * nb) - ra * aj);
            if (gb) gb[r * n + j] += g * (aj / (na * nb) - rb * bj);
          }
        }
      });
}

/// Inverted dropout; identity when rate is 0.
template <typename T, typename Rng>
Tensor<T> dropout(const Tensor<T>& x, T rate, Rng& rng) {
  if (rate <= T(0)) return x;
  detail::require(rate < T(1), "dropout: rate must be below 1");
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? T(1) / (T(1) - rate) : T(0);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [mask = std::move(mask)](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

}  // namespace orthtd
