// Copyright 2026 The spdg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Differentiable primitives recorded on a Tape. Matrices are row-major
// [rows x cols]; rank-1 tensors are treated as a single row where an op works
// row-wise.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "spdg/error.hpp"
#include "spdg/numerics/tape.hpp"
#include "spdg/numerics/tensor.hpp"

namespace spdg::ad {

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::kDimension, std::string(op) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
}

inline void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) fail(ErrorCode::kDimension, std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

inline Tape& tape_of(const Var& v) {
  if (!v.valid()) fail(ErrorCode::kInternalInvariant, "unbound Var");
  return *v.tape();
}

template <typename F>
Var unary(const Var& x, F&& forward_and_derivative) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  std::vector<double> deriv(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    auto [y, dy] = forward_and_derivative(xv[i]);
    out[i] = y;
    deriv[i] = dy;
  }
  return tape_of(x).record(std::move(out), {x}, [deriv = std::move(deriv)](const GradContext& c) {
    if (Tensor* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < deriv.size(); ++i) (*g)[i] += c.grad_out[i] * deriv[i];
    }
  });
}

}  // namespace detail

/// a(r x k) * b(k x c)
inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = spdg::matmul(av, bv);
  return detail::tape_of(a).record(std::move(out), {a, b}, [](const GradContext& c) {
    const Tensor& A = *c.inputs[0];
    const Tensor& B = *c.inputs[1];
    const std::size_t r = A.dim(0), k = A.dim(1), n = B.dim(1);
    if (Tensor* gA = c.input_grads[0]) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += c.grad_out[i * n + j] * B[p * n + j];
          (*gA)[i * k + p] += s;
        }
    }
    if (Tensor* gB = c.input_grads[1]) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) (*gB)[p * n + j] += av * c.grad_out[i * n + j];
        }
    }
  });
}

/// a(r x k) * b(c x k)^T
inline Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix("matmul_nt", av);
  detail::require_matrix("matmul_nt", bv);
  if (av.dim(1) != bv.dim(1)) {
    fail(ErrorCode::kDimension, "matmul_nt " + shape_string(av.shape()) + " x " + shape_string(bv.shape()) + "^T");
  }
  const std::size_t r = av.dim(0), k = av.dim(1), n = bv.dim(0);
  Tensor out(Shape{r, n});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = dot(av.row(i), bv.row(j));
  return detail::tape_of(a).record(std::move(out), {a, b}, [r, k, n](const GradContext& c) {
    const Tensor& A = *c.inputs[0];
    const Tensor& B = *c.inputs[1];
    if (Tensor* gA = c.input_grads[0]) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = c.grad_out[i * n + j];
          for (std::size_t p = 0; p < k; ++p) (*gA)[i * k + p] += g * B[j * k + p];
        }
    }
    if (Tensor* gB = c.input_grads[1]) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = c.grad_out[i * n + j];
          for (std::size_t p = 0; p < k; ++p) (*gB)[j * k + p] += g * A[i * k + p];
        }
    }
  });
}

/// x(B x n) * W(n x m) + b(m)
inline Var linear(const Var& x, const Var& weight, const Var& bias);

/// Adds a length-m bias to every row of a (r x m) matrix.
inline Var add_row_bias(const Var& a, const Var& bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  detail::require_matrix("add_row_bias", av);
  if (bv.size() != av.dim(1)) {
    fail(ErrorCode::kDimension, "add_row_bias " + shape_string(av.shape()) + " + " + shape_string(bv.shape()));
  }
  const std::size_t r = av.dim(0), m = av.dim(1);
  Tensor out = av;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bv[j];
  return detail::tape_of(a).record(std::move(out), {a, bias}, [r, m](const GradContext& c) {
    if (Tensor* ga = c.input_grads[0]) {
      for (std::size_t i = 0; i < r * m; ++i) (*ga)[i] += c.grad_out[i];
    }
    if (Tensor* gb = c.input_grads[1]) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < m; ++j) (*gb)[j] += c.grad_out[i * m + j];
    }
  });
}

inline Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0) || bias.value().size() != wv.dim(1)) {
    fail(ErrorCode::kDimension, "linear x" + shape_string(xv.shape()) + " W" + shape_string(wv.shape()) + " b" +
                                    shape_string(bias.value().shape()));
  }
  return add_row_bias(matmul(x, weight), bias);
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return detail::tape_of(a).record(std::move(out), {a, b}, [](const GradContext& c) {
    for (Tensor* g : c.input_grads)
      if (g)
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_out[i];
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return detail::tape_of(a).record(std::move(out), {a, b}, [](const GradContext& c) {
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_out[i];
    if (Tensor* g = c.input_grads[1])
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= c.grad_out[i];
  });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return detail::tape_of(a).record(std::move(out), {a, b}, [](const GradContext& c) {
    const Tensor& A = *c.inputs[0];
    const Tensor& B = *c.inputs[1];
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_out[i] * B[i];
    if (Tensor* g = c.input_grads[1])
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_out[i] * A[i];
  });
}

inline Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.storage()) v *= factor;
  return detail::tape_of(a).record(std::move(out), {a}, [factor](const GradContext& c) {
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += factor * c.grad_out[i];
  });
}

inline Var add_scalar(const Var& a, double offset) {
  Tensor out = a.value();
  for (double& v : out.storage()) v += offset;
  return detail::tape_of(a).record(std::move(out), {a}, [](const GradContext& c) {
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_out[i];
  });
}

/// ELU with alpha = 1.
inline Var elu(const Var& x) {
  return detail::unary(x, [](double v) -> std::pair<double, double> {
    if (v > 0.0) return {v, 1.0};
    const double e = std::exp(v);
    return {e - 1.0, e};
  });
}

/// log(1 + exp(x)), stable for large |x|.
inline Var softplus(const Var& x) {
  return detail::unary(x, [](double v) -> std::pair<double, double> {
    const double y = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return {y, s};
  });
}

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return detail::tape_of(a).record(std::move(out), {a}, [](const GradContext& c) {
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_out[i];
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return detail::tape_of(a).record(Tensor::scalar(s), {a}, [](const GradContext& c) {
    if (Tensor* g = c.input_grads[0])
      for (double& v : g->storage()) v += c.grad_out[0];
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Averages the rows of a (r x m) matrix into a length-m vector.
inline Var mean_rows(const Var& a) {
  const Tensor& av = a.value();
  detail::require_matrix("mean_rows", av);
  const std::size_t r = av.dim(0), m = av.dim(1);
  Tensor out(Shape{m});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += av[i * m + j];
  for (double& v : out.storage()) v /= static_cast<double>(r);
  return detail::tape_of(a).record(std::move(out), {a}, [r, m](const GradContext& c) {
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < m; ++j) (*g)[i * m + j] += c.grad_out[j] / static_cast<double>(r);
  });
}

/// Row-wise softmax.
inline Var softmax_rows(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), m = av.cols();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const double lse = spdg::log_sum_exp(av.row(i));
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = std::exp(av[i * m + j] - lse);
  }
  return detail::tape_of(a).record(std::move(out), {a}, [r, m](const GradContext& c) {
    if (Tensor* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += c.grad_out[i * m + j] * c.out[i * m + j];
        for (std::size_t j = 0; j < m; ++j) (*g)[i * m + j] += c.out[i * m + j] * (c.grad_out[i * m + j] - s);
      }
    }
  });
}

/// Scales each last-axis slice to unit Euclidean norm; degenerate slices throw.
inline Var l2_normalize(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t r = av.size() / av.cols(), m = av.cols();
  Tensor out(av.shape());
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    const auto row = std::span<const double>(av.data()).subspan(i * m, m);
    norms[i] = norm(row);
    if (!(norms[i] > kNormEpsilon)) {
      fail(ErrorCode::kDegenerateVector, "l2_normalize: slice " + std::to_string(i) + " has norm " + std::to_string(norms[i]));
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = row[j] / norms[i];
  }
  return detail::tape_of(a).record(std::move(out), {a}, [r, m, norms = std::move(norms)](const GradContext& c) {
    if (Tensor* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < r; ++i) {
        double yg = 0.0;
        for (std::size_t j = 0; j < m; ++j) yg += c.out[i * m + j] * c.grad_out[i * m + j];
        for (std::size_t j = 0; j < m; ++j)
          (*g)[i * m + j] += (c.grad_out[i * m + j] - c.out[i * m + j] * yg) / norms[i];
      }
    }
  });
}

/// out[i] = <a_i, b_i> for matching rows.
inline Var row_dot(const Var& a, const Var& b) {
  detail::require_same_shape("row_dot", a.value(), b.value());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t r = av.size() / av.cols(), m = av.cols();
  Tensor out(Shape{r});
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = dot(std::span<const double>(av.data()).subspan(i * m, m), std::span<const double>(bv.data()).subspan(i * m, m));
  }
  return detail::tape_of(a).record(std::move(out), {a, b}, [r, m](const GradContext& c) {
    const Tensor& A = *c.inputs[0];
    const Tensor& B = *c.inputs[1];
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < m; ++j) (*g)[i * m + j] += c.grad_out[i] * B[i * m + j];
    if (Tensor* g = c.input_grads[1])
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < m; ++j) (*g)[i * m + j] += c.grad_out[i] * A[i * m + j];
  });
}

/// Cosine similarity of matching rows.
inline Var cosine_rows(const Var& a, const Var& b) { return row_dot(l2_normalize(a), l2_normalize(b)); }

/// Scalar log(sum(exp(x))) over all entries, max-shifted.
inline Var log_sum_exp(const Var& x) {
  const Tensor& xv = x.value();
  const double lse = spdg::log_sum_exp(xv.data());
  return detail::tape_of(x).record(Tensor::scalar(lse), {x}, [lse](const GradContext& c) {
    const Tensor& X = *c.inputs[0];
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < X.size(); ++i) (*g)[i] += c.grad_out[0] * std::exp(X[i] - lse);
  });
}

/// Per-row log-sum-exp over the entries where mask is set. Every row needs at
/// least one selected entry.
inline Var masked_row_log_sum_exp(const Var& x, std::vector<std::uint8_t> mask) {
  const Tensor& xv = x.value();
  detail::require_matrix("masked_row_log_sum_exp", xv);
  const std::size_t r = xv.dim(0), m = xv.dim(1);
  if (mask.size() != r * m) fail(ErrorCode::kDimension, "masked_row_log_sum_exp: mask size mismatch");
  Tensor out(Shape{r});
  for (std::size_t i = 0; i < r; ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (mask[i * m + j]) hi = std::max(hi, xv[i * m + j]);
    if (!std::isfinite(hi)) fail(ErrorCode::kEmptyInput, "masked_row_log_sum_exp: row " + std::to_string(i) + " selects nothing");
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      if (mask[i * m + j]) s += std::exp(xv[i * m + j] - hi);
    out[i] = hi + std::log(s);
  }
  return detail::tape_of(x).record(std::move(out), {x}, [r, m, mask = std::move(mask)](const GradContext& c) {
    const Tensor& X = *c.inputs[0];
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < m; ++j)
          if (mask[i * m + j]) (*g)[i * m + j] += c.grad_out[i] * std::exp(X[i * m + j] - c.out[i]);
  });
}

/// Gathers entries by flat index into a rank-1 tensor.
inline Var gather(const Var& x, std::vector<std::size_t> indices) {
  const Tensor& xv = x.value();
  if (indices.empty()) fail(ErrorCode::kEmptyInput, "gather with no indices");
  Tensor out(Shape{indices.size()});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= xv.size()) fail(ErrorCode::kDimension, "gather index out of range");
    out[k] = xv[indices[k]];
  }
  return detail::tape_of(x).record(std::move(out), {x}, [indices = std::move(indices)](const GradContext& c) {
    if (Tensor* g = c.input_grads[0])
      for (std::size_t k = 0; k < indices.size(); ++k) (*g)[indices[k]] += c.grad_out[k];
  });
}

/// Row i of a matrix as a rank-1 tensor.
inline Var row(const Var& a, std::size_t i) {
  const Tensor& av = a.value();
  detail::require_matrix("row", av);
  if (i >= av.dim(0)) fail(ErrorCode::kDimension, "row index out of range");
  const std::size_t m = av.dim(1);
  Tensor out(Shape{m}, std::vector<double>(av.row(i).begin(), av.row(i).end()));
  return detail::tape_of(a).record(std::move(out), {a}, [i, m](const GradContext& c) {
    if (Tensor* g = c.input_grads[0])
      for (std::size_t j = 0; j < m; ++j) (*g)[i * m + j] += c.grad_out[j];
  });
}

/// Stacks rank-1 tensors or matrices with equal column counts.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorCode::kEmptyInput, "concat_rows of nothing");
  const std::size_t m = parts[0].value().cols();
  std::vector<double> data;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    if (pv.rank() > 2 || pv.cols() != m) fail(ErrorCode::kDimension, "concat_rows: incompatible part " + shape_string(pv.shape()));
    offsets.push_back(data.size());
    data.insert(data.end(), pv.data().begin(), pv.data().end());
  }
  const std::size_t r = data.size() / m;
  return detail::tape_of(parts[0]).record(Tensor(Shape{r, m}, std::move(data)), parts,
                                          [offsets = std::move(offsets)](const GradContext& c) {
                                            for (std::size_t k = 0; k < c.input_grads.size(); ++k) {
                                              if (Tensor* g = c.input_grads[k])
                                                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_out[offsets[k] + i];
                                            }
                                          });
}

/// Repeats each row `times` times consecutively: (r x m) -> (r*times x m).
inline Var repeat_rows(const Var& a, std::size_t times) {
  const Tensor& av = a.value();
  detail::require_matrix("repeat_rows", av);
  if (times == 0) fail(ErrorCode::kEmptyInput, "repeat_rows with zero repeats");
  const std::size_t r = av.dim(0), m = av.dim(1);
  Tensor out(Shape{r * times, m});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t t = 0; t < times; ++t)
      for (std::size_t j = 0; j < m; ++j) out[(i * times + t) * m + j] = av[i * m + j];
  return detail::tape_of(a).record(std::move(out), {a}, [r, m, times](const GradContext& c) {
    if (Tensor* g = c.input_grads[0])
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t t = 0; t < times; ++t)
          for (std::size_t j = 0; j < m; ++j) (*g)[i * m + j] += c.grad_out[(i * times + t) * m + j];
  });
}

}  // namespace spdg::ad
