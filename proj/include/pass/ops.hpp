// Copyright 2026 The pass-reid Authors.
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

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "pass/autograd.hpp"

// Differentiable operations over Var. Every op computes its value eagerly and
// records a pullback only when at least one input requires a gradient.
// Unless noted otherwise, "rows" means the product of leading dimensions and
// "cols" the last dimension.

namespace pass {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap mat(const Tensor& t) { return ConstMatMap(t.data().data(), t.rows(), t.cols()); }
inline MatMap mat(Tensor& t) { return MatMap(t.data().data(), t.rows(), t.cols()); }
inline ConstMatMap mat(const Tensor& t, std::size_t r, std::size_t c) {
  return ConstMatMap(t.data().data(), r, c);
}
inline MatMap mat(Tensor& t, std::size_t r, std::size_t c) { return MatMap(t.data().data(), r, c); }

inline Tape* tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands recorded on different tapes");
  return a.tape();
}

// True when `small` equals a trailing run of `big`'s dimensions.
inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline void require_rank2(const std::string& op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(op + ": expected a matrix, got shape " + shape_str(t.shape()));
}

enum class Binary { kAdd, kSub, kMul, kDiv };

inline const char* binary_name(Binary op) {
  switch (op) {
    case Binary::kAdd: return "add";
    case Binary::kSub: return "sub";
    case Binary::kMul: return "mul";
    case Binary::kDiv: return "div";
  }
  return "?";
}

// Elementwise binary op where b is either the same shape as a or broadcast
// along a's leading dimensions (bias-style).
inline Var binary(Binary op, const Var& a, const Var& b) {
  Tape* tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!is_suffix(bv.shape(), av.shape()))
    throw shape_error(binary_name(op), av.shape(), bv.shape());
  const std::size_t n = av.numel();
  const std::size_t nb = std::max<std::size_t>(bv.numel(), 1);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i], y = bv[i % nb];
    switch (op) {
      case Binary::kAdd: out[i] = x + y; break;
      case Binary::kSub: out[i] = x - y; break;
      case Binary::kMul: out[i] = x * y; break;
      case Binary::kDiv: out[i] = x / y; break;
    }
  }
  if (!a.requires_grad() && !b.requires_grad()) return tape->constant(std::move(out));
  const std::size_t ia = a.id(), ib = b.id();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return tape->record(std::move(out), [=](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    if (ga) {
      Tensor& dx = t.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i) {
        switch (op) {
          case Binary::kAdd:
          case Binary::kSub: dx[i] += g[i]; break;
          case Binary::kMul: dx[i] += g[i] * y[i % nb]; break;
          case Binary::kDiv: dx[i] += g[i] / y[i % nb]; break;
        }
      }
    }
    if (gb) {
      Tensor& dy = t.grad_buffer(ib);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i % nb;
        switch (op) {
          case Binary::kAdd: dy[j] += g[i]; break;
          case Binary::kSub: dy[j] -= g[i]; break;
          case Binary::kMul: dy[j] += g[i] * x[i]; break;
          case Binary::kDiv: dy[j] -= g[i] * x[i] / (y[j] * y[j]); break;
        }
      }
    }
  });
}

template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = f(av[i]);
  if (!a.requires_grad()) return a.tape()->constant(std::move(out));
  const std::size_t ia = a.id();
  const std::size_t io = a.tape()->size();
  return a.tape()->record(std::move(out), [=](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(io);
    Tensor& dx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < x.numel(); ++i) dx[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape() && detail::is_suffix(a.shape(), b.shape()))
    return detail::binary(detail::Binary::kAdd, b, a);
  return detail::binary(detail::Binary::kAdd, a, b);
}
inline Var sub(const Var& a, const Var& b) { return detail::binary(detail::Binary::kSub, a, b); }
inline Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape() && detail::is_suffix(a.shape(), b.shape()))
    return detail::binary(detail::Binary::kMul, b, a);
  return detail::binary(detail::Binary::kMul, a, b);
}
inline Var div(const Var& a, const Var& b) { return detail::binary(detail::Binary::kDiv, a, b); }

inline Var scale(const Var& a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}
inline Var add_scalar(const Var& a, double s) {
  return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}
inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var exp(const Var& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Var log(const Var& a) {
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Var sqrt(const Var& a) {
  return detail::unary(a, [](double x) { return std::sqrt(x); },
                       [](double, double y) { return 0.5 / y; });
}
inline Var square(const Var& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Var relu(const Var& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}
/// Exact (erf-based) GELU.
inline Var gelu(const Var& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return detail::unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}
/// Maximum of x and lo, elementwise.
inline Var clamp_min(const Var& a, double lo) {
  return detail::unary(a, [lo](double x) { return x > lo ? x : lo; },
                       [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

/// Stop-gradient: same value, no connection to the inputs' graph.
inline Var detach(const Var& a) { return a.tape()->constant(a.value()); }

inline Var matmul(const Var& a, const Var& b) {
  Tape* tape = detail::tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_rank2("matmul", av);
  detail::require_rank2("matmul", bv);
  if (av.shape()[1] != bv.shape()[0]) throw shape_error("matmul", av.shape(), bv.shape());
  Tensor out(Shape{av.shape()[0], bv.shape()[1]});
  detail::mat(out).noalias() = detail::mat(av) * detail::mat(bv);
  if (!a.requires_grad() && !b.requires_grad()) return tape->constant(std::move(out));
  const std::size_t ia = a.id(), ib = b.id();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return tape->record(std::move(out), [=](Tape& t, const Tensor& g) {
    if (ga) detail::mat(t.grad_buffer(ia)).noalias() += detail::mat(g) * detail::mat(t.value(ib)).transpose();
    if (gb) detail::mat(t.grad_buffer(ib)).noalias() += detail::mat(t.value(ia)).transpose() * detail::mat(g);
  });
}

inline Var transpose(const Var& a) {
  const Tensor& av = a.value();
  detail::require_rank2("transpose", av);
  Tensor out(Shape{av.shape()[1], av.shape()[0]});
  detail::mat(out) = detail::mat(av).transpose();
  if (!a.requires_grad()) return a.tape()->constant(std::move(out));
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), [=](Tape& t, const Tensor& g) {
    detail::mat(t.grad_buffer(ia)) += detail::mat(g).transpose();
  });
}

inline Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a.value().numel()) throw shape_error("reshape", a.shape(), shape);
  Tensor out = a.value().reshaped(std::move(shape));
  if (!a.requires_grad()) return a.tape()->constant(std::move(out));
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), [=](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
  });
}

/// Softmax over the last dimension.
inline Var softmax(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = av.data().data() + i * c;
    double* y = out.data().data() + i * c;
    const double mx = *std::max_element(x, x + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < c; ++j) y[j] /= s;
  }
  if (!a.requires_grad()) return a.tape()->constant(std::move(out));
  const std::size_t ia = a.id(), io = a.tape()->size();
  return a.tape()->record(std::move(out), [=](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(io);
    Tensor& dx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

/// log(softmax(x)) over the last dimension, computed without underflow.
inline Var log_softmax(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = av.data().data() + i * c;
    double* y = out.data().data() + i * c;
    const double mx = *std::max_element(x, x + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) y[j] = x[j] - lse;
  }
  if (!a.requires_grad()) return a.tape()->constant(std::move(out));
  const std::size_t ia = a.id(), io = a.tape()->size();
  return a.tape()->record(std::move(out), [=](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(io);
    Tensor& dx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[i * c + j] - std::exp(y[i * c + j]) * gs;
    }
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  if (!a.requires_grad()) return a.tape()->constant(Tensor::scalar(s));
  const std::size_t ia = a.id();
  return a.tape()->record(Tensor::scalar(s), [=](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(ia);
    const double gv = g[0];
    for (double& v : dx.data()) v += gv;
  });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().numel());
  return scale(sum(a), 1.0 / n);
}

/// Reduces all leading dimensions: result has shape {cols}.
inline Var sum_rows(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out(Shape{c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += av[i * c + j];
  if (!a.requires_grad()) return a.tape()->constant(std::move(out));
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), [=](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[j];
  });
}

inline Var mean_rows(const Var& a) {
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.value().rows()));
}

/// Reduces the last dimension: result has the leading shape.
inline Var sum_last(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Shape s = av.shape();
  if (!s.empty()) s.pop_back();
  Tensor out(s);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += av[i * c + j];
  if (!a.requires_grad()) return a.tape()->constant(std::move(out));
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), [=](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[i];
  });
}

/// Layer normalization over the last dimension with affine gamma/beta of shape {cols}.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6) {
  Tape* tape = detail::tape_of(x, gamma);
  detail::tape_of(x, beta);
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gamma.value().shape() != Shape{c}) throw shape_error("layer_norm", xv.shape(), gamma.shape());
  if (beta.value().shape() != Shape{c}) throw shape_error("layer_norm", xv.shape(), beta.shape());
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xv.data().data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    }
  }
  if (!x.requires_grad() && !gamma.requires_grad() && !beta.requires_grad())
    return tape->constant(std::move(out));
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool gx = x.requires_grad(), gg = gamma.requires_grad(), gb = beta.requires_grad();
  return tape->record(std::move(out), [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                                          Tape& t, const Tensor& g) {
    const Tensor& gam = t.value(ig);
    if (gg) {
      Tensor& dg = t.grad_buffer(ig);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dg[j] += g[i * c + j] * xhat[i * c + j];
    }
    if (gb) {
      Tensor& db = t.grad_buffer(ib);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) db[j] += g[i * c + j];
    }
    if (gx) {
      Tensor& dx = t.grad_buffer(ix);
      const double inv_c = 1.0 / static_cast<double>(c);
      for (std::size_t i = 0; i < r; ++i) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double dxh = g[i * c + j] * gam[j];
          s1 += dxh;
          s2 += dxh * xhat[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) {
          const double dxh = g[i * c + j] * gam[j];
          dx[i * c + j] += inv_std[i] * (dxh - inv_c * s1 - xhat[i * c + j] * inv_c * s2);
        }
      }
    }
  });
}

/// x / max(||x||, eps) along the last dimension.
inline Var l2_normalize(const Var& a, double eps = 1e-12) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out(av.shape());
  std::vector<double> denom(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += av[i * c + j] * av[i * c + j];
    denom[i] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = av[i * c + j] / denom[i];
  }
  if (!a.requires_grad()) return a.tape()->constant(std::move(out));
  const std::size_t ia = a.id(), io = a.tape()->size();
  return a.tape()->record(std::move(out), [=, denom = std::move(denom)](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(io);
    Tensor& dx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i) {
      if (denom[i] <= eps) {
        for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[i * c + j] / eps;
        continue;
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        dx[i * c + j] += (g[i * c + j] - y[i * c + j] * dot) / denom[i];
    }
  });
}

/// Concatenates matrices along rows (dimension 0).
inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Tape* tape = parts.front().tape();
  const std::size_t c = parts.front().value().cols();
  std::size_t total = 0;
  bool any_grad = false;
  for (const Var& p : parts) {
    detail::tape_of(parts.front(), p);
    detail::require_rank2("concat_rows", p.value());
    if (p.value().cols() != c) throw shape_error("concat_rows", parts.front().shape(), p.shape());
    total += p.value().rows();
    any_grad = any_grad || p.requires_grad();
  }
  Tensor out(Shape{total, c});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += src.size();
  }
  if (!any_grad) return tape->constant(std::move(out));
  std::vector<std::pair<std::size_t, std::size_t>> ids;
  for (const Var& p : parts) ids.emplace_back(p.id(), p.requires_grad() ? 1 : 0);
  return tape->record(std::move(out), [ids](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const auto& [id, rg] : ids) {
      const std::size_t n = t.value(id).numel();
      if (rg) {
        Tensor& dx = t.grad_buffer(id);
        for (std::size_t i = 0; i < n; ++i) dx[i] += g[off + i];
      }
      off += n;
    }
  });
}

/// Concatenates along the last dimension; all inputs share the leading shape.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape* tape = parts.front().tape();
  const std::size_t r = parts.front().value().rows();
  Shape lead = parts.front().shape();
  if (lead.empty()) throw ShapeError("concat_cols: scalar input");
  lead.pop_back();
  std::size_t total = 0;
  bool any_grad = false;
  for (const Var& p : parts) {
    detail::tape_of(parts.front(), p);
    Shape pl = p.shape();
    if (pl.empty()) throw ShapeError("concat_cols: scalar input");
    pl.pop_back();
    if (pl != lead) throw shape_error("concat_cols", parts.front().shape(), p.shape());
    total += p.value().cols();
    any_grad = any_grad || p.requires_grad();
  }
  Shape os = lead;
  os.push_back(total);
  Tensor out(os);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const std::size_t c = p.value().cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * total + off + j] = p.value()[i * c + j];
    offsets.push_back(off);
    off += c;
  }
  if (!any_grad) return tape->constant(std::move(out));
  std::vector<std::size_t> ids;
  std::vector<char> rgs;
  for (const Var& p : parts) {
    ids.push_back(p.id());
    rgs.push_back(p.requires_grad() ? 1 : 0);
  }
  return tape->record(std::move(out), [=](Tape& t, const Tensor& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!rgs[k]) continue;
      Tensor& dx = t.grad_buffer(ids[k]);
      const std::size_t c = dx.cols();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[i * total + offsets[k] + j];
    }
  });
}

/// Rows [begin, end) along dimension 0.
inline Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (av.rank() == 0 || begin > end || end > av.shape()[0])
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of bounds for shape " + shape_str(av.shape()));
  Shape s = av.shape();
  const std::size_t stride = av.numel() / s[0];
  s[0] = end - begin;
  Tensor out(s);
  std::copy(av.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
            av.data().begin() + static_cast<std::ptrdiff_t>(end * stride), out.data().begin());
  if (!a.requires_grad()) return a.tape()->constant(std::move(out));
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), [=](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) dx[begin * stride + i] += g[i];
  });
}

/// Columns [begin, end) of the last dimension.
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  if (av.rank() == 0 || begin > end || end > c)
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of bounds for shape " + shape_str(av.shape()));
  const std::size_t w = end - begin;
  Shape s = av.shape();
  s.back() = w;
  Tensor out(s);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = av[i * c + begin + j];
  if (!a.requires_grad()) return a.tape()->constant(std::move(out));
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), [=](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) dx[i * c + begin + j] += g[i * w + j];
  });
}

/// Picks flat elements by index into a vector of shape {indices.size()}.
inline Var gather(const Var& a, std::vector<std::size_t> indices) {
  const Tensor& av = a.value();
  Tensor out(Shape{indices.size()});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= av.numel())
      throw ShapeError("gather: index " + std::to_string(indices[k]) + " out of bounds for shape " +
                       shape_str(av.shape()));
    out[k] = av[indices[k]];
  }
  if (!a.requires_grad()) return a.tape()->constant(std::move(out));
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), [=, indices = std::move(indices)](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(ia);
    for (std::size_t k = 0; k < indices.size(); ++k) dx[indices[k]] += g[k];
  });
}

/// Euclidean distances between all rows of an n x D matrix: n x n.
/// The gradient of a zero distance is taken as zero.
inline Var pairwise_euclidean(const Var& x) {
  const Tensor& xv = x.value();
  detail::require_rank2("pairwise_euclidean", xv);
  const std::size_t n = xv.rows(), d = xv.cols();
  Tensor out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = xv[i * d + k] - xv[j * d + k];
        s += diff * diff;
      }
      out[i * n + j] = out[j * n + i] = std::sqrt(s);
    }
  if (!x.requires_grad()) return x.tape()->constant(std::move(out));
  const std::size_t ix = x.id(), io = x.tape()->size();
  return x.tape()->record(std::move(out), [=](Tape& t, const Tensor& g) {
    const Tensor& xs = t.value(ix);
    const Tensor& dist = t.value(io);
    Tensor& dx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double dij = dist[i * n + j];
        const double w = g[i * n + j] + g[j * n + i];
        if (i >= j || dij <= 0.0 || w == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double c = w * (xs[i * d + k] - xs[j * d + k]) / dij;
          dx[i * d + k] += c;
          dx[j * d + k] -= c;
        }
      }
  });
}

}  // namespace pass
