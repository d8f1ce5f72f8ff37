#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lobcal/nn/tape.hpp"

namespace lobcal::nn {

namespace detail {

inline void check_same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands live on different tapes");
}

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  check_same_tape(a, b, op);
  if (!a.value().same_shape(b.value())) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_string(a.value()) + " vs " +
                        shape_string(b.value()));
  }
}

/// Elementwise op; `deriv(x, y)` is dy/dx given input x and output y.
template <class F, class D>
Var unary(Var a, F f, D deriv) {
  Tape& t = a.tape();
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return t.push(std::move(y), t.requires_grad(a), [a, deriv](Tape& tp, const Matrix& yv, const Matrix& g) {
    const Matrix& xv = tp.value(a);
    Matrix& ga = tp.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw ContractError("matmul: inner dimensions differ " + shape_string(a.value()) + " x " + shape_string(b.value()));
  }
  Tape& t = a.tape();
  Matrix out(a.rows(), b.cols());
  gemm_nn(a.value(), b.value(), out);
  return t.push(std::move(out), t.any_requires_grad({a, b}), [a, b](Tape& tp, const Matrix&, const Matrix& g) {
    if (tp.requires_grad(a)) gemm_nt(g, tp.value(b), tp.grad_ref(a));
    if (tp.requires_grad(b)) gemm_tn(tp.value(a), g, tp.grad_ref(b));
  });
}

namespace detail {

inline void add_row_bias(Matrix& out, const Matrix& bias) {
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bias[j];
}

inline void accumulate_colsum(const Matrix& g, Matrix& gb) {
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
}

}  // namespace detail

/// x W + b with x (n x in), W (in x out), b (1 x out) broadcast over rows.
inline Var linear(Var x, Var w, Var b) {
  detail::check_same_tape(x, w, "linear");
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw ContractError("linear: incompatible shapes x" + shape_string(x.value()) + " W" + shape_string(w.value()) +
                        " b" + shape_string(b.value()));
  }
  Tape& t = x.tape();
  Matrix out(x.rows(), w.cols());
  gemm_nn(x.value(), w.value(), out);
  detail::add_row_bias(out, b.value());
  return t.push(std::move(out), t.any_requires_grad({x, w, b}), [x, w, b](Tape& tp, const Matrix&, const Matrix& g) {
    if (tp.requires_grad(x)) gemm_nt(g, tp.value(w), tp.grad_ref(x));
    if (tp.requires_grad(w)) gemm_tn(tp.value(x), g, tp.grad_ref(w));
    if (tp.requires_grad(b)) detail::accumulate_colsum(g, tp.grad_ref(b));
  });
}

/// x (W * mask) + b: a dense layer whose connectivity is restricted by a fixed 0/1 mask.
inline Var masked_linear(Var x, Var w, const Matrix& mask, Var b) {
  detail::check_same_tape(x, w, "masked_linear");
  if (!mask.same_shape(w.value())) throw ContractError("masked_linear: mask shape differs from weight shape");
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw ContractError("masked_linear: incompatible shapes");
  }
  Tape& t = x.tape();
  Matrix eff = w.value();
  for (std::size_t i = 0; i < eff.size(); ++i) eff[i] *= mask[i];
  Matrix out(x.rows(), w.cols());
  gemm_nn(x.value(), eff, out);
  detail::add_row_bias(out, b.value());
  return t.push(std::move(out), t.any_requires_grad({x, w, b}),
                [x, w, b, mask, eff = std::move(eff)](Tape& tp, const Matrix&, const Matrix& g) {
                  if (tp.requires_grad(x)) gemm_nt(g, eff, tp.grad_ref(x));
                  if (tp.requires_grad(w)) {
                    Matrix gw(eff.rows(), eff.cols());
                    gemm_tn(tp.value(x), g, gw);
                    Matrix& acc = tp.grad_ref(w);
                    for (std::size_t i = 0; i < gw.size(); ++i) acc[i] += gw[i] * mask[i];
                  }
                  if (tp.requires_grad(b)) detail::accumulate_colsum(g, tp.grad_ref(b));
                });
}

inline Var add(Var a, Var b) {
  detail::check_same_shape(a, b, "add");
  Tape& t = a.tape();
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return t.push(std::move(out), t.any_requires_grad({a, b}), [a, b](Tape& tp, const Matrix&, const Matrix& g) {
    for (const Var& v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      Matrix& gv = tp.grad_ref(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::check_same_shape(a, b, "sub");
  Tape& t = a.tape();
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return t.push(std::move(out), t.any_requires_grad({a, b}), [a, b](Tape& tp, const Matrix&, const Matrix& g) {
    if (tp.requires_grad(a)) {
      Matrix& ga = tp.grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(b)) {
      Matrix& gb = tp.grad_ref(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::check_same_shape(a, b, "mul");
  Tape& t = a.tape();
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return t.push(std::move(out), t.any_requires_grad({a, b}), [a, b](Tape& tp, const Matrix&, const Matrix& g) {
    if (tp.requires_grad(a)) {
      Matrix& ga = tp.grad_ref(a);
      const Matrix& bv = tp.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(b)) {
      Matrix& gb = tp.grad_ref(b);
      const Matrix& av = tp.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

/// a (n x m) + v (1 x m) broadcast over rows.
inline Var add_rowvec(Var a, Var v) {
  detail::check_same_tape(a, v, "add_rowvec");
  if (v.rows() != 1 || v.cols() != a.cols()) throw ContractError("add_rowvec: vector shape mismatch");
  Tape& t = a.tape();
  Matrix out = a.value();
  detail::add_row_bias(out, v.value());
  return t.push(std::move(out), t.any_requires_grad({a, v}), [a, v](Tape& tp, const Matrix&, const Matrix& g) {
    if (tp.requires_grad(a)) {
      Matrix& ga = tp.grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(v)) detail::accumulate_colsum(g, tp.grad_ref(v));
  });
}

/// Elementwise product with a constant matrix (masks, dropout).
inline Var mul_const(Var a, Matrix c) {
  if (!c.same_shape(a.value())) throw ContractError("mul_const: shape mismatch");
  Tape& t = a.tape();
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  return t.push(std::move(out), t.requires_grad(a), [a, c = std::move(c)](Tape& tp, const Matrix&, const Matrix& g) {
    Matrix& ga = tp.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c[i];
  });
}

inline Var scale(Var a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var add_scalar(Var a, double s) {
  return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Var neg(Var a) { return scale(a, -1.0); }

/// NaN passes through so that divergence is not masked.
inline Var relu(Var a) {
  return detail::unary(a, [](double x) { return x <= 0.0 ? 0.0 : x; }, [](double x, double) { return x <= 0.0 ? 0.0 : 1.0; });
}

inline Var tanh(Var a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(Var a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var softplus(Var a) {
  return detail::unary(a, [](double x) { return detail::softplus(x); },
                       [](double x, double) { return detail::sigmoid(x); });
}

inline Var sigmoid(Var a) {
  return detail::unary(a, [](double x) { return detail::sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var square(Var a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// Sum of all entries, as a 1x1 node.
inline Var sum(Var a) {
  Tape& t = a.tape();
  double s = 0.0;
  for (double v : a.value().storage()) s += v;
  return t.push(Matrix(1, 1, s), t.requires_grad(a), [a](Tape& tp, const Matrix&, const Matrix& g) {
    Matrix& ga = tp.grad_ref(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

inline Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

/// Per-row sum: (n x m) -> (n x 1).
inline Var row_sum(Var a) {
  Tape& t = a.tape();
  const Matrix& x = a.value();
  Matrix out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out[i] += x(i, j);
  return t.push(std::move(out), t.requires_grad(a), [a](Tape& tp, const Matrix&, const Matrix& g) {
    Matrix& ga = tp.grad_ref(a);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g[i];
  });
}

/// Row-wise softmax.
inline Var softmax_rows(Var a) {
  Tape& t = a.tape();
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row_span(i);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) z += (y(i, j) = std::exp(r[j] - m));
    for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) /= z;
  }
  return t.push(std::move(y), t.requires_grad(a), [a](Tape& tp, const Matrix& yv, const Matrix& g) {
    Matrix& ga = tp.grad_ref(a);
    for (std::size_t i = 0; i < yv.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < yv.cols(); ++j) dot += g(i, j) * yv(i, j);
      for (std::size_t j = 0; j < yv.cols(); ++j) ga(i, j) += yv(i, j) * (g(i, j) - dot);
    }
  });
}

/// Gathers columns by index (duplicates allowed); gradients scatter back.
inline Var select_cols(Var a, std::vector<std::size_t> idx) {
  Tape& t = a.tape();
  const Matrix& x = a.value();
  for (std::size_t c : idx)
    if (c >= x.cols()) throw ContractError("select_cols: column index out of range");
  Matrix out(x.rows(), idx.size());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j) out(i, j) = x(i, idx[j]);
  return t.push(std::move(out), t.requires_grad(a), [a, idx = std::move(idx)](Tape& tp, const Matrix&, const Matrix& g) {
    Matrix& ga = tp.grad_ref(a);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < idx.size(); ++j) ga(i, idx[j]) += g(i, j);
  });
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  std::vector<std::size_t> idx(count);
  for (std::size_t j = 0; j < count; ++j) idx[j] = begin + j;
  return select_cols(a, std::move(idx));
}

/// Horizontal concatenation of matrices with equal row counts.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  Tape& t = parts.front().tape();
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (&p.tape() != &t || p.rows() != n) throw ContractError("concat_cols: row count or tape mismatch");
    total += p.cols();
    rg = rg || t.requires_grad(p);
  }
  Matrix out(n, total);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out(i, off + j) = v(i, j);
    off += v.cols();
  }
  return t.push(std::move(out), rg, [parts](Tape& tp, const Matrix&, const Matrix& g) {
    std::size_t o = 0;
    for (const Var& p : parts) {
      const std::size_t c = tp.value(p).cols();
      if (tp.requires_grad(p)) {
        Matrix& gp = tp.grad_ref(p);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < c; ++j) gp(i, j) += g(i, o + j);
      }
      o += c;
    }
  });
}

}  // namespace lobcal::nn
