#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "lobcal/nn/ops.hpp"

namespace lobcal::nn {

/// Monotone rational-quadratic spline on [-B, B] with K bins, identity outside.
/// Knot positions come from positive bin widths/heights summing to 2B; the derivative at
/// both outer knots is fixed to 1 so the map joins the identity tails smoothly, leaving
/// K - 1 free interior derivatives.
struct RqSplineSpec {
  std::size_t bins = 8;
  double tail_bound = 3.0;
  double min_bin_width = 1e-3;
  double min_bin_height = 1e-3;
  double min_derivative = 1e-3;

  /// Raw parameters per dimension: K widths, K heights, K - 1 derivatives.
  [[nodiscard]] std::size_t raw_size() const noexcept { return 3 * bins - 1; }
  /// Raw derivative value mapping to a unit derivative after the positive reparameterisation.
  [[nodiscard]] double identity_raw_derivative() const { return std::log(std::expm1(1.0 - min_derivative)); }
};

/// Normalised knots of one spline.
struct RqKnots {
  std::vector<double> widths;       // K, sum 2B
  std::vector<double> heights;      // K, sum 2B
  std::vector<double> derivatives;  // K + 1, boundary entries 1
};

namespace detail {

/// Forward-mode dual number with N tangent directions.
template <std::size_t N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit constant lift
  static Dual seed(double value, std::size_t k) {
    Dual r(value);
    r.d[k] = 1.0;
    return r;
  }
  friend Dual operator+(Dual a, const Dual& b) {
    a.v += b.v;
    for (std::size_t i = 0; i < N; ++i) a.d[i] += b.d[i];
    return a;
  }
  friend Dual operator-(Dual a, const Dual& b) {
    a.v -= b.v;
    for (std::size_t i = 0; i < N; ++i) a.d[i] -= b.d[i];
    return a;
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    Dual r(a.v * b.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    Dual r(a.v / b.v);
    const double inv = 1.0 / (b.v * b.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) * inv;
    return r;
  }
  friend Dual log(const Dual& a) {
    Dual r(std::log(a.v));
    for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] / a.v;
    return r;
  }
};

inline double log(double x) { return std::log(x); }

/// Spline value and log-derivative inside one bin, given bin geometry.
template <class T>
std::pair<T, T> rq_bin_forward(const T& x, const T& x_k, const T& w_k, const T& y_k, const T& h_k, const T& d_k,
                               const T& d_k1) {
  using detail::log;
  const T xi = (x - x_k) / w_k;
  const T s = h_k / w_k;
  const T one(1.0), two(2.0);
  const T xi1 = xi * (one - xi);
  const T num = h_k * (s * xi * xi + d_k * xi1);
  const T den = s + (d_k1 + d_k - two * s) * xi1;
  const T y = y_k + num / den;
  const T dnum = s * s * (d_k1 * xi * xi + two * s * xi1 + d_k * (one - xi) * (one - xi));
  const T logdet = log(dnum) - two * log(den);
  return {y, logdet};
}

inline std::size_t find_bin(std::span<const double> edges, double v) {
  // edges has K + 1 entries; returns k with edges[k] <= v < edges[k+1], clamped to [0, K-1].
  const auto it = std::upper_bound(edges.begin() + 1, edges.end() - 1, v);
  return static_cast<std::size_t>(it - edges.begin()) - 1;
}

inline std::vector<double> cumulative_edges(std::span<const double> sizes, double bound) {
  std::vector<double> e(sizes.size() + 1);
  e[0] = -bound;
  for (std::size_t k = 0; k < sizes.size(); ++k) e[k + 1] = e[k] + sizes[k];
  e.back() = bound;
  return e;
}

}  // namespace detail

/// Applies the positive reparameterisation to raw parameters of one dimension:
/// softmax for widths/heights (with minimum size), softplus for interior derivatives.
inline RqKnots normalize_knots(std::span<const double> raw_w, std::span<const double> raw_h,
                               std::span<const double> raw_d, const RqSplineSpec& spec) {
  const std::size_t K = spec.bins;
  RqKnots k;
  const auto soft = [&](std::span<const double> r, double min_size) {
    std::vector<double> out(K);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (std::size_t i = 0; i < K; ++i) z += (out[i] = std::exp(r[i] - m));
    for (auto& v : out) v = 2.0 * spec.tail_bound * (min_size + (1.0 - min_size * static_cast<double>(K)) * v / z);
    return out;
  };
  k.widths = soft(raw_w, spec.min_bin_width);
  k.heights = soft(raw_h, spec.min_bin_height);
  k.derivatives.assign(K + 1, 1.0);
  for (std::size_t i = 0; i + 1 < K; ++i) k.derivatives[i + 1] = spec.min_derivative + detail::softplus(raw_d[i]);
  return k;
}

/// y = spline(x) and log|dy/dx|.
inline std::pair<double, double> rq_spline_forward(const RqKnots& k, double tail_bound, double x) {
  if (x <= -tail_bound || x >= tail_bound) return {x, 0.0};
  const auto xe = detail::cumulative_edges(k.widths, tail_bound);
  const auto ye = detail::cumulative_edges(k.heights, tail_bound);
  const std::size_t b = detail::find_bin(xe, x);
  return detail::rq_bin_forward<double>(x, xe[b], k.widths[b], ye[b], k.heights[b], k.derivatives[b],
                                        k.derivatives[b + 1]);
}

/// x = spline^{-1}(y) and log|dx/dy|, by solving the bin's quadratic in closed form.
inline std::pair<double, double> rq_spline_inverse(const RqKnots& k, double tail_bound, double y) {
  if (y <= -tail_bound || y >= tail_bound) return {y, 0.0};
  const auto xe = detail::cumulative_edges(k.widths, tail_bound);
  const auto ye = detail::cumulative_edges(k.heights, tail_bound);
  const std::size_t b = detail::find_bin(ye, y);
  const double w = k.widths[b], h = k.heights[b], d0 = k.derivatives[b], d1 = k.derivatives[b + 1];
  const double s = h / w;
  const double dy = y - ye[b];
  const double c2 = d1 + d0 - 2.0 * s;
  const double a = h * (s - d0) + dy * c2;
  const double bq = h * d0 - dy * c2;
  const double c = -s * dy;
  const double disc = std::max(bq * bq - 4.0 * a * c, 0.0);
  double xi = (2.0 * c) / (-bq - std::sqrt(disc));
  xi = std::clamp(xi, 0.0, 1.0);
  const double x = xe[b] + xi * w;
  const auto fwd = detail::rq_bin_forward<double>(x, xe[b], w, ye[b], h, d0, d1);
  return {x, -fwd.second};
}

/// Tape op: elementwise spline of column x (n x 1) with per-row normalised widths (n x K),
/// heights (n x K) and interior derivatives (n x (K-1)). Returns (n x 2) = [y, log|dy/dx|].
/// Gradients flow to x and to all three knot inputs.
inline Var rq_spline(Var x, Var widths, Var heights, Var derivs, double tail_bound) {
  const std::size_t n = x.rows(), K = widths.cols();
  if (x.cols() != 1 || widths.rows() != n || heights.rows() != n || heights.cols() != K || derivs.rows() != n ||
      derivs.cols() + 1 != K) {
    throw ContractError("rq_spline: inconsistent shapes");
  }
  Tape& t = x.tape();
  Matrix out(n, 2);
  std::vector<double> dv(K + 1, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double xv = x.value()[i];
    if (xv <= -tail_bound || xv >= tail_bound) {
      out(i, 0) = xv;
      out(i, 1) = 0.0;
      continue;
    }
    const auto xe = detail::cumulative_edges(widths.value().row_span(i), tail_bound);
    const auto ye = detail::cumulative_edges(heights.value().row_span(i), tail_bound);
    for (std::size_t k = 0; k + 1 < K; ++k) dv[k + 1] = derivs.value()(i, k);
    const std::size_t b = detail::find_bin(xe, xv);
    const auto [y, ld] = detail::rq_bin_forward<double>(xv, xe[b], widths.value()(i, b), ye[b], heights.value()(i, b),
                                                        dv[b], dv[b + 1]);
    out(i, 0) = y;
    out(i, 1) = ld;
  }
  const bool rg = t.any_requires_grad({x, widths, heights, derivs});
  return t.push(std::move(out), rg, [x, widths, heights, derivs, tail_bound](Tape& tp, const Matrix&, const Matrix& g) {
    using D7 = detail::Dual<7>;
    const Matrix& W = tp.value(widths);
    const Matrix& H = tp.value(heights);
    const Matrix& Dm = tp.value(derivs);
    const std::size_t nn = W.rows(), KK = W.cols();
    Matrix* gx = tp.requires_grad(x) ? &tp.grad_ref(x) : nullptr;
    Matrix* gw = tp.requires_grad(widths) ? &tp.grad_ref(widths) : nullptr;
    Matrix* gh = tp.requires_grad(heights) ? &tp.grad_ref(heights) : nullptr;
    Matrix* gd = tp.requires_grad(derivs) ? &tp.grad_ref(derivs) : nullptr;
    std::vector<double> dv(KK + 1, 1.0);
    for (std::size_t i = 0; i < nn; ++i) {
      const double xv = tp.value(x)[i];
      if (xv <= -tail_bound || xv >= tail_bound) {
        if (gx) (*gx)[i] += g(i, 0);
        continue;
      }
      const auto xe = detail::cumulative_edges(W.row_span(i), tail_bound);
      const auto ye = detail::cumulative_edges(H.row_span(i), tail_bound);
      for (std::size_t k = 0; k + 1 < KK; ++k) dv[k + 1] = Dm(i, k);
      const std::size_t b = detail::find_bin(xe, xv);
      // Tangent slots: 0 x, 1 x_b, 2 w_b, 3 y_b, 4 h_b, 5 d_b, 6 d_{b+1}
      const auto [y, ld] = detail::rq_bin_forward<D7>(D7::seed(xv, 0), D7::seed(xe[b], 1), D7::seed(W(i, b), 2),
                                                      D7::seed(ye[b], 3), D7::seed(H(i, b), 4), D7::seed(dv[b], 5),
                                                      D7::seed(dv[b + 1], 6));
      std::array<double, 7> p{};
      for (std::size_t s = 0; s < 7; ++s) p[s] = g(i, 0) * y.d[s] + g(i, 1) * ld.d[s];
      if (gx) (*gx)[i] += p[0];
      // x_b = -B + sum_{j<b} w_j ; the last edge is pinned to B and never used as x_b.
      if (gw) {
        for (std::size_t j = 0; j < b; ++j) (*gw)(i, j) += p[1];
        (*gw)(i, b) += p[2];
      }
      if (gh) {
        for (std::size_t j = 0; j < b; ++j) (*gh)(i, j) += p[3];
        (*gh)(i, b) += p[4];
      }
      if (gd) {
        if (b >= 1) (*gd)(i, b - 1) += p[5];
        if (b + 1 < KK) (*gd)(i, b) += p[6];
      }
    }
  });
}

/// Knot normalisation on the tape: raw (n x (3K-1)) -> widths, heights, interior derivatives.
struct RqKnotVars {
  Var widths;
  Var heights;
  Var derivatives;
};

inline RqKnotVars normalize_knots(Var raw, const RqSplineSpec& spec) {
  const std::size_t K = spec.bins;
  if (raw.cols() != spec.raw_size()) throw ContractError("normalize_knots: expected 3K-1 raw columns");
  const double two_b = 2.0 * spec.tail_bound;
  const auto sized = [&](Var r, double min_size) {
    Var sm = softmax_rows(r);
    return scale(add_scalar(scale(sm, 1.0 - min_size * static_cast<double>(K)), min_size), two_b);
  };
  RqKnotVars k;
  k.widths = sized(slice_cols(raw, 0, K), spec.min_bin_width);
  k.heights = sized(slice_cols(raw, K, K), spec.min_bin_height);
  k.derivatives = add_scalar(softplus(slice_cols(raw, 2 * K, K - 1)), spec.min_derivative);
  return k;
}

}  // namespace lobcal::nn
