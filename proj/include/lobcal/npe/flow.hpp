#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "lobcal/core/error.hpp"
#include "lobcal/core/rng.hpp"
#include "lobcal/nn/layers.hpp"
#include "lobcal/nn/rq_spline.hpp"

namespace lobcal::npe {

using nn::Matrix;
using nn::Tape;
using nn::Var;

enum class FlowFlavor { Maf, Nsf };

inline const char* to_string(FlowFlavor f) { return f == FlowFlavor::Maf ? "maf" : "nsf"; }

inline FlowFlavor parse_flow_flavor(const std::string& s) {
  if (s == "maf") return FlowFlavor::Maf;
  if (s == "nsf") return FlowFlavor::Nsf;
  throw ParameterError("unknown flow flavor '" + s + "' (expected maf|nsf)");
}

struct FlowConfig {
  FlowFlavor flavor = FlowFlavor::Nsf;
  std::size_t dim = 2;
  std::size_t context_dim = 0;
  std::size_t n_transforms = 3;
  std::size_t hidden = 128;
  std::size_t hidden_layers = 2;
  nn::RqSplineSpec spline{};
  /// MAF log-scales pass through s = c * tanh(raw / c).
  double max_log_scale = 5.0;
};

/// Conditional normalizing flow q(theta | context) built from autoregressive transforms with
/// a reversal permutation before every transform but the first. The forward direction maps
/// theta to base noise z ~ N(0, I).
class ConditionalFlow {
public:
  ConditionalFlow() = default;

  ConditionalFlow(nn::ParamStore& store, const std::string& name, FlowConfig cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.dim == 0 || cfg.n_transforms == 0) throw ContractError("flow needs dim >= 1 and at least one transform");
    const std::size_t per_dim = cfg.flavor == FlowFlavor::Maf ? 2 : cfg.spline.raw_size();
    for (std::size_t t = 0; t < cfg.n_transforms; ++t) {
      made_.emplace_back(store, name + ".t" + std::to_string(t), cfg.dim, cfg.context_dim, cfg.hidden,
                         cfg.hidden_layers, per_dim, rng);
    }
    reset_to_identity();
  }

  /// Zeroes output weights and sets output biases so every transform is the identity.
  void reset_to_identity() {
    const std::size_t d = cfg_.dim;
    for (auto& m : made_) {
      auto& out = m.output_layer();
      out.weight().value.fill(0.0);
      out.bias().value.fill(0.0);
      if (cfg_.flavor == FlowFlavor::Nsf) {
        const std::size_t K = cfg_.spline.bins;
        const double raw_d = cfg_.spline.identity_raw_derivative();
        for (std::size_t p = 2 * K; p < cfg_.spline.raw_size(); ++p)
          for (std::size_t i = 0; i < d; ++i) out.bias().value[p * d + i] = raw_d;
      }
    }
  }

  [[nodiscard]] const FlowConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] std::size_t dim() const noexcept { return cfg_.dim; }

  /// Context projections, one per transform. `ctx` may be n x c or 1 x c.
  [[nodiscard]] std::vector<Var> project_context(Tape& t, Var ctx) const {
    std::vector<Var> out;
    for (const auto& m : made_) out.push_back(ctx.valid() ? m.project_context(t, ctx) : Var());
    return out;
  }

  /// log q(theta | ctx) for each row (n x 1), recorded on the tape.
  [[nodiscard]] Var log_prob(Tape& t, Var theta, Var ctx) const {
    const auto proj = project_context(t, ctx);
    auto [z, logdet] = forward(t, theta, proj);
    const double c = -0.5 * static_cast<double>(cfg_.dim) * std::log(2.0 * std::numbers::pi);
    return add(add_scalar(nn::scale(nn::row_sum(nn::square(z)), -0.5), c), logdet);
  }

  /// theta -> (z, log|det dz/dtheta|) on the tape.
  [[nodiscard]] std::pair<Var, Var> forward(Tape& t, Var x, const std::vector<Var>& proj) const {
    if (x.cols() != cfg_.dim) throw ContractError("flow input has wrong dimension");
    Var logdet = t.constant(Matrix(x.rows(), 1));
    for (std::size_t k = 0; k < made_.size(); ++k) {
      if (k > 0) x = nn::select_cols(x, reversal());
      const Var out = made_[k].apply(t, x, proj[k]);
      auto [y, ld] = cfg_.flavor == FlowFlavor::Maf ? maf_forward(x, out) : nsf_forward(x, out);
      check_finite(y.value(), k);
      check_finite(ld.value(), k);
      x = y;
      logdet = add(logdet, ld);
    }
    return {x, logdet};
  }

  /// Plain evaluation of log q for each row of theta given a single context row (or none).
  [[nodiscard]] std::vector<double> log_prob(const Matrix& theta, const Matrix& ctx) const {
    Tape t(false);
    const Var lp = log_prob(t, t.constant(theta), ctx.empty() ? Var() : t.constant(ctx));
    return lp.value().storage();
  }

  /// theta -> (z, log|det dz/dtheta|) without gradient recording.
  [[nodiscard]] std::pair<Matrix, std::vector<double>> forward(const Matrix& theta, const Matrix& ctx) const {
    Tape t(false);
    const auto proj = project_context(t, ctx.empty() ? Var() : t.constant(ctx));
    auto [z, ld] = forward(t, t.constant(theta), proj);
    return {z.value(), ld.value().storage()};
  }

  /// z -> (theta, log|det dtheta/dz|). Each transform is inverted one dimension at a time.
  [[nodiscard]] std::pair<Matrix, std::vector<double>> inverse(const Matrix& z, const Matrix& ctx) const {
    const std::size_t n = z.rows(), d = cfg_.dim;
    if (z.cols() != d) throw ContractError("flow inverse input has wrong dimension");
    Tape t(false);
    const auto proj = project_context(t, ctx.empty() ? Var() : t.constant(ctx));
    Matrix y = z;
    std::vector<double> logdet(n, 0.0);
    for (std::size_t k = made_.size(); k-- > 0;) {
      Matrix x(n, d);
      for (std::size_t i = 0; i < d; ++i) {
        const Matrix out = made_[k].apply(t, t.constant(x), proj[k]).value();
        for (std::size_t r = 0; r < n; ++r) x(r, i) = invert_dim(out, r, i, y(r, i)).first;
      }
      // Log-determinant of the forward map at the recovered point, subtracted.
      const Matrix out = made_[k].apply(t, t.constant(x), proj[k]).value();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i) logdet[r] -= forward_dim(out, r, i, x(r, i)).second;
      check_finite(x, k);
      y = k > 0 ? permute(x) : std::move(x);
    }
    return {y, logdet};
  }

  /// Draws n samples of theta given one context row.
  [[nodiscard]] Matrix sample(std::size_t n, const Matrix& ctx, Rng& rng) const {
    Matrix z(n, cfg_.dim);
    for (auto& v : z.storage()) v = standard_normal(rng);
    return inverse(z, ctx).first;
  }

  /// Reversal permutation; its own inverse.
  [[nodiscard]] std::vector<std::size_t> reversal() const {
    std::vector<std::size_t> p(cfg_.dim);
    for (std::size_t i = 0; i < cfg_.dim; ++i) p[i] = cfg_.dim - 1 - i;
    return p;
  }

private:
  [[nodiscard]] Matrix permute(const Matrix& x) const {
    Matrix out(x.rows(), x.cols());
    const auto p = reversal();
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t j = 0; j < x.cols(); ++j) out(r, j) = x(r, p[j]);
    return out;
  }

  static void check_finite(const Matrix& m, std::size_t k) {
    for (double v : m.storage()) {
      if (!std::isfinite(v)) throw NumericError("flow transform " + std::to_string(k) + " produced a non-finite value");
    }
  }

  [[nodiscard]] double soft_clamp(double raw) const { return cfg_.max_log_scale * std::tanh(raw / cfg_.max_log_scale); }

  std::pair<Var, Var> maf_forward(Var x, Var out) const {
    const std::size_t d = cfg_.dim;
    const Var mu = nn::slice_cols(out, 0, d);
    const Var s = nn::scale(nn::tanh(nn::scale(nn::slice_cols(out, d, d), 1.0 / cfg_.max_log_scale)),
                            cfg_.max_log_scale);
    const Var z = nn::mul(nn::sub(x, mu), nn::exp(nn::neg(s)));
    return {z, nn::neg(nn::row_sum(s))};
  }

  std::pair<Var, Var> nsf_forward(Var x, Var out) const {
    const std::size_t d = cfg_.dim, P = cfg_.spline.raw_size();
    std::vector<Var> zs, lds;
    for (std::size_t i = 0; i < d; ++i) {
      std::vector<std::size_t> cols(P);
      for (std::size_t p = 0; p < P; ++p) cols[p] = p * d + i;
      const auto knots = nn::normalize_knots(nn::select_cols(out, std::move(cols)), cfg_.spline);
      const Var yl = nn::rq_spline(nn::slice_cols(x, i, 1), knots.widths, knots.heights, knots.derivatives,
                                   cfg_.spline.tail_bound);
      zs.push_back(nn::slice_cols(yl, 0, 1));
      lds.push_back(nn::slice_cols(yl, 1, 1));
    }
    return {nn::concat_cols(zs), nn::row_sum(nn::concat_cols(lds))};
  }

  [[nodiscard]] nn::RqKnots knots_at(const Matrix& out, std::size_t r, std::size_t i) const {
    const std::size_t d = cfg_.dim, K = cfg_.spline.bins, P = cfg_.spline.raw_size();
    std::vector<double> raw(P);
    for (std::size_t p = 0; p < P; ++p) raw[p] = out(r, p * d + i);
    const std::span<const double> s(raw);
    return nn::normalize_knots(s.subspan(0, K), s.subspan(K, K), s.subspan(2 * K, K - 1), cfg_.spline);
  }

  /// Forward of dimension i for row r: (z_i, log|dz_i/dx_i|).
  [[nodiscard]] std::pair<double, double> forward_dim(const Matrix& out, std::size_t r, std::size_t i,
                                                      double x) const {
    if (cfg_.flavor == FlowFlavor::Maf) {
      const double s = soft_clamp(out(r, cfg_.dim + i));
      return {(x - out(r, i)) * std::exp(-s), -s};
    }
    return nn::rq_spline_forward(knots_at(out, r, i), cfg_.spline.tail_bound, x);
  }

  /// Inverse of dimension i for row r: (x_i, log|dx_i/dz_i|).
  [[nodiscard]] std::pair<double, double> invert_dim(const Matrix& out, std::size_t r, std::size_t i, double z) const {
    if (cfg_.flavor == FlowFlavor::Maf) {
      const double s = soft_clamp(out(r, cfg_.dim + i));
      return {z * std::exp(s) + out(r, i), s};
    }
    return nn::rq_spline_inverse(knots_at(out, r, i), cfg_.spline.tail_bound, z);
  }

  FlowConfig cfg_;
  std::vector<nn::Made> made_;
};

}  // namespace lobcal::npe
