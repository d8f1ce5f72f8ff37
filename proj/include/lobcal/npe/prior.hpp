#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lobcal/core/error.hpp"
#include "lobcal/core/rng.hpp"
#include "lobcal/nn/matrix.hpp"

namespace lobcal::npe {

/// Prior over log10 parameters. Uniform on a box, or an independent Gaussian (used by the
/// analytic toy problems).
struct PriorSpec {
  enum class Kind { Uniform, Gaussian };

  Kind kind = Kind::Uniform;
  std::vector<std::string> names;
  std::vector<double> lower;  ///< Uniform: box lower bound. Gaussian: mean.
  std::vector<double> upper;  ///< Uniform: box upper bound. Gaussian: standard deviation.

  static PriorSpec uniform(std::vector<double> lo, std::vector<double> hi, std::vector<std::string> names = {}) {
    PriorSpec p{Kind::Uniform, std::move(names), std::move(lo), std::move(hi)};
    p.validate();
    return p;
  }
  static PriorSpec gaussian(std::vector<double> mean, std::vector<double> sd, std::vector<std::string> names = {}) {
    PriorSpec p{Kind::Gaussian, std::move(names), std::move(mean), std::move(sd)};
    p.validate();
    return p;
  }

  [[nodiscard]] std::size_t dim() const noexcept { return lower.size(); }

  void validate() const {
    if (lower.empty() || lower.size() != upper.size()) throw ParameterError("prior bounds must be non-empty and equal length");
    if (!names.empty() && names.size() != lower.size()) throw ParameterError("prior names do not match its dimension");
    for (std::size_t i = 0; i < lower.size(); ++i) {
      if (!std::isfinite(lower[i]) || !std::isfinite(upper[i])) throw ParameterError("prior bounds must be finite");
      if (kind == Kind::Uniform && !(lower[i] < upper[i])) {
        throw ParameterError("prior lower bound must be below upper bound in dimension " + std::to_string(i));
      }
      if (kind == Kind::Gaussian && !(upper[i] > 0.0)) throw ParameterError("prior sd must be positive");
    }
  }

  [[nodiscard]] double center(std::size_t i) const { return kind == Kind::Uniform ? 0.5 * (lower[i] + upper[i]) : lower[i]; }

  /// Half-width of the box, or the sd of a Gaussian prior.
  [[nodiscard]] double spread(std::size_t i) const { return kind == Kind::Uniform ? 0.5 * (upper[i] - lower[i]) : upper[i]; }

  /// Prior standard deviation per dimension.
  [[nodiscard]] double sd(std::size_t i) const {
    return kind == Kind::Uniform ? (upper[i] - lower[i]) / std::sqrt(12.0) : upper[i];
  }

  [[nodiscard]] bool contains(std::span<const double> theta) const {
    if (kind == Kind::Gaussian) return true;
    for (std::size_t i = 0; i < dim(); ++i)
      if (theta[i] < lower[i] || theta[i] > upper[i]) return false;
    return true;
  }
};

/// n i.i.d. prior draws, one per row.
inline nn::Matrix sample_prior(const PriorSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  nn::Matrix out(n, spec.dim());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < spec.dim(); ++j) {
      out(r, j) = spec.kind == PriorSpec::Kind::Uniform
                      ? std::uniform_real_distribution<double>(spec.lower[j], spec.upper[j])(rng)
                      : spec.lower[j] + spec.upper[j] * standard_normal(rng);
    }
  }
  return out;
}

/// Affine map theta_std = (theta - offset) / scale, taking the prior box to [-1, 1]
/// (or a Gaussian prior to unit scale).
struct Standardizer {
  std::vector<double> offset;
  std::vector<double> scale;

  static Standardizer from_prior(const PriorSpec& p) {
    Standardizer s;
    for (std::size_t i = 0; i < p.dim(); ++i) {
      s.offset.push_back(p.center(i));
      s.scale.push_back(p.spread(i));
    }
    return s;
  }

  [[nodiscard]] nn::Matrix to_std(const nn::Matrix& theta) const {
    nn::Matrix out = theta;
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t j = 0; j < out.cols(); ++j) out(r, j) = (out(r, j) - offset[j]) / scale[j];
    return out;
  }

  [[nodiscard]] nn::Matrix from_std(const nn::Matrix& z) const {
    nn::Matrix out = z;
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t j = 0; j < out.cols(); ++j) out(r, j) = out(r, j) * scale[j] + offset[j];
    return out;
  }

  /// log|d theta_std / d theta|, constant.
  [[nodiscard]] double log_jacobian() const {
    double s = 0.0;
    for (double v : scale) s -= std::log(v);
    return s;
  }
};

}  // namespace lobcal::npe
