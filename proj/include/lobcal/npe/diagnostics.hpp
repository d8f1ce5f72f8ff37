#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "lobcal/npe/npe.hpp"

namespace lobcal::npe {

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

inline MeanSd mean_sd(std::span<const double> v) {
  MeanSd r;
  if (v.empty()) return r;
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.sd = std::sqrt(ss / static_cast<double>(v.size()));
  return r;
}

/// Root mean square error across dimensions between an estimate and the truth.
inline double rmse(std::span<const double> estimate, std::span<const double> truth) {
  double s = 0.0;
  for (std::size_t j = 0; j < truth.size(); ++j) s += (estimate[j] - truth[j]) * (estimate[j] - truth[j]);
  return std::sqrt(s / static_cast<double>(truth.size()));
}

struct RmseReport {
  MeanSd posterior;                      ///< RMSE of the posterior mean, across test points
  MeanSd prior_baseline;                 ///< RMSE of the prior mean, across test points
  double prior_baseline_expected = 0.0;  ///< closed-form sqrt(E[RMSE^2]) of the prior mean under the prior
  std::vector<double> per_point;
  Matrix posterior_means;                ///< test points x dim, log10
  Matrix posterior_sds;                  ///< test points x dim, log10
  std::vector<double> mean_posterior_sd; ///< per dimension, averaged over test points
  std::vector<double> outside_box_fraction;  ///< per test point, share of draws outside a 3-width expanded box

  [[nodiscard]] double improvement() const { return posterior.mean > 0.0 ? prior_baseline.mean / posterior.mean : 0.0; }
};

/// Closed-form sqrt(E[RMSE^2]) of the prior-mean predictor: mean of per-dimension variances.
inline double prior_mean_rmse_expected(const PriorSpec& p) {
  double s = 0.0;
  for (std::size_t j = 0; j < p.dim(); ++j) s += p.sd(j) * p.sd(j);
  return std::sqrt(s / static_cast<double>(p.dim()));
}

/// Posterior-mean RMSE over held-out pairs using `n_samples` draws per point. Draws for point i
/// use a seed derived from (seed, i), so results do not depend on evaluation order.
inline RmseReport rmse_eval(const NpeModel& model, const Matrix& theta, const Matrix& x, std::size_t n_samples,
                            std::uint64_t seed) {
  const std::size_t m = theta.rows(), d = model.theta_dim();
  if (x.rows() != m) throw DataError("rmse_eval: theta and x row counts differ");
  RmseReport rep;
  rep.posterior_means = Matrix(m, d);
  rep.posterior_sds = Matrix(m, d);
  rep.mean_posterior_sd.assign(d, 0.0);
  std::vector<double> baseline(m);
  std::vector<double> center(d);
  for (std::size_t j = 0; j < d; ++j) center[j] = model.prior().center(j);
  const PriorSpec& pr = model.prior();
  for (std::size_t i = 0; i < m; ++i) {
    Rng rng = make_rng(derive_seed(seed, i));
    const Posterior post = posterior_for(model, x.row_span(i));
    const Matrix s = post.sample(n_samples, rng);
    std::size_t outside = 0;
    for (std::size_t r = 0; r < s.rows(); ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        if (pr.kind != PriorSpec::Kind::Uniform) break;
        const double w = pr.upper[j] - pr.lower[j];
        if (s(r, j) < pr.lower[j] - w || s(r, j) > pr.upper[j] + w) {
          ++outside;
          break;
        }
      }
    }
    rep.outside_box_fraction.push_back(static_cast<double>(outside) / static_cast<double>(std::max<std::size_t>(1, n_samples)));
    for (std::size_t j = 0; j < d; ++j) {
      std::vector<double> col(s.rows());
      for (std::size_t r = 0; r < s.rows(); ++r) col[r] = s(r, j);
      const MeanSd ms = mean_sd(col);
      rep.posterior_means(i, j) = ms.mean;
      rep.posterior_sds(i, j) = ms.sd;
      rep.mean_posterior_sd[j] += ms.sd / static_cast<double>(m);
    }
    rep.per_point.push_back(rmse(rep.posterior_means.row_span(i), theta.row_span(i)));
    baseline[i] = rmse(center, theta.row_span(i));
  }
  rep.posterior = mean_sd(rep.per_point);
  rep.prior_baseline = mean_sd(baseline);
  rep.prior_baseline_expected = prior_mean_rmse_expected(model.prior());
  return rep;
}

// ---------------------------------------------------------------------------------------
// Simulation-based calibration.

struct SbcResult {
  std::size_t n_posterior_samples = 0;  ///< L; ranks take values 0..L
  std::size_t bins = 0;
  std::vector<std::vector<std::size_t>> ranks;      ///< per draw, per dimension
  std::vector<std::vector<std::size_t>> histogram;  ///< per dimension, per bin
  std::vector<double> chi2;                         ///< per dimension
  std::vector<double> p_value;                      ///< per dimension

  /// True when every dimension's uniformity p-value is at least alpha.
  [[nodiscard]] bool passes(double alpha) const {
    if (p_value.empty()) return false;
    for (double p : p_value)
      if (!(p >= alpha)) return false;
    return true;
  }
};

/// Draws `count` posterior samples (rows, log10 space) given a normalised observation.
using PosteriorSampler = std::function<Matrix(std::span<const double> observation, std::size_t count, Rng& rng)>;
/// Simulates a normalised observation for log10 parameters.
using ObservationSimulator = std::function<std::vector<double>(std::span<const double> theta, Rng& rng)>;

/// Chi-square uniformity statistic for ranks in 0..L grouped into `bins` bins of
/// floor(rank * bins / (L + 1)); expected counts account for unequal bin widths.
inline std::pair<double, double> rank_uniformity(const std::vector<std::size_t>& hist, std::size_t L, std::size_t n) {
  const std::size_t B = hist.size();
  std::vector<double> width(B, 0.0);
  for (std::size_t r = 0; r <= L; ++r) width[r * B / (L + 1)] += 1.0;
  double chi2 = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double e = static_cast<double>(n) * width[b] / static_cast<double>(L + 1);
    chi2 += (static_cast<double>(hist[b]) - e) * (static_cast<double>(hist[b]) - e) / e;
  }
  const boost::math::chi_squared dist(static_cast<double>(B - 1));
  return {chi2, boost::math::cdf(boost::math::complement(dist, chi2))};
}

/// For each of n_draws: theta ~ prior, x ~ simulator(theta), rank of theta among L posterior
/// draws per dimension.
inline SbcResult sbc_ranks(const PriorSpec& prior, const PosteriorSampler& sampler, const ObservationSimulator& simulate,
                           std::size_t n_draws, std::uint64_t seed, std::size_t L = 100, std::size_t bins = 10) {
  if (bins == 0 || bins > L + 1) throw ParameterError("sbc bins must lie in [1, L + 1]");
  const std::size_t d = prior.dim();
  SbcResult res;
  res.n_posterior_samples = L;
  res.bins = bins;
  res.histogram.assign(d, std::vector<std::size_t>(bins, 0));
  for (std::size_t k = 0; k < n_draws; ++k) {
    Rng rng = make_rng(derive_seed(seed, k));
    const Matrix theta = sample_prior(prior, 1, rng);
    const auto obs = simulate(theta.row_span(0), rng);
    const Matrix s = sampler(obs, L, rng);
    std::vector<std::size_t> rank(d, 0);
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t r = 0; r < s.rows(); ++r) rank[j] += s(r, j) < theta(0, j) ? 1 : 0;
      ++res.histogram[j][rank[j] * bins / (L + 1)];
    }
    res.ranks.push_back(std::move(rank));
  }
  if (n_draws > 0) {
    for (std::size_t j = 0; j < d; ++j) {
      auto [c, p] = rank_uniformity(res.histogram[j], L, n_draws);
      res.chi2.push_back(c);
      res.p_value.push_back(p);
    }
  }
  return res;
}

/// SBC of a trained model.
inline SbcResult sbc_ranks(const NpeModel& model, const ObservationSimulator& simulate, std::size_t n_draws,
                           std::uint64_t seed, std::size_t L = 100, std::size_t bins = 10) {
  const PosteriorSampler sampler = [&model](std::span<const double> obs, std::size_t count, Rng& rng) {
    return posterior_for(model, obs).sample(count, rng);
  };
  return sbc_ranks(model.prior(), sampler, simulate, n_draws, seed, L, bins);
}

}  // namespace lobcal::npe
