#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "lobcal/core/error.hpp"
#include "lobcal/lob/record.hpp"

namespace lobcal::facts {

/// r_t = ln(p_{t+h} / p_t), overlapping, length n - h.
inline std::vector<double> log_returns(std::span<const double> prices, std::size_t horizon = 1) {
  if (horizon < 1) throw ParameterError("return horizon must be >= 1");
  for (double p : prices) {
    if (!(p > 0.0)) throw DataError("log returns need strictly positive prices");
  }
  std::vector<double> r;
  if (prices.size() <= horizon) return r;
  r.reserve(prices.size() - horizon);
  for (std::size_t t = 0; t + horizon < prices.size(); ++t) r.push_back(std::log(prices[t + horizon] / prices[t]));
  return r;
}

inline double mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

/// Biased sample autocorrelation for lags 0..max_lag. nullopt when the series is constant.
inline std::optional<std::vector<double>> acf(std::span<const double> x, std::size_t max_lag) {
  if (x.size() <= max_lag) throw DataError("acf needs more samples than max_lag");
  const double m = mean(x);
  double denom = 0.0;
  for (double v : x) denom += (v - m) * (v - m);
  if (!(denom > 0.0)) return std::nullopt;
  std::vector<double> out(max_lag + 1);
  for (std::size_t k = 0; k <= max_lag; ++k) {
    double num = 0.0;
    for (std::size_t t = 0; t + k < x.size(); ++t) num += (x[t] - m) * (x[t + k] - m);
    out[k] = num / denom;
  }
  return out;
}

struct Moments {
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};

/// Population skewness and excess kurtosis; nullopt for fewer than 2 samples or zero variance.
inline std::optional<Moments> moments(std::span<const double> x) {
  if (x.size() < 2) return std::nullopt;
  const double m = mean(x);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - m;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  const auto n = static_cast<double>(x.size());
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (!(m2 > 0.0)) return std::nullopt;
  return Moments{m3 / std::pow(m2, 1.5), m4 / (m2 * m2) - 3.0};
}

/// Anis-Lloyd expected R/S of i.i.d. noise for window n, with the Peters small-sample factor.
inline double expected_rescaled_range(std::size_t n) {
  const auto nd = static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t i = 1; i < n; ++i) sum += std::sqrt((nd - static_cast<double>(i)) / static_cast<double>(i));
  double front;
  if (n <= 340) {
    front = std::exp(std::lgamma((nd - 1.0) / 2.0) - std::lgamma(nd / 2.0)) / std::sqrt(std::numbers::pi);
  } else {
    front = 1.0 / std::sqrt(nd * std::numbers::pi / 2.0);
  }
  return (nd - 0.5) / nd * front * sum;
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

inline std::optional<LineFit> ols(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) return std::nullopt;
  const double b = sxy / sxx;
  return LineFit{b, my - b * mx};
}

/// Mean rescaled range R/S over the non-overlapping windows of size n; nullopt if every
/// window is constant.
inline std::optional<double> rescaled_range(std::span<const double> x, std::size_t n) {
  const std::size_t chunks = x.size() / n;
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const auto w = x.subspan(c * n, n);
    const double m = mean(w);
    double cum = 0.0, lo = 0.0, hi = 0.0, ss = 0.0;
    for (double v : w) {
      cum += v - m;
      lo = std::min(lo, cum);
      hi = std::max(hi, cum);
      ss += (v - m) * (v - m);
    }
    const double s = std::sqrt(ss / static_cast<double>(n));
    if (s > 0.0) {
      total += (hi - lo) / s;
      ++used;
    }
  }
  if (used == 0) return std::nullopt;
  return total / static_cast<double>(used);
}

/// Hurst exponent by rescaled-range analysis over dyadic windows 16, 32, ..., N/4, with the
/// Anis-Lloyd-Peters bias correction: H = 0.5 + slope of log(R/S) - log E[R/S] on log n.
/// Needs at least 512 samples.
inline std::optional<double> hurst(std::span<const double> x) {
  if (x.size() < 512) return std::nullopt;
  std::vector<double> lx, ly;
  for (std::size_t n = 16; n <= x.size() / 4; n *= 2) {
    const auto rs = rescaled_range(x, n);
    if (!rs || !(*rs > 0.0)) continue;
    lx.push_back(std::log(static_cast<double>(n)));
    ly.push_back(std::log(*rs) - std::log(expected_rescaled_range(n)));
  }
  const auto fit = ols(lx, ly);
  if (!fit) return std::nullopt;
  return 0.5 + fit->slope;
}

/// Pearson correlation; nullopt when either side has zero variance.
inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("pearson: length mismatch");
  if (a.size() < 2) return std::nullopt;
  const double ma = mean(a), mb = mean(b);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

/// Splits into consecutive non-overlapping windows; the incomplete tail is dropped.
struct Windowed {
  std::vector<double> volatility;  ///< population std of returns in the window
  std::vector<double> mean_return;
  std::vector<double> volume;      ///< summed volume in the window
};

inline Windowed windowed(std::span<const double> returns, std::span<const double> volumes, std::size_t window) {
  if (window < 2) throw ParameterError("window must be >= 2");
  Windowed w;
  for (std::size_t s = 0; s + window <= returns.size(); s += window) {
    const auto r = returns.subspan(s, window);
    const double m = mean(r);
    double ss = 0.0;
    for (double v : r) ss += (v - m) * (v - m);
    w.volatility.push_back(std::sqrt(ss / static_cast<double>(window)));
    w.mean_return.push_back(m);
    if (!volumes.empty()) {
      double vs = 0.0;
      for (std::size_t i = s; i < s + window; ++i) vs += volumes[i];
      w.volume.push_back(vs);
    }
  }
  return w;
}

/// Correlation between windowed realised volatility and windowed summed volume.
/// `volumes[i]` is the volume traded alongside `returns[i]`.
inline std::optional<double> vol_volume_correlation(std::span<const double> returns, std::span<const double> volumes,
                                                    std::size_t window) {
  if (returns.size() != volumes.size()) throw DataError("returns and volumes differ in length");
  const auto w = windowed(returns, volumes, window);
  return pearson(w.volatility, w.volume);
}

/// Correlation between windowed mean return and windowed realised volatility.
inline std::optional<double> ret_vol_correlation(std::span<const double> returns, std::size_t window) {
  const auto w = windowed(returns, {}, window);
  return pearson(w.mean_return, w.volatility);
}

/// Power-law exponent of price impact: observations are bucketed into log-spaced volume
/// bins, and log(mean |move|) is regressed on log(mean volume) across bins with a
/// positive mean move.
inline std::optional<double> price_impact(std::span<const double> volumes, std::span<const double> moves,
                                          std::size_t buckets = 10) {
  if (volumes.size() != moves.size()) throw DataError("impact: length mismatch");
  double vmin = 0.0, vmax = 0.0;
  bool any = false;
  for (double v : volumes) {
    if (!(v > 0.0)) continue;
    vmin = any ? std::min(vmin, v) : v;
    vmax = any ? std::max(vmax, v) : v;
    any = true;
  }
  if (!any || !(vmax > vmin) || buckets < 2) return std::nullopt;
  const double lo = std::log(vmin), width = (std::log(vmax) - lo) / static_cast<double>(buckets);
  std::vector<double> sv(buckets, 0.0), sm(buckets, 0.0);
  std::vector<std::size_t> cnt(buckets, 0);
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    if (!(volumes[i] > 0.0)) continue;
    auto b = static_cast<std::size_t>((std::log(volumes[i]) - lo) / width);
    b = std::min(b, buckets - 1);
    sv[b] += volumes[i];
    sm[b] += std::abs(moves[i]);
    ++cnt[b];
  }
  std::vector<double> lx, ly;
  for (std::size_t b = 0; b < buckets; ++b) {
    if (cnt[b] == 0 || !(sm[b] > 0.0)) continue;
    lx.push_back(std::log(sv[b] / static_cast<double>(cnt[b])));
    ly.push_back(std::log(sm[b] / static_cast<double>(cnt[b])));
  }
  const auto fit = ols(lx, ly);
  if (!fit) return std::nullopt;
  return fit->slope;
}

/// Method-of-moments Gamma shape mean^2 / variance; nullopt for constant or empty input.
inline std::optional<double> fit_gamma(std::span<const double> volumes) {
  if (volumes.size() < 2) return std::nullopt;
  const double m = mean(volumes);
  double var = 0.0;
  for (double v : volumes) var += (v - m) * (v - m);
  var /= static_cast<double>(volumes.size());
  if (!(var > 0.0) || !(m > 0.0)) return std::nullopt;
  return m * m / var;
}

// ---------------------------------------------------------------------------------------
// Record-level view and aggregate report

/// Per-second series read off a record: end-of-second mid, traded volume and touch volumes.
struct TickSeries {
  std::vector<double> mid;
  std::vector<double> traded_volume;
  std::vector<double> bid_volume;
  std::vector<double> ask_volume;
  bool has_trades = false;
};

inline TickSeries tick_series(const lob::SimulationRecord& rec) {
  TickSeries ts;
  if (rec.snapshots.empty()) return ts;
  const std::int64_t t0 = rec.snapshots.front().timestep;
  const std::int64_t t1 = rec.snapshots.back().timestep;
  const auto n = static_cast<std::size_t>(t1 - t0 + 1);
  ts.mid.assign(n, 0.0);
  ts.bid_volume.assign(n, 0.0);
  ts.ask_volume.assign(n, 0.0);
  ts.traded_volume.assign(n, 0.0);
  std::size_t i = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::int64_t t = t0 + static_cast<std::int64_t>(k);
    while (i + 1 < rec.snapshots.size() && rec.snapshots[i + 1].timestep <= t) ++i;
    const auto& q = rec.snapshots[i];
    ts.mid[k] = q.mid_price.value();
    ts.bid_volume[k] = static_cast<double>(q.best_bid_volume);
    ts.ask_volume[k] = static_cast<double>(q.best_ask_volume);
  }
  ts.has_trades = !rec.trades.empty();
  for (const auto& tr : rec.trades) {
    if (tr.timestep < t0 || tr.timestep > t1) continue;
    ts.traded_volume[static_cast<std::size_t>(tr.timestep - t0)] += static_cast<double>(tr.volume);
  }
  return ts;
}

struct HorizonMoments {
  std::size_t horizon = 1;
  std::optional<double> skewness;
  std::optional<double> excess_kurtosis;
};

struct StylisedFactReport {
  std::vector<HorizonMoments> horizons;
  std::optional<std::vector<double>> acf_returns;
  std::optional<std::vector<double>> acf_abs_returns;
  std::optional<double> hurst;  ///< of absolute 1-step returns
  std::optional<double> vol_volume_corr;
  std::optional<double> ret_vol_corr;
  std::optional<double> impact_exponent;
  std::optional<double> gamma_shape_bid;
  std::optional<double> gamma_shape_ask;
};

struct FactsOptions {
  std::vector<std::size_t> horizons{1, 60};
  std::size_t max_lag = 50;
  std::size_t window = 30;
  std::size_t impact_buckets = 10;
};

/// Computes every metric on one record. Return-based metrics are undefined (nullopt) for a
/// flat price path; volume-based ones need a trade log.
inline StylisedFactReport report(const lob::SimulationRecord& rec, const FactsOptions& opt = {}) {
  StylisedFactReport r;
  const TickSeries ts = tick_series(rec);
  const auto ret = log_returns(ts.mid, 1);
  for (std::size_t h : opt.horizons) {
    HorizonMoments hm{h, std::nullopt, std::nullopt};
    const auto rh = log_returns(ts.mid, h);
    if (const auto m = moments(rh)) {
      hm.skewness = m->skewness;
      hm.excess_kurtosis = m->excess_kurtosis;
    }
    r.horizons.push_back(hm);
  }
  std::vector<double> abs_ret(ret.size());
  std::transform(ret.begin(), ret.end(), abs_ret.begin(), [](double v) { return std::abs(v); });
  if (ret.size() > opt.max_lag) {
    r.acf_returns = acf(ret, opt.max_lag);
    r.acf_abs_returns = acf(abs_ret, opt.max_lag);
  }
  r.hurst = hurst(abs_ret);
  if (ts.has_trades && !ret.empty()) {
    const std::span<const double> vol(ts.traded_volume.data() + 1, ret.size());
    r.vol_volume_corr = vol_volume_correlation(ret, vol, opt.window);
    std::vector<double> moves(ret.size());
    for (std::size_t k = 0; k < ret.size(); ++k) moves[k] = ts.mid[k + 1] - ts.mid[k];
    r.impact_exponent = price_impact(vol, moves, opt.impact_buckets);
  }
  if (!ret.empty()) r.ret_vol_corr = ret_vol_correlation(ret, opt.window);
  r.gamma_shape_bid = fit_gamma(ts.bid_volume);
  r.gamma_shape_ask = fit_gamma(ts.ask_volume);
  return r;
}

}  // namespace lobcal::facts
