#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "lobcal/core/error.hpp"
#include "lobcal/lob/order_book.hpp"
#include "lobcal/lob/record.hpp"

namespace lobcal::features {

enum class FeatureKind { Touch, Vwap };

inline const char* to_string(FeatureKind k) { return k == FeatureKind::Touch ? "touch" : "vwap"; }

inline FeatureKind parse_feature_kind(const std::string& s) {
  if (s == "touch") return FeatureKind::Touch;
  if (s == "vwap") return FeatureKind::Vwap;
  throw ParameterError("unknown feature kind '" + s + "' (expected touch|vwap)");
}

/// Values per sampling tick: touch = bid price, bid volume, ask price, ask volume;
/// vwap = bid vwap, ask vwap.
constexpr std::size_t channels(FeatureKind k) noexcept { return k == FeatureKind::Touch ? 4 : 2; }

/// Whether channel `c` of kind `k` carries a price (as opposed to a volume).
constexpr bool is_price_channel(FeatureKind k, std::size_t c) noexcept {
  return k == FeatureKind::Vwap || c == 0 || c == 2;
}

/// Fixed-length observation vector, tick-major: values[t * channels + c].
struct SummarySeries {
  FeatureKind kind = FeatureKind::Touch;
  std::int64_t sample_interval = 1;  ///< timesteps (seconds) per sampling tick
  std::size_t length = 0;            ///< T
  std::vector<double> values;

  [[nodiscard]] std::size_t channel_count() const noexcept { return channels(kind); }
  [[nodiscard]] double at(std::size_t t, std::size_t c) const { return values[t * channel_count() + c]; }

  friend bool operator==(const SummarySeries&, const SummarySeries&) = default;
};

namespace detail {

inline void check_coverage(const std::vector<lob::MarketSnapshot>& snaps, std::size_t T, std::int64_t interval) {
  if (interval < 1) throw ParameterError("sample interval must be >= 1");
  if (T == 0) throw ParameterError("series length T must be >= 1");
  if (snaps.empty()) throw DataError("record is empty; need " + std::to_string(T) + " sampling ticks");
  const std::int64_t need = snaps.front().timestep + static_cast<std::int64_t>(T) * interval - 1;
  if (snaps.back().timestep < need) {
    const std::int64_t have = (snaps.back().timestep - snaps.front().timestep) / interval + 1;
    throw DataError("record covers " + std::to_string(have) + " sampling ticks, need " + std::to_string(T));
  }
}

}  // namespace detail

/// Touch features on a regular grid, last observation carried forward. A missing side is
/// filled with the mid-price and zero volume.
inline SummarySeries extract_touch(const std::vector<lob::MarketSnapshot>& snaps, std::size_t T,
                                   std::int64_t interval = 1) {
  detail::check_coverage(snaps, T, interval);
  SummarySeries s{FeatureKind::Touch, interval, T, {}};
  s.values.reserve(4 * T);
  const std::int64_t t0 = snaps.front().timestep;
  std::size_t i = 0;
  for (std::size_t k = 0; k < T; ++k) {
    const std::int64_t end = t0 + static_cast<std::int64_t>(k + 1) * interval;  // exclusive
    while (i + 1 < snaps.size() && snaps[i + 1].timestep < end) ++i;
    const auto& q = snaps[i];
    const double mid = q.mid_price.value();
    s.values.push_back(q.best_bid_price ? static_cast<double>(*q.best_bid_price) : mid);
    s.values.push_back(q.best_bid_price ? static_cast<double>(q.best_bid_volume) : 0.0);
    s.values.push_back(q.best_ask_price ? static_cast<double>(*q.best_ask_price) : mid);
    s.values.push_back(q.best_ask_price ? static_cast<double>(q.best_ask_volume) : 0.0);
  }
  return s;
}

/// Volume-weighted average of the best-level quotes observed in each sampling interval,
/// weighted by the quoted volume. An interval without quotes on a side carries the previous
/// value forward (or the mid-price before any quote has been seen).
inline SummarySeries extract_vwap(const std::vector<lob::MarketSnapshot>& snaps, std::size_t T,
                                  std::int64_t interval = 1) {
  detail::check_coverage(snaps, T, interval);
  SummarySeries s{FeatureKind::Vwap, interval, T, {}};
  s.values.reserve(2 * T);
  const std::int64_t t0 = snaps.front().timestep;
  std::optional<double> prev_bid, prev_ask;
  std::size_t i = 0;
  double last_mid = snaps.front().mid_price.value();
  for (std::size_t k = 0; k < T; ++k) {
    const std::int64_t end = t0 + static_cast<std::int64_t>(k + 1) * interval;
    double bid_pv = 0.0, bid_v = 0.0, ask_pv = 0.0, ask_v = 0.0;
    for (; i < snaps.size() && snaps[i].timestep < end; ++i) {
      const auto& q = snaps[i];
      last_mid = q.mid_price.value();
      if (q.best_bid_price && q.best_bid_volume > 0) {
        bid_pv += static_cast<double>(*q.best_bid_price) * static_cast<double>(q.best_bid_volume);
        bid_v += static_cast<double>(q.best_bid_volume);
      }
      if (q.best_ask_price && q.best_ask_volume > 0) {
        ask_pv += static_cast<double>(*q.best_ask_price) * static_cast<double>(q.best_ask_volume);
        ask_v += static_cast<double>(q.best_ask_volume);
      }
    }
    if (bid_v > 0.0) prev_bid = bid_pv / bid_v;
    if (ask_v > 0.0) prev_ask = ask_pv / ask_v;
    s.values.push_back(prev_bid.value_or(last_mid));
    s.values.push_back(prev_ask.value_or(last_mid));
  }
  return s;
}

inline SummarySeries extract(FeatureKind kind, const std::vector<lob::MarketSnapshot>& snaps, std::size_t T,
                             std::int64_t interval = 1) {
  return kind == FeatureKind::Touch ? extract_touch(snaps, T, interval) : extract_vwap(snaps, T, interval);
}

/// Per-column affine statistics fitted on a training split. Price channels are first mapped
/// to log-returns against the channel's first sample.
struct NormStats {
  FeatureKind kind = FeatureKind::Touch;
  std::size_t length = 0;
  std::vector<double> mean;
  std::vector<double> scale;
  std::string provenance;  ///< which split the stats came from, e.g. "train:<hash>"
  std::size_t fitted_rows = 0;
  std::size_t zero_variance_columns = 0;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct Normalized {
  std::vector<double> values;
  std::vector<double> anchors;  ///< first sample of each price channel, needed to invert
};

/// Log-return transform of the price channels; volumes pass through.
inline Normalized encode(const SummarySeries& s) {
  const std::size_t C = s.channel_count();
  if (s.values.size() != C * s.length) throw DataError("summary series has inconsistent length");
  Normalized out;
  out.values.resize(s.values.size());
  out.anchors.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    if (!is_price_channel(s.kind, c)) continue;
    out.anchors[c] = s.values[c];
    if (!(out.anchors[c] > 0.0)) throw DataError("price channel starts at a non-positive price");
  }
  for (std::size_t t = 0; t < s.length; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const double v = s.values[t * C + c];
      if (is_price_channel(s.kind, c)) {
        if (!(v > 0.0)) throw DataError("non-positive price in summary series");
        out.values[t * C + c] = std::log(v / out.anchors[c]);
      } else {
        out.values[t * C + c] = v;
      }
    }
  }
  return out;
}

/// Fits per-column mean and standard deviation. Zero-variance columns get scale 1.
inline NormStats fit_stats(std::span<const SummarySeries> training, std::string provenance = "train") {
  if (training.empty()) throw DataError("cannot fit normalisation statistics on an empty set");
  NormStats st;
  st.kind = training.front().kind;
  st.length = training.front().length;
  st.provenance = std::move(provenance);
  st.fitted_rows = training.size();
  const std::size_t n = channels(st.kind) * st.length;
  std::vector<double> sum(n, 0.0), sumsq(n, 0.0);
  std::vector<std::vector<double>> enc;
  enc.reserve(training.size());
  for (const auto& s : training) {
    if (s.kind != st.kind || s.length != st.length) throw DataError("mixed feature kinds or lengths in training set");
    enc.push_back(encode(s).values);
  }
  st.mean.assign(n, 0.0);
  for (const auto& e : enc)
    for (std::size_t j = 0; j < n; ++j) st.mean[j] += e[j];
  for (auto& m : st.mean) m /= static_cast<double>(enc.size());
  st.scale.assign(n, 0.0);
  for (const auto& e : enc)
    for (std::size_t j = 0; j < n; ++j) st.scale[j] += (e[j] - st.mean[j]) * (e[j] - st.mean[j]);
  for (auto& v : st.scale) {
    v = std::sqrt(v / static_cast<double>(enc.size()));
    if (!(v > 1e-12)) {
      v = 1.0;
      ++st.zero_variance_columns;
    }
  }
  if (st.zero_variance_columns > 0) {
    spdlog::warn("{} of {} feature columns have zero variance; their scale is fixed to 1",
                 st.zero_variance_columns, n);
  }
  return st;
}

inline Normalized normalize(const SummarySeries& s, const NormStats& st) {
  if (s.kind != st.kind || s.length != st.length) {
    throw DataError(std::string("feature mismatch: observation is ") + to_string(s.kind) + "/" +
                    std::to_string(s.length) + ", statistics are " + to_string(st.kind) + "/" +
                    std::to_string(st.length));
  }
  Normalized out = encode(s);
  for (std::size_t j = 0; j < out.values.size(); ++j) out.values[j] = (out.values[j] - st.mean[j]) / st.scale[j];
  return out;
}

inline SummarySeries denormalize(const Normalized& n, const NormStats& st) {
  SummarySeries s{st.kind, 1, st.length, {}};
  const std::size_t C = channels(st.kind);
  s.values.resize(n.values.size());
  for (std::size_t t = 0; t < st.length; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t j = t * C + c;
      const double v = n.values[j] * st.scale[j] + st.mean[j];
      s.values[j] = is_price_channel(st.kind, c) ? n.anchors[c] * std::exp(v) : v;
    }
  }
  return s;
}

}  // namespace lobcal::features
