#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lobcal/core/error.hpp"
#include "lobcal/core/rng.hpp"
#include "lobcal/lob/order_book.hpp"
#include "lobcal/lob/record.hpp"
#include "lobcal/sim/order_flow.hpp"

namespace lobcal::sim {

/// Zero-intelligence parameters in natural units.
/// alpha, mu: mean limit / market order counts per timestep; delta: per-order cancellation
/// probability per timestep; lambda: rate of the exponential depth law (1/ticks).
struct ThetaZI {
  static constexpr std::size_t kDim = 4;

  double alpha = 0.0;
  double mu = 0.0;
  double delta = 0.0;
  double lambda = 1.0;

  static ThetaZI from_log10(std::span<const double> v) {
    if (v.size() != kDim) throw ParameterError("ZI theta needs 4 log10 values");
    return ThetaZI{std::pow(10.0, v[0]), std::pow(10.0, v[1]), std::pow(10.0, v[2]), std::pow(10.0, v[3])};
  }
  [[nodiscard]] std::array<double, kDim> to_log10() const {
    return {std::log10(alpha), std::log10(mu), std::log10(delta), std::log10(lambda)};
  }

  void validate() const {
    if (!(alpha >= 0.0) || !(mu >= 0.0)) throw ParameterError("ZI alpha and mu must be >= 0");
    if (!(delta >= 0.0 && delta <= 1.0)) throw ParameterError("ZI delta must lie in [0, 1]");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ParameterError("ZI lambda must be > 0");
  }

  static constexpr std::array<const char*, kDim> names() { return {"alpha", "mu", "delta", "lambda"}; }
};

struct ZIConfig {
  std::int64_t n_agents = 10'000;
  std::int64_t n_steps = 600;
  lob::Ticks initial_price = 10'000;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_agents < 1) throw ParameterError("n_agents must be >= 1");
    if (n_steps < 1) throw ParameterError("n_steps must be >= 1");
    if (initial_price < 1) throw ParameterError("initial_price must be >= 1");
  }
};

/// Per-step bookkeeping, mainly for diagnostics and tests.
struct ZIStepResult {
  std::vector<lob::Trade> trades;
  std::int64_t cancelled = 0;
  std::int64_t limit_orders = 0;
  std::int64_t market_orders = 0;
  std::int64_t limit_fills = 0;         ///< trades caused by limit orders (always 0 for ZI)
  std::vector<double> raw_depths;       ///< filled only when tracing
};

/// Issues order ids for one book.
struct OrderIdSource {
  lob::OrderId next = 1;
  lob::OrderId operator()() noexcept { return next++; }
};

namespace detail {

/// Places a passive limit order around the current mid. The price never crosses the
/// opposite best, so the order always rests.
inline void place_passive_limit(OrderBook& book, lob::Side side, double raw_depth, lob::OrderId id,
                                std::int64_t& fills) {
  const lob::MidPrice mid = book.mid_price();
  lob::Ticks price;
  if (side == lob::Side::Bid) {
    const lob::Ticks ref = mid.floor_ticks();
    price = ref - depth_from_draw(raw_depth, ref - 1);
    if (const auto ask = book.best_ask(); ask && price >= *ask) price = *ask - 1;
    if (price < 1) return;  // no room below a one-tick ask
  } else {
    const lob::Ticks ref = mid.ceil_ticks();
    price = ref + depth_from_draw(raw_depth, 0);
    if (const auto bid = book.best_bid(); bid && price <= *bid) price = *bid + 1;
  }
  const auto exec = book.submit_limit(lob::Order::limit(id, side, price, 1, book.clock()));
  fills += static_cast<std::int64_t>(exec.trades.size());
}

}  // namespace detail

/// One timestep of zero-intelligence order flow, in fixed draw order:
/// cancellations, then limit orders, then market orders. When `quotes` is non-null a
/// snapshot is appended after each of the three phases.
inline ZIStepResult zi_step(OrderBook& book, const ThetaZI& theta, const ZIConfig& config, Rng& rng,
                            OrderIdSource& ids, std::vector<lob::MarketSnapshot>* quotes = nullptr,
                            bool trace = false) {
  ZIStepResult out;
  out.cancelled = cancel_random(book, theta.delta, rng);
  if (quotes) quotes->push_back(book.snapshot());

  out.limit_orders = sample_order_count(rng, config.n_agents, theta.alpha);
  for (std::int64_t i = 0; i < out.limit_orders; ++i) {
    const lob::Side side = random_side(rng);
    const double raw = sample_depth_raw(rng, theta.lambda);
    if (trace) out.raw_depths.push_back(raw);
    detail::place_passive_limit(book, side, raw, ids(), out.limit_fills);
  }
  if (quotes) quotes->push_back(book.snapshot());

  out.market_orders = sample_order_count(rng, config.n_agents, theta.mu);
  for (std::int64_t i = 0; i < out.market_orders; ++i) {
    const lob::Side side = random_side(rng);
    auto exec = book.submit_market(lob::Order::market(ids(), side, 1, book.clock()));
    out.trades.insert(out.trades.end(), exec.trades.begin(), exec.trades.end());
  }
  if (quotes) quotes->push_back(book.snapshot());
  return out;
}

/// Simulates a full session: `n_steps` timesteps with three quote rows per step, then
/// end-of-day expiry. A pure function of (theta, config).
inline lob::SimulationRecord run_zi(const ThetaZI& theta, const ZIConfig& config) {
  theta.validate();
  config.validate();
  Rng rng = make_rng(config.seed);
  OrderBook book(config.initial_price);
  OrderIdSource ids;
  lob::SimulationRecord rec;
  rec.initial_price = config.initial_price;
  rec.snapshots.reserve(static_cast<std::size_t>(config.n_steps) * 3);
  for (std::int64_t t = 0; t < config.n_steps; ++t) {
    book.set_clock(t);
    auto step = zi_step(book, theta, config, rng, ids, &rec.snapshots);
    rec.trades.insert(rec.trades.end(), step.trades.begin(), step.trades.end());
  }
  book.clear_expired();
  return rec;
}

}  // namespace lobcal::sim
