#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lobcal/core/error.hpp"
#include "lobcal/core/rng.hpp"
#include "lobcal/lob/order_book.hpp"

namespace lobcal::sim {

using lob::OrderBook;
using lob::Ticks;

/// Continuous Exponential(rate) draw, before any rounding or clamping.
inline double sample_depth_raw(Rng& rng, double rate) {
  if (!(rate > 0.0) || !std::isfinite(rate)) throw ParameterError("depth rate lambda must be > 0");
  return std::exponential_distribution<double>(rate)(rng);
}

/// Rounds a raw depth draw to whole ticks, floors at one tick and caps at `max_depth`.
inline Ticks depth_from_draw(double raw, Ticks max_depth) {
  Ticks d = static_cast<Ticks>(std::llround(raw));
  if (d < 1) d = 1;
  if (max_depth >= 1 && d > max_depth) d = max_depth;
  return d;
}

/// Depth in ticks for a bid placed below a reference mid `mid_floor`:
/// max(1, round(E)) with E ~ Exponential(rate), capped so the bid stays at or above one tick.
inline Ticks sample_depth(Rng& rng, double rate, Ticks mid_floor) {
  return depth_from_draw(sample_depth_raw(rng, rate), mid_floor - 1);
}

/// Number of submissions from `n_agents` agents each acting with probability mean/n_agents.
inline std::int64_t sample_order_count(Rng& rng, std::int64_t n_agents, double mean_count) {
  if (n_agents < 1) throw ParameterError("n_agents must be >= 1");
  if (mean_count < 0.0 || !std::isfinite(mean_count)) throw ParameterError("order rate must be >= 0");
  const double p = mean_count / static_cast<double>(n_agents);
  if (p > 1.0) {
    throw ParameterError("per-agent submission probability " + std::to_string(p) +
                         " exceeds 1 (increase n_agents)");
  }
  if (p == 0.0) return 0;
  return std::binomial_distribution<std::int64_t>(n_agents, p)(rng);
}

/// Cancels each resting order independently with probability `delta`.
/// Draws k ~ Binomial(N_t, delta) and removes k distinct orders chosen uniformly, which has
/// the same law as N_t independent Bernoulli trials but costs O(k).
inline std::int64_t cancel_random(OrderBook& book, double delta, Rng& rng) {
  if (delta < 0.0 || delta > 1.0) throw ParameterError("cancellation probability must lie in [0, 1]");
  const auto n = static_cast<std::int64_t>(book.resting_count());
  if (n == 0 || delta == 0.0) return 0;
  const std::int64_t k = delta == 1.0 ? n : std::binomial_distribution<std::int64_t>(n, delta)(rng);
  for (std::int64_t i = 0; i < k; ++i) {
    const auto remaining = static_cast<std::uint64_t>(book.resting_count());
    const std::uint64_t pick = std::uniform_int_distribution<std::uint64_t>(0, remaining - 1)(rng);
    book.cancel(book.resting_at(pick).id);
  }
  return k;
}

inline lob::Side random_side(Rng& rng) {
  return std::bernoulli_distribution(0.5)(rng) ? lob::Side::Bid : lob::Side::Ask;
}

}  // namespace lobcal::sim
