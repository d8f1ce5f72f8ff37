#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "lobcal/lob/order_book.hpp"

namespace testsupport {

/// Deliberately naive matcher: resting orders in one flat list, every fill rescans the
/// whole list for the best opposite price, then the earliest (submitted_at, id).
class RescanMatcher {
public:
  struct Result {
    std::vector<lobcal::lob::Trade> trades;
    lobcal::lob::Volume rested = 0;
    lobcal::lob::Volume discarded = 0;
  };

  Result submit(const lobcal::lob::Order& o, lobcal::lob::Timestep clock) {
    using namespace lobcal::lob;
    Result r;
    Volume remaining = o.volume;
    while (remaining > 0) {
      std::optional<std::size_t> best;
      for (std::size_t i = 0; i < resting_.size(); ++i) {
        const Order& m = resting_[i];
        if (m.side == o.side) continue;
        if (o.kind == OrderKind::Limit) {
          if (o.side == Side::Bid && *m.price > *o.price) continue;
          if (o.side == Side::Ask && *m.price < *o.price) continue;
        }
        if (!best || better(m, resting_[*best])) best = i;
      }
      if (!best) break;
      Order& m = resting_[*best];
      const Volume fill = std::min(remaining, m.volume);
      r.trades.push_back(Trade{*m.price, fill, o.side, m.id, o.id, clock});
      remaining -= fill;
      m.volume -= fill;
      if (m.volume == 0) resting_.erase(resting_.begin() + static_cast<std::ptrdiff_t>(*best));
    }
    if (remaining > 0) {
      if (o.kind == OrderKind::Limit) {
        Order rest = o;
        rest.volume = remaining;
        resting_.push_back(rest);
        r.rested = remaining;
      } else {
        r.discarded = remaining;
      }
    }
    return r;
  }

  bool cancel(lobcal::lob::OrderId id) {
    const auto it = std::find_if(resting_.begin(), resting_.end(), [id](const auto& o) { return o.id == id; });
    if (it == resting_.end()) return false;
    resting_.erase(it);
    return true;
  }

  [[nodiscard]] const std::vector<lobcal::lob::Order>& resting() const { return resting_; }

private:
  static bool better(const lobcal::lob::Order& a, const lobcal::lob::Order& b) {
    if (*a.price != *b.price) return a.side == lobcal::lob::Side::Ask ? *a.price < *b.price : *a.price > *b.price;
    if (a.submitted_at != b.submitted_at) return a.submitted_at < b.submitted_at;
    return a.id < b.id;
  }

  std::vector<lobcal::lob::Order> resting_;
};

}  // namespace testsupport

#include <random>
#include <string>

namespace testsupport {

/// Replays one random submission sequence (book kept at <= max_resting orders) through the
/// book and the rescan matcher. Returns an empty string on agreement, else the first
/// discrepancy. Also checks volume conservation and an uncrossed book after every step.
inline std::string replay_random_sequence(std::uint64_t seed, std::size_t steps = 60, std::size_t max_resting = 50) {
  using namespace lobcal::lob;
  std::mt19937_64 rng(seed);
  const auto uni = [&](std::int64_t lo, std::int64_t hi) { return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng); };
  OrderBook book(100);
  RescanMatcher oracle;
  OrderId next_id = 1;
  for (std::size_t k = 0; k < steps; ++k) {
    const Timestep clock = static_cast<Timestep>(k / 3);
    book.set_clock(clock);
    const auto op = uni(0, 9);
    const std::string where = "seed " + std::to_string(seed) + " step " + std::to_string(k);
    if (op <= 1 && !oracle.resting().empty()) {
      const bool absent = uni(0, 4) == 0;
      const OrderId id = absent ? next_id + 1000 : oracle.resting()[static_cast<std::size_t>(uni(0, static_cast<std::int64_t>(oracle.resting().size()) - 1))].id;
      if (book.cancel(id) != oracle.cancel(id)) return where + ": cancel disagreement";
    } else {
      const Side side = uni(0, 1) == 0 ? Side::Bid : Side::Ask;
      const Volume vol = uni(1, 5);
      const bool market = op == 2;
      if (!market && oracle.resting().size() >= max_resting) continue;
      const Order o = market ? Order::market(next_id++, side, vol, clock) : Order::limit(next_id++, side, uni(95, 105), vol, clock);
      const auto got = book.submit(o);
      const auto want = oracle.submit(o, clock);
      if (got.trades != want.trades) return where + ": trade sequence differs";
      if (got.rested != want.rested || got.discarded != want.discarded) return where + ": remainder differs";
      if (o.volume != got.traded() + got.rested + got.discarded) return where + ": volume not conserved";
    }
    if (book.resting_count() != oracle.resting().size()) return where + ": resting count differs";
    const auto bb = book.best_bid(), ba = book.best_ask();
    if (bb && ba && !(*bb < *ba)) return where + ": crossed book";
  }
  return {};
}

}  // namespace testsupport
