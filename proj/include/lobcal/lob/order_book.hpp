#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lobcal/core/error.hpp"

namespace lobcal::lob {

using Ticks = std::int64_t;
using Volume = std::int64_t;
using OrderId = std::int64_t;
using Timestep = std::int64_t;

enum class Side : std::uint8_t { Bid, Ask };
enum class OrderKind : std::uint8_t { Limit, Market };

constexpr Side opposite(Side s) noexcept { return s == Side::Bid ? Side::Ask : Side::Bid; }

struct Order {
  OrderId id = 0;
  Side side = Side::Bid;
  OrderKind kind = OrderKind::Limit;
  std::optional<Ticks> price;
  Volume volume = 1;
  Timestep submitted_at = 0;
  std::int64_t agent_id = 0;

  static Order limit(OrderId id, Side side, Ticks price, Volume volume, Timestep t = 0, std::int64_t agent = 0) {
    return Order{id, side, OrderKind::Limit, price, volume, t, agent};
  }
  static Order market(OrderId id, Side side, Volume volume, Timestep t = 0, std::int64_t agent = 0) {
    return Order{id, side, OrderKind::Market, std::nullopt, volume, t, agent};
  }
};

struct Trade {
  Ticks price = 0;
  Volume volume = 0;
  Side aggressor_side = Side::Bid;
  OrderId maker_order_id = 0;
  OrderId taker_order_id = 0;
  Timestep timestep = 0;

  friend bool operator==(const Trade&, const Trade&) = default;
};

/// Exact mid-price stored as a count of half ticks.
struct MidPrice {
  std::int64_t half_ticks = 0;

  static constexpr MidPrice from_ticks(Ticks t) noexcept { return MidPrice{2 * t}; }
  [[nodiscard]] constexpr double value() const noexcept { return static_cast<double>(half_ticks) / 2.0; }
  /// Largest whole tick at or below the mid.
  [[nodiscard]] constexpr Ticks floor_ticks() const noexcept {
    return half_ticks >= 0 ? half_ticks / 2 : -((-half_ticks + 1) / 2);
  }
  /// Smallest whole tick at or above the mid.
  [[nodiscard]] constexpr Ticks ceil_ticks() const noexcept { return -MidPrice{-half_ticks}.floor_ticks(); }

  friend constexpr bool operator==(MidPrice, MidPrice) = default;
};

struct MarketSnapshot {
  Timestep timestep = 0;
  std::optional<Ticks> best_bid_price;
  std::optional<Ticks> best_ask_price;
  Volume best_bid_volume = 0;
  Volume best_ask_volume = 0;
  MidPrice mid_price;
  std::optional<Ticks> last_trade_price;

  [[nodiscard]] std::optional<Ticks> spread() const {
    if (best_bid_price && best_ask_price) return *best_ask_price - *best_bid_price;
    return std::nullopt;
  }

  friend bool operator==(const MarketSnapshot&, const MarketSnapshot&) = default;
};

/// Outcome of one submission. For every order:
/// volume == sum(trades.volume) + rested + discarded.
struct Execution {
  std::vector<Trade> trades;
  Volume rested = 0;
  Volume discarded = 0;

  [[nodiscard]] Volume traded() const noexcept {
    Volume v = 0;
    for (const auto& t : trades) v += t.volume;
    return v;
  }
};

/// Continuous double auction book with price-time priority.
///
/// Bids are kept in descending price order and asks ascending; each level is a FIFO
/// queue ordered by (submitted_at, id). Incoming orders walk the opposite side best
/// price first and execute at the resting order's price. Limit remainders rest;
/// market remainders are discarded. Single-threaded; movable between threads.
class OrderBook {
public:
  explicit OrderBook(Ticks initial_price = 100) : initial_price_(initial_price) {
    if (initial_price < 1) throw ParameterError("initial price must be >= 1 tick");
  }

  void set_clock(Timestep t) noexcept { clock_ = t; }
  [[nodiscard]] Timestep clock() const noexcept { return clock_; }
  [[nodiscard]] Ticks initial_price() const noexcept { return initial_price_; }

  Execution submit(const Order& order) {
    return order.kind == OrderKind::Limit ? submit_limit(order) : submit_market(order);
  }

  Execution submit_limit(const Order& order) {
    if (order.kind != OrderKind::Limit) throw InvalidOrder("submit_limit requires a limit order");
    if (order.volume < 1) throw InvalidOrder("volume must be >= 1");
    if (!order.price || *order.price < 1) throw InvalidOrder("limit price must be >= 1 tick");
    if (index_.contains(order.id)) throw InvalidOrder("duplicate resting order id " + std::to_string(order.id));

    Execution exec;
    Volume remaining = order.volume;
    const Ticks limit = *order.price;
    if (order.side == Side::Bid) {
      remaining = match(asks_, order, remaining, [limit](Ticks p) { return p <= limit; }, exec.trades);
    } else {
      remaining = match(bids_, order, remaining, [limit](Ticks p) { return p >= limit; }, exec.trades);
    }
    if (remaining > 0) {
      Order rest = order;
      rest.volume = remaining;
      insert_resting(rest);
      exec.rested = remaining;
    }
    return exec;
  }

  Execution submit_market(const Order& order) {
    if (order.kind != OrderKind::Market) throw InvalidOrder("submit_market requires a market order");
    if (order.volume < 1) throw InvalidOrder("volume must be >= 1");
    Execution exec;
    const auto any = [](Ticks) { return true; };
    const Volume remaining = order.side == Side::Bid ? match(asks_, order, order.volume, any, exec.trades)
                                                     : match(bids_, order, order.volume, any, exec.trades);
    exec.discarded = remaining;
    return exec;
  }

  bool cancel(OrderId id) {
    const auto it = index_.find(id);
    if (it == index_.end()) return false;
    remove_slot(it->second);
    return true;
  }

  /// Removes every resting order (end-of-session expiry); returns how many were removed.
  std::size_t clear_expired() {
    const std::size_t n = resting_.size();
    bids_.clear();
    asks_.clear();
    index_.clear();
    resting_.clear();
    slots_.clear();
    free_.clear();
    return n;
  }

  [[nodiscard]] std::size_t resting_count() const noexcept { return resting_.size(); }

  [[nodiscard]] Volume depth_at(Side side, Ticks price) const {
    if (side == Side::Bid) {
      const auto it = bids_.find(price);
      return it == bids_.end() ? 0 : it->second.volume;
    }
    const auto it = asks_.find(price);
    return it == asks_.end() ? 0 : it->second.volume;
  }

  [[nodiscard]] std::optional<Ticks> best_bid() const {
    return bids_.empty() ? std::nullopt : std::optional<Ticks>(bids_.begin()->first);
  }
  [[nodiscard]] std::optional<Ticks> best_ask() const {
    return asks_.empty() ? std::nullopt : std::optional<Ticks>(asks_.begin()->first);
  }
  [[nodiscard]] std::optional<Ticks> last_trade_price() const noexcept { return last_trade_; }

  /// Mid of the touch; falls back to the last trade price, then the initial price.
  [[nodiscard]] MidPrice mid_price() const {
    if (!bids_.empty() && !asks_.empty()) return MidPrice{bids_.begin()->first + asks_.begin()->first};
    if (last_trade_) return MidPrice::from_ticks(*last_trade_);
    return MidPrice::from_ticks(initial_price_);
  }

  [[nodiscard]] MarketSnapshot snapshot() const {
    MarketSnapshot s;
    s.timestep = clock_;
    if (!bids_.empty()) {
      s.best_bid_price = bids_.begin()->first;
      s.best_bid_volume = bids_.begin()->second.volume;
    }
    if (!asks_.empty()) {
      s.best_ask_price = asks_.begin()->first;
      s.best_ask_volume = asks_.begin()->second.volume;
    }
    s.mid_price = mid_price();
    s.last_trade_price = last_trade_;
    return s;
  }

  /// Resting order by position in an arbitrary but deterministic enumeration
  /// (valid for 0 <= i < resting_count()). Used for uniform random cancellation.
  [[nodiscard]] const Order& resting_at(std::size_t i) const { return slots_[resting_[i]].order; }

  [[nodiscard]] const Order* find(OrderId id) const {
    const auto it = index_.find(id);
    return it == index_.end() ? nullptr : &slots_[it->second].order;
  }

  /// Orders of one side, best level first, FIFO within level.
  [[nodiscard]] std::vector<Order> orders(Side side) const {
    std::vector<Order> out;
    const auto walk = [&](const auto& levels) {
      for (const auto& [price, level] : levels) {
        for (std::int32_t s = level.head; s != kNone; s = slots_[s].next) out.push_back(slots_[s].order);
      }
    };
    side == Side::Bid ? walk(bids_) : walk(asks_);
    return out;
  }

  [[nodiscard]] std::size_t level_count(Side side) const noexcept {
    return side == Side::Bid ? bids_.size() : asks_.size();
  }

private:
  static constexpr std::int32_t kNone = -1;

  struct Slot {
    Order order;
    std::int32_t prev = kNone;
    std::int32_t next = kNone;
    std::size_t resting_pos = 0;
  };

  struct Level {
    std::int32_t head = kNone;
    std::int32_t tail = kNone;
    Volume volume = 0;
  };

  using BidLevels = std::map<Ticks, Level, std::greater<>>;
  using AskLevels = std::map<Ticks, Level, std::less<>>;

  template <class Levels, class Crosses>
  Volume match(Levels& levels, const Order& taker, Volume remaining, Crosses crosses, std::vector<Trade>& trades) {
    while (remaining > 0 && !levels.empty()) {
      auto level_it = levels.begin();
      if (!crosses(level_it->first)) break;
      Level& level = level_it->second;
      const std::int32_t s = level.head;
      Order& maker = slots_[s].order;
      const Volume fill = std::min(remaining, maker.volume);
      trades.push_back(Trade{level_it->first, fill, taker.side, maker.id, taker.id, clock_});
      last_trade_ = level_it->first;
      remaining -= fill;
      maker.volume -= fill;
      level.volume -= fill;
      if (maker.volume == 0) remove_slot(s);
    }
    return remaining;
  }

  std::int32_t allocate(const Order& order) {
    std::int32_t s;
    if (!free_.empty()) {
      s = free_.back();
      free_.pop_back();
      slots_[s] = Slot{order};
    } else {
      s = static_cast<std::int32_t>(slots_.size());
      slots_.push_back(Slot{order});
    }
    return s;
  }

  template <class Levels>
  void link(Levels& levels, std::int32_t s) {
    const Order& o = slots_[s].order;
    Level& level = levels[*o.price];
    // Walk back from the tail so out-of-order timestamps still land in (time, id) order.
    std::int32_t after = level.tail;
    while (after != kNone) {
      const Order& a = slots_[after].order;
      if (a.submitted_at < o.submitted_at || (a.submitted_at == o.submitted_at && a.id < o.id)) break;
      after = slots_[after].prev;
    }
    const std::int32_t before = after == kNone ? level.head : slots_[after].next;
    slots_[s].prev = after;
    slots_[s].next = before;
    if (after == kNone) level.head = s; else slots_[after].next = s;
    if (before == kNone) level.tail = s; else slots_[before].prev = s;
    level.volume += o.volume;
  }

  void insert_resting(const Order& order) {
    const std::int32_t s = allocate(order);
    if (order.side == Side::Bid) link(bids_, s); else link(asks_, s);
    index_.emplace(order.id, s);
    slots_[s].resting_pos = resting_.size();
    resting_.push_back(s);
  }

  template <class Levels>
  void unlink(Levels& levels, std::int32_t s) {
    Slot& slot = slots_[s];
    auto it = levels.find(*slot.order.price);
    Level& level = it->second;
    if (slot.prev == kNone) level.head = slot.next; else slots_[slot.prev].next = slot.next;
    if (slot.next == kNone) level.tail = slot.prev; else slots_[slot.next].prev = slot.prev;
    level.volume -= slot.order.volume;
    if (level.head == kNone) levels.erase(it);
  }

  void remove_slot(std::int32_t s) {
    Slot& slot = slots_[s];
    if (slot.order.side == Side::Bid) unlink(bids_, s); else unlink(asks_, s);
    index_.erase(slot.order.id);
    const std::size_t pos = slot.resting_pos;
    const std::int32_t moved = resting_.back();
    resting_[pos] = moved;
    slots_[moved].resting_pos = pos;
    resting_.pop_back();
    free_.push_back(s);
  }

  Ticks initial_price_;
  Timestep clock_ = 0;
  std::optional<Ticks> last_trade_;
  BidLevels bids_;
  AskLevels asks_;
  std::vector<Slot> slots_;
  std::vector<std::int32_t> free_;
  std::vector<std::int32_t> resting_;
  std::unordered_map<OrderId, std::int32_t> index_;
};

}  // namespace lobcal::lob
