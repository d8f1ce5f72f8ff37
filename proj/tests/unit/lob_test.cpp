#include <gtest/gtest.h>

#include <sstream>

#include "lobcal/lob/order_book.hpp"
#include "lobcal/lob/record.hpp"
#include "rescan_matcher.hpp"

using namespace lobcal;
using namespace lobcal::lob;

TEST(OrderBook, LimitRestsOnEmptyBook) {
  OrderBook b(100);
  const auto e = b.submit_limit(Order::limit(1, Side::Bid, 100, 1));
  EXPECT_TRUE(e.trades.empty());
  EXPECT_EQ(b.best_bid(), 100);
  EXPECT_EQ(e.rested, 1);
}

TEST(OrderBook, ExactCrossLeavesResidual) {
  OrderBook b(100);
  b.submit_limit(Order::limit(1, Side::Ask, 101, 2));
  const auto e = b.submit_limit(Order::limit(2, Side::Bid, 101, 1));
  ASSERT_EQ(e.trades.size(), 1u);
  EXPECT_EQ(e.trades[0].price, 101);
  EXPECT_EQ(e.trades[0].volume, 1);
  EXPECT_EQ(b.depth_at(Side::Ask, 101), 1);
}

TEST(OrderBook, MarketableLimitWalksLevelsThenRests) {
  OrderBook b(100);
  b.submit_limit(Order::limit(1, Side::Ask, 101, 1));
  b.submit_limit(Order::limit(2, Side::Ask, 102, 1));
  const auto e = b.submit_limit(Order::limit(3, Side::Bid, 102, 3));
  ASSERT_EQ(e.trades.size(), 2u);
  EXPECT_EQ(e.trades[0].price, 101);
  EXPECT_EQ(e.trades[1].price, 102);
  EXPECT_EQ(e.rested, 1);
  EXPECT_EQ(b.best_bid(), 102);
  EXPECT_FALSE(b.best_ask().has_value());
  EXPECT_EQ(b.depth_at(Side::Ask, 102), 0);
  const auto s = b.snapshot();
  EXPECT_EQ(s.best_bid_volume, 1);
  EXPECT_EQ(s.mid_price, MidPrice::from_ticks(102));  // falls back to the last trade
}

TEST(OrderBook, MarketOrders) {
  OrderBook b(100);
  b.submit_limit(Order::limit(1, Side::Ask, 101, 5));
  auto e = b.submit_market(Order::market(2, Side::Bid, 2));
  ASSERT_EQ(e.trades.size(), 1u);
  EXPECT_EQ(e.trades[0], (Trade{101, 2, Side::Bid, 1, 2, 0}));

  OrderBook empty(100);
  EXPECT_TRUE(empty.submit_market(Order::market(1, Side::Bid, 1)).trades.empty());

  OrderBook w(100);
  w.submit_limit(Order::limit(1, Side::Ask, 101, 1));
  w.submit_limit(Order::limit(2, Side::Ask, 103, 1));
  e = w.submit_market(Order::market(3, Side::Bid, 3));
  ASSERT_EQ(e.trades.size(), 2u);
  EXPECT_EQ(e.trades[1].price, 103);
  EXPECT_EQ(e.discarded, 1);
  EXPECT_EQ(w.resting_count(), 0u);
}

TEST(OrderBook, CancelSemantics) {
  OrderBook b(100);
  b.submit_limit(Order::limit(7, Side::Bid, 99, 2));
  b.submit_limit(Order::limit(8, Side::Bid, 98, 1));
  EXPECT_EQ(b.depth_at(Side::Bid, 99), 2);
  EXPECT_FALSE(b.cancel(42));
  EXPECT_EQ(b.resting_count(), 2u);
  EXPECT_TRUE(b.cancel(7));
  EXPECT_EQ(b.resting_count(), 1u);
  EXPECT_EQ(b.best_bid(), 98);
  EXPECT_EQ(b.depth_at(Side::Bid, 99), 0);
}

TEST(OrderBook, MidAndSpread) {
  OrderBook b(100);
  EXPECT_EQ(b.mid_price().value(), 100.0);
  b.submit_limit(Order::limit(1, Side::Bid, 99, 3));
  b.submit_limit(Order::limit(2, Side::Ask, 101, 2));
  EXPECT_EQ(b.mid_price().value(), 100.0);
  EXPECT_EQ(b.snapshot().spread(), 2);
  b.submit_limit(Order::limit(3, Side::Ask, 100, 1));
  EXPECT_EQ(b.mid_price().half_ticks, 199);  // 99.5 exactly
  EXPECT_EQ(b.mid_price().floor_ticks(), 99);
  EXPECT_EQ(b.mid_price().ceil_ticks(), 100);
}

TEST(OrderBook, ClearExpiredCountsResidualOnce) {
  OrderBook b(100);
  EXPECT_EQ(b.clear_expired(), 0u);
  for (OrderId i = 1; i <= 5; ++i) b.submit_limit(Order::limit(i, Side::Bid, 90 + i, 1));
  EXPECT_EQ(b.clear_expired(), 5u);
  EXPECT_EQ(b.resting_count(), 0u);
  b.submit_limit(Order::limit(10, Side::Ask, 101, 3));
  b.submit_market(Order::market(11, Side::Bid, 1));
  EXPECT_EQ(b.clear_expired(), 1u);
}

TEST(OrderBook, TimePriorityWithinLevel) {
  OrderBook b(100);
  b.set_clock(5);
  b.submit_limit(Order::limit(1, Side::Ask, 101, 1, 5));
  b.submit_limit(Order::limit(2, Side::Ask, 101, 1, 3));  // earlier timestamp jumps the queue
  const auto e = b.submit_market(Order::market(3, Side::Bid, 1, 5));
  EXPECT_EQ(e.trades[0].maker_order_id, 2);
}

TEST(OrderBook, RejectsInvalidOrders) {
  OrderBook b(100);
  EXPECT_THROW(b.submit_limit(Order::limit(1, Side::Bid, 100, 0)), InvalidOrder);
  EXPECT_THROW(b.submit_limit(Order::limit(1, Side::Bid, 0, 1)), InvalidOrder);
  EXPECT_THROW(b.submit_market(Order::limit(1, Side::Bid, 100, 1)), InvalidOrder);
  b.submit_limit(Order::limit(1, Side::Bid, 99, 1));
  EXPECT_THROW(b.submit_limit(Order::limit(1, Side::Bid, 98, 1)), InvalidOrder);
  EXPECT_THROW(OrderBook(0), ParameterError);
}

TEST(OrderBook, MatchesRescanOracle) {
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const auto err = testsupport::replay_random_sequence(seed);
    ASSERT_TRUE(err.empty()) << err;
  }
}

TEST(OrderBook, DeterministicReplay) {
  const auto run = [] {
    OrderBook b(100);
    std::vector<Trade> log;
    for (OrderId i = 1; i <= 200; ++i) {
      const Side s = i % 3 == 0 ? Side::Bid : Side::Ask;
      const auto e = b.submit_limit(Order::limit(i, s, 95 + (i * 7) % 11, 1 + i % 4));
      log.insert(log.end(), e.trades.begin(), e.trades.end());
    }
    return log;
  };
  EXPECT_EQ(run(), run());
}

TEST(Record, SnapshotCsvRoundTrip) {
  OrderBook b(100);
  std::vector<MarketSnapshot> snaps{b.snapshot()};
  b.submit_limit(Order::limit(1, Side::Bid, 99, 3));
  b.submit_limit(Order::limit(2, Side::Ask, 100, 1));
  b.set_clock(1);
  snaps.push_back(b.snapshot());
  b.submit_market(Order::market(3, Side::Bid, 1));
  snaps.push_back(b.snapshot());
  std::stringstream ss;
  write_snapshots_csv(ss, snaps);
  EXPECT_EQ(read_snapshots_csv(ss), snaps);
}

TEST(Record, MissingColumnNamed) {
  std::stringstream ss("timestep,best_bid,best_bid_vol,best_ask,mid,last_trade\n0,,0,,100,\n");
  try {
    (void)read_snapshots_csv(ss);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("best_ask_vol"), std::string::npos);
  }
}
