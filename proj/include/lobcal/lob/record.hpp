#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lobcal/core/error.hpp"
#include "lobcal/lob/order_book.hpp"

namespace lobcal::lob {

/// Raw output of one simulated or historical session: a quote stream (possibly several
/// rows per timestep) plus, when available, the trade log.
struct SimulationRecord {
  std::vector<MarketSnapshot> snapshots;
  std::vector<Trade> trades;
  Ticks initial_price = 0;

  friend bool operator==(const SimulationRecord&, const SimulationRecord&) = default;
};

inline constexpr std::string_view kSnapshotHeader =
    "timestep,best_bid,best_bid_vol,best_ask,best_ask_vol,mid,last_trade";
inline constexpr std::string_view kTradeHeader = "timestep,price,volume,aggressor,maker_id,taker_id";

namespace detail {

inline void put_optional(std::ostream& os, const std::optional<Ticks>& v) {
  if (v) os << *v;
}

inline std::string format_mid(MidPrice m) {
  std::string s = std::to_string(m.half_ticks / 2);
  if (m.half_ticks % 2 != 0) {
    if (m.half_ticks < 0 && m.half_ticks / 2 == 0) s = "-0";
    s += ".5";
  }
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  for (auto& c : cells) {
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.remove_suffix(1);
    while (!c.empty() && c.front() == ' ') c.remove_prefix(1);
  }
  return cells;
}

inline std::int64_t parse_int(std::string_view cell, std::string_view column, std::size_t line_no) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw DataError("line " + std::to_string(line_no) + ": column '" + std::string(column) +
                    "' is not an integer: '" + std::string(cell) + "'");
  }
  return v;
}

inline std::optional<std::int64_t> parse_opt_int(std::string_view cell, std::string_view column,
                                                 std::size_t line_no) {
  if (cell.empty()) return std::nullopt;
  if (cell == "nan" || cell == "NaN" || cell == "NAN") {
    throw DataError("line " + std::to_string(line_no) + ": NaN in column '" + std::string(column) + "'");
  }
  return parse_int(cell, column, line_no);
}

inline MidPrice parse_mid(std::string_view cell, std::size_t line_no) {
  const std::string s(cell);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw DataError("line " + std::to_string(line_no) + ": column 'mid' is not a finite number: '" + s + "'");
  }
  const double half = v * 2.0;
  if (std::abs(half - std::round(half)) > 1e-9) {
    throw DataError("line " + std::to_string(line_no) + ": mid is not a multiple of half a tick: '" + s + "'");
  }
  return MidPrice{static_cast<std::int64_t>(std::llround(half))};
}

}  // namespace detail

inline void write_snapshots_csv(std::ostream& os, const std::vector<MarketSnapshot>& snaps) {
  os << kSnapshotHeader << '\n';
  for (const auto& s : snaps) {
    os << s.timestep << ',';
    detail::put_optional(os, s.best_bid_price);
    os << ',' << s.best_bid_volume << ',';
    detail::put_optional(os, s.best_ask_price);
    os << ',' << s.best_ask_volume << ',' << detail::format_mid(s.mid_price) << ',';
    detail::put_optional(os, s.last_trade_price);
    os << '\n';
  }
}

/// Parses the snapshot CSV. Columns are located by header name, so extra columns are ignored
/// and a missing column is reported by name.
inline std::vector<MarketSnapshot> read_snapshots_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("snapshot CSV is empty (missing header)");
  const auto header = detail::split_csv(line);
  constexpr std::string_view names[] = {"timestep", "best_bid", "best_bid_vol", "best_ask",
                                        "best_ask_vol", "mid", "last_trade"};
  std::size_t col[7];
  for (std::size_t k = 0; k < 7; ++k) {
    bool found = false;
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == names[k]) {
        col[k] = j;
        found = true;
        break;
      }
    }
    if (!found) throw DataError("snapshot CSV schema error: missing column '" + std::string(names[k]) + "'");
  }

  std::vector<MarketSnapshot> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() < header.size()) {
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " cells, found " + std::to_string(cells.size()));
    }
    MarketSnapshot s;
    s.timestep = detail::parse_int(cells[col[0]], names[0], line_no);
    s.best_bid_price = detail::parse_opt_int(cells[col[1]], names[1], line_no);
    s.best_bid_volume = cells[col[2]].empty() ? 0 : detail::parse_int(cells[col[2]], names[2], line_no);
    s.best_ask_price = detail::parse_opt_int(cells[col[3]], names[3], line_no);
    s.best_ask_volume = cells[col[4]].empty() ? 0 : detail::parse_int(cells[col[4]], names[4], line_no);
    s.mid_price = detail::parse_mid(cells[col[5]], line_no);
    s.last_trade_price = detail::parse_opt_int(cells[col[6]], names[6], line_no);
    if (!out.empty() && s.timestep < out.back().timestep) {
      throw DataError("line " + std::to_string(line_no) + ": timestep decreases");
    }
    out.push_back(s);
  }
  return out;
}

inline void write_trades_csv(std::ostream& os, const std::vector<Trade>& trades) {
  os << kTradeHeader << '\n';
  for (const auto& t : trades) {
    os << t.timestep << ',' << t.price << ',' << t.volume << ',' << (t.aggressor_side == Side::Bid ? "B" : "A")
       << ',' << t.maker_order_id << ',' << t.taker_order_id << '\n';
  }
}

inline std::vector<Trade> read_trades_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("trade CSV is empty (missing header)");
  if (detail::split_csv(line).size() < 6) throw DataError("trade CSV schema error: expected header '" +
                                                          std::string(kTradeHeader) + "'");
  std::vector<Trade> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto c = detail::split_csv(line);
    if (c.size() < 6) throw DataError("line " + std::to_string(line_no) + ": expected 6 cells");
    Trade t;
    t.timestep = detail::parse_int(c[0], "timestep", line_no);
    t.price = detail::parse_int(c[1], "price", line_no);
    t.volume = detail::parse_int(c[2], "volume", line_no);
    t.aggressor_side = c[3] == "A" ? Side::Ask : Side::Bid;
    t.maker_order_id = detail::parse_int(c[4], "maker_id", line_no);
    t.taker_order_id = detail::parse_int(c[5], "taker_id", line_no);
    out.push_back(t);
  }
  return out;
}

inline std::vector<MarketSnapshot> load_snapshots_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open snapshot CSV '" + path + "'");
  return read_snapshots_csv(in);
}

inline std::vector<Trade> load_trades_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trade CSV '" + path + "'");
  return read_trades_csv(in);
}

}  // namespace lobcal::lob
