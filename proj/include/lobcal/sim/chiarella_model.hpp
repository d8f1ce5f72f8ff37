#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lobcal/core/error.hpp"
#include "lobcal/core/rng.hpp"
#include "lobcal/lob/order_book.hpp"
#include "lobcal/lob/record.hpp"
#include "lobcal/sim/order_flow.hpp"
#include "lobcal/sim/zi_model.hpp"

namespace lobcal::sim {

/// Extended Chiarella parameters in natural units (calibrated in log10 space).
struct ThetaChiarella {
  static constexpr std::size_t kDim = 6;

  double sigma_n = 0.0;   ///< noise demand standard deviation
  double beta = 0.0;      ///< momentum demand scale
  double gamma_m = 0.0;   ///< momentum saturation
  double kappa = 0.0;     ///< fundamental mispricing coefficient
  double beta_hf = 0.0;   ///< high-frequency momentum demand scale
  double gamma_hf = 0.0;  ///< high-frequency momentum saturation

  static ThetaChiarella from_log10(std::span<const double> v) {
    if (v.size() != kDim) throw ParameterError("Chiarella theta needs 6 log10 values");
    return ThetaChiarella{std::pow(10.0, v[0]), std::pow(10.0, v[1]), std::pow(10.0, v[2]),
                          std::pow(10.0, v[3]), std::pow(10.0, v[4]), std::pow(10.0, v[5])};
  }
  [[nodiscard]] std::array<double, kDim> to_log10() const {
    return {std::log10(sigma_n), std::log10(beta),    std::log10(gamma_m),
            std::log10(kappa),   std::log10(beta_hf), std::log10(gamma_hf)};
  }
  void validate() const {
    for (double v : {sigma_n, beta, gamma_m, kappa, beta_hf, gamma_hf}) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ParameterError("Chiarella theta components must be finite and >= 0");
    }
  }
  static constexpr std::array<const char*, kDim> names() {
    return {"sigma_n", "beta", "gamma_m", "kappa", "beta_hf", "gamma_hf"};
  }
};

/// Exogenous fundamental value v_t.
struct FundamentalSpec {
  enum class Kind { Constant, RandomWalk };
  Kind kind = Kind::Constant;
  double step_std = 0.0;  ///< per-step standard deviation for RandomWalk (ticks)
};

/// ZI-style passive liquidity placed around the model price every step.
struct BackgroundFlow {
  double alpha = 50.0;    ///< mean limit orders per step
  double delta = 0.1;     ///< per-order cancellation probability per step
  double lambda = 0.25;   ///< depth rate (1/ticks)
  std::int64_t n_agents = 10'000;
};

struct ChiarellaConfig {
  double dt = 1.0;
  double kyle_lambda = 1.0;
  double alpha_m = 0.01;
  double alpha_hf = 0.5;
  /// Demand units per unit of beta and of beta_hf. They put both momentum scales on the
  /// same demand axis as the fundamental and noise terms.
  double momentum_demand_unit = 1.0;
  double hf_demand_unit = 1.0;
  FundamentalSpec fundamental;
  double order_scale = 1.0;
  BackgroundFlow background;
  std::int64_t n_steps = 600;
  lob::Ticks initial_price = 10'000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(dt > 0.0)) throw ParameterError("dt must be > 0");
    if (!(kyle_lambda > 0.0)) throw ParameterError("kyle_lambda must be > 0");
    if (!(alpha_m > 0.0 && alpha_m <= 1.0)) throw ParameterError("alpha_m must lie in (0, 1]");
    if (!(alpha_hf > 0.0 && alpha_hf <= 1.0)) throw ParameterError("alpha_hf must lie in (0, 1]");
    if (!(alpha_hf > alpha_m)) throw ParameterError("alpha_hf must exceed alpha_m");
    if (!(order_scale >= 0.0)) throw ParameterError("order_scale must be >= 0");
    if (!(momentum_demand_unit > 0.0)) throw ParameterError("momentum_demand_unit must be > 0");
    if (!(hf_demand_unit > 0.0)) throw ParameterError("hf_demand_unit must be > 0");
    if (n_steps < 1) throw ParameterError("n_steps must be >= 1");
    if (initial_price < 1) throw ParameterError("initial_price must be >= 1");
    if (fundamental.kind == FundamentalSpec::Kind::RandomWalk && !(fundamental.step_std >= 0.0)) {
      throw ParameterError("fundamental step_std must be >= 0");
    }
  }
};

struct ChiarellaState {
  double price = 0.0;     ///< model price p_t (ticks)
  double trend = 0.0;     ///< M_t
  double trend_hf = 0.0;  ///< high-frequency trend
  double value = 0.0;     ///< fundamental v_t
};

/// Demand decomposition of one step.
struct DemandTerms {
  double fundamental = 0.0;
  double momentum = 0.0;
  double momentum_hf = 0.0;
  double noise = 0.0;
  double epsilon = 0.0;

  [[nodiscard]] double total() const noexcept { return fundamental + momentum + momentum_hf + noise; }
};

/// kappa (v - p) dt
inline double demand_fundamental(double kappa, double value, double price, double dt) {
  return kappa * (value - price) * dt;
}

/// beta tanh(gamma M): increasing in M, bounded by |beta|.
inline double demand_momentum(double beta, double gamma, double trend) { return beta * std::tanh(gamma * trend); }

/// (1 - alpha) M + alpha dp
inline double update_trend(double trend, double alpha, double price_change) {
  return (1.0 - alpha) * trend + alpha * price_change;
}

inline DemandTerms demand_terms(const ChiarellaState& s, const ThetaChiarella& th, const ChiarellaConfig& cfg,
                                double epsilon) {
  DemandTerms d;
  d.fundamental = demand_fundamental(th.kappa, s.value, s.price, cfg.dt);
  d.momentum = demand_momentum(th.beta * cfg.momentum_demand_unit, th.gamma_m, s.trend);
  d.momentum_hf = demand_momentum(th.beta_hf * cfg.hf_demand_unit, th.gamma_hf, s.trend_hf);
  d.noise = th.sigma_n * epsilon * std::sqrt(cfg.dt);
  d.epsilon = epsilon;
  return d;
}

inline constexpr double kMaxModelPrice = 1e15;

struct ChiarellaStepResult {
  ChiarellaState state;
  DemandTerms demand;
  double price_change = 0.0;
};

/// Advances the price-impact dynamics by one step: p += kyle_lambda * d, then both trends
/// absorb the realised price change. Draws one normal (noise) and, for a random-walk
/// fundamental, a second one.
inline ChiarellaStepResult chiarella_step(const ChiarellaState& state, const ThetaChiarella& theta,
                                          const ChiarellaConfig& config, Rng& rng) {
  ChiarellaStepResult out;
  out.demand = demand_terms(state, theta, config, standard_normal(rng));
  const double d = out.demand.total();
  ChiarellaState next = state;
  next.price = state.price + config.kyle_lambda * d;
  out.price_change = next.price - state.price;
  next.trend = update_trend(state.trend, config.alpha_m, out.price_change);
  next.trend_hf = update_trend(state.trend_hf, config.alpha_hf, out.price_change);
  if (config.fundamental.kind == FundamentalSpec::Kind::RandomWalk) {
    next.value = state.value + config.fundamental.step_std * standard_normal(rng);
  }
  if (!std::isfinite(next.price) || !std::isfinite(next.trend) || !std::isfinite(next.trend_hf) ||
      !std::isfinite(next.value)) {
    throw SimulationDiverged("non-finite Chiarella state");
  }
  // Beyond this the price no longer maps to a tick on the book.
  if (std::abs(next.price) > kMaxModelPrice) throw SimulationDiverged("Chiarella price left the tick range");
  out.state = next;
  return out;
}

struct ChiarellaRun {
  lob::SimulationRecord record;
  std::vector<double> model_prices;  ///< p_t at the start of each step
  std::vector<double> demands;       ///< total demand of each step
};

/// Simulates a session on the book. Each step: (1) background cancellations and passive
/// limit orders around the current model price, (2) the step's aggregate demand becomes a
/// market order of side sign(d) and volume round(order_scale |d|), (3) the model state
/// advances. Three quote rows are recorded per step.
inline ChiarellaRun run_chiarella(const ThetaChiarella& theta, const ChiarellaConfig& config) {
  theta.validate();
  config.validate();
  Rng rng = make_rng(config.seed);
  OrderBook book(config.initial_price);
  OrderIdSource ids;
  ChiarellaRun run;
  run.record.initial_price = config.initial_price;
  run.record.snapshots.reserve(static_cast<std::size_t>(config.n_steps) * 3);
  run.model_prices.reserve(static_cast<std::size_t>(config.n_steps));

  ChiarellaState state;
  state.price = static_cast<double>(config.initial_price);
  state.value = state.price;
  const auto& bg = config.background;

  for (std::int64_t t = 0; t < config.n_steps; ++t) {
    book.set_clock(t);
    run.model_prices.push_back(state.price);

    cancel_random(book, bg.delta, rng);
    run.record.snapshots.push_back(book.snapshot());

    const auto ref = static_cast<lob::Ticks>(std::llround(state.price));
    const std::int64_t n_limit = sample_order_count(rng, bg.n_agents, bg.alpha);
    for (std::int64_t i = 0; i < n_limit; ++i) {
      const lob::Side side = random_side(rng);
      const double raw = sample_depth_raw(rng, bg.lambda);
      lob::Ticks price = side == lob::Side::Bid ? ref - depth_from_draw(raw, 0) : ref + depth_from_draw(raw, 0);
      if (price < 1) price = 1;
      auto exec = book.submit_limit(lob::Order::limit(ids(), side, price, 1, t));
      run.record.trades.insert(run.record.trades.end(), exec.trades.begin(), exec.trades.end());
    }
    run.record.snapshots.push_back(book.snapshot());

    const auto step = chiarella_step(state, theta, config, rng);
    const double d = step.demand.total();
    run.demands.push_back(d);
    const double volume = std::round(config.order_scale * std::abs(d));
    if (volume >= 1.0) {
      const lob::Side side = d > 0.0 ? lob::Side::Bid : lob::Side::Ask;
      const auto v = static_cast<lob::Volume>(std::min(volume, 1e12));
      auto exec = book.submit_market(lob::Order::market(ids(), side, v, t));
      run.record.trades.insert(run.record.trades.end(), exec.trades.begin(), exec.trades.end());
    }
    run.record.snapshots.push_back(book.snapshot());
    state = step.state;
  }
  book.clear_expired();
  return run;
}

}  // namespace lobcal::sim
