#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "lobcal/facts/stylised_facts.hpp"
#include "lobcal/npe/diagnostics.hpp"
#include "lobcal/npe/npe.hpp"
#include "lobcal/pipeline/dataset.hpp"

namespace lobcal::pipeline {

template <class T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

inline json to_json(const facts::StylisedFactReport& r) {
  json h = json::array();
  for (const auto& m : r.horizons) {
    h.push_back({{"horizon", m.horizon}, {"skewness", opt_json(m.skewness)}, {"excess_kurtosis", opt_json(m.excess_kurtosis)}});
  }
  return json{{"return_moments", h},
              {"acf_returns", opt_json(r.acf_returns)},
              {"acf_abs_returns", opt_json(r.acf_abs_returns)},
              {"hurst_abs_returns", opt_json(r.hurst)},
              {"vol_volume_corr", opt_json(r.vol_volume_corr)},
              {"ret_vol_corr", opt_json(r.ret_vol_corr)},
              {"impact_exponent", opt_json(r.impact_exponent)},
              {"gamma_shape_bid", opt_json(r.gamma_shape_bid)},
              {"gamma_shape_ask", opt_json(r.gamma_shape_ask)}};
}

/// Per-dimension mean, sd and 5/50/95% quantiles of posterior draws.
inline json posterior_summary(const npe::PriorSpec& prior, const Matrix& draws) {
  json out = json::object();
  for (std::size_t j = 0; j < draws.cols(); ++j) {
    std::vector<double> col(draws.rows());
    for (std::size_t r = 0; r < draws.rows(); ++r) col[r] = draws(r, j);
    const auto ms = npe::mean_sd(col);
    std::sort(col.begin(), col.end());
    const auto q = [&](double p) { return col[static_cast<std::size_t>(p * static_cast<double>(col.size() - 1))]; };
    const std::string name = j < prior.names.size() ? prior.names[j] : "theta" + std::to_string(j);
    out[name] = {{"mean", ms.mean}, {"sd", ms.sd}, {"q05", q(0.05)}, {"q50", q(0.5)}, {"q95", q(0.95)}};
  }
  return out;
}

inline std::vector<double> column_means(const Matrix& m) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += m(r, j) / static_cast<double>(m.rows());
  return out;
}

/// Simulates for theta with seeds drawn from rng, retrying divergent runs a few times.
inline lob::SimulationRecord simulate_retrying(const RunConfig& cfg, std::span<const double> theta, Rng& rng,
                                               int attempts = 10) {
  for (int a = 0; a < attempts; ++a) {
    try {
      return simulate(cfg, theta, rng());
    } catch (const SimulationDiverged&) {
    }
  }
  throw SimulationDiverged("simulation diverged on every retry for the requested parameters");
}

/// Observation simulator for SBC: simulate, summarise and normalise with the dataset statistics.
inline npe::ObservationSimulator observation_simulator(const RunConfig& cfg, const features::NormStats& norm) {
  return [cfg, norm](std::span<const double> theta, Rng& rng) {
    return features::normalize(summarise(cfg, simulate_retrying(cfg, theta, rng)), norm).values;
  };
}

/// A dataset with a model trained on it.
struct TrainedPipeline {
  CalibrationDataset dataset;
  npe::NpeModel model;
  npe::TrainResult training;
};

inline npe::NpeModel make_model(const RunConfig& cfg, const CalibrationDataset& ds) {
  return npe::NpeModel(cfg.npe, ds.prior, ds.x.cols(),
                       npe::ModelMeta{to_string(ds.model), ds.norm, derive_seed(cfg.seed, streams::kModelInit)});
}

inline npe::TrainResult train_on(npe::NpeModel& model, const CalibrationDataset& ds, const RunConfig& cfg) {
  npe::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, streams::kTraining);
  return npe::train_npe(model, ds.training_data(), tc);
}

inline TrainedPipeline build_and_train(const RunConfig& cfg) {
  CalibrationDataset ds = build_dataset(cfg);
  npe::NpeModel model = make_model(cfg, ds);
  npe::TrainResult tr = train_on(model, ds, cfg);
  return {std::move(ds), std::move(model), std::move(tr)};
}

inline json to_json(const npe::RmseReport& r, const npe::PriorSpec& prior) {
  json sd = json::object();
  for (std::size_t j = 0; j < r.mean_posterior_sd.size(); ++j) {
    sd[prior.names[j]] = {{"posterior", r.mean_posterior_sd[j]}, {"prior", prior.sd(j)}};
  }
  return json{{"test_points", r.per_point.size()},
              {"posterior_rmse_mean", r.posterior.mean},
              {"posterior_rmse_sd", r.posterior.sd},
              {"prior_baseline_mean", r.prior_baseline.mean},
              {"prior_baseline_sd", r.prior_baseline.sd},
              {"prior_baseline_expected", r.prior_baseline_expected},
              {"improvement", r.improvement()},
              {"mean_posterior_sd", sd}};
}

inline json to_json(const npe::SbcResult& s, const npe::PriorSpec& prior) {
  json dims = json::object();
  for (std::size_t j = 0; j < s.p_value.size(); ++j) {
    dims[prior.names[j]] = {{"chi2", s.chi2[j]}, {"p_value", s.p_value[j]}, {"histogram", s.histogram[j]}};
  }
  return json{{"draws", s.ranks.size()}, {"posterior_samples", s.n_posterior_samples}, {"bins", s.bins}, {"dims", dims}};
}

/// RMSE of posterior means against held-out truths from the test split.
inline npe::RmseReport evaluate(const npe::NpeModel& model, const CalibrationDataset& ds, const RunConfig& cfg) {
  const auto [theta, x] = ds.test_rows(cfg.eval.test_points);
  return npe::rmse_eval(model, theta, x, cfg.eval.posterior_samples, derive_seed(cfg.seed, streams::kEval));
}

inline npe::SbcResult sbc(const npe::NpeModel& model, const CalibrationDataset& ds, const RunConfig& cfg) {
  return npe::sbc_ranks(model, observation_simulator(cfg, ds.norm), cfg.eval.sbc_draws,
                        derive_seed(cfg.seed, streams::kSbc), cfg.eval.sbc_samples);
}

/// Posterior for one simulated session at `truth`, plus stylised facts of a session at the
/// posterior mean next to those of the observed session.
inline json recover_point(const npe::NpeModel& model, const CalibrationDataset& ds, const RunConfig& cfg,
                          std::span<const double> truth) {
  Rng rng = make_rng(derive_seed(cfg.seed, streams::kTruth));
  const auto observed = simulate_retrying(cfg, truth, rng);
  const auto post = npe::posterior_for(model, summarise(cfg, observed));
  Rng post_rng = make_rng(derive_seed(cfg.seed, streams::kEval));
  const Matrix draws = post.sample(cfg.eval.posterior_samples, post_rng);
  const auto mean = column_means(draws);
  Rng facts_rng = make_rng(derive_seed(cfg.seed, streams::kFacts));
  json facts_at_mean = nullptr;
  try {
    facts_at_mean = to_json(facts::report(simulate_retrying(cfg, mean, facts_rng)));
  } catch (const SimulationDiverged&) {
    spdlog::warn("simulation at the posterior mean diverged; its stylised facts are omitted");
  }
  const auto& names = ds.prior.names;
  json truth_j = json::object(), err = json::object();
  for (std::size_t j = 0; j < truth.size(); ++j) {
    truth_j[names[j]] = truth[j];
    err[names[j]] = mean[j] - truth[j];
  }
  return json{{"truth", truth_j},
              {"posterior", posterior_summary(ds.prior, draws)},
              {"posterior_mean_error", err},
              {"posterior_mean_rmse", npe::rmse(mean, truth)},
              {"facts_observed", to_json(facts::report(observed))},
              {"facts_posterior_mean", facts_at_mean}};
}

/// Full pipeline for a known truth: simulate the budget, train, then report posterior,
/// held-out RMSE and SBC. For ZI, the same budget is also run with touch features.
inline json end_to_end_recovery(const RunConfig& cfg, std::span<const double> truth) {
  if (truth.size() != cfg.prior.dim()) throw ParameterError("truth dimension does not match the prior");
  if (!cfg.prior.contains(truth)) spdlog::warn("truth lies outside the prior box");
  const auto run = [&](const RunConfig& c) {
    auto p = build_and_train(c);
    const auto ev = evaluate(p.model, p.dataset, c);
    json out{{"features", features::to_string(c.feature)},
             {"dataset",
              {{"rows", p.dataset.size()},
               {"diverged", p.dataset.diverged},
               {"content_hash", p.dataset.content_hash()},
               {"config_hash", p.dataset.config_hash}}},
             {"training",
              {{"epochs", p.training.history.size() - 1},
               {"best_epoch", p.training.best_epoch},
               {"best_val_loss", p.training.best_val_loss}}},
             {"recovery", recover_point(p.model, p.dataset, c, truth)},
             {"rmse", to_json(ev, p.dataset.prior)},
             {"sbc", to_json(sbc(p.model, p.dataset, c), p.dataset.prior)}};
    return std::pair{out, ev};
  };
  json report{{"model", to_string(cfg.model)}, {"seed", cfg.seed}, {"config", to_json(cfg)}};
  auto [main, main_ev] = run(cfg);
  report["result"] = main;
  if (cfg.model == ModelKind::Zi) {
    RunConfig other = cfg;
    other.feature = cfg.feature == features::FeatureKind::Vwap ? features::FeatureKind::Touch : features::FeatureKind::Vwap;
    auto [alt, alt_ev] = run(other);
    report["comparison"] = alt;
    const auto& vwap_ev = cfg.feature == features::FeatureKind::Vwap ? main_ev : alt_ev;
    const auto& touch_ev = cfg.feature == features::FeatureKind::Vwap ? alt_ev : main_ev;
    report["touch_vs_vwap"] = {{"touch_rmse", touch_ev.posterior.mean},
                               {"vwap_rmse", vwap_ev.posterior.mean},
                               {"vwap_not_worse", vwap_ev.posterior.mean <= touch_ev.posterior.mean}};
  }
  return report;
}

}  // namespace lobcal::pipeline
