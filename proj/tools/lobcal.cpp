// Command-line front end. Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric or training error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <spdlog/spdlog.h>

#include "lobcal/facts/stylised_facts.hpp"
#include "lobcal/npe/model_io.hpp"
#include "lobcal/pipeline/recover.hpp"

using namespace lobcal;
using pipeline::json;

namespace {

/// Writes to `path`, or to stdout for "-".
void emit(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os || !(os << text)) throw DataError("cannot write '" + path + "'");
}

std::vector<double> parse_list(const std::string& s, std::size_t expected, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw ParameterError(flag + ": '" + cell + "' is not a number");
    }
  }
  if (out.size() != expected) {
    throw ParameterError(flag + " needs " + std::to_string(expected) + " comma-separated values, got " +
                         std::to_string(out.size()));
  }
  return out;
}

/// Flags shared by every verb that builds a RunConfig: file first, then overrides.
struct ConfigFlags {
  std::string config_path, model, features, flavor;
  std::optional<std::size_t> budget, T, threads, max_epochs;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd, bool with_model) {
    cmd->add_option("--config", config_path, "run configuration (JSON)")->check(CLI::ExistingFile);
    if (with_model) cmd->add_option("--model", model, "zi|chiarella (overrides the config)");
    cmd->add_option("--features", features, "vwap|touch");
    cmd->add_option("--flavor", flavor, "maf|nsf");
    cmd->add_option("--budget", budget, "number of simulations");
    cmd->add_option("--T", T, "observation length in sampling ticks");
    cmd->add_option("--threads", threads, "simulation worker threads (0 = all cores)");
    cmd->add_option("--max-epochs", max_epochs, "training epoch cap");
    cmd->add_option("--seed", seed, "master seed");
  }

  [[nodiscard]] pipeline::RunConfig resolve() const {
    json j = json::object();
    if (!config_path.empty()) {
      std::ifstream is(config_path);
      try {
        j = json::parse(is);
      } catch (const json::parse_error& e) {
        throw ParameterError("config file '" + config_path + "' is not valid JSON: " + e.what());
      }
    }
    if (!model.empty()) {
      if (j.contains("model") && j["model"] != model) j.erase("prior");
      j["model"] = model;
    }
    if (!features.empty()) j["features"] = features;
    if (!flavor.empty()) j["npe"]["flavor"] = flavor;
    if (budget) j["budget"] = *budget;
    if (T) j["T"] = *T;
    if (threads) j["threads"] = *threads;
    if (max_epochs) j["train"]["max_epochs"] = *max_epochs;
    if (seed) j["seed"] = *seed;
    return pipeline::run_config_from_json(j);
  }
};

std::string samples_csv(const npe::PriorSpec& prior, const nn::Matrix& m) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t j = 0; j < prior.dim(); ++j) os << (j ? "," : "") << prior.names[j];
  os << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t j = 0; j < m.cols(); ++j) os << (j ? "," : "") << m(r, j);
    os << '\n';
  }
  return os.str();
}

std::string series_csv(const features::SummarySeries& s) {
  static constexpr const char* touch[] = {"bid_price", "bid_volume", "ask_price", "ask_volume"};
  static constexpr const char* vwap[] = {"vwap_bid", "vwap_ask"};
  std::ostringstream os;
  os.precision(17);
  os << "t";
  for (std::size_t c = 0; c < s.channel_count(); ++c) os << ',' << (s.kind == features::FeatureKind::Touch ? touch[c] : vwap[c]);
  os << '\n';
  for (std::size_t t = 0; t < s.length; ++t) {
    os << t;
    for (std::size_t c = 0; c < s.channel_count(); ++c) os << ',' << s.at(t, c);
    os << '\n';
  }
  return os.str();
}

int run(int argc, char** argv) {
  CLI::App app{"Limit order book simulators and their neural posterior calibration"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  // simulate
  auto* sim = app.add_subcommand("simulate", "simulate one session and write its snapshot CSV");
  std::string sim_model, sim_theta, sim_out = "-", sim_trades, sim_config;
  std::int64_t sim_steps = 600;
  std::uint64_t sim_seed = 0;
  sim->add_option("model", sim_model, "zi|chiarella")->required();
  sim->add_option("--theta-log10", sim_theta, "comma-separated log10 parameters")->required();
  sim->add_option("--steps", sim_steps, "number of one-second steps");
  sim->add_option("--seed", sim_seed, "simulation seed");
  sim->add_option("--out", sim_out, "snapshot CSV (- for stdout)");
  sim->add_option("--trades", sim_trades, "optional trade log CSV");
  sim->add_option("--config", sim_config, "run configuration supplying fixed model settings")->check(CLI::ExistingFile);

  // features
  auto* feat = app.add_subcommand("features", "extract a summary series from a snapshot CSV");
  std::string feat_in, feat_kind = "vwap", feat_out = "-", feat_dataset;
  std::size_t feat_T = 600;
  std::int64_t feat_interval = 1;
  std::uint64_t feat_seed = 0;
  feat->add_option("--in,--snapshots", feat_in, "snapshot CSV")->required()->check(CLI::ExistingFile);
  feat->add_option("--kind", feat_kind, "vwap|touch");
  feat->add_option("--T", feat_T, "observation length");
  feat->add_option("--interval", feat_interval, "seconds per sampling tick");
  feat->add_option("--dataset", feat_dataset, "emit the observation normalised with this dataset's statistics");
  feat->add_option("--out", feat_out, "CSV (- for stdout)");
  feat->add_option("--seed", feat_seed, "unused; accepted for uniformity");

  // facts
  auto* fac = app.add_subcommand("facts", "stylised-fact report of a session");
  std::string fac_in, fac_trades, fac_out = "-";
  std::uint64_t fac_seed = 0;
  fac->add_option("--in,--snapshots", fac_in, "snapshot CSV")->required()->check(CLI::ExistingFile);
  fac->add_option("--trades", fac_trades, "trade log CSV (enables volume metrics)")->check(CLI::ExistingFile);
  fac->add_option("--out", fac_out, "JSON report (- for stdout)");
  fac->add_option("--seed", fac_seed, "unused; accepted for uniformity");

  // build-dataset
  auto* bd = app.add_subcommand("build-dataset", "simulate the budget and persist a calibration dataset");
  ConfigFlags bd_flags;
  std::string bd_out;
  bd_flags.attach(bd, true);
  bd->add_option("--out", bd_out, "dataset file")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a posterior estimator on a dataset");
  std::string tr_dataset, tr_out, tr_history, tr_flavor;
  std::optional<std::size_t> tr_epochs;
  std::optional<std::uint64_t> tr_seed;
  tr->add_option("--dataset", tr_dataset, "dataset file")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "model file")->required();
  tr->add_option("--history", tr_history, "optional per-epoch loss CSV");
  tr->add_option("--flavor", tr_flavor, "maf|nsf (default from the dataset's config)");
  tr->add_option("--max-epochs", tr_epochs, "training epoch cap");
  tr->add_option("--seed", tr_seed, "seed for initialisation and batching (default from the dataset)");

  // infer
  auto* inf = app.add_subcommand("infer", "draw posterior samples for an observed session");
  std::string inf_model, inf_obs, inf_out = "-";
  std::size_t inf_samples = 1000;
  std::int64_t inf_interval = 1;
  std::uint64_t inf_seed = 0;
  inf->add_option("--model", inf_model, "model file")->required()->check(CLI::ExistingFile);
  inf->add_option("--obs", inf_obs, "snapshot CSV of the observed session")->required()->check(CLI::ExistingFile);
  inf->add_option("--samples", inf_samples, "number of posterior draws");
  inf->add_option("--interval", inf_interval, "seconds per sampling tick");
  inf->add_option("--out", inf_out, "CSV of log10 draws (- for stdout)");
  inf->add_option("--seed", inf_seed, "sampling seed");

  // evaluate / sbc
  auto* ev = app.add_subcommand("evaluate", "posterior-mean RMSE on the dataset's test split");
  auto* sb = app.add_subcommand("sbc", "simulation-based calibration ranks");
  std::string ev_model, ev_dataset, ev_out = "-";
  std::optional<std::size_t> ev_points, ev_samples, sb_draws;
  std::optional<std::uint64_t> ev_seed;
  for (auto* cmd : {ev, sb}) {
    cmd->add_option("--model", ev_model, "model file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--dataset", ev_dataset, "dataset file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", ev_out, "JSON report (- for stdout)");
    cmd->add_option("--samples", ev_samples, "posterior draws per observation");
    cmd->add_option("--seed", ev_seed, "evaluation seed (default from the dataset)");
  }
  ev->add_option("--points", ev_points, "test points");
  sb->add_option("--draws", sb_draws, "prior draws");

  // recover
  auto* rec = app.add_subcommand("recover", "end-to-end recovery of a known parameter vector");
  ConfigFlags rec_flags;
  std::string rec_truth, rec_out = "-";
  rec_flags.attach(rec, true);
  rec->add_option("--truth-log10", rec_truth, "ground truth (default: a prior draw)");
  rec->add_option("--out", rec_out, "JSON report (- for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  if (*sim) {
    const auto kind = pipeline::parse_model_kind(sim_model);
    pipeline::RunConfig cfg = sim_config.empty() ? pipeline::RunConfig::defaults(kind)
                                                 : pipeline::load_run_config(sim_config);
    cfg.model = kind;
    if (sim_steps < 1) throw ParameterError("--steps must be >= 1");
    cfg.T = static_cast<std::size_t>(sim_steps);
    cfg.sample_interval = 1;
    const std::size_t d = kind == pipeline::ModelKind::Zi ? sim::ThetaZI::kDim : sim::ThetaChiarella::kDim;
    const auto rec_out = pipeline::simulate(cfg, parse_list(sim_theta, d, "--theta-log10"), sim_seed);
    std::ostringstream os;
    lob::write_snapshots_csv(os, rec_out.snapshots);
    emit(sim_out, os.str());
    if (!sim_trades.empty()) {
      std::ostringstream ts;
      lob::write_trades_csv(ts, rec_out.trades);
      emit(sim_trades, ts.str());
    }
  } else if (*feat) {
    if (!feat_dataset.empty()) {
      const auto ds = pipeline::load_dataset(feat_dataset);
      const auto obs = pipeline::ingest_historical(feat_in, ds.norm, ds.sample_interval);
      std::ostringstream os;
      os.precision(17);
      for (std::size_t j = 0; j < obs.values.size(); ++j) os << (j ? "," : "") << obs.values[j];
      os << '\n';
      emit(feat_out, os.str());
    } else {
      const auto snaps = lob::load_snapshots_csv(feat_in);
      emit(feat_out, series_csv(features::extract(features::parse_feature_kind(feat_kind), snaps, feat_T, feat_interval)));
    }
  } else if (*fac) {
    lob::SimulationRecord r;
    r.snapshots = lob::load_snapshots_csv(fac_in);
    if (!fac_trades.empty()) r.trades = lob::load_trades_csv(fac_trades);
    emit(fac_out, pipeline::to_json(facts::report(r)).dump(2) + "\n");
  } else if (*bd) {
    const auto cfg = bd_flags.resolve();
    const auto ds = pipeline::build_dataset(cfg);
    pipeline::save_dataset(std::filesystem::path(bd_out), ds);
    spdlog::info("wrote {} rows to {} (content hash {})", ds.size(), bd_out, ds.content_hash());
  } else if (*tr) {
    const auto ds = pipeline::load_dataset(tr_dataset);
    auto cfg = ds.run_config();
    if (!tr_flavor.empty()) cfg.npe.flavor = npe::parse_flow_flavor(tr_flavor);
    if (tr_epochs) cfg.train.max_epochs = *tr_epochs;
    if (tr_seed) cfg.seed = *tr_seed;
    auto model = pipeline::make_model(cfg, ds);
    const auto res = pipeline::train_on(model, ds, cfg);
    npe::save_model(std::filesystem::path(tr_out), model);
    spdlog::info("best epoch {} with validation loss {:.5f}", res.best_epoch, res.best_val_loss);
    if (!tr_history.empty()) {
      std::ostringstream os;
      os.precision(17);
      os << "epoch,train_loss,val_loss,lr\n";
      for (const auto& e : res.history) os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr << '\n';
      emit(tr_history, os.str());
    }
  } else if (*inf) {
    const auto model = npe::load_model(std::filesystem::path(inf_model));
    if (!model.meta().norm) throw DataError("model carries no feature normalisation statistics");
    const auto& norm = *model.meta().norm;
    const auto series = features::extract(norm.kind, lob::load_snapshots_csv(inf_obs), norm.length, inf_interval);
    Rng rng = make_rng(inf_seed);
    emit(inf_out, samples_csv(model.prior(), npe::posterior_for(model, series).sample(inf_samples, rng)));
  } else if (*ev || *sb) {
    const auto model = npe::load_model(std::filesystem::path(ev_model));
    const auto ds = pipeline::load_dataset(ev_dataset);
    if (!model.meta().norm || !(*model.meta().norm == ds.norm)) {
      throw DataError("model and dataset disagree on feature normalisation; they were not produced together");
    }
    auto cfg = ds.run_config();
    if (ev_seed) cfg.seed = *ev_seed;
    if (ev_points) cfg.eval.test_points = *ev_points;
    if (ev_samples) cfg.eval.posterior_samples = cfg.eval.sbc_samples = *ev_samples;
    if (sb_draws) cfg.eval.sbc_draws = *sb_draws;
    const json out = *ev ? pipeline::to_json(pipeline::evaluate(model, ds, cfg), ds.prior)
                         : pipeline::to_json(pipeline::sbc(model, ds, cfg), ds.prior);
    emit(ev_out, out.dump(2) + "\n");
  } else if (*rec) {
    const auto cfg = rec_flags.resolve();
    std::vector<double> truth;
    if (rec_truth.empty()) {
      Rng rng = make_rng(derive_seed(cfg.seed, pipeline::streams::kTruth));
      const auto t = npe::sample_prior(cfg.prior, 1, rng);
      truth.assign(t.row_span(0).begin(), t.row_span(0).end());
    } else {
      truth = parse_list(rec_truth, cfg.prior.dim(), "--truth-log10");
    }
    emit(rec_out, pipeline::end_to_end_recovery(cfg, truth).dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 3;
  }
}
