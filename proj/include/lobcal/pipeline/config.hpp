#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "lobcal/features/features.hpp"
#include "lobcal/npe/model_io.hpp"
#include "lobcal/sim/chiarella_model.hpp"
#include "lobcal/sim/zi_model.hpp"

namespace lobcal::pipeline {

using nlohmann::json;

enum class ModelKind { Zi, Chiarella };

inline const char* to_string(ModelKind k) { return k == ModelKind::Zi ? "zi" : "chiarella"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "zi") return ModelKind::Zi;
  if (s == "chiarella") return ModelKind::Chiarella;
  throw ParameterError("unknown model kind '" + s + "' (expected zi|chiarella)");
}

inline npe::PriorSpec default_prior(ModelKind k) {
  if (k == ModelKind::Zi) {
    const auto n = sim::ThetaZI::names();
    return npe::PriorSpec::uniform({2, 1, -4, -2}, {3, 2, -2, 0}, {n.begin(), n.end()});
  }
  const auto n = sim::ThetaChiarella::names();
  return npe::PriorSpec::uniform({-2, -1, -1, -1, 4, -2}, {0, 1, 1, 0, 6, 0}, {n.begin(), n.end()});
}

/// Fixed Chiarella settings used by default. Prices are in ticks. With dt = 1e-4 the noise
/// term moves the price by 50 sigma_n ticks per step and the fundamental pull relaxes
/// 5-50% of the mispricing per step, so the prior box never diverges. beta and beta_hf
/// enter in units of 1e-3 and 1e-8 demand: saturated momentum then drifts the price by
/// 0.5-50 ticks per step across both prior boxes.
inline sim::ChiarellaConfig default_chiarella_config() {
  sim::ChiarellaConfig c;
  c.dt = 1e-4;
  c.kyle_lambda = 5000.0;
  c.alpha_m = 0.01;
  c.alpha_hf = 0.5;
  c.momentum_demand_unit = 1e-3;
  c.hf_demand_unit = 1e-8;
  c.order_scale = 1.0;
  c.initial_price = 10'000;
  return c;
}

struct EvalConfig {
  std::size_t test_points = 100;
  std::size_t posterior_samples = 1000;
  std::size_t sbc_draws = 100;
  std::size_t sbc_samples = 100;
};

/// Everything needed to reproduce a run.
struct RunConfig {
  ModelKind model = ModelKind::Zi;
  features::FeatureKind feature = features::FeatureKind::Vwap;
  std::size_t T = 600;
  std::int64_t sample_interval = 1;
  std::size_t budget = 2000;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  ///< 0 = hardware concurrency
  double max_diverged_fraction = 0.05;
  npe::PriorSpec prior = default_prior(ModelKind::Zi);
  sim::ZIConfig zi{};
  sim::ChiarellaConfig chiarella = default_chiarella_config();
  npe::NpeConfig npe{};
  npe::TrainConfig train{};
  EvalConfig eval{};

  static RunConfig defaults(ModelKind k) {
    RunConfig c;
    c.model = k;
    c.prior = default_prior(k);
    c.npe.flavor = k == ModelKind::Zi ? npe::FlowFlavor::Nsf : npe::FlowFlavor::Maf;
    return c;
  }

  [[nodiscard]] std::int64_t n_steps() const { return static_cast<std::int64_t>(T) * sample_interval; }
  [[nodiscard]] std::size_t worker_count() const {
    return threads > 0 ? threads : std::max(1u, std::thread::hardware_concurrency());
  }

  void validate() const {
    if (T == 0) throw ParameterError("T must be >= 1");
    if (sample_interval < 1) throw ParameterError("sample_interval must be >= 1");
    if (budget < 10) throw ParameterError("budget must be >= 10 so that every split is non-empty");
    prior.validate();
    const std::size_t d = model == ModelKind::Zi ? sim::ThetaZI::kDim : sim::ThetaChiarella::kDim;
    if (prior.dim() != d) throw ParameterError("prior dimension does not match the model");
    if (!(max_diverged_fraction >= 0.0 && max_diverged_fraction <= 1.0)) {
      throw ParameterError("max_diverged_fraction must lie in [0, 1]");
    }
    if (model == ModelKind::Zi) zi.validate();
    if (model == ModelKind::Chiarella) chiarella.validate();
  }
};

inline json to_json(const sim::ChiarellaConfig& c) {
  return json{{"dt", c.dt},
              {"kyle_lambda", c.kyle_lambda},
              {"alpha_m", c.alpha_m},
              {"alpha_hf", c.alpha_hf},
              {"momentum_demand_unit", c.momentum_demand_unit},
              {"hf_demand_unit", c.hf_demand_unit},
              {"order_scale", c.order_scale},
              {"initial_price", c.initial_price},
              {"fundamental",
               {{"kind", c.fundamental.kind == sim::FundamentalSpec::Kind::Constant ? "constant" : "random_walk"},
                {"step_std", c.fundamental.step_std}}},
              {"background",
               {{"alpha", c.background.alpha},
                {"delta", c.background.delta},
                {"lambda", c.background.lambda},
                {"n_agents", c.background.n_agents}}}};
}

inline void from_json_into(const json& j, sim::ChiarellaConfig& c) {
  c.dt = j.value("dt", c.dt);
  c.kyle_lambda = j.value("kyle_lambda", c.kyle_lambda);
  c.alpha_m = j.value("alpha_m", c.alpha_m);
  c.alpha_hf = j.value("alpha_hf", c.alpha_hf);
  c.momentum_demand_unit = j.value("momentum_demand_unit", c.momentum_demand_unit);
  c.hf_demand_unit = j.value("hf_demand_unit", c.hf_demand_unit);
  c.order_scale = j.value("order_scale", c.order_scale);
  c.initial_price = j.value("initial_price", c.initial_price);
  if (j.contains("fundamental")) {
    const auto& f = j["fundamental"];
    const std::string kind = f.value("kind", "constant");
    if (kind != "constant" && kind != "random_walk") throw ParameterError("unknown fundamental kind '" + kind + "'");
    c.fundamental.kind = kind == "constant" ? sim::FundamentalSpec::Kind::Constant : sim::FundamentalSpec::Kind::RandomWalk;
    c.fundamental.step_std = f.value("step_std", c.fundamental.step_std);
  }
  if (j.contains("background")) {
    const auto& b = j["background"];
    c.background.alpha = b.value("alpha", c.background.alpha);
    c.background.delta = b.value("delta", c.background.delta);
    c.background.lambda = b.value("lambda", c.background.lambda);
    c.background.n_agents = b.value("n_agents", c.background.n_agents);
  }
}

inline json to_json(const npe::TrainConfig& t) {
  return json{{"lr", t.lr},
              {"batch_size", t.batch_size},
              {"max_epochs", t.max_epochs},
              {"plateau_factor", t.plateau_factor},
              {"plateau_patience", t.plateau_patience},
              {"stop_patience", t.stop_patience},
              {"clip_norm", t.clip_norm}};
}

inline void from_json_into(const json& j, npe::TrainConfig& t) {
  t.lr = j.value("lr", t.lr);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.max_epochs = j.value("max_epochs", t.max_epochs);
  t.plateau_factor = j.value("plateau_factor", t.plateau_factor);
  t.plateau_patience = j.value("plateau_patience", t.plateau_patience);
  t.stop_patience = j.value("stop_patience", t.stop_patience);
  t.clip_norm = j.value("clip_norm", t.clip_norm);
}

/// Serialised form. Thread count is deliberately omitted: it never changes results.
inline json to_json(const RunConfig& c) {
  return json{{"model", to_string(c.model)},
              {"features", features::to_string(c.feature)},
              {"T", c.T},
              {"sample_interval", c.sample_interval},
              {"budget", c.budget},
              {"seed", c.seed},
              {"max_diverged_fraction", c.max_diverged_fraction},
              {"prior", npe::to_json(c.prior)},
              {"zi", {{"n_agents", c.zi.n_agents}, {"initial_price", c.zi.initial_price}}},
              {"chiarella", to_json(c.chiarella)},
              {"npe", npe::to_json(c.npe)},
              {"train", to_json(c.train)},
              {"eval",
               {{"test_points", c.eval.test_points},
                {"posterior_samples", c.eval.posterior_samples},
                {"sbc_draws", c.eval.sbc_draws},
                {"sbc_samples", c.eval.sbc_samples}}}};
}

/// Reads a config; absent keys keep the model's defaults.
inline RunConfig run_config_from_json(const json& j) {
  RunConfig c = RunConfig::defaults(parse_model_kind(j.value("model", "zi")));
  try {
    c.feature = features::parse_feature_kind(j.value("features", features::to_string(c.feature)));
    c.T = j.value("T", c.T);
    c.sample_interval = j.value("sample_interval", c.sample_interval);
    c.budget = j.value("budget", c.budget);
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.max_diverged_fraction = j.value("max_diverged_fraction", c.max_diverged_fraction);
    if (j.contains("prior")) c.prior = npe::prior_from_json(j["prior"]);
    if (j.contains("zi")) {
      c.zi.n_agents = j["zi"].value("n_agents", c.zi.n_agents);
      c.zi.initial_price = j["zi"].value("initial_price", c.zi.initial_price);
    }
    if (j.contains("chiarella")) from_json_into(j["chiarella"], c.chiarella);
    if (j.contains("npe")) {
      json merged = npe::to_json(c.npe);
      merged.update(j["npe"]);
      c.npe = npe::npe_config_from_json(merged);
    }
    if (j.contains("train")) from_json_into(j["train"], c.train);
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      c.eval.test_points = e.value("test_points", c.eval.test_points);
      c.eval.posterior_samples = e.value("posterior_samples", c.eval.posterior_samples);
      c.eval.sbc_draws = e.value("sbc_draws", c.eval.sbc_draws);
      c.eval.sbc_samples = e.value("sbc_samples", c.eval.sbc_samples);
    }
  } catch (const json::exception& e) {
    throw ParameterError(std::string("invalid run configuration: ") + e.what());
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParameterError("cannot open config file '" + path + "'");
  try {
    return run_config_from_json(json::parse(is));
  } catch (const json::parse_error& e) {
    throw ParameterError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

/// FNV-1a 64 over bytes.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

// Seed streams derived from the master seed.
namespace streams {
inline constexpr std::uint64_t kPrior = 1, kSimulation = 2, kSplit = 3, kModelInit = 4, kTraining = 5, kEval = 6,
                               kSbc = 7, kTruth = 8, kFacts = 9;
}

}  // namespace lobcal::pipeline
