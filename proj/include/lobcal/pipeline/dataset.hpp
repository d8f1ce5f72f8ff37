#pragma once

#include <algorithm>
#include <atomic>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "lobcal/features/features.hpp"
#include "lobcal/lob/record.hpp"
#include "lobcal/npe/prior.hpp"
#include "lobcal/pipeline/config.hpp"

namespace lobcal::pipeline {

using nn::Matrix;

/// Simulates one session for log10 parameters `theta` with simulation seed `seed`.
inline lob::SimulationRecord simulate(const RunConfig& cfg, std::span<const double> theta, std::uint64_t seed) {
  if (cfg.model == ModelKind::Zi) {
    sim::ZIConfig z = cfg.zi;
    z.n_steps = cfg.n_steps();
    z.seed = seed;
    return sim::run_zi(sim::ThetaZI::from_log10(theta), z);
  }
  sim::ChiarellaConfig c = cfg.chiarella;
  c.n_steps = cfg.n_steps();
  c.seed = seed;
  return sim::run_chiarella(sim::ThetaChiarella::from_log10(theta), c).record;
}

inline features::SummarySeries summarise(const RunConfig& cfg, const lob::SimulationRecord& rec) {
  return features::extract(cfg.feature, rec.snapshots, cfg.T, cfg.sample_interval);
}

/// Runs `fn(i)` for i in [0, n) on `workers` threads. The first exception is rethrown.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex mu;
  const auto body = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

/// Persisted (theta, x) pairs with splits and provenance.
struct CalibrationDataset {
  ModelKind model = ModelKind::Zi;
  features::FeatureKind feature = features::FeatureKind::Vwap;
  std::size_t T = 0;
  std::int64_t sample_interval = 1;
  npe::PriorSpec prior;
  Matrix theta;  ///< log10 parameters, one row per simulation
  Matrix x;      ///< normalised features
  features::NormStats norm;
  std::vector<std::size_t> train, val, test;
  std::uint64_t seed = 0;
  std::string config_hash;
  json config;  ///< the producing RunConfig, so later stages can re-simulate
  std::size_t diverged = 0;

  [[nodiscard]] std::size_t size() const noexcept { return theta.rows(); }

  /// Hash of everything except itself: metadata, splits, statistics and matrix bytes.
  [[nodiscard]] std::string content_hash() const;

  [[nodiscard]] RunConfig run_config() const { return run_config_from_json(config); }

  [[nodiscard]] npe::TrainingData training_data() const { return {theta, x, train, val}; }

  /// Test rows (theta, x), truncated to at most `limit` rows.
  [[nodiscard]] std::pair<Matrix, Matrix> test_rows(std::size_t limit) const {
    const std::size_t n = std::min(limit, test.size());
    const std::span<const std::size_t> idx(test.data(), n);
    return {theta.gather_rows(idx), x.gather_rows(idx)};
  }

  /// Asserts split hygiene: disjoint, exhaustive, and statistics fitted on the train split.
  void check_invariants() const {
    std::vector<int> seen(size(), 0);
    for (const auto* s : {&train, &val, &test})
      for (std::size_t i : *s) {
        if (i >= size()) throw DataError("split index out of range");
        ++seen[i];
      }
    for (int c : seen)
      if (c != 1) throw DataError("dataset splits are not disjoint and exhaustive");
    if (norm.fitted_rows != train.size() || norm.provenance != train_provenance(train)) {
      throw DataError("normalisation statistics were not fitted on the train split");
    }
  }

  static std::string train_provenance(const std::vector<std::size_t>& train) {
    std::string bytes(train.size() * sizeof(std::uint64_t), '\0');
    for (std::size_t k = 0; k < train.size(); ++k) {
      const std::uint64_t v = train[k];
      std::memcpy(bytes.data() + k * sizeof v, &v, sizeof v);
    }
    return "train:" + hex64(fnv1a(bytes));
  }
};

inline json dataset_header(const CalibrationDataset& d) {
  return json{{"model", to_string(d.model)},
              {"features", features::to_string(d.feature)},
              {"T", d.T},
              {"sample_interval", d.sample_interval},
              {"prior", npe::to_json(d.prior)},
              {"rows", d.theta.rows()},
              {"theta_cols", d.theta.cols()},
              {"x_cols", d.x.cols()},
              {"norm", npe::to_json(d.norm)},
              {"train", d.train},
              {"val", d.val},
              {"test", d.test},
              {"seed", d.seed},
              {"config_hash", d.config_hash},
              {"config", d.config},
              {"diverged", d.diverged}};
}

inline std::string CalibrationDataset::content_hash() const {
  std::uint64_t h = fnv1a(dataset_header(*this).dump());
  h = fnv1a(std::string_view(reinterpret_cast<const char*>(theta.data()), theta.size() * sizeof(double)), h);
  h = fnv1a(std::string_view(reinterpret_cast<const char*>(x.data()), x.size() * sizeof(double)), h);
  return hex64(h);
}

/// Simulation index i draws its parameters from its own stream; a diverged run is replaced
/// by a fresh draw from the same stream.
struct DrawResult {
  std::vector<double> theta;
  features::SummarySeries series;
  std::size_t diverged = 0;
};

inline DrawResult simulate_draw(const RunConfig& cfg, std::size_t i, std::size_t max_attempts = 100) {
  Rng prior_rng = make_rng(derive_seed(derive_seed(cfg.seed, streams::kPrior), i));
  const std::uint64_t sim_base = derive_seed(derive_seed(cfg.seed, streams::kSimulation), i);
  DrawResult r;
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    const Matrix th = npe::sample_prior(cfg.prior, 1, prior_rng);
    r.theta.assign(th.row_span(0).begin(), th.row_span(0).end());
    try {
      r.series = summarise(cfg, simulate(cfg, r.theta, derive_seed(sim_base, attempt)));
      return r;
    } catch (const SimulationDiverged&) {
      ++r.diverged;
    }
  }
  throw SimulationDiverged("simulation " + std::to_string(i) + " diverged on every redraw");
}

/// Simulates the budget in parallel, fits normalisation on the train split and splits 8:1:1
/// by a seeded permutation. Aborts when more than max_diverged_fraction of runs diverge.
inline CalibrationDataset build_dataset(const RunConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.budget;
  std::vector<DrawResult> draws(n);
  std::atomic<std::size_t> diverged{0};
  const auto limit = static_cast<std::size_t>(cfg.max_diverged_fraction * static_cast<double>(n));
  parallel_for(n, cfg.worker_count(), [&](std::size_t i) {
    draws[i] = simulate_draw(cfg, i);
    if ((diverged += draws[i].diverged) > limit) {
      throw SimulationDiverged("more than " + std::to_string(limit) + " of " + std::to_string(n) +
                               " simulations diverged; the prior or model configuration is likely pathological");
    }
  });

  CalibrationDataset ds;
  ds.model = cfg.model;
  ds.feature = cfg.feature;
  ds.T = cfg.T;
  ds.sample_interval = cfg.sample_interval;
  ds.prior = cfg.prior;
  ds.seed = cfg.seed;
  ds.config_hash = config_hash(cfg);
  ds.config = to_json(cfg);
  ds.diverged = diverged.load();
  if (ds.diverged > 0) spdlog::warn("{} diverged simulations were replaced by redraws", ds.diverged);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng split_rng = make_rng(derive_seed(cfg.seed, streams::kSplit));
  std::shuffle(perm.begin(), perm.end(), split_rng);
  const std::size_t n_train = n * 8 / 10, n_val = n / 10;
  ds.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  ds.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());

  std::vector<features::SummarySeries> train_series;
  train_series.reserve(ds.train.size());
  for (std::size_t i : ds.train) train_series.push_back(draws[i].series);
  ds.norm = features::fit_stats(train_series, CalibrationDataset::train_provenance(ds.train));

  const std::size_t d = cfg.prior.dim(), m = features::channels(cfg.feature) * cfg.T;
  ds.theta = Matrix(n, d);
  ds.x = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(draws[i].theta.begin(), draws[i].theta.end(), ds.theta.row_span(i).begin());
    const auto v = features::normalize(draws[i].series, ds.norm).values;
    std::copy(v.begin(), v.end(), ds.x.row_span(i).begin());
  }
  return ds;
}

inline constexpr std::string_view kDatasetMagic = "LOBCAL-DATASET 1";

/// Layout: magic line, header byte count line, JSON header (with content hash), theta then x
/// as little-endian f64, row-major.
inline void save_dataset(std::ostream& os, const CalibrationDataset& d) {
  json h = dataset_header(d);
  h["content_hash"] = d.content_hash();
  const std::string header = h.dump();
  os << kDatasetMagic << '\n' << header.size() << '\n' << header;
  os.write(reinterpret_cast<const char*>(d.theta.data()), static_cast<std::streamsize>(d.theta.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(d.x.data()), static_cast<std::streamsize>(d.x.size() * sizeof(double)));
  if (!os) throw DataError("failed writing dataset");
}

inline CalibrationDataset load_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kDatasetMagic) throw DataError("not a dataset file (bad magic line)");
  if (!std::getline(is, line)) throw DataError("dataset file truncated");
  std::size_t len = 0;
  try {
    len = std::stoul(line);
  } catch (const std::exception&) {
    throw DataError("dataset header length is not a number");
  }
  std::string header(len, '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(len))) throw DataError("dataset file truncated");
  CalibrationDataset d;
  std::string stored_hash;
  try {
    const json h = json::parse(header);
    d.model = parse_model_kind(h.at("model").get<std::string>());
    d.feature = features::parse_feature_kind(h.at("features").get<std::string>());
    d.T = h.at("T").get<std::size_t>();
    d.sample_interval = h.at("sample_interval").get<std::int64_t>();
    d.prior = npe::prior_from_json(h.at("prior"));
    d.theta = Matrix(h.at("rows").get<std::size_t>(), h.at("theta_cols").get<std::size_t>());
    d.x = Matrix(d.theta.rows(), h.at("x_cols").get<std::size_t>());
    d.norm = npe::norm_from_json(h.at("norm"));
    d.train = h.at("train").get<std::vector<std::size_t>>();
    d.val = h.at("val").get<std::vector<std::size_t>>();
    d.test = h.at("test").get<std::vector<std::size_t>>();
    d.seed = h.at("seed").get<std::uint64_t>();
    d.config_hash = h.at("config_hash").get<std::string>();
    d.config = h.at("config");
    d.diverged = h.at("diverged").get<std::size_t>();
    stored_hash = h.at("content_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("dataset header is invalid: ") + e.what());
  }
  if (!is.read(reinterpret_cast<char*>(d.theta.data()), static_cast<std::streamsize>(d.theta.size() * sizeof(double))) ||
      !is.read(reinterpret_cast<char*>(d.x.data()), static_cast<std::streamsize>(d.x.size() * sizeof(double)))) {
    throw DataError("dataset file truncated");
  }
  if (d.content_hash() != stored_hash) throw DataError("dataset content hash mismatch (file corrupted?)");
  d.check_invariants();
  return d;
}

/// Atomic write: temporary sibling, then rename.
inline void save_dataset(const std::filesystem::path& path, const CalibrationDataset& d) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + tmp.string() + "' for writing");
    save_dataset(os, d);
  }
  std::filesystem::rename(tmp, path);
}

inline CalibrationDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset file '" + path.string() + "'");
  return load_dataset(is);
}

/// Reads a snapshot CSV and produces the observation exactly as for simulations, normalised
/// with the given statistics.
inline features::Normalized ingest_historical(const std::string& csv_path, const features::NormStats& stats,
                                              std::int64_t sample_interval = 1) {
  const auto snaps = lob::load_snapshots_csv(csv_path);
  const auto series = features::extract(stats.kind, snaps, stats.length, sample_interval);
  return features::normalize(series, stats);
}

}  // namespace lobcal::pipeline
