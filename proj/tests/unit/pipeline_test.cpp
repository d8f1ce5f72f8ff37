#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "lobcal/pipeline/dataset.hpp"

using namespace lobcal;
using namespace lobcal::pipeline;

namespace {

RunConfig tiny(ModelKind k = ModelKind::Zi) {
  RunConfig c = RunConfig::defaults(k);
  c.budget = 10;
  c.T = 30;
  c.threads = 2;
  c.seed = 21;
  return c;
}

/// Unique scratch path under the system temp directory, removed on destruction.
struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const std::string& name)
      : path(std::filesystem::temp_directory_path() /
             (name + "-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "-" +
              ::testing::UnitTest::GetInstance()->current_test_info()->name())) {}
  ~TempFile() { std::filesystem::remove(path); }
};

}  // namespace

TEST(Dataset, SplitsAreEightOneOneAndDisjoint) {
  const auto ds = build_dataset(tiny());
  EXPECT_EQ(ds.train.size(), 8u);
  EXPECT_EQ(ds.val.size(), 1u);
  EXPECT_EQ(ds.test.size(), 1u);
  std::set<std::size_t> all(ds.train.begin(), ds.train.end());
  all.insert(ds.val.begin(), ds.val.end());
  all.insert(ds.test.begin(), ds.test.end());
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(ds.x.cols(), 60u);
  EXPECT_EQ(ds.norm.provenance, CalibrationDataset::train_provenance(ds.train));
  EXPECT_EQ(ds.norm.fitted_rows, 8u);
  for (double v : ds.x.storage()) ASSERT_TRUE(std::isfinite(v));
  for (std::size_t r = 0; r < ds.size(); ++r) EXPECT_TRUE(ds.prior.contains(ds.theta.row_span(r)));
  EXPECT_NO_THROW(ds.check_invariants());
}

TEST(Dataset, SameConfigSameContentHashAcrossThreadCounts) {
  auto a = tiny(), b = tiny();
  b.threads = 1;
  const auto da = build_dataset(a), db = build_dataset(b);
  EXPECT_EQ(da.content_hash(), db.content_hash());
  auto c = tiny();
  c.seed = 22;
  EXPECT_NE(build_dataset(c).content_hash(), da.content_hash());
}

TEST(Dataset, NormStatsIgnoreHeldOutRows) {
  auto ds = build_dataset(tiny());
  std::vector<features::SummarySeries> train;
  const auto cfg = ds.run_config();
  for (std::size_t i : ds.train) train.push_back(simulate_draw(cfg, i).series);
  const auto refit = features::fit_stats(train, CalibrationDataset::train_provenance(ds.train));
  EXPECT_EQ(refit, ds.norm);
  auto tampered = ds;
  tampered.norm.provenance = "train:0000000000000000";
  EXPECT_THROW(tampered.check_invariants(), DataError);
}

TEST(Dataset, SaveLoadRoundTrip) {
  const auto ds = build_dataset(tiny());
  TempFile f("lobcal-ds");
  save_dataset(f.path, ds);
  const auto back = load_dataset(f.path);
  EXPECT_EQ(back.theta, ds.theta);
  EXPECT_EQ(back.x, ds.x);
  EXPECT_EQ(back.train, ds.train);
  EXPECT_EQ(back.norm, ds.norm);
  EXPECT_EQ(back.content_hash(), ds.content_hash());
  EXPECT_EQ(to_json(back.run_config()), to_json(tiny()));

  std::ifstream in(f.path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  bytes[bytes.size() - 5] ^= 0x01;
  std::stringstream corrupt(bytes);
  EXPECT_THROW(load_dataset(corrupt), DataError);
  std::stringstream junk("hello\n");
  EXPECT_THROW(load_dataset(junk), DataError);
}

TEST(Dataset, DivergentConfigurationAborts) {
  auto c = tiny(ModelKind::Chiarella);
  c.chiarella.dt = 1.0;
  c.chiarella.kyle_lambda = 1e6;
  c.threads = 1;
  EXPECT_THROW(build_dataset(c), SimulationDiverged);
}

TEST(Ingest, ExportedCsvReproducesSimulatorFeatures) {
  const auto cfg = tiny();
  const auto ds = build_dataset(cfg);
  const std::vector<double> theta{2.5, 1.5, -3.0, -1.0};
  const auto rec = simulate(cfg, theta, 99);
  TempFile f("lobcal-snap");
  {
    std::ofstream out(f.path);
    lob::write_snapshots_csv(out, rec.snapshots);
  }
  const auto ingested = ingest_historical(f.path.string(), ds.norm);
  const auto direct = features::normalize(summarise(cfg, rec), ds.norm);
  EXPECT_EQ(ingested.values, direct.values);
}

TEST(Ingest, MissingColumnIsNamed) {
  TempFile f("lobcal-bad");
  {
    std::ofstream out(f.path);
    out << "timestep,best_bid,best_bid_vol,best_ask,mid,last_trade\n0,99,1,101,100,\n";
  }
  const auto ds = build_dataset(tiny());
  try {
    ingest_historical(f.path.string(), ds.norm);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("best_ask_vol"), std::string::npos);
  }
}

TEST(Ingest, GapIsCarriedForwardWithoutNaN) {
  TempFile f("lobcal-gap");
  {
    std::ofstream out(f.path);
    out << lob::kSnapshotHeader << '\n';
    out << "0,99,2,101,3,100,\n1,98,1,102,1,100,\n4,97,5,103,5,100,\n5,97,5,103,5,100,\n";
  }
  const auto snaps = lob::load_snapshots_csv(f.path.string());
  const auto series = features::extract(features::FeatureKind::Touch, snaps, 6, 1);
  // Timesteps 2 and 3 repeat timestep 1.
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(series.values[2 * 4 + c], series.values[1 * 4 + c]);
    EXPECT_EQ(series.values[3 * 4 + c], series.values[1 * 4 + c]);
  }
  const std::vector<features::SummarySeries> train{series};
  const auto stats = features::fit_stats(train);
  const auto norm = ingest_historical(f.path.string(), stats);
  for (double v : norm.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(Config, JsonRoundTripAndHash) {
  auto c = tiny(ModelKind::Chiarella);
  c.chiarella.momentum_demand_unit = 0.25;
  c.eval.sbc_draws = 17;
  const auto back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  c.seed += 1;
  EXPECT_NE(config_hash(back), config_hash(c));
  auto bad = tiny();
  bad.budget = 9;
  EXPECT_THROW(bad.validate(), ParameterError);
  EXPECT_THROW(parse_model_kind("garch"), ParameterError);
}

TEST(Streams, DrawsDependOnlyOnIndex) {
  const auto cfg = tiny();
  const auto a = simulate_draw(cfg, 3), b = simulate_draw(cfg, 3), c = simulate_draw(cfg, 4);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_EQ(a.series.values, b.series.values);
  EXPECT_NE(a.theta, c.theta);
}
