#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "lobcal/npe/diagnostics.hpp"
#include "lobcal/npe/model_io.hpp"
#include "toy.hpp"

using namespace lobcal;
using namespace lobcal::npe;

namespace {

NpeConfig small_config(FlowFlavor flavor = FlowFlavor::Nsf) {
  NpeConfig c;
  c.flavor = flavor;
  c.embed_hidden = 32;
  c.embed_out = 16;
  c.flow_hidden = 32;
  c.dropout = 0.0;
  return c;
}

TrainConfig quick_train(std::size_t epochs = 60) {
  TrainConfig t;
  t.max_epochs = epochs;
  t.seed = 3;
  return t;
}

struct Trained {
  NpeModel model;
  TrainResult result;
};

/// Linear-Gaussian toy trained once for every test that needs it.
const Trained& toy_model() {
  static const Trained t = [] {
    testsupport::LinearGaussianToy toy;
    Rng rng = make_rng(7);
    const auto data = toy.dataset(1000, rng);
    NpeModel m(small_config(), toy.prior(), toy.dim, {"toy", std::nullopt, 1});
    auto res = train_npe(m, data, quick_train());
    return Trained{std::move(m), std::move(res)};
  }();
  return t;
}

/// Observations are pure noise, independent of theta.
Trained noise_model(const PriorSpec& prior) {
  Rng rng = make_rng(9);
  TrainingData d;
  d.theta = sample_prior(prior, 1000, rng);
  d.x = Matrix(1000, 3);
  for (auto& v : d.x.storage()) v = standard_normal(rng);
  for (std::size_t r = 0; r < 1000; ++r) (r < 900 ? d.train : d.val).push_back(r);
  NpeModel m(small_config(FlowFlavor::Maf), prior, 3, {"noise", std::nullopt, 2});
  auto res = train_npe(m, d, quick_train(40));
  return {std::move(m), std::move(res)};
}

}  // namespace

TEST(Prior, SamplesInsideBoxWithMidpointMean) {
  const auto p = PriorSpec::uniform({2, 1, -4, -2}, {3, 2, -2, 0});
  Rng rng = make_rng(1);
  const std::size_t n = 20'000;
  const Matrix s = sample_prior(p, n, rng);
  for (std::size_t j = 0; j < 4; ++j) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      ASSERT_TRUE(s(r, j) >= p.lower[j] && s(r, j) <= p.upper[j]);
      mean += s(r, j) / n;
    }
    EXPECT_NEAR(mean, p.center(j), 3.0 * p.sd(j) / std::sqrt(double(n)));
  }
  EXPECT_EQ(sample_prior(p, 0, rng).rows(), 0u);
  EXPECT_THROW(PriorSpec::uniform({1}, {0}).validate(), ParameterError);
}

TEST(Prior, StandardizerMapsBoxToUnitCube) {
  const auto p = PriorSpec::uniform({2, -4}, {3, -2});
  const auto st = Standardizer::from_prior(p);
  const Matrix lo(1, 2, std::vector<double>{2, -4}), hi(1, 2, std::vector<double>{3, -2});
  EXPECT_EQ(st.to_std(lo), Matrix(1, 2, -1.0));
  EXPECT_EQ(st.to_std(hi), Matrix(1, 2, 1.0));
  const Matrix mid(1, 2, std::vector<double>{2.3, -2.9});
  const Matrix back = st.from_std(st.to_std(mid));
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(back[j], mid[j], 1e-15);
  EXPECT_NEAR(st.log_jacobian(), std::log(2.0) + std::log(1.0), 1e-15);
}

TEST(Training, ImprovesAndRecordsHistory) {
  const auto& t = toy_model();
  ASSERT_GE(t.result.history.size(), 2u);
  EXPECT_EQ(t.result.history.front().epoch, 0u);
  EXPECT_LE(t.result.best_val_loss, t.result.history.front().val_loss);
}

TEST(Training, ToyPosteriorMatchesConjugateOracle) {
  const auto& t = toy_model();
  testsupport::LinearGaussianToy toy;
  Rng rng = make_rng(11);
  const auto test = toy.dataset(100, rng);
  const auto rep = rmse_eval(t.model, test.theta, test.x, 1000, 5);
  int within = 0;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < 100; ++i) {
    bool ok = true;
    std::vector<double> mean(2);
    for (std::size_t j = 0; j < 2; ++j) {
      mean[j] = toy.posterior_mean(test.x(i, j));
      ok = ok && std::abs(rep.posterior_means(i, j) - mean[j]) <= 3.0 * toy.posterior_sd();
    }
    within += ok;
    analytic.push_back(rmse(mean, test.theta.row_span(i)));
  }
  EXPECT_GE(within, 90);  // the acceptance run uses the full budget and the 95 bar
  const double ref = mean_sd(analytic).mean;
  EXPECT_NEAR(rep.posterior.mean, ref, 0.2 * ref);
}

TEST(Training, DensityIntegratesToOne) {
  const auto& t = toy_model();
  const Posterior post = posterior_for(t.model, std::vector<double>{0.4, -0.7});
  const double h = 0.02;
  Matrix grid(0, 2);
  std::vector<double> pts;
  for (double a = -3.0; a < 3.0; a += h)
    for (double b = -3.5; b < 2.5; b += h) {
      pts.push_back(a + h / 2);
      pts.push_back(b + h / 2);
    }
  const auto lp = post.log_prob(Matrix(pts.size() / 2, 2, pts));
  double mass = 0.0;
  for (double v : lp) mass += std::exp(v) * h * h;
  EXPECT_NEAR(mass, 1.0, 0.02);
}

TEST(Training, PureNoiseRecoversPrior) {
  const auto prior = PriorSpec::gaussian({0, 0}, {1, 1});
  const auto t = noise_model(prior);
  Rng rng = make_rng(12);
  const std::vector<double> obs{0.3, -1.2, 0.8};
  const Posterior post = posterior_for(t.model, obs);
  const Matrix s = post.sample(5000, rng);
  const auto lq = post.log_prob(s);
  double kl = 0.0;
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const double lp = -std::log(2 * std::numbers::pi) - 0.5 * (s(r, 0) * s(r, 0) + s(r, 1) * s(r, 1));
    kl += (lq[r] - lp) / double(s.rows());
  }
  EXPECT_LT(kl, 0.1);
}

TEST(Posterior, AmortisedAndBoxContained) {
  const auto prior = PriorSpec::uniform({2, 1}, {3, 2});
  const auto t = noise_model(prior);
  const auto before = t.model.params().content_hash();
  const std::vector<double> obs{0.1, 0.2, 0.3};
  Rng a = make_rng(4), b = make_rng(4);
  const Matrix sa = posterior_for(t.model, obs).sample(500, a);
  const Matrix sb = posterior_for(t.model, obs).sample(500, b);
  EXPECT_EQ(sa, sb);
  EXPECT_EQ(t.model.params().content_hash(), before);
  std::size_t inside = 0;
  for (std::size_t r = 0; r < sa.rows(); ++r) inside += (sa(r, 0) > 1 && sa(r, 0) < 4 && sa(r, 1) > 0 && sa(r, 1) < 3);
  EXPECT_GE(inside, 495u);
  EXPECT_THROW(posterior_for(t.model, std::vector<double>{1.0}), DataError);
}

TEST(Posterior, LogProbIncludesStandardizerJacobian) {
  const auto prior = PriorSpec::uniform({0, 0}, {4, 4});
  NpeModel m(small_config(), prior, 3, {"id", std::nullopt, 0});
  // Freshly initialised flows are the identity: standard normal in standardised space.
  const Posterior post = posterior_for(m, std::vector<double>{0, 0, 0});
  const Matrix th(1, 2, std::vector<double>{2.0, 2.0});
  EXPECT_NEAR(post.log_prob(th)[0], -std::log(2 * std::numbers::pi) + 2 * std::log(0.5), 1e-10);
}

TEST(ModelIo, RoundTripAndCorruption) {
  const auto& t = toy_model();
  std::stringstream ss;
  save_model(ss, t.model);
  const std::string bytes = ss.str();
  std::stringstream in(bytes);
  const NpeModel back = load_model(in);
  const Matrix th(3, 2, std::vector<double>{0.1, 0.2, -1, 1, 2, -2});
  const std::vector<double> obs{0.5, 0.5};
  EXPECT_EQ(posterior_for(back, obs).log_prob(th), posterior_for(t.model, obs).log_prob(th));
  EXPECT_EQ(back.params().content_hash(), t.model.params().content_hash());
  std::string bad = bytes;
  bad[bad.size() - 3] ^= 0x5a;
  std::stringstream corrupt(bad);
  EXPECT_THROW(load_model(corrupt), DataError);
  std::stringstream junk("not a model\n");
  EXPECT_THROW(load_model(junk), DataError);
}

TEST(Training, NonFiniteDataRaisesTrainingError) {
  testsupport::LinearGaussianToy toy;
  Rng rng = make_rng(13);
  auto data = toy.dataset(100, rng);
  data.x(0, 0) = std::numeric_limits<double>::quiet_NaN();
  data.x(95, 0) = std::numeric_limits<double>::quiet_NaN();
  NpeModel m(small_config(), toy.prior(), 2, {"toy", std::nullopt, 1});
  try {
    train_npe(m, data, quick_train(3));
    FAIL();
  } catch (const TrainingError& e) {
    // The untrained loss is already non-finite, so no epoch is recorded.
    EXPECT_TRUE(e.history().empty());
  }
}

TEST(Sbc, AnalyticPosteriorPassesAndPointMassFails) {
  testsupport::LinearGaussianToy toy;
  const PosteriorSampler exact = [&](std::span<const double> x, std::size_t n, Rng& rng) {
    Matrix s(n, 2);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < 2; ++j) s(r, j) = toy.posterior_mean(x[j]) + toy.posterior_sd() * standard_normal(rng);
    return s;
  };
  const ObservationSimulator sim = [&](std::span<const double> th, Rng& rng) { return toy.simulate(th, rng); };
  const auto good = sbc_ranks(toy.prior(), exact, sim, 500, 1);
  EXPECT_TRUE(good.passes(0.01));
  const PosteriorSampler point = [](std::span<const double>, std::size_t n, Rng&) { return Matrix(n, 2, 0.0); };
  const auto bad = sbc_ranks(toy.prior(), point, sim, 500, 1);
  EXPECT_FALSE(bad.passes(0.01));
  const auto none = sbc_ranks(toy.prior(), exact, sim, 0, 1);
  for (const auto& h : none.histogram)
    for (auto c : h) EXPECT_EQ(c, 0u);
  EXPECT_FALSE(none.passes(0.01));
}

TEST(Rmse, PointMassAtTruthIsZeroAndBaselineClosedForm) {
  const std::vector<double> t{1.0, 2.0};
  EXPECT_EQ(rmse(t, t), 0.0);
  const auto p = PriorSpec::uniform({2, 1, -4, -2}, {3, 2, -2, 0});
  // sqrt(mean of width^2 / 12) = sqrt((1 + 1 + 4 + 4) / 48)
  EXPECT_NEAR(prior_mean_rmse_expected(p), std::sqrt(10.0 / 48.0), 1e-15);
}
