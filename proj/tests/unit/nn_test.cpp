#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gradcheck.hpp"
#include "lobcal/nn/layers.hpp"
#include "lobcal/nn/optim.hpp"
#include "lobcal/nn/rq_spline.hpp"

using namespace lobcal;
using namespace lobcal::nn;

TEST(Tape, SumOfSquaresGradientIsTwiceInput) {
  Tape t;
  const Matrix x0(2, 3, std::vector<double>{1, -2, 3, 0.5, 0, -1.25});
  const Var x = t.variable(x0);
  t.backward(sum(square(x)));
  const Matrix g = t.grad(x);
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_EQ(g[i], 2.0 * x0[i]);
}

TEST(Tape, NonScalarLossIsContractError) {
  Tape t;
  const Var x = t.variable(Matrix(2, 2, 1.0));
  EXPECT_THROW(t.backward(x), ContractError);
}

TEST(Tape, ParameterGradientsAccumulate) {
  ParamStore store;
  Parameter& p = store.add("p", 1, 2);
  p.value = Matrix(1, 2, std::vector<double>{1.0, 2.0});
  for (int k = 0; k < 2; ++k) {
    Tape t;
    t.backward(sum(square(t.param(p))));
  }
  EXPECT_EQ(p.grad[0], 4.0);
  EXPECT_EQ(p.grad[1], 8.0);
}

TEST(Tape, NonRecordingTapeKeepsNoGradients) {
  ParamStore store;
  Parameter& p = store.add("p", 1, 1);
  Tape t(false);
  const Var v = square(t.param(p));
  EXPECT_FALSE(t.requires_grad(v));
}

TEST(GradCheck, EveryPrimitiveMatchesFiniteDifferences) {
  for (const auto& c : testsupport::primitive_cases(11)) {
    const auto r = testsupport::grad_check(c, 5);
    EXPECT_LT(r.max_rel_err, 1e-5) << c.name;
    EXPECT_GT(r.checked, 0u) << c.name;
  }
}

TEST(GradCheck, DenseTanhDenseComposition) {
  ParamStore store;
  Rng rng = make_rng(3);
  Dense a(store, "a", 3, 4, rng), b(store, "b", 4, 2, rng);
  const testsupport::GradCase c{"dense-tanh-dense",
                                {testsupport::random_matrix(5, 3, rng), a.weight().value, a.bias().value,
                                 b.weight().value, b.bias().value},
                                [](Tape&, const std::vector<Var>& v) {
                                  return linear(nn::tanh(linear(v[0], v[1], v[2])), v[3], v[4]);
                                }};
  EXPECT_LT(testsupport::grad_check(c, 1).max_rel_err, 1e-5);
}

TEST(GradCheck, RandomComposites) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto c = testsupport::random_composite(100 + s);
    EXPECT_LT(testsupport::grad_check(c, s).max_rel_err, 1e-5) << c.name;
  }
}

TEST(Mlp, ZeroWeightsGiveZeroOutput) {
  ParamStore store;
  Rng rng = make_rng(1);
  Mlp m(store, "m", {3, 5, 2}, 0.0, rng);
  for (std::size_t i = 0; i < store.size(); ++i) store[i].value.fill(0.0);
  Tape t(false);
  const Var y = m.apply(t, t.constant(Matrix(4, 3, 1.5)));
  for (double v : y.value().storage()) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, IdentityInitialisedSingleLayerIsIdentity) {
  ParamStore store;
  Rng rng = make_rng(1);
  Mlp m(store, "m", {3, 3}, 0.0, rng);
  Matrix& w = m.layers()[0].weight().value;
  w.fill(0.0);
  for (std::size_t i = 0; i < 3; ++i) w(i, i) = 1.0;
  Tape t(false);
  const Matrix x(2, 3, std::vector<double>{1, -2, 3, 4, 5, -6});
  EXPECT_EQ(m.apply(t, t.constant(x)).value(), x);
}

TEST(Mlp, EvalModeIsDeterministicAndTrainModeDropsUnits) {
  ParamStore store;
  Rng rng = make_rng(2);
  Mlp m(store, "m", {4, 64, 3}, 0.5, rng);
  const Matrix x = testsupport::random_matrix(3, 4, rng);
  Tape t(false);
  const Matrix a = m.apply(t, t.constant(x), false).value();
  const Matrix b = m.apply(t, t.constant(x), false).value();
  EXPECT_EQ(a, b);
  Rng r1 = make_rng(9), r2 = make_rng(9);
  const Matrix c = m.apply(t, t.constant(x), true, &r1).value();
  const Matrix d = m.apply(t, t.constant(x), true, &r2).value();
  EXPECT_EQ(c, d);
  EXPECT_NE(a, c);
}

TEST(Mlp, RejectsWrongInputWidth) {
  ParamStore store;
  Rng rng = make_rng(1);
  Mlp m(store, "m", {3, 2}, 0.0, rng);
  Tape t(false);
  EXPECT_THROW((void)m.apply(t, t.constant(Matrix(1, 4))), ContractError);
}

TEST(MaskedDense, OnesMaskEqualsDense) {
  ParamStore store;
  Rng rng = make_rng(4);
  MaskedDense md(store, "md", Matrix(3, 2, 1.0), rng);
  const Matrix x = testsupport::random_matrix(4, 3, rng);
  Tape t(false);
  const Matrix a = md.apply(t, t.constant(x)).value();
  const Matrix b = linear(t.constant(x), t.param(md.weight()), t.param(md.bias())).value();
  EXPECT_EQ(a, b);
}

TEST(MaskedDense, ZeroMaskGivesBias) {
  ParamStore store;
  Rng rng = make_rng(4);
  MaskedDense md(store, "md", Matrix(3, 2, 0.0), rng);
  md.bias().value = Matrix(1, 2, std::vector<double>{0.25, -1.0});
  Tape t(false);
  const Matrix y = md.apply(t, t.constant(testsupport::random_matrix(5, 3, rng))).value();
  for (std::size_t r = 0; r < 5; ++r) {
    EXPECT_EQ(y(r, 0), 0.25);
    EXPECT_EQ(y(r, 1), -1.0);
  }
}

TEST(Made, JacobianRespectsDegrees) {
  // Output for dimension i (degree i+1) may depend only on inputs of smaller degree.
  for (std::size_t d : {1u, 2u, 3u, 5u}) {
    ParamStore store;
    Rng rng = make_rng(d);
    const Made made(store, "made", d, 0, 16, 2, 2, rng);
    for (std::size_t i = 0; i < store.size(); ++i)
      for (auto& v : store[i].value.storage()) v = testsupport::random_matrix(1, 1, rng)[0];
    Matrix x = testsupport::random_matrix(1, d, rng);
    const auto eval = [&](const Matrix& in) {
      Tape t(false);
      return made.apply(t, t.constant(in), Var()).value();
    };
    for (std::size_t j = 0; j < d; ++j) {
      Matrix xp = x, xm = x;
      xp[j] += 1e-4;
      xm[j] -= 1e-4;
      const Matrix yp = eval(xp), ym = eval(xm);
      for (std::size_t p = 0; p < 2; ++p) {
        for (std::size_t i = 0; i < d; ++i) {
          const double deriv = (yp[p * d + i] - ym[p * d + i]) / 2e-4;
          if (j >= i) EXPECT_EQ(deriv, 0.0) << "d=" << d << " out " << i << " in " << j;
        }
      }
    }
  }
}

TEST(Made, HiddenDegreesRoundRobin) {
  const auto deg = made_hidden_degrees(4, 7);
  EXPECT_EQ(deg, (std::vector<std::size_t>{1, 2, 3, 1, 2, 3, 1}));
  EXPECT_EQ(made_hidden_degrees(1, 3), (std::vector<std::size_t>{0, 0, 0}));
}

// ---------------------------------------------------------------------------------------

namespace {

RqKnots random_knots(Rng& rng, const RqSplineSpec& spec) {
  const Matrix raw = testsupport::random_matrix(1, spec.raw_size(), rng, -2.0, 2.0);
  const auto s = raw.row_span(0);
  return normalize_knots(s.subspan(0, spec.bins), s.subspan(spec.bins, spec.bins), s.subspan(2 * spec.bins),
                         spec);
}

}  // namespace

TEST(RqSpline, UniformBinsUnitDerivativesIsIdentity) {
  const RqSplineSpec spec;
  const std::vector<double> zeros(spec.bins, 0.0), raw_d(spec.bins - 1, spec.identity_raw_derivative());
  const auto k = normalize_knots(zeros, zeros, raw_d, spec);
  for (double x = -4.0; x <= 4.0; x += 0.173) {
    const auto [y, ld] = rq_spline_forward(k, spec.tail_bound, x);
    EXPECT_NEAR(y, x, 1e-12);
    EXPECT_NEAR(ld, 0.0, 1e-12);
  }
}

TEST(RqSpline, NormalisedKnotsArePositiveAndSumToWidth) {
  const RqSplineSpec spec;
  Rng rng = make_rng(8);
  for (int rep = 0; rep < 50; ++rep) {
    const auto k = random_knots(rng, spec);
    double sw = 0.0, sh = 0.0;
    for (double w : k.widths) {
      EXPECT_GT(w, 0.0);
      sw += w;
    }
    for (double h : k.heights) {
      EXPECT_GT(h, 0.0);
      sh += h;
    }
    EXPECT_NEAR(sw, 2.0 * spec.tail_bound, 1e-12);
    EXPECT_NEAR(sh, 2.0 * spec.tail_bound, 1e-12);
    for (double d : k.derivatives) EXPECT_GT(d, 0.0);
    EXPECT_EQ(k.derivatives.front(), 1.0);
    EXPECT_EQ(k.derivatives.back(), 1.0);
  }
}

TEST(RqSpline, InverseRoundTrip) {
  const RqSplineSpec spec;
  Rng rng = make_rng(9);
  const auto k = random_knots(rng, spec);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng);
    const auto [y, ld] = rq_spline_forward(k, spec.tail_bound, x);
    const auto [xb, ldi] = rq_spline_inverse(k, spec.tail_bound, y);
    EXPECT_NEAR(xb, x, 1e-8);
    EXPECT_NEAR(ldi, -ld, 1e-8);
  }
}

TEST(RqSpline, LogDerivativeMatchesCentralDifference) {
  const RqSplineSpec spec;
  Rng rng = make_rng(10);
  const auto k = random_knots(rng, spec);
  std::uniform_real_distribution<double> u(-2.99, 2.99);
  for (int i = 0; i < 500; ++i) {
    const double x = u(rng), h = 1e-6;
    const double num = (rq_spline_forward(k, spec.tail_bound, x + h).first -
                        rq_spline_forward(k, spec.tail_bound, x - h).first) / (2 * h);
    EXPECT_NEAR(rq_spline_forward(k, spec.tail_bound, x).second, std::log(num), 1e-5);
  }
}

TEST(RqSpline, StrictlyIncreasingOnGrid) {
  const RqSplineSpec spec;
  Rng rng = make_rng(12);
  for (int rep = 0; rep < 20; ++rep) {
    const auto k = random_knots(rng, spec);
    double prev = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < 1000; ++i) {
      const double x = -3.5 + 7.0 * i / 999.0;
      const double y = rq_spline_forward(k, spec.tail_bound, x).first;
      EXPECT_GT(y, prev);
      prev = y;
    }
  }
}

TEST(RqSpline, IdentityOutsideTails) {
  const RqSplineSpec spec;
  Rng rng = make_rng(13);
  const auto k = random_knots(rng, spec);
  for (double x : {-10.0, -3.0, 3.0, 7.5}) {
    EXPECT_EQ(rq_spline_forward(k, spec.tail_bound, x).first, x);
    EXPECT_EQ(rq_spline_forward(k, spec.tail_bound, x).second, 0.0);
    EXPECT_EQ(rq_spline_inverse(k, spec.tail_bound, x).first, x);
  }
}

TEST(RqSpline, TapeOpAgreesWithScalarKernel) {
  const RqSplineSpec spec;
  Rng rng = make_rng(14);
  const Matrix raw = testsupport::random_matrix(6, spec.raw_size(), rng, -2.0, 2.0);
  const Matrix x = testsupport::random_matrix(6, 1, rng, -3.5, 3.5);
  Tape t(false);
  const auto kv = normalize_knots(t.constant(raw), spec);
  const Matrix out = rq_spline(t.constant(x), kv.widths, kv.heights, kv.derivatives, spec.tail_bound).value();
  for (std::size_t r = 0; r < 6; ++r) {
    const auto s = raw.row_span(r);
    const auto k = normalize_knots(s.subspan(0, 8), s.subspan(8, 8), s.subspan(16), spec);
    const auto [y, ld] = rq_spline_forward(k, spec.tail_bound, x[r]);
    EXPECT_NEAR(out(r, 0), y, 1e-12);
    EXPECT_NEAR(out(r, 1), ld, 1e-12);
  }
}

// ---------------------------------------------------------------------------------------

TEST(Adam, QuadraticBowlLossStrictlyDecreases) {
  ParamStore store;
  Parameter& p = store.add("p", 1, 3);
  p.value = Matrix(1, 3, std::vector<double>{3.0, -2.0, 1.0});
  const Matrix curv(1, 3, std::vector<double>{1.0, 4.0, 0.5});
  Adam opt(store, AdamConfig{0.01});
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 100; ++step) {
    store.zero_grad();
    Tape t;
    const Var loss = sum(mul_const(square(t.param(p)), curv));
    t.backward(loss);
    EXPECT_LT(loss.value()[0], prev) << "step " << step;
    prev = loss.value()[0];
    opt.step();
  }
}

TEST(Adam, FirstStepMovesEachWeightByLearningRate) {
  ParamStore store;
  Parameter& p = store.add("p", 1, 2);
  p.value = Matrix(1, 2, std::vector<double>{1.0, -1.0});
  p.grad = Matrix(1, 2, std::vector<double>{0.3, -7.0});
  Adam opt(store, AdamConfig{0.1});
  opt.step();
  EXPECT_NEAR(p.value[0], 0.9, 1e-7);
  EXPECT_NEAR(p.value[1], -0.9, 1e-7);
}

TEST(Plateau, ImprovingLossKeepsLearningRate) {
  ParamStore store;
  store.add("p", 1, 1);
  Adam opt(store, AdamConfig{1e-3});
  PlateauScheduler sch(0.5, 5);
  for (int e = 0; e < 30; ++e) EXPECT_FALSE(sch.update(10.0 - e, opt));
  EXPECT_EQ(opt.lr(), 1e-3);
}

TEST(Plateau, HalvesAfterPatienceFlatEpochs) {
  ParamStore store;
  store.add("p", 1, 1);
  Adam opt(store, AdamConfig{1e-3});
  PlateauScheduler sch(0.5, 5);
  sch.update(1.0, opt);
  for (int e = 0; e < 4; ++e) EXPECT_FALSE(sch.update(1.0, opt));
  EXPECT_TRUE(sch.update(1.0, opt));
  EXPECT_EQ(opt.lr(), 5e-4);
}

TEST(EarlyStopping, MonotoneWorseningStopsAtPatienceAndRestoresFirst) {
  ParamStore store;
  Parameter& p = store.add("p", 1, 1);
  EarlyStopping es(15);
  std::size_t stopped_at = 0;
  for (std::size_t epoch = 0; epoch < 100; ++epoch) {
    p.value[0] = static_cast<double>(epoch);
    if (es.update(1.0 + static_cast<double>(epoch), epoch, store)) {
      stopped_at = epoch;
      break;
    }
  }
  EXPECT_EQ(stopped_at, 15u);
  es.restore_best(store);
  EXPECT_EQ(p.value[0], 0.0);
  EXPECT_EQ(es.best_epoch(), 0u);
}

TEST(Params, BinaryRoundTripIsExact) {
  ParamStore a, b;
  Rng rng = make_rng(21);
  Dense da(a, "l", 3, 2, rng), db(b, "l", 3, 2, rng);
  da.bias().value[1] = -0.1234567890123;
  std::stringstream ss;
  write_params(ss, a);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 8), "LOBCALPS");
  read_params(ss, b);
  EXPECT_EQ(a.content_hash(), b.content_hash());
  std::stringstream again;
  write_params(again, b);
  EXPECT_EQ(again.str(), bytes);
}

TEST(Params, ShapeMismatchIsDataError) {
  ParamStore a, b;
  Rng rng = make_rng(21);
  Dense da(a, "l", 3, 2, rng), db(b, "l", 2, 2, rng);
  std::stringstream ss;
  write_params(ss, a);
  EXPECT_THROW(read_params(ss, b), DataError);
}

TEST(Params, DuplicateNameRejected) {
  ParamStore s;
  s.add("w", 1, 1);
  EXPECT_THROW(s.add("w", 2, 2), ContractError);
}
