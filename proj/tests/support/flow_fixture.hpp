#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "lobcal/npe/flow.hpp"

namespace testsupport {

using namespace lobcal;
using namespace lobcal::npe;

/// A small conditional flow, optionally perturbed far from its identity initialisation.
struct FlowFixture {
  nn::ParamStore store;
  ConditionalFlow flow;

  FlowFixture(FlowFlavor flavor, std::size_t d, std::size_t ctx, bool randomise, std::uint64_t seed = 1) {
    Rng rng = make_rng(seed);
    FlowConfig fc;
    fc.flavor = flavor;
    fc.dim = d;
    fc.context_dim = ctx;
    fc.hidden = 16;
    flow = ConditionalFlow(store, "f", fc, rng);
    if (randomise) {
      // Small random perturbation of every weight so transforms are far from the identity.
      std::normal_distribution<double> nd(0.0, 0.3);
      for (std::size_t i = 0; i < store.size(); ++i)
        for (auto& v : store[i].value.storage()) v += nd(rng);
    }
  }
};

inline nn::Matrix random_points(std::size_t n, std::size_t d, Rng& rng, double sd = 1.0) {
  nn::Matrix m(n, d);
  for (auto& v : m.storage()) v = sd * standard_normal(rng);
  return m;
}

/// log|det J| of f at x by central differences, d <= 3.
inline double numerical_logdet(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                        std::vector<double> x) {
  const std::size_t d = x.size();
  const double h = 1e-6;
  std::vector<std::vector<double>> J(d, std::vector<double>(d));
  for (std::size_t j = 0; j < d; ++j) {
    auto xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const auto fp = f(xp), fm = f(xm);
    for (std::size_t i = 0; i < d; ++i) J[i][j] = (fp[i] - fm[i]) / (2 * h);
  }
  double det = 0.0;
  if (d == 1) det = J[0][0];
  if (d == 2) det = J[0][0] * J[1][1] - J[0][1] * J[1][0];
  if (d == 3) {
    det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) - J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
          J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
  }
  return std::log(std::abs(det));
}

}  // namespace testsupport
