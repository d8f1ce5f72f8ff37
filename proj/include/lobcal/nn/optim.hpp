#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "lobcal/nn/params.hpp"

namespace lobcal::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over every parameter of a store.
class Adam {
public:
  Adam(ParamStore& store, AdamConfig cfg = {}) : store_(&store), cfg_(cfg) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      m_.emplace_back(store[i].value.rows(), store[i].value.cols());
      v_.emplace_back(store[i].value.rows(), store[i].value.cols());
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < store_->size(); ++i) {
      Parameter& p = (*store_)[i];
      Matrix& m = m_[i];
      Matrix& v = v_[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad[k];
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        p.value[k] -= cfg_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
      }
    }
  }

  [[nodiscard]] double lr() const noexcept { return cfg_.lr; }
  void set_lr(double lr) noexcept { cfg_.lr = lr; }
  [[nodiscard]] std::size_t steps() const noexcept { return t_; }

private:
  ParamStore* store_;
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`. Returns the pre-clip norm.
inline double clip_grad_norm(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i)
    for (double g : store[i].grad.storage()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (std::size_t i = 0; i < store.size(); ++i)
      for (double& g : store[i].grad.storage()) g *= s;
  }
  return norm;
}

/// Multiplies the learning rate by `factor` after `patience` consecutive epochs without a
/// strict improvement of the monitored loss.
class PlateauScheduler {
public:
  PlateauScheduler(double factor = 0.5, std::size_t patience = 5) : factor_(factor), patience_(patience) {}

  /// Returns true when the learning rate was reduced.
  bool update(double loss, Adam& opt) {
    if (loss < best_) {
      best_ = loss;
      bad_ = 0;
      return false;
    }
    if (++bad_ >= patience_) {
      opt.set_lr(opt.lr() * factor_);
      bad_ = 0;
      return true;
    }
    return false;
  }

private:
  double factor_;
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

/// Tracks the best validation loss and its parameters; signals a stop after `patience`
/// consecutive non-improving epochs.
class EarlyStopping {
public:
  explicit EarlyStopping(std::size_t patience = 15) : patience_(patience) {}

  /// Records epoch `epoch`; returns true when training should stop.
  bool update(double loss, std::size_t epoch, const ParamStore& store) {
    if (std::isfinite(loss) && loss < best_) {
      best_ = loss;
      best_epoch_ = epoch;
      best_params_ = store.snapshot();
      bad_ = 0;
      return false;
    }
    return ++bad_ >= patience_;
  }

  void restore_best(ParamStore& store) const {
    if (!best_params_.empty()) store.restore(best_params_);
  }

  [[nodiscard]] double best_loss() const noexcept { return best_; }
  [[nodiscard]] std::size_t best_epoch() const noexcept { return best_epoch_; }
  [[nodiscard]] std::size_t bad_epochs() const noexcept { return bad_; }

private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t bad_ = 0;
  std::vector<Matrix> best_params_;
};

}  // namespace lobcal::nn
