#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "lobcal/features/features.hpp"
#include "lobcal/nn/optim.hpp"
#include "lobcal/npe/flow.hpp"
#include "lobcal/npe/prior.hpp"

namespace lobcal::npe {

struct NpeConfig {
  FlowFlavor flavor = FlowFlavor::Nsf;
  std::size_t embed_hidden = 64;
  std::size_t embed_layers = 4;
  std::size_t embed_out = 256;
  double dropout = 0.1;
  std::size_t flow_transforms = 3;
  std::size_t flow_hidden = 128;
  std::size_t flow_hidden_layers = 2;
  nn::RqSplineSpec spline{};
};

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 200;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 5;
  std::size_t stop_patience = 15;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
};

/// Descriptive metadata carried with a trained model.
struct ModelMeta {
  std::string model_kind;  ///< "zi", "chiarella", "toy", ...
  std::optional<features::NormStats> norm;
  std::uint64_t seed = 0;
};

/// Embedding network plus conditional flow over standardised log10 parameters.
/// Parameter addresses are stable for the model's lifetime, so the model is move-only.
class NpeModel {
public:
  NpeModel(NpeConfig cfg, PriorSpec prior, std::size_t obs_dim, ModelMeta meta)
      : cfg_(cfg), prior_(std::move(prior)), obs_dim_(obs_dim), meta_(std::move(meta)),
        standardizer_(Standardizer::from_prior(prior_)), store_(std::make_unique<nn::ParamStore>()) {
    prior_.validate();
    if (obs_dim == 0) throw ParameterError("observation dimension must be positive");
    Rng rng = make_rng(derive_seed(meta_.seed, 0x1717));
    std::vector<std::size_t> sizes{obs_dim};
    for (std::size_t l = 0; l + 1 < cfg.embed_layers; ++l) sizes.push_back(cfg.embed_hidden);
    sizes.push_back(cfg.embed_out);
    embed_ = nn::Mlp(*store_, "embed", sizes, cfg.dropout, rng);
    FlowConfig fc;
    fc.flavor = cfg.flavor;
    fc.dim = prior_.dim();
    fc.context_dim = cfg.embed_out;
    fc.n_transforms = cfg.flow_transforms;
    fc.hidden = cfg.flow_hidden;
    fc.hidden_layers = cfg.flow_hidden_layers;
    fc.spline = cfg.spline;
    flow_ = ConditionalFlow(*store_, "flow", fc, rng);
  }

  NpeModel(NpeModel&&) noexcept = default;
  NpeModel& operator=(NpeModel&&) noexcept = default;
  NpeModel(const NpeModel&) = delete;
  NpeModel& operator=(const NpeModel&) = delete;

  [[nodiscard]] const NpeConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const PriorSpec& prior() const noexcept { return prior_; }
  [[nodiscard]] const ModelMeta& meta() const noexcept { return meta_; }
  [[nodiscard]] ModelMeta& meta() noexcept { return meta_; }
  [[nodiscard]] std::size_t obs_dim() const noexcept { return obs_dim_; }
  [[nodiscard]] std::size_t theta_dim() const noexcept { return prior_.dim(); }
  [[nodiscard]] const Standardizer& standardizer() const noexcept { return standardizer_; }
  [[nodiscard]] nn::ParamStore& params() noexcept { return *store_; }
  [[nodiscard]] const nn::ParamStore& params() const noexcept { return *store_; }
  [[nodiscard]] const ConditionalFlow& flow() const noexcept { return flow_; }
  [[nodiscard]] const nn::Mlp& embedding() const noexcept { return embed_; }

  /// Mean negative log q(theta_std | embed(x)) over rows, on the tape.
  [[nodiscard]] Var loss(Tape& t, const Matrix& theta_std, const Matrix& x, bool train, Rng* rng) const {
    const Var ctx = embed_.apply(t, t.constant(x), train, rng);
    return nn::neg(nn::mean(flow_.log_prob(t, t.constant(theta_std), ctx)));
  }

  /// Embedding of a batch of normalised observations, evaluation mode.
  [[nodiscard]] Matrix embed(const Matrix& x) const {
    if (x.cols() != obs_dim_) {
      throw DataError("feature mismatch: observation has " + std::to_string(x.cols()) + " values, model expects " +
                      std::to_string(obs_dim_));
    }
    Tape t(false);
    return embed_.apply(t, t.constant(x)).value();
  }

  /// Mean loss over the given rows in evaluation mode, chunked to bound memory.
  [[nodiscard]] double eval_loss(const Matrix& theta_std, const Matrix& x, std::span<const std::size_t> rows) const {
    if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
    double total = 0.0;
    constexpr std::size_t chunk = 512;
    for (std::size_t b = 0; b < rows.size(); b += chunk) {
      const auto idx = rows.subspan(b, std::min(chunk, rows.size() - b));
      Tape t(false);
      const Var l = loss(t, theta_std.gather_rows(idx), x.gather_rows(idx), false, nullptr);
      total += l.value()[0] * static_cast<double>(idx.size());
    }
    return total / static_cast<double>(rows.size());
  }

private:
  NpeConfig cfg_;
  PriorSpec prior_;
  std::size_t obs_dim_ = 0;
  ModelMeta meta_;
  Standardizer standardizer_;
  std::unique_ptr<nn::ParamStore> store_;
  nn::Mlp embed_;
  ConditionalFlow flow_;
};

/// Simulated pairs with split indices. theta holds log10 parameters, x normalised features.
struct TrainingData {
  Matrix theta;
  Matrix x;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
};

class TrainingError : public NumericError {
public:
  TrainingError(const std::string& what, std::vector<EpochRecord> history)
      : NumericError(what), history_(std::move(history)) {}
  [[nodiscard]] const std::vector<EpochRecord>& history() const noexcept { return history_; }

private:
  std::vector<EpochRecord> history_;
};

/// Minimises the mean negative log posterior density on the train split with Adam,
/// minibatches of `batch_size`, a plateau scheduler and early stopping on the validation
/// split. Epoch 0 records the untrained losses. Leaves the best-validation parameters loaded.
inline TrainResult train_npe(NpeModel& model, const TrainingData& data, const TrainConfig& cfg) {
  if (data.theta.rows() != data.x.rows()) throw DataError("theta and x row counts differ");
  if (data.theta.cols() != model.theta_dim()) throw DataError("theta has the wrong dimension for this model");
  if (data.x.cols() != model.obs_dim()) {
    throw DataError("feature mismatch: dataset has " + std::to_string(data.x.cols()) + " features, model expects " +
                    std::to_string(model.obs_dim()));
  }
  if (data.train.empty() || data.val.empty()) throw DataError("training needs non-empty train and validation splits");
  if (cfg.batch_size == 0) throw ParameterError("batch size must be positive");

  const Matrix theta_std = model.standardizer().to_std(data.theta);
  nn::ParamStore& store = model.params();
  nn::Adam opt(store, nn::AdamConfig{cfg.lr});
  nn::PlateauScheduler plateau(cfg.plateau_factor, cfg.plateau_patience);
  nn::EarlyStopping stopper(cfg.stop_patience);
  Rng rng = make_rng(derive_seed(cfg.seed, 0x7124));
  TrainResult res;

  const auto fail = [&](const std::string& why) {
    stopper.restore_best(store);
    throw TrainingError("training diverged: " + why, res.history);
  };

  const auto evaluate = [&](std::span<const std::size_t> rows) {
    try {
      return model.eval_loss(theta_std, data.x, rows);
    } catch (const NumericError& e) {
      fail(e.what());
    }
    return 0.0;
  };

  {
    const double tr = evaluate(data.train), va = evaluate(data.val);
    res.history.push_back({0, tr, va, opt.lr()});
    if (!std::isfinite(va)) fail("initial validation loss is not finite");
    stopper.update(va, 0, store);
  }

  std::vector<std::size_t> order = data.train;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + b, std::min(cfg.batch_size, order.size() - b));
      store.zero_grad();
      Tape t;
      Var l;
      try {
        l = model.loss(t, theta_std.gather_rows(idx), data.x.gather_rows(idx), true, &rng);
      } catch (const NumericError& e) {
        fail(e.what());
      }
      if (!std::isfinite(l.value()[0])) fail("non-finite training loss at epoch " + std::to_string(epoch));
      t.backward(l);
      nn::clip_grad_norm(store, cfg.clip_norm);
      opt.step();
      sum += l.value()[0] * static_cast<double>(idx.size());
    }
    const double va = evaluate(data.val);
    res.history.push_back({epoch, sum / static_cast<double>(order.size()), va, opt.lr()});
    if (!std::isfinite(va)) fail("validation loss is not finite at epoch " + std::to_string(epoch));
    spdlog::debug("epoch {} train {:.5f} val {:.5f} lr {:.2e}", epoch, res.history.back().train_loss, va, opt.lr());
    if (stopper.update(va, epoch, store)) {
      res.stopped_early = true;
      break;
    }
    plateau.update(va, opt);
  }
  stopper.restore_best(store);
  res.best_epoch = stopper.best_epoch();
  res.best_val_loss = stopper.best_loss();
  return res;
}

/// Amortised posterior for one observation. Samples and densities are in log10 parameter space.
class Posterior {
public:
  Posterior(const NpeModel& model, Matrix context) : model_(&model), ctx_(std::move(context)) {}

  [[nodiscard]] Matrix sample(std::size_t n, Rng& rng) const {
    return model_->standardizer().from_std(model_->flow().sample(n, ctx_, rng));
  }

  /// log density of each row of theta (log10 space).
  [[nodiscard]] std::vector<double> log_prob(const Matrix& theta) const {
    auto lp = model_->flow().log_prob(model_->standardizer().to_std(theta), ctx_);
    const double j = model_->standardizer().log_jacobian();
    for (auto& v : lp) v += j;
    return lp;
  }

  [[nodiscard]] const Matrix& context() const noexcept { return ctx_; }
  [[nodiscard]] const NpeModel& model() const noexcept { return *model_; }

private:
  const NpeModel* model_;
  Matrix ctx_;
};

/// Posterior given an already-normalised observation vector.
inline Posterior posterior_for(const NpeModel& model, std::span<const double> observation) {
  return Posterior(model, model.embed(Matrix::row(observation)));
}

/// Posterior given a raw summary series, normalised with the model's stored statistics.
inline Posterior posterior_for(const NpeModel& model, const features::SummarySeries& observation) {
  if (!model.meta().norm) throw DataError("model carries no feature normalisation statistics");
  return posterior_for(model, features::normalize(observation, *model.meta().norm).values);
}

}  // namespace lobcal::npe
