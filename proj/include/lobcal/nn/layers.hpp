#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lobcal/core/rng.hpp"
#include "lobcal/nn/ops.hpp"

namespace lobcal::nn {

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.
inline void init_fan_in(Matrix& w, std::size_t fan_in, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> u(-a, a);
  for (auto& v : w.storage()) v = u(rng);
}

/// Affine layer x W + b.
class Dense {
public:
  Dense() = default;
  Dense(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : w_(&store.add(name + ".w", in, out)), b_(&store.add(name + ".b", 1, out)) {
    init_fan_in(w_->value, in, rng);
  }

  [[nodiscard]] Var apply(Tape& t, Var x) const { return linear(x, t.param(*w_), t.param(*b_)); }

  [[nodiscard]] std::size_t in_dim() const { return w_->value.rows(); }
  [[nodiscard]] std::size_t out_dim() const { return w_->value.cols(); }
  Parameter& weight() const { return *w_; }
  Parameter& bias() const { return *b_; }

private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
};

/// Dense layer with a fixed 0/1 connectivity mask on the weight.
class MaskedDense {
public:
  MaskedDense() = default;
  MaskedDense(ParamStore& store, const std::string& name, Matrix mask, Rng& rng)
      : w_(&store.add(name + ".w", mask.rows(), mask.cols())),
        b_(&store.add(name + ".b", 1, mask.cols())),
        mask_(std::move(mask)) {
    init_fan_in(w_->value, mask_.rows(), rng);
  }

  [[nodiscard]] Var apply(Tape& t, Var x) const { return masked_linear(x, t.param(*w_), mask_, t.param(*b_)); }

  [[nodiscard]] const Matrix& mask() const noexcept { return mask_; }
  Parameter& weight() const { return *w_; }
  Parameter& bias() const { return *b_; }

private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  Matrix mask_;
};

/// Inverted dropout: in train mode zeroes each unit with probability `rate` and rescales
/// survivors by 1/(1-rate). Identity otherwise.
inline Var dropout(Var x, double rate, bool train, Rng* rng) {
  if (!train || rate <= 0.0) return x;
  if (rng == nullptr) throw ContractError("dropout in train mode needs an rng");
  if (rate >= 1.0) throw ContractError("dropout rate must be < 1");
  Matrix keep(x.rows(), x.cols());
  std::bernoulli_distribution b(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  for (auto& v : keep.storage()) v = b(*rng) ? s : 0.0;
  return mul_const(x, std::move(keep));
}

/// ReLU MLP with a linear output layer and dropout after every hidden activation.
class Mlp {
public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, const std::vector<std::size_t>& sizes, double dropout_rate, Rng& rng)
      : dropout_(dropout_rate) {
    if (sizes.size() < 2) throw ContractError("mlp needs at least input and output sizes");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      layers_.emplace_back(store, name + "." + std::to_string(i), sizes[i], sizes[i + 1], rng);
    }
  }

  [[nodiscard]] Var apply(Tape& t, Var x, bool train = false, Rng* rng = nullptr) const {
    if (x.cols() != in_dim()) {
      throw ContractError("mlp input has " + std::to_string(x.cols()) + " columns, expected " + std::to_string(in_dim()));
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i].apply(t, x);
      if (i + 1 < layers_.size()) x = dropout(relu(x), dropout_, train, rng);
    }
    return x;
  }

  [[nodiscard]] std::size_t in_dim() const { return layers_.front().in_dim(); }
  [[nodiscard]] std::size_t out_dim() const { return layers_.back().out_dim(); }
  [[nodiscard]] const std::vector<Dense>& layers() const noexcept { return layers_; }
  [[nodiscard]] double dropout_rate() const noexcept { return dropout_; }

private:
  std::vector<Dense> layers_;
  double dropout_ = 0.0;
};

// ---------------------------------------------------------------------------------------
// MADE degrees. Inputs carry degrees 1..d. Hidden unit k gets (k mod max(1, d-1)) + min(1, d-1).
// A hidden unit sees input j iff deg(hidden) >= deg(j); output unit for dimension i sees hidden
// unit h iff i > deg(h). Hence output i depends only on inputs of degree < i.

inline std::vector<std::size_t> made_input_degrees(std::size_t d) {
  std::vector<std::size_t> deg(d);
  for (std::size_t i = 0; i < d; ++i) deg[i] = i + 1;
  return deg;
}

inline std::vector<std::size_t> made_hidden_degrees(std::size_t d, std::size_t width) {
  const std::size_t span = std::max<std::size_t>(1, d > 0 ? d - 1 : 0);
  const std::size_t base = std::min<std::size_t>(1, d > 0 ? d - 1 : 0);
  std::vector<std::size_t> deg(width);
  for (std::size_t k = 0; k < width; ++k) deg[k] = (k % span) + base;
  return deg;
}

/// Mask (in x out) for a hidden layer: connects when out degree >= in degree.
inline Matrix made_hidden_mask(const std::vector<std::size_t>& in_deg, const std::vector<std::size_t>& out_deg) {
  Matrix m(in_deg.size(), out_deg.size());
  for (std::size_t i = 0; i < in_deg.size(); ++i)
    for (std::size_t j = 0; j < out_deg.size(); ++j) m(i, j) = out_deg[j] >= in_deg[i] ? 1.0 : 0.0;
  return m;
}

/// Mask (in x out) for the output layer: connects when out degree > in degree.
inline Matrix made_output_mask(const std::vector<std::size_t>& in_deg, const std::vector<std::size_t>& out_deg) {
  Matrix m(in_deg.size(), out_deg.size());
  for (std::size_t i = 0; i < in_deg.size(); ++i)
    for (std::size_t j = 0; j < out_deg.size(); ++j) m(i, j) = out_deg[j] > in_deg[i] ? 1.0 : 0.0;
  return m;
}

/// Conditional MADE producing `params_per_dim` outputs for each of `d` dimensions.
/// Output layout is block-major: column p*d + i holds parameter p of dimension i.
/// The context enters the first hidden layer through an unmasked weight.
class Made {
public:
  Made() = default;
  Made(ParamStore& store, const std::string& name, std::size_t d, std::size_t context_dim, std::size_t hidden,
       std::size_t n_hidden, std::size_t params_per_dim, Rng& rng)
      : d_(d), params_per_dim_(params_per_dim) {
    if (d == 0 || n_hidden == 0 || params_per_dim == 0) throw ContractError("made: empty dimension");
    auto prev = made_input_degrees(d);
    const auto hdeg = made_hidden_degrees(d, hidden);
    for (std::size_t l = 0; l < n_hidden; ++l) {
      hidden_.emplace_back(store, name + ".h" + std::to_string(l), made_hidden_mask(prev, hdeg), rng);
      prev = hdeg;
    }
    if (context_dim > 0) {
      ctx_ = &store.add(name + ".ctx.w", context_dim, hidden);
      init_fan_in(ctx_->value, context_dim, rng);
    }
    std::vector<std::size_t> odeg(d * params_per_dim);
    for (std::size_t p = 0; p < params_per_dim; ++p)
      for (std::size_t i = 0; i < d; ++i) odeg[p * d + i] = i + 1;
    out_ = MaskedDense(store, name + ".out", made_output_mask(prev, odeg), rng);
  }

  /// x (n x d), ctx (n x c) or a precomputed context projection (n x hidden / 1 x hidden).
  [[nodiscard]] Var apply(Tape& t, Var x, Var ctx_proj) const {
    Var h = hidden_.front().apply(t, x);
    if (ctx_proj.valid()) h = ctx_proj.rows() == 1 && h.rows() != 1 ? add_rowvec(h, ctx_proj) : add(h, ctx_proj);
    h = relu(h);
    for (std::size_t l = 1; l < hidden_.size(); ++l) h = relu(hidden_[l].apply(t, h));
    return out_.apply(t, h);
  }

  /// Context projection ctx W_ctx, computable once per observation.
  [[nodiscard]] Var project_context(Tape& t, Var ctx) const {
    if (ctx_ == nullptr) return Var();
    return matmul(ctx, t.param(*ctx_));
  }

  [[nodiscard]] std::size_t dim() const noexcept { return d_; }
  [[nodiscard]] std::size_t params_per_dim() const noexcept { return params_per_dim_; }
  [[nodiscard]] const MaskedDense& output_layer() const noexcept { return out_; }
  [[nodiscard]] const std::vector<MaskedDense>& hidden_layers() const noexcept { return hidden_; }

private:
  std::size_t d_ = 0;
  std::size_t params_per_dim_ = 0;
  std::vector<MaskedDense> hidden_;
  Parameter* ctx_ = nullptr;
  MaskedDense out_;
};

}  // namespace lobcal::nn
