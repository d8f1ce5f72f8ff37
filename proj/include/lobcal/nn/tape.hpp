#pragma once

#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "lobcal/core/error.hpp"
#include "lobcal/nn/matrix.hpp"
#include "lobcal/nn/params.hpp"

namespace lobcal::nn {

class Tape;

/// Handle to a node on a Tape.
class Var {
public:
  Var() = default;
  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] std::size_t rows() const { return value().rows(); }
  [[nodiscard]] std::size_t cols() const { return value().cols(); }
  [[nodiscard]] Tape& tape() const { return *tape_; }
  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recording of matrix operations. Nodes are appended in evaluation order;
/// backward() walks them in reverse, accumulating gradients into every node that depends
/// on a variable or parameter leaf, then adds parameter-leaf gradients into Parameter::grad.
class Tape {
public:
  using Backward = std::function<void(Tape&, const Matrix& out_value, const Matrix& out_grad)>;

  /// A non-recording tape treats parameters as constants, so no backward closures are kept.
  explicit Tape(bool record = true) : record_(record) {}

  [[nodiscard]] bool recording() const noexcept { return record_; }

  Var constant(Matrix v) { return push(std::move(v), false, {}); }
  Var variable(Matrix v) { return push(std::move(v), true, {}); }
  Var param(Parameter& p) {
    Var v = push(p.value, record_, {});
    if (record_) nodes_[v.id_].param = &p;
    return v;
  }

  [[nodiscard]] const Matrix& value(Var v) const { return nodes_[v.id_].value; }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() target w.r.t. `v` (zeros if `v` did not influence it).
  [[nodiscard]] Matrix grad(Var v) const {
    const Node& n = nodes_[v.id_];
    return n.grad.empty() && !n.value.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad;
  }

  void backward(Var loss) {
    if (loss.tape_ != this) throw ContractError("backward: variable belongs to another tape");
    const Matrix& lv = nodes_[loss.id_].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ContractError("backward needs a scalar (1x1) loss, got " + shape_string(lv));
    }
    for (auto& n : nodes_) n.grad = Matrix();
    grad_ref(loss.id_).fill(1.0);
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, n.value, n.grad);
    }
    for (auto& n : nodes_) {
      if (n.param == nullptr || n.grad.empty()) continue;
      auto& pg = n.param->grad;
      if (!pg.same_shape(n.grad)) pg = Matrix(n.grad.rows(), n.grad.cols());
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
    }
  }

  /// Appends a node. `backward` is only kept when some parent requires a gradient.
  Var push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, requires_grad ? std::move(backward) : Backward{},
                          nullptr});
    return Var(this, nodes_.size() - 1);
  }

  /// Gradient accumulator of node `v`, allocated as zeros on first use.
  Matrix& grad_ref(Var v) { return grad_ref(v.id_); }

  [[nodiscard]] bool any_requires_grad(std::initializer_list<Var> vs) const {
    for (const Var& v : vs)
      if (nodes_[v.id_].requires_grad) return true;
    return false;
  }

private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };

  Matrix& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::vector<Node> nodes_;
  bool record_ = true;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

}  // namespace lobcal::nn
