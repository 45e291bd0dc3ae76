#include "safenet/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "safenet/errors.hpp"

namespace safenet {

const Tensor& Var::value() const { return tape_->value(id_); }

std::span<const double> Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor& param) {
  Node node;
  node.external = &param;
  if (grad_enabled_ && param.requires_grad()) {
    node.param = &param;
    node.needs_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (in.tape_ != this) throw ContractError("operand recorded on a different tape");
      node.needs_grad = node.needs_grad || nodes_[in.id_].needs_grad;
    }
    if (node.needs_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& node = nodes_[id];
  return node.external ? *node.external : node.owned;
}

std::span<double> Tape::grad_mut(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(value(id).size(), 0.0);
  return node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ContractError("loss was recorded on a different tape");
  if (value(loss.id_).size() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " +
                         shape_string(value(loss.id_).shape()));
  }
  if (backward_done_) throw ContractError("backward already ran on this tape");
  backward_done_ = true;
  if (!nodes_[loss.id_].needs_grad) return;

  grad_mut(loss.id_)[0] = 1.0;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.needs_grad || node.grad.empty()) continue;
    ++visited_;
    if (node.backward) node.backward(*this, id);
    if (node.param) {
      auto dst = node.param->grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
    }
    // Interior gradients are no longer needed once propagated.
    if (!node.param && id != loss.id_) std::vector<double>().swap(node.grad);
  }
}

double grad_check(const std::function<Var(Tape&)>& f, Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be > 0");
  const bool had_grad = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  {
    Tape tape;
    Var loss = f(tape);
    if (loss.size() != 1) throw ContractError("grad_check: f must return a scalar");
    tape.backward(loss);
  }
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  auto eval = [&] {
    Tape tape(false);
    return f(tape).value()[0];
  };
  constexpr double kFloor = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = eval();
    x[i] = saved - eps;
    const double down = eval();
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), kFloor}));
  }
  if (!had_grad) x.set_requires_grad(false);
  return worst;
}

}  // namespace safenet
