#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "safenet/tensor.hpp"

namespace safenet {

class Tape;

// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  // Gradient accumulated by Tape::backward; empty if none reached this node.
  std::span<const double> grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Define-by-run record of executed operations for reverse-mode differentiation.
//
// Nodes are appended in execution order, so every node's inputs precede it and
// a single reverse sweep visits each node once. Parameters are referenced, not
// copied; their gradients are accumulated into Tensor::grad() at the end of
// backward().
class Tape {
 public:
  // Called with the node id whose output gradient is complete; it must add
  // into the gradients of that node's inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var constant(Tensor value);
  // Leaf referencing `param`; gradients flow into param.grad() when it
  // requires grad and this tape has gradients enabled. `param` must outlive
  // the tape.
  Var parameter(Tensor& param);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  // Reverse accumulation from a scalar loss. May be called once per tape.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::span<const double> grad(std::size_t id) const { return nodes_[id].grad; }
  // Zero-initialized on first access.
  std::span<double> grad_mut(std::size_t id);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t visited() const noexcept { return visited_; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* param = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
    BackwardFn backward;
  };

  // std::deque keeps references to earlier nodes valid while appending.
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
  std::size_t visited_ = 0;
};

// Largest |autodiff - central difference| / max(|autodiff|, |central difference|, 1e-6)
// over the coordinates of `x` for the scalar built by `f`. The floor keeps
// round-off on vanishing coordinates from counting as relative error. `f` must reach `x`
// through tape.parameter(x) and is called once with gradients enabled, then
// twice per coordinate without. Throws ContractError unless eps > 0.
double grad_check(const std::function<Var(Tape&)>& f, Tensor& x, double eps = 1e-6);

}  // namespace safenet
