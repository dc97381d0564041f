#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "gradnet/tensor.hpp"

namespace gradnet {

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run record of a computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and a reverse sweep over ids is a valid reverse-topological order.
class Tape {
 public:
  /// Computes one gradient per input from the output gradient. Entries for
  /// inputs with needs[i] == false may be left undefined.
  using BackwardFn =
      std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& needs)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked.
  Var variable(Tensor value);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);

  Var record(std::string op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  /// Reverse sweep from a single-element loss node. May run once per tape.
  void backward(Var loss);

  /// Gradient of the last backward's loss w.r.t. `v`; zeros when `v` was not
  /// reached.
  Tensor grad(Var v) const;
  bool has_grad(Var v) const;

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Drop every node so the tape can be reused for a fresh forward pass.
  void reset();

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(Var v) const;

  // deque keeps value() references valid while the graph grows.
  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
  bool backward_done_ = false;
};

}  // namespace gradnet
