#include "gradnet/autodiff.hpp"

#include "gradnet/errors.hpp"

namespace gradnet {

const Tensor& Var::value() const {
  if (!tape_) throw StateError("value() on an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{"leaf", std::move(value), {}, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{"const", std::move(value), {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  return record(std::move(op), std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(std::string op, Tensor value, const std::vector<Var>& inputs,
                 BackwardFn backward) {
  if (backward_done_) throw StateError("recording on a tape that already ran backward");
  Node node;
  node.op = std::move(op);
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    check_owned(in);
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  // Nodes nothing upstream wants gradients for keep no closure (and no saved
  // forward context).
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw StateError("Var does not belong to this tape");
  }
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (backward_done_) throw StateError("backward already ran on this tape; reset() first");
  const Tensor& out = nodes_[loss.id()].value;
  if (out.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + to_string(out.shape()));
  }
  backward_done_ = true;
  grads_.assign(nodes_.size(), Tensor());
  grads_[loss.id()] = Tensor(out.shape(), 1.0);

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!grads_[id].defined() || !node.backward) continue;
    std::vector<bool> needs(node.inputs.size());
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      needs[i] = nodes_[node.inputs[i]].requires_grad;
    }
    std::vector<Tensor> in_grads = node.backward(grads_[id], needs);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (!needs[i] || i >= in_grads.size() || !in_grads[i].defined()) continue;
      const std::size_t src = node.inputs[i];
      Tensor& slot = grads_[src];
      if (in_grads[i].shape() != nodes_[src].value.shape()) {
        throw DimensionError("op '" + node.op + "' produced gradient of shape " +
                             to_string(in_grads[i].shape()) + " for input of shape " +
                             to_string(nodes_[src].value.shape()));
      }
      if (!slot.defined()) {
        slot = std::move(in_grads[i]);
      } else {
        auto acc = slot.mutable_data();
        auto add = in_grads[i].data();
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += add[k];
      }
    }
  }
}

bool Tape::has_grad(Var v) const {
  check_owned(v);
  return v.id() < grads_.size() && grads_[v.id()].defined();
}

Tensor Tape::grad(Var v) const {
  check_owned(v);
  if (v.id() < grads_.size() && grads_[v.id()].defined()) return grads_[v.id()];
  return zeros_like(nodes_[v.id()].value);
}

void Tape::reset() {
  nodes_.clear();
  grads_.clear();
  backward_done_ = false;
}

}  // namespace gradnet
