#include "hlan/tape.hpp"

namespace hlan::ad {

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

Tape::Node& Tape::push(bool requires_grad) {
  nodes_.emplace_back();
  nodes_.back().requires_grad = requires_grad;
  return nodes_.back();
}

Var Tape::constant(Tensor value) {
  push(false).owned = std::move(value);
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Tensor value) {
  push(true).owned = std::move(value);
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(const Tensor& value) {
  push(true).external = &value;
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::reference(const Tensor& value) {
  push(false).external = &value;
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape != this) throw ContractError("op input recorded on a different tape");
    needs = needs || nodes_[v.id].requires_grad;
  }
  Node& n = push(needs);
  n.owned = std::move(value);
  if (needs) n.backward = std::move(backward);
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape != this) throw ContractError("op input recorded on a different tape");
    needs = needs || nodes_[v.id].requires_grad;
  }
  Node& n = push(needs);
  n.owned = std::move(value);
  if (needs) n.backward = std::move(backward);
  return {this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(int id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.owned;
}

const Tensor& Tape::grad(int id) const {
  const Node& n = nodes_.at(id);
  if (!n.has_grad && n.grad.shape() != value(id).shape()) n.grad = Tensor(value(id).shape(), 0);
  return n.grad;
}

Tensor* Tape::grad_sink(int id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(value(id).shape(), 0);
    n.has_grad = true;
  }
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("loss is not on this tape");
  if (value(loss.id).size() != 1)
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(value(loss.id).shape()));
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  visits_ = 0;
  Tensor* seed = grad_sink(loss.id);
  if (!seed) return;
  (*seed)[0] = 1;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, id);
    ++visits_;
  }
}

void Tape::clear() {
  nodes_.clear();
  visits_ = 0;
}

}  // namespace hlan::ad
