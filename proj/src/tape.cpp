#include "cpcssl/tape.hpp"

namespace cpcssl {

const Tensor& Var::value() const {
  if (!tape_) throw Error(ErrorCode::invalid_argument, "use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::check_owned(Var v) const {
  if (v.tape() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size()) {
    throw Error(ErrorCode::invalid_argument, "Var does not belong to this tape");
  }
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  return push(std::move(node));
}

Var Tape::parameter(ParamId id, Tensor value) {
  Node node;
  node.value = std::move(value);
  node.param = id;
  node.requires_grad = true;
  return push(std::move(node));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    check_owned(in);
    node.requires_grad = node.requires_grad || requires_grad(in);
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

Tensor& Tape::grad(int node) {
  Node& n = nodes_.at(static_cast<std::size_t>(node));
  if (!n.grad) n.grad.emplace(n.value.shape());
  return *n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!requires_grad(v)) return;
  Tensor& dst = grad(v);
  if (dst.size() != g.size()) {
    throw Error(ErrorCode::shape_mismatch, "gradient of shape " + to_string(g.shape()) +
                                               " for node of shape " + to_string(dst.shape()));
  }
  dst.vec() += g.vec();
}

std::map<ParamId, Tensor> Tape::backward(Var loss) {
  check_owned(loss);
  if (loss.size() != 1) {
    throw Error(ErrorCode::shape_mismatch,
                "backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  for (Node& n : nodes_) n.grad.reset();
  std::map<ParamId, Tensor> grads;
  if (requires_grad(loss)) {
    grad(loss.id())[0] = 1.0;
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.grad || !n.backward) continue;
      // The closure may append to nothing but reads other nodes; copy the
      // upstream gradient so accumulation into inputs cannot alias it.
      const Tensor upstream = *n.grad;
      n.backward(*this, upstream);
    }
  }
  for (Node& n : nodes_) {
    if (!n.param) continue;
    Tensor g = n.grad ? *n.grad : Tensor(n.value.shape());
    auto [it, inserted] = grads.emplace(*n.param, g);
    if (!inserted) it->second.vec() += g.vec();
  }
  return grads;
}

GradientMap backward(Tape& tape, Var loss) { return tape.backward(loss); }

}  // namespace cpcssl
