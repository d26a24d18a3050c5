#pragma once

#include <compare>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "cpcssl/tensor.hpp"

namespace cpcssl {

struct ParamId {
  int value = -1;
  friend auto operator<=>(const ParamId&, const ParamId&) = default;
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Index size() const { return value().size(); }
  double item() const { return value().item(); }

  Tape* tape() const noexcept { return tape_; }
  int id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Record of executed operations. Node order is execution order; backward()
/// walks it in strict reverse.
class Tape {
 public:
  /// Accumulates the gradient arriving at a node into the node's inputs.
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(ParamId id, Tensor value);
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

  const Tensor& value(int node) const { return nodes_.at(static_cast<std::size_t>(node)).value; }
  bool requires_grad(int node) const { return nodes_[static_cast<std::size_t>(node)].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }

  /// Gradient buffer of a node, zero-initialised on first access.
  Tensor& grad(int node);
  Tensor& grad(Var v) { return grad(v.id()); }
  void accumulate(Var v, const Tensor& g);

  std::size_t size() const noexcept { return nodes_.size(); }

  std::map<ParamId, Tensor> backward(Var loss);

 private:
  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    Backward backward;
    std::optional<ParamId> param;
    bool requires_grad = false;
  };

  Var push(Node node);
  void check_owned(Var v) const;

  std::vector<Node> nodes_;
};

using GradientMap = std::map<ParamId, Tensor>;

/// Reverse-mode pass from a scalar loss. Every parameter registered on the
/// tape gets an entry; parameters the loss does not depend on get zeros.
GradientMap backward(Tape& tape, Var loss);

}  // namespace cpcssl
