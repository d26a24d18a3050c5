#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cpcssl/rng.hpp"
#include "cpcssl/tape.hpp"

namespace cpcssl {

/// Named, ordered collection of trainable tensors. ParamId is the insertion index.
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor value);

  std::size_t size() const noexcept { return values_.size(); }
  Tensor& operator[](ParamId id) { return values_.at(index(id)); }
  const Tensor& operator[](ParamId id) const { return values_.at(index(id)); }
  const std::string& name(ParamId id) const { return names_.at(index(id)); }
  std::optional<ParamId> find(std::string_view name) const;
  std::vector<ParamId> ids() const;
  /// Total number of scalar entries.
  Index total_size() const;

  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

 private:
  static std::size_t index(ParamId id) { return static_cast<std::size_t>(id.value); }

  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// A tape bound to a parameter store; each parameter enters the tape once.
class Graph {
 public:
  Graph(Tape& tape, const ParameterStore& params)
      : tape_(tape), params_(params), bound_(params.size()) {}

  Var operator()(ParamId id);
  Var constant(Tensor value) { return tape_.constant(std::move(value)); }

  Tape& tape() noexcept { return tape_; }
  const ParameterStore& params() const noexcept { return params_; }

 private:
  Tape& tape_;
  const ParameterStore& params_;
  std::vector<Var> bound_;
};

/// Gradients aligned with the store; zero for parameters absent from the map.
std::vector<Tensor> dense_gradients(const ParameterStore& params, const GradientMap& grads);

Tensor uniform_tensor(Shape shape, double bound, RngState& rng);
/// Glorot-uniform bound sqrt(6 / (fan_in + fan_out)).
Tensor glorot_tensor(Shape shape, Index fan_in, Index fan_out, RngState& rng);

}  // namespace cpcssl
