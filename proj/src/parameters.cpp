#include "cpcssl/parameters.hpp"

#include <cmath>

namespace cpcssl {

ParamId ParameterStore::add(std::string name, Tensor value) {
  if (find(name)) throw Error(ErrorCode::invalid_argument, "duplicate parameter name " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return ParamId{static_cast<int>(values_.size() - 1)};
}

std::optional<ParamId> ParameterStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return ParamId{static_cast<int>(i)};
  }
  return std::nullopt;
}

std::vector<ParamId> ParameterStore::ids() const {
  std::vector<ParamId> out;
  for (std::size_t i = 0; i < values_.size(); ++i) out.push_back(ParamId{static_cast<int>(i)});
  return out;
}

Index ParameterStore::total_size() const {
  Index n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

Var Graph::operator()(ParamId id) {
  Var& slot = bound_.at(static_cast<std::size_t>(id.value));
  if (!slot.valid()) slot = tape_.parameter(id, params_[id]);
  return slot;
}

std::vector<Tensor> dense_gradients(const ParameterStore& params, const GradientMap& grads) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (ParamId id : params.ids()) {
    auto it = grads.find(id);
    out.push_back(it == grads.end() ? Tensor(params[id].shape()) : it->second);
  }
  return out;
}

Tensor uniform_tensor(Shape shape, double bound, RngState& rng) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = bound * (2.0 * rng.uniform() - 1.0);
  return t;
}

Tensor glorot_tensor(Shape shape, Index fan_in, Index fan_out, RngState& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_tensor(std::move(shape), bound, rng);
}

}  // namespace cpcssl
