#include "cpcssl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cpcssl {

namespace {

double evaluate(const ScalarObjective& fn, const ParameterStore& params) {
  Tape tape;
  Graph graph(tape, params);
  return fn(graph).item();
}

}  // namespace

GradCheckResult grad_check(const ScalarObjective& fn, const ParameterStore& params,
                           const GradCheckOptions& options) {
  if (!(options.eps >= 1e-7 && options.eps <= 1e-3)) {
    throw Error(ErrorCode::invalid_argument, "grad_check eps must lie in [1e-7, 1e-3]");
  }
  std::vector<Tensor> analytic;
  {
    Tape tape;
    Graph graph(tape, params);
    const Var loss = fn(graph);
    analytic = dense_gradients(params, backward(tape, loss));
  }

  GradCheckResult result;
  ParameterStore probe = params;
  RngState sampler{options.sample_seed, 0};
  for (ParamId id : params.ids()) {
    const Index n = params[id].size();
    std::vector<Index> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (options.max_coords_per_param > 0 && n > options.max_coords_per_param) {
      for (Index i = 0; i < options.max_coords_per_param; ++i) {
        const Index j = i + sampler.uniform_index(n - i);
        std::swap(coords[static_cast<std::size_t>(i)], coords[static_cast<std::size_t>(j)]);
      }
      coords.resize(static_cast<std::size_t>(options.max_coords_per_param));
    }
    for (Index c : coords) {
      const double original = probe[id][c];
      probe[id][c] = original + options.eps;
      const double up = evaluate(fn, probe);
      probe[id][c] = original - options.eps;
      const double down = evaluate(fn, probe);
      probe[id][c] = original;

      const double fd = (up - down) / (2.0 * options.eps);
      const double ad = analytic[static_cast<std::size_t>(id.value)][c];
      const double rel = std::abs(ad - fd) / std::max(1e-12, std::abs(ad) + std::abs(fd));
      ++result.coordinates;
      if (rel > result.max_rel_error || result.worst_index < 0) {
        result.max_rel_error = std::max(result.max_rel_error, rel);
        result.worst_param = params.name(id);
        result.worst_index = c;
        result.worst_autodiff = ad;
        result.worst_finite_diff = fd;
      }
    }
  }
  return result;
}

}  // namespace cpcssl
