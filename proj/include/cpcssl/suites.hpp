#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "cpcssl/complexity.hpp"
#include "cpcssl/grad_check.hpp"
#include "cpcssl/synthetic.hpp"
#include "cpcssl/training.hpp"

namespace cpcssl {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<Check> checks;

  bool passed() const;
};

// Gradients of every objective on a tiny model with frozen noise.

struct GradientCase {
  std::string name;
  GradCheckResult result;
};

std::vector<GradientCase> gradient_cases(std::uint64_t seed = 0);
SuiteReport verify_gradients(double tolerance = 1e-4, std::uint64_t seed = 0);

// Mean per-step InfoNCE loss at initialization, relative to ln N, one entry
// per seed.

std::vector<double> chance_nce_ratios(Index seeds, Index examples = 64);
SuiteReport verify_chance(Index seeds = 20, double low = 0.9, double high = 1.1);

// InfoNCE estimate ln N - L_N on held-out synthetic sequences after training,
// against the closed-form I(x_{t+k}; x_{<=t}).

struct MiPoint {
  double sigma = 0.0;
  double truth = 0.0;
  double estimate = 0.0;
  double standard_error = 0.0;
  Index terms = 0;
};

struct MiSuiteOptions {
  std::vector<double> sigmas{0.25, 0.5, 1.0, 2.0, 4.0};
  double latent_scale = 1.0;
  Index train_count = 2000;
  Index eval_count = 1000;
  Index epochs = 10;
  Index batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

SyntheticSpec mi_suite_spec(double sigma, double latent_scale);
ModelConfig mi_suite_model();
MiPoint mi_bound_point(double sigma, const MiSuiteOptions& options);
SuiteReport verify_bounds(const MiSuiteOptions& options = {}, double se_multiple = 3.0,
                          double positive_above = 0.5);

// Gumbel-Softmax.

struct GumbelFrequencies {
  double tau = 1.0;
  Index draws = 0;
  Eigen::VectorXd target;
  Eigen::VectorXd frequency;

  /// Largest |f - p| / sqrt(p (1 - p) / draws) over classes.
  double max_z() const;
};

/// Fixed non-uniform targets used by the suites, M = 3 and M = 10.
Eigen::VectorXd gumbel_test_target(Index classes);
GumbelFrequencies gumbel_argmax_frequencies(const Eigen::VectorXd& probs, double tau, Index draws, RngState rng);
/// Fraction of relaxed draws whose largest coordinate exceeds `threshold`.
double gumbel_peak_fraction(const Eigen::VectorXd& probs, double tau, Index draws, double threshold, RngState rng);
SuiteReport verify_gumbel(Index draws = 100000, double z_limit = 4.0, double peak_tau = 0.01,
                          double peak_threshold = 0.99, double peak_fraction = 0.99);

// ccpc unlabelled bound: Gumbel-relaxed average against exact enumeration
// over y, all other noise frozen.

struct EnumerationResult {
  double exact = 0.0;
  double relaxed_mean = 0.0;
  double standard_error = 0.0;
  Index draws = 0;
  double tau = 0.0;
  Eigen::VectorXd q;
  Eigen::VectorXd bound_at;  // per one-hot y
};

EnumerationResult ccpc_enumeration(Index draws = 10000, double tau = 0.1, std::uint64_t seed = 0);
SuiteReport verify_enumeration(Index draws = 10000, double tau = 0.1, double se_multiple = 3.0);

// Closed-form entropies against Monte Carlo -E[log q].

struct EntropyOracle {
  std::string name;
  double analytic = 0.0;
  double monte_carlo = 0.0;
  double standard_error = 0.0;
  Index samples = 0;
};

std::vector<EntropyOracle> entropy_oracles(Index samples = 100000, std::uint64_t seed = 0);
SuiteReport verify_entropy(Index samples = 100000, double se_multiple = 3.0);

SuiteReport verify_complexity(const ModelConfig& config = {}, const PatchGridSpec& grid = {},
                              Index batch_size = 16, double tolerance = 0.05, double max_ratio = 1.3);

/// gradients, chance, bounds, gumbel, enumeration, entropy, complexity.
std::vector<std::string> suite_names();
/// One named suite, or every suite for "all".
std::vector<SuiteReport> run_suites(const std::string& name);

}  // namespace cpcssl
