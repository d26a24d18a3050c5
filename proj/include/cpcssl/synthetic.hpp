#pragma once

#include <nlohmann/json.hpp>

#include "cpcssl/data.hpp"

namespace cpcssl {

/// Linear-Gaussian sequence generator with a closed-form mutual information.
///
/// Per sequence: y ~ Uniform(M), u ~ N(0, I_{D_latent}), and every patch is
/// x_i = A [onehot(y); u] + noise_sigma * eps_i, eps_i ~ N(0, I_P). The
/// emission A = [class_scale * G_y, latent_scale * G_u] / sqrt(P) with G drawn
/// from N(0, 1) under emission_seed.
struct SyntheticSpec {
  int num_classes = 10;
  Index latent_dim = 2;
  double noise_sigma = 1.5;
  Index sequence_length = 6;
  Index patch_height = 6;
  Index patch_width = 6;
  double class_scale = 3.0;
  double latent_scale = 0.6;
  std::uint64_t emission_seed = 1234;

  Index patch_size() const { return patch_height * patch_width; }
  void validate() const;
  /// P x (M + D_latent).
  RowMatrix<double> emission() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& spec);
void from_json(const nlohmann::json& j, SyntheticSpec& spec);

/// `count` single-sequence examples with ids 0..count-1; patches are [1 x h x w].
Dataset make_synthetic_dataset(const SyntheticSpec& spec, Index count, RngState& rng);

/// I(group_a; group_b | y) in nats for two disjoint groups of patches of the
/// given sizes. Patches are exchangeable given y, so only the sizes matter.
/// Infinite when noise_sigma is zero and the latent emission is non-zero.
double synthetic_mutual_information(const SyntheticSpec& spec, Index group_a, Index group_b);

}  // namespace cpcssl
