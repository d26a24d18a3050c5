#pragma once

#include <span>
#include <vector>

#include "cpcssl/rng.hpp"

namespace cpcssl {

/// Prediction geometry: t conditioning steps, K predicted steps, contrastive
/// set size N, latent and context widths.
struct CpcConfig {
  Index context_steps = 2;     // t
  Index prediction_steps = 5;  // K
  Index contrastive_size = 8;  // N
  Index latent_dim = 64;       // D_z
  Index context_dim = 64;      // D_c

  void validate() const;
  /// Throws unless a sequence of this length holds t + K steps.
  void check_sequence_length(Index length) const;
};

/// A patch position within the current minibatch: batch-local sequence index
/// and position within that sequence.
struct SampleRef {
  int sequence = 0;
  Index position = 0;

  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

/// The candidate set X for one prediction step: N references, exactly one of
/// which (at positive_index) is the true future patch.
struct StepTask {
  Index step = 1;  // k, 1-based
  SampleRef positive;
  std::vector<SampleRef> candidates;
  int positive_index = 0;

  std::vector<SampleRef> negatives() const;
};

struct ContrastiveTask {
  int sequence = 0;
  Index context_steps = 0;
  std::vector<StepTask> steps;
};

/// Uniform without replacement over every (sequence, position) of the batch,
/// excluding the positive's own slot.
std::vector<SampleRef> draw_negatives(std::span<const Index> sequence_lengths, SampleRef positive,
                                      Index count, RngState& rng);

/// One task per prediction step for `sequence`. The positive for step k is
/// position t + k - 1; it is placed at a uniformly random slot among the N candidates.
ContrastiveTask make_contrastive_task(int sequence, std::span<const Index> sequence_lengths,
                                      const CpcConfig& config, RngState& rng);

}  // namespace cpcssl
