#include "cpcssl/contrastive.hpp"

#include <algorithm>
#include <unordered_set>

namespace cpcssl {

void CpcConfig::validate() const {
  if (context_steps < 1) throw Error(ErrorCode::invalid_argument, "context steps t must be >= 1");
  if (prediction_steps < 1) throw Error(ErrorCode::invalid_argument, "prediction steps K must be >= 1");
  if (contrastive_size < 2) throw Error(ErrorCode::invalid_argument, "contrastive set size N must be >= 2");
  if (latent_dim < 1 || context_dim < 1) {
    throw Error(ErrorCode::invalid_argument, "latent and context dimensions must be positive");
  }
}

void CpcConfig::check_sequence_length(Index length) const {
  if (length < context_steps + prediction_steps) {
    throw Error(ErrorCode::invalid_argument,
                "sequence of length " + std::to_string(length) + " is shorter than t + K = " +
                    std::to_string(context_steps + prediction_steps));
  }
}

std::vector<SampleRef> StepTask::negatives() const {
  std::vector<SampleRef> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (static_cast<int>(i) != positive_index) out.push_back(candidates[i]);
  }
  return out;
}

std::vector<SampleRef> draw_negatives(std::span<const Index> sequence_lengths, SampleRef positive,
                                      Index count, RngState& rng) {
  std::vector<Index> offsets;
  Index pool = 0;
  for (Index len : sequence_lengths) {
    offsets.push_back(pool);
    pool += len;
  }
  if (positive.sequence < 0 || static_cast<std::size_t>(positive.sequence) >= sequence_lengths.size() ||
      positive.position < 0 || positive.position >= sequence_lengths[static_cast<std::size_t>(positive.sequence)]) {
    throw Error(ErrorCode::out_of_range, "positive reference outside the batch");
  }
  const Index eligible = pool - 1;
  if (count > eligible) {
    throw Error(ErrorCode::invalid_argument, "negative pool of " + std::to_string(eligible) +
                                                 " patches cannot supply " + std::to_string(count) +
                                                 " negatives");
  }
  const Index excluded = offsets[static_cast<std::size_t>(positive.sequence)] + positive.position;

  // Floyd's sampling of `count` distinct values from [0, eligible), kept in draw order.
  std::vector<Index> picks;
  std::unordered_set<Index> seen;
  for (Index j = eligible - count; j < eligible; ++j) {
    const Index r = rng.uniform_index(j + 1);
    const Index v = seen.count(r) ? j : r;
    seen.insert(v);
    picks.push_back(v);
  }

  std::vector<SampleRef> out;
  out.reserve(picks.size());
  for (Index flat : picks) {
    if (flat >= excluded) ++flat;
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat);
    const auto seq = static_cast<int>(std::distance(offsets.begin(), it) - 1);
    out.push_back(SampleRef{seq, flat - offsets[static_cast<std::size_t>(seq)]});
  }
  return out;
}

ContrastiveTask make_contrastive_task(int sequence, std::span<const Index> sequence_lengths,
                                      const CpcConfig& config, RngState& rng) {
  config.validate();
  if (sequence < 0 || static_cast<std::size_t>(sequence) >= sequence_lengths.size()) {
    throw Error(ErrorCode::out_of_range, "task for a sequence outside the batch");
  }
  config.check_sequence_length(sequence_lengths[static_cast<std::size_t>(sequence)]);
  ContrastiveTask task;
  task.sequence = sequence;
  task.context_steps = config.context_steps;
  for (Index k = 1; k <= config.prediction_steps; ++k) {
    StepTask step;
    step.step = k;
    step.positive = SampleRef{sequence, config.context_steps + k - 1};
    auto negatives = draw_negatives(sequence_lengths, step.positive, config.contrastive_size - 1, rng);
    step.positive_index = static_cast<int>(rng.uniform_index(config.contrastive_size));
    step.candidates = std::move(negatives);
    step.candidates.insert(step.candidates.begin() + step.positive_index, step.positive);
    task.steps.push_back(std::move(step));
  }
  return task;
}

}  // namespace cpcssl
