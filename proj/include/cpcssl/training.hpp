#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpcssl/objectives.hpp"

namespace cpcssl {

struct TrainConfig {
  Mode mode = Mode::cpc;
  double learning_rate = 1e-3;
  Index batch_size = 16;  // M: half labelled, half unlabelled
  Index epochs = 15;
  std::optional<double> alpha;  // default 8 rho
  double weight_decay = 1e-4;   // supervised-only
  std::uint64_t seed = 0;
  GumbelConfig gumbel;
  std::vector<Index> topk{1, 5};
  bool record_wall_ms = false;

  void validate() const;
};

/// Bias-corrected Adam moments, one pair per parameter.
struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParameterStore& params);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One Adam update. Weight decay is decoupled: p -= lr * weight_decay * p.
void adam_step(ParameterStore& params, const std::vector<Tensor>& grads, AdamState& state,
               double learning_rate, double weight_decay = 0.0);

/// Example indices into the labelled and unlabelled sets.
struct MixedBatch {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
};

/// Epoch plans of M/2 + M/2 batches. The epoch spans max(|U|, |L|) / (M/2)
/// batches; labelled items are re-shuffled and reused when exhausted. With no
/// unlabelled items every batch holds M labelled ones.
class MixedBatcher {
 public:
  MixedBatcher(std::size_t labeled, std::size_t unlabeled, Index batch_size, RngState rng);

  std::vector<MixedBatch> epoch(Index epoch) const;
  Index steps_per_epoch() const noexcept { return steps_; }

 private:
  std::size_t labeled_;
  std::size_t unlabeled_;
  Index half_;
  Index steps_;
  RngState rng_;
};

/// Forward, backward and one Adam update on a batch. The first labels.size()
/// examples are labelled. Throws non_finite naming the offending term.
LossBreakdown train_step(SslModel& model, AdamState& adam, std::span<const Example* const> examples,
                         std::span<const int> labels, const TrainConfig& config, double alpha,
                         double tau, RngState rng);

/// Class log-probabilities of one example from its pooled features.
Eigen::VectorXd predict_log_probs(const SslModel& model, const Example& example);

/// True when `label` is among the k highest scores; ties rank the lower index first.
template <typename Derived>
bool topk_hit(const Eigen::MatrixBase<Derived>& scores, Index label, Index k) {
  Index better = 0;
  for (Index i = 0; i < scores.size(); ++i) {
    if (scores[i] > scores[label] || (scores[i] == scores[label] && i < label)) ++better;
  }
  return better < k;
}

/// Top-k accuracy for each k. `labels` overrides example labels when given
/// (hidden labels of an unlabelled split).
std::vector<double> evaluate_topk(const SslModel& model, const Dataset& data, std::span<const Index> ks,
                                  const std::map<std::int64_t, int>* labels = nullptr);

/// ln N - L_N.
double mi_lower_bound(double nce_loss, Index contrastive_size);

/// Per-(sequence, step) InfoNCE losses over a dataset, batched by `batch_size`
/// with in-batch negatives. No parameter update.
std::vector<double> nce_losses(const SslModel& model, const Dataset& data, Index batch_size, RngState rng);

struct EpochMetrics {
  Index epoch = 0;
  double j_total = 0.0;
  std::optional<double> nce_mean;
  double cls_loss = 0.0;
  std::optional<double> mi_bound;
  double top1 = 0.0;
  double topk = 0.0;
  std::optional<double> tau;
  double wall_ms = 0.0;
};

nlohmann::json to_json(const EpochMetrics& m);

/// Runs epochs over a split and keeps everything a checkpoint needs.
class Trainer {
 public:
  Trainer(SslModel model, const Split& split, const Dataset* eval, TrainConfig config);

  EpochMetrics run_epoch();
  Index epoch() const noexcept { return epoch_; }
  double alpha() const noexcept { return alpha_; }
  double tau() const { return config_.gumbel.at_epoch(epoch_); }

  const SslModel& model() const noexcept { return model_; }
  SslModel& model() noexcept { return model_; }
  const AdamState& adam() const noexcept { return adam_; }
  const RngState& rng() const noexcept { return rng_; }
  const TrainConfig& config() const noexcept { return config_; }

  void restore(ParameterStore params, AdamState adam, RngState rng, Index epoch);

 private:
  SslModel model_;
  const Split& split_;
  const Dataset* eval_;
  TrainConfig config_;
  double alpha_;
  AdamState adam_;
  RngState rng_;
  MixedBatcher batcher_;
  Index epoch_ = 0;
};

/// Worker threads for evaluation, from CPCSSL_THREADS (default 1).
unsigned worker_threads();

}  // namespace cpcssl
