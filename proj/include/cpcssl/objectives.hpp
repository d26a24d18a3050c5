#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include "cpcssl/model.hpp"

namespace cpcssl {

enum class Mode : std::uint8_t { cpc = 0, ccpc = 1, supervised_only = 2 };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view text);

struct ClassifierParams {
  ParamId weight;  // [M x D_z]
  ParamId bias;    // [M]
  Index num_classes = 0;
};

/// Class-conditional pieces: the generative context head p(c | y, x<=t) and a
/// fixed class prior. The inference head q(c | y, z<=t) is the aggregator's
/// own head, conditioned on y.
struct CcpcParams {
  GaussianHead prior_head;
  Eigen::VectorXd log_pi;
};

struct GumbelConfig {
  double tau = 1.0;
  double anneal = 0.97;
  double tau_min = 0.1;

  void validate() const;
  /// max(tau_min, tau * anneal^epoch).
  double at_epoch(Index epoch) const;
};

struct ModelConfig {
  EncoderKind encoder = EncoderKind::image;
  ImageEncoderSpec image;
  TextEncoderSpec text;
  CpcConfig cpc;
  int num_classes = 10;
  double log_var_bias = -4.0;
  double predictor_scale = 0.5;
};

/// Parameters plus the handles that address them. Supervised-only models
/// carry just the encoder and the classifier.
struct SslModel {
  Mode mode = Mode::cpc;
  CpcConfig cpc;
  ParameterStore params;
  EncoderParams encoder;
  AggregatorParams aggregator;
  PredictorBank predictors;
  ClassifierParams classifier;
  CcpcParams ccpc;
};

SslModel build_model(const ModelConfig& config, Mode mode, RngState& rng);
ClassifierParams add_classifier(ParameterStore& store, Index latent_dim, Index num_classes,
                                RngState& rng);

/// Log-probabilities log_softmax(W pooled + b).
Var classify(Graph& g, const ClassifierParams& cls, Var pooled);
/// -log p(label), from a vector of class log-probabilities.
Var class_nll(Var log_probs, int label);
/// Mean NLL over a labelled batch.
Var classification_loss(Graph& g, const ClassifierParams& cls, std::span<const Var> pooled,
                        std::span<const int> labels);

/// 0.5 * sum(1 + ln 2pi + log_var).
Var gaussian_entropy(const ContextDistribution& dist);
template <typename Derived>
double gaussian_entropy(const Eigen::MatrixBase<Derived>& log_var) {
  const double c = 1.0 + std::log(2.0 * std::numbers::pi);
  return 0.5 * (log_var.array() + c).sum();
}

/// log N(x; mu, diag(exp(log_var))).
Var gaussian_log_density(Var x, const ContextDistribution& dist);

/// -sum p ln p with 0 ln 0 = 0. Throws unless p lies on the simplex (1e-9).
double categorical_entropy(const Eigen::Ref<const Eigen::VectorXd>& probs);
/// Entropy of the categorical with the given log-probabilities.
Var categorical_entropy(Var log_probs);

/// softmax((log_probs + g) / tau) for explicit Gumbel noise g.
Var gumbel_softmax_sample(Var log_probs, double tau, const Tensor& gumbel);
Var gumbel_softmax_sample(Var log_probs, double tau, RngState& rng);

/// Per-term record of one objective evaluation. Sums run over the batch;
/// `cls_loss` is the mean labelled NLL.
struct LossBreakdown {
  std::vector<double> nce_per_step;  // summed over sequences, one entry per k
  Index nce_terms = 0;
  double nce_sum = 0.0;
  double cls_sum = 0.0;       // labelled NLL entering the likelihood terms (cpc, supervised)
  double cls_loss = 0.0;      // mean labelled NLL, weighted by alpha
  double context_nll = 0.0;   // sum of -log p(c | y, x<=t)     (ccpc)
  double class_prior = 0.0;   // sum of y . log pi               (ccpc)
  double gaussian_entropy = 0.0;     // sum of H(q(c | .))      (ccpc)
  double categorical_entropy = 0.0;  // sum of H(q(y | .))      (ccpc)
  double alpha_used = 0.0;
  double total = 0.0;
  Index labeled = 0;
  Index unlabeled = 0;

  double nce_mean() const { return nce_terms > 0 ? nce_sum / static_cast<double>(nce_terms) : 0.0; }
  /// nce + cls_sum + context_nll - class_prior - entropies + alpha * cls_loss.
  double recombine() const;
  /// Adds the sum fields of another breakdown; means and alpha are left alone.
  LossBreakdown& operator+=(const LossBreakdown& other);
};

struct Objective {
  Var loss;
  LossBreakdown parts;
};

/// Encoded examples of one minibatch. Sequences are numbered in example order.
struct EncodedBatch {
  std::vector<Var> z;                            // per sequence [T x D_z]
  std::vector<Index> lengths;                    // per sequence
  std::vector<std::vector<int>> sequences_of;    // per example
  std::vector<Var> pooled;                       // per example: mean of its sequences' pools
};

EncodedBatch encode_batch(Graph& g, const EncoderParams& enc, std::span<const Example* const> examples);

/// All randomness one objective evaluation consumes. Holding it fixed freezes
/// the noise.
struct BatchNoise {
  std::vector<ContrastiveTask> tasks;  // per sequence
  std::vector<Tensor> context_eps;     // per sequence [D_c]
  std::vector<Tensor> gumbel;          // per example [M]
};

BatchNoise draw_batch_noise(const EncodedBatch& batch, const CpcConfig& cpc, Index num_classes,
                            RngState rng);

/// Sum over k of the InfoNCE step losses of one sequence, given its context.
Var sequence_nce(Graph& g, const SslModel& m, const EncodedBatch& batch, int sequence,
                 const ContrastiveTask& task, Var c, LossBreakdown& parts);

/// -L for a labelled example: NLL(label) plus the NCE of each of its sequences.
Objective labeled_loss_cpc(Graph& g, const SslModel& m, const EncodedBatch& batch, int example,
                           int label, const BatchNoise& noise);
/// -U for an unlabelled example: NCE only.
Objective unlabeled_loss_cpc(Graph& g, const SslModel& m, const EncodedBatch& batch, int example,
                             const BatchNoise& noise);
/// Examples [0, labels.size()) are labelled with `labels`; the rest are not.
/// -J = sum(-L) + sum(-U) + alpha * mean NLL.
Objective total_objective_cpc(Graph& g, const SslModel& m, const EncodedBatch& batch,
                              std::span<const int> labels, double alpha, const BatchNoise& noise);
/// Labelled examples only: sum NLL + alpha * mean NLL.
Objective supervised_objective(Graph& g, const SslModel& m, const EncodedBatch& batch,
                               std::span<const int> labels, double alpha);

/// -L for ccpc: per sequence, c ~ q(c | y, z<=t);
/// NCE(c) - log p(c | y, x<=t) - H(q(c | y, .)).
Objective ccpc_labeled_bound(Graph& g, const SslModel& m, const EncodedBatch& batch, int example,
                             int label, const BatchNoise& noise);
/// -U for ccpc at a given class vector y (relaxed or one-hot):
/// sum over sequences of NCE(c) - log p(c | y) - H(q(c | y)), minus y . log pi
/// and H(q(y | .)).
Objective ccpc_unlabeled_bound_at(Graph& g, const SslModel& m, const EncodedBatch& batch,
                                  int example, Var y, const BatchNoise& noise);
/// -U with y drawn by Gumbel-Softmax from q(y | .) at temperature tau.
Objective ccpc_unlabeled_bound(Graph& g, const SslModel& m, const EncodedBatch& batch, int example,
                               double tau, const BatchNoise& noise);
Objective total_objective_ccpc(Graph& g, const SslModel& m, const EncodedBatch& batch,
                               std::span<const int> labels, double alpha, double tau,
                               const BatchNoise& noise);

}  // namespace cpcssl
