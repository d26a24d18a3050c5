#include "cpcssl/objectives.hpp"

#include <algorithm>

#include "cpcssl/mac_counter.hpp"

namespace cpcssl {

using namespace ad;

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::cpc: return "cpc";
    case Mode::ccpc: return "ccpc";
    case Mode::supervised_only: return "supervised-only";
  }
  return "?";
}

Mode parse_mode(std::string_view text) {
  if (text == "cpc") return Mode::cpc;
  if (text == "ccpc") return Mode::ccpc;
  if (text == "supervised-only") return Mode::supervised_only;
  throw Error(ErrorCode::config, "unknown mode '" + std::string(text) +
                                     "' (expected cpc, ccpc or supervised-only)");
}

void GumbelConfig::validate() const {
  if (!(tau_min > 0.0) || !(tau >= tau_min)) {
    throw Error(ErrorCode::config, "gumbel temperatures need tau >= tau_min > 0");
  }
  if (!(anneal > 0.0 && anneal <= 1.0)) throw Error(ErrorCode::config, "gumbel anneal must lie in (0, 1]");
}

double GumbelConfig::at_epoch(Index epoch) const {
  return std::max(tau_min, tau * std::pow(anneal, static_cast<double>(epoch)));
}

ClassifierParams add_classifier(ParameterStore& store, Index latent_dim, Index num_classes,
                                RngState& rng) {
  if (num_classes < 2) throw Error(ErrorCode::invalid_argument, "a classifier needs at least 2 classes");
  ClassifierParams cls;
  cls.num_classes = num_classes;
  cls.weight = store.add("cls.w", glorot_tensor({num_classes, latent_dim}, latent_dim, num_classes, rng));
  cls.bias = store.add("cls.bias", Tensor(Shape{num_classes}));
  return cls;
}

SslModel build_model(const ModelConfig& config, Mode mode, RngState& rng) {
  config.cpc.validate();
  SslModel m;
  m.mode = mode;
  m.cpc = config.cpc;
  RngState init = rng.fork("init");
  if (config.encoder == EncoderKind::image) {
    m.encoder = add_image_encoder(m.params, config.image, config.cpc.latent_dim, init);
  } else {
    if (config.text.latent_dim() != config.cpc.latent_dim) {
      throw Error(ErrorCode::config, "text encoder yields D_z = " +
                                         std::to_string(config.text.latent_dim()) +
                                         " but latent_dim is " + std::to_string(config.cpc.latent_dim));
    }
    m.encoder = add_text_encoder(m.params, config.text, init);
  }
  const Index M = config.num_classes;
  if (mode != Mode::supervised_only) {
    const Index condition = mode == Mode::ccpc ? M : 0;
    m.aggregator = add_aggregator(m.params, config.cpc.latent_dim, config.cpc.context_dim, condition,
                                  config.log_var_bias, init);
    m.predictors = add_predictors(m.params, config.cpc.prediction_steps, config.cpc.latent_dim,
                                  config.cpc.context_dim, config.predictor_scale, init);
  }
  m.classifier = add_classifier(m.params, config.cpc.latent_dim, M, init);
  if (mode == Mode::ccpc) {
    m.ccpc.prior_head = add_gaussian_head(m.params, "prior", config.cpc.context_dim,
                                          config.cpc.context_dim, M, config.log_var_bias, init);
    m.ccpc.log_pi = Eigen::VectorXd::Constant(M, -std::log(static_cast<double>(M)));
  }
  return m;
}

Var classify(Graph& g, const ClassifierParams& cls, Var pooled) {
  MacComponent component("cls");
  return log_softmax(matvec(g(cls.weight), pooled) + g(cls.bias));
}

Var class_nll(Var log_probs, int label) {
  if (label < 0 || label >= log_probs.size()) {
    throw Error(ErrorCode::out_of_range, "label " + std::to_string(label) + " outside [0, " +
                                             std::to_string(log_probs.size()) + ")");
  }
  return -pick(log_probs, label);
}

Var classification_loss(Graph& g, const ClassifierParams& cls, std::span<const Var> pooled,
                        std::span<const int> labels) {
  if (pooled.size() != labels.size()) {
    throw Error(ErrorCode::invalid_argument, "every labelled feature needs a label");
  }
  if (pooled.empty()) throw Error(ErrorCode::invalid_argument, "classification loss of an empty batch");
  std::vector<Var> terms;
  for (std::size_t i = 0; i < pooled.size(); ++i) terms.push_back(class_nll(classify(g, cls, pooled[i]), labels[i]));
  return mean(concat(terms));
}

Var gaussian_entropy(const ContextDistribution& dist) {
  const double c = 1.0 + std::log(2.0 * std::numbers::pi);
  return 0.5 * add_scalar(sum(dist.log_var), c * static_cast<double>(dist.log_var.size()));
}

Var gaussian_log_density(Var x, const ContextDistribution& dist) {
  const double c = std::log(2.0 * std::numbers::pi) * static_cast<double>(x.size());
  const Var z2 = mul(square(x - dist.mu), exp(-dist.log_var));
  return -0.5 * add_scalar(sum(z2 + dist.log_var), c);
}

double categorical_entropy(const Eigen::Ref<const Eigen::VectorXd>& probs) {
  if (probs.size() < 1 || (probs.array() < 0.0).any() || !probs.allFinite() ||
      std::abs(probs.sum() - 1.0) > 1e-9) {
    throw Error(ErrorCode::invalid_argument, "categorical entropy of a vector off the simplex");
  }
  double h = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  }
  return h;
}

Var categorical_entropy(Var log_probs) { return -dot(exp(log_probs), log_probs); }

Var gumbel_softmax_sample(Var log_probs, double tau, const Tensor& gumbel) {
  if (!(tau > 0.0)) throw Error(ErrorCode::invalid_argument, "gumbel-softmax needs tau > 0");
  if (gumbel.size() != log_probs.size()) {
    throw Error(ErrorCode::shape_mismatch, "gumbel noise of shape " + to_string(gumbel.shape()) +
                                               " for logits of shape " + to_string(log_probs.shape()));
  }
  const Var noise = log_probs.tape()->constant(gumbel.reshaped(log_probs.shape()));
  return softmax((1.0 / tau) * (log_probs + noise));
}

Var gumbel_softmax_sample(Var log_probs, double tau, RngState& rng) {
  return gumbel_softmax_sample(log_probs, tau, rng.gumbel_tensor(log_probs.shape()));
}

double LossBreakdown::recombine() const {
  return nce_sum + cls_sum + context_nll - class_prior - gaussian_entropy - categorical_entropy +
         alpha_used * cls_loss;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  if (nce_per_step.size() < o.nce_per_step.size()) nce_per_step.resize(o.nce_per_step.size(), 0.0);
  for (std::size_t k = 0; k < o.nce_per_step.size(); ++k) nce_per_step[k] += o.nce_per_step[k];
  nce_terms += o.nce_terms;
  nce_sum += o.nce_sum;
  cls_sum += o.cls_sum;
  context_nll += o.context_nll;
  class_prior += o.class_prior;
  gaussian_entropy += o.gaussian_entropy;
  categorical_entropy += o.categorical_entropy;
  total += o.total;
  labeled += o.labeled;
  unlabeled += o.unlabeled;
  return *this;
}

EncodedBatch encode_batch(Graph& g, const EncoderParams& enc, std::span<const Example* const> examples) {
  EncodedBatch batch;
  for (const Example* ex : examples) {
    if (ex->sequences.empty()) throw Error(ErrorCode::invalid_argument, "example without sequences");
    std::vector<int> own;
    std::vector<Var> pools;
    for (const SequenceSample& s : ex->sequences) {
      own.push_back(static_cast<int>(batch.z.size()));
      batch.z.push_back(encode_sequence(g, enc, s));
      batch.lengths.push_back(s.length());
      pools.push_back(pool_features(batch.z.back()));
    }
    batch.sequences_of.push_back(std::move(own));
    batch.pooled.push_back(pools.size() == 1 ? pools[0] : mean_rows(stack_rows(pools)));
  }
  return batch;
}

BatchNoise draw_batch_noise(const EncodedBatch& batch, const CpcConfig& cpc, Index num_classes,
                            RngState rng) {
  BatchNoise noise;
  const RngState tasks = rng.fork("tasks"), eps = rng.fork("context"), gumbel = rng.fork("gumbel");
  for (std::size_t s = 0; s < batch.z.size(); ++s) {
    RngState r = tasks.fork(s);
    noise.tasks.push_back(make_contrastive_task(static_cast<int>(s), batch.lengths, cpc, r));
    RngState e = eps.fork(s);
    noise.context_eps.push_back(e.normal_tensor({cpc.context_dim}));
  }
  for (std::size_t i = 0; i < batch.sequences_of.size(); ++i) {
    RngState r = gumbel.fork(i);
    noise.gumbel.push_back(r.gumbel_tensor({num_classes}));
  }
  return noise;
}

namespace {

void require_aggregator(const SslModel& m) {
  if (m.mode == Mode::supervised_only) {
    throw Error(ErrorCode::incompatible, "supervised-only models have no context aggregator");
  }
}

Var context_rows(const EncodedBatch& batch, int sequence, Index t) {
  std::vector<std::pair<int, Index>> refs;
  for (Index i = 0; i < t; ++i) refs.emplace_back(sequence, i);
  return gather_rows(batch.z, refs);
}

double value_of(Var v) { return v.item(); }

Var sum_all(const std::vector<Var>& terms) { return terms.size() == 1 ? terms[0] : sum(concat(terms)); }

}  // namespace

Var sequence_nce(Graph& g, const SslModel& m, const EncodedBatch& batch, int sequence,
                 const ContrastiveTask& task, Var c, LossBreakdown& parts) {
  require_aggregator(m);
  if (static_cast<Index>(task.steps.size()) != m.predictors.steps()) {
    throw Error(ErrorCode::invalid_argument, "task has " + std::to_string(task.steps.size()) +
                                                 " steps for a bank of " +
                                                 std::to_string(m.predictors.steps()));
  }
  if (parts.nce_per_step.size() < task.steps.size()) parts.nce_per_step.resize(task.steps.size(), 0.0);
  std::vector<Var> losses;
  std::vector<std::pair<int, Index>> refs;
  for (std::size_t k = 0; k < task.steps.size(); ++k) {
    const StepTask& step = task.steps[k];
    if (step.positive.sequence != sequence) {
      throw Error(ErrorCode::invalid_argument, "task positive belongs to another sequence");
    }
    refs.clear();
    for (const SampleRef& r : step.candidates) refs.emplace_back(r.sequence, r.position);
    const Var candidates = gather_rows(batch.z, refs);
    const Var loss = info_nce_step_loss(c, candidates, step.positive_index, g(m.predictors.weights[k]));
    parts.nce_per_step[k] += value_of(loss);
    parts.nce_sum += value_of(loss);
    ++parts.nce_terms;
    losses.push_back(loss);
  }
  return sum_all(losses);
}

Objective labeled_loss_cpc(Graph& g, const SslModel& m, const EncodedBatch& batch, int example,
                           int label, const BatchNoise& noise) {
  Objective out;
  const Var nll = class_nll(classify(g, m.classifier, batch.pooled.at(static_cast<std::size_t>(example))), label);
  out.parts.cls_sum = value_of(nll);
  out.parts.labeled = 1;
  std::vector<Var> terms{nll};
  for (int s : batch.sequences_of.at(static_cast<std::size_t>(example))) {
    const auto su = static_cast<std::size_t>(s);
    const ContextDistribution dist = aggregate_context(g, m.aggregator, context_rows(batch, s, m.cpc.context_steps), m.cpc.context_steps);
    const Var c = sample_context(dist, noise.context_eps.at(su));
    terms.push_back(sequence_nce(g, m, batch, s, noise.tasks.at(su), c, out.parts));
  }
  out.loss = sum_all(terms);
  out.parts.total = value_of(out.loss);
  return out;
}

Objective unlabeled_loss_cpc(Graph& g, const SslModel& m, const EncodedBatch& batch, int example,
                             const BatchNoise& noise) {
  Objective out;
  out.parts.unlabeled = 1;
  std::vector<Var> terms;
  for (int s : batch.sequences_of.at(static_cast<std::size_t>(example))) {
    const auto su = static_cast<std::size_t>(s);
    const ContextDistribution dist = aggregate_context(g, m.aggregator, context_rows(batch, s, m.cpc.context_steps), m.cpc.context_steps);
    const Var c = sample_context(dist, noise.context_eps.at(su));
    terms.push_back(sequence_nce(g, m, batch, s, noise.tasks.at(su), c, out.parts));
  }
  out.loss = sum_all(terms);
  out.parts.total = value_of(out.loss);
  return out;
}

namespace {

void require_batch(const EncodedBatch& batch, std::span<const int> labels, double alpha) {
  if (batch.pooled.empty()) throw Error(ErrorCode::invalid_argument, "objective over an empty batch");
  if (labels.size() > batch.pooled.size()) {
    throw Error(ErrorCode::invalid_argument, "more labels than examples in the batch");
  }
  if (!(alpha >= 0.0)) throw Error(ErrorCode::invalid_argument, "alpha must be >= 0");
}

/// Appends alpha * mean NLL over the labelled examples.
void add_alpha_term(Graph& g, const SslModel& m, const EncodedBatch& batch,
                    std::span<const int> labels, double alpha, std::vector<Var>& terms,
                    LossBreakdown& parts) {
  parts.alpha_used = alpha;
  if (labels.empty()) return;
  const std::span<const Var> pooled(batch.pooled.data(), labels.size());
  const Var cls = classification_loss(g, m.classifier, pooled, labels);
  parts.cls_loss = value_of(cls);
  if (alpha != 0.0) terms.push_back(alpha * cls);
}

}  // namespace

Objective total_objective_cpc(Graph& g, const SslModel& m, const EncodedBatch& batch,
                              std::span<const int> labels, double alpha, const BatchNoise& noise) {
  require_batch(batch, labels, alpha);
  Objective out;
  std::vector<Var> terms;
  for (std::size_t e = 0; e < batch.pooled.size(); ++e) {
    const int ex = static_cast<int>(e);
    Objective part = e < labels.size() ? labeled_loss_cpc(g, m, batch, ex, labels[e], noise)
                                       : unlabeled_loss_cpc(g, m, batch, ex, noise);
    terms.push_back(part.loss);
    out.parts += part.parts;
  }
  add_alpha_term(g, m, batch, labels, alpha, terms, out.parts);
  out.loss = sum_all(terms);
  out.parts.total = value_of(out.loss);
  return out;
}

Objective supervised_objective(Graph& g, const SslModel& m, const EncodedBatch& batch,
                               std::span<const int> labels, double alpha) {
  require_batch(batch, labels, alpha);
  if (labels.empty()) throw Error(ErrorCode::invalid_argument, "supervised objective without labels");
  Objective out;
  std::vector<Var> terms;
  for (std::size_t e = 0; e < labels.size(); ++e) {
    const Var nll = class_nll(classify(g, m.classifier, batch.pooled[e]), labels[e]);
    out.parts.cls_sum += value_of(nll);
    terms.push_back(nll);
  }
  out.parts.labeled = static_cast<Index>(labels.size());
  add_alpha_term(g, m, batch, labels, alpha, terms, out.parts);
  out.loss = sum_all(terms);
  out.parts.total = value_of(out.loss);
  return out;
}

namespace {

void require_ccpc(const SslModel& m) {
  if (m.mode != Mode::ccpc) throw Error(ErrorCode::incompatible, "ccpc bound on a non-ccpc model");
}

/// Per sequence: NCE(c) - log p(c | y, x<=t) - H(q(c | y, z<=t)) with c ~ q.
Var conditional_sequence_terms(Graph& g, const SslModel& m, const EncodedBatch& batch, int s,
                               Var y, const BatchNoise& noise, LossBreakdown& parts) {
  const auto su = static_cast<std::size_t>(s);
  const Var state = aggregate_state(g, m.aggregator, context_rows(batch, s, m.cpc.context_steps));
  const ContextDistribution q = gaussian_context(g, m.aggregator.head, state, y);
  const ContextDistribution p = gaussian_context(g, m.ccpc.prior_head, state, y);
  const Var c = sample_context(q, noise.context_eps.at(su));
  const Var nce = sequence_nce(g, m, batch, s, noise.tasks.at(su), c, parts);
  const Var log_p = gaussian_log_density(c, p);
  const Var h_q = gaussian_entropy(q);
  parts.context_nll -= value_of(log_p);
  parts.gaussian_entropy += value_of(h_q);
  return nce - log_p - h_q;
}

}  // namespace

Objective ccpc_labeled_bound(Graph& g, const SslModel& m, const EncodedBatch& batch, int example,
                             int label, const BatchNoise& noise) {
  require_ccpc(m);
  const Index M = m.classifier.num_classes;
  if (label < 0 || label >= M) {
    throw Error(ErrorCode::out_of_range, "label " + std::to_string(label) + " outside [0, " + std::to_string(M) + ")");
  }
  Tensor onehot(Shape{M});
  onehot[label] = 1.0;
  const Var y = g.constant(std::move(onehot));
  Objective out;
  out.parts.labeled = 1;
  std::vector<Var> terms;
  for (int s : batch.sequences_of.at(static_cast<std::size_t>(example))) {
    terms.push_back(conditional_sequence_terms(g, m, batch, s, y, noise, out.parts));
  }
  out.loss = sum_all(terms);
  out.parts.total = value_of(out.loss);
  return out;
}

Objective ccpc_unlabeled_bound_at(Graph& g, const SslModel& m, const EncodedBatch& batch,
                                  int example, Var y, const BatchNoise& noise) {
  require_ccpc(m);
  Objective out;
  out.parts.unlabeled = 1;
  std::vector<Var> terms;
  for (int s : batch.sequences_of.at(static_cast<std::size_t>(example))) {
    terms.push_back(conditional_sequence_terms(g, m, batch, s, y, noise, out.parts));
  }
  const Var log_q = classify(g, m.classifier, batch.pooled.at(static_cast<std::size_t>(example)));
  const Var prior = dot(y, g.constant(Tensor::from_vector(m.ccpc.log_pi)));
  const Var h_y = categorical_entropy(log_q);
  out.parts.class_prior = value_of(prior);
  out.parts.categorical_entropy = value_of(h_y);
  terms.push_back(-prior);
  terms.push_back(-h_y);
  out.loss = sum_all(terms);
  out.parts.total = value_of(out.loss);
  return out;
}

Objective ccpc_unlabeled_bound(Graph& g, const SslModel& m, const EncodedBatch& batch, int example,
                               double tau, const BatchNoise& noise) {
  require_ccpc(m);
  const Var log_q = classify(g, m.classifier, batch.pooled.at(static_cast<std::size_t>(example)));
  const Var y = gumbel_softmax_sample(log_q, tau, noise.gumbel.at(static_cast<std::size_t>(example)));
  return ccpc_unlabeled_bound_at(g, m, batch, example, y, noise);
}

Objective total_objective_ccpc(Graph& g, const SslModel& m, const EncodedBatch& batch,
                               std::span<const int> labels, double alpha, double tau,
                               const BatchNoise& noise) {
  require_ccpc(m);
  require_batch(batch, labels, alpha);
  Objective out;
  std::vector<Var> terms;
  for (std::size_t e = 0; e < batch.pooled.size(); ++e) {
    const int ex = static_cast<int>(e);
    Objective part = e < labels.size() ? ccpc_labeled_bound(g, m, batch, ex, labels[e], noise)
                                       : ccpc_unlabeled_bound(g, m, batch, ex, tau, noise);
    terms.push_back(part.loss);
    out.parts += part.parts;
  }
  add_alpha_term(g, m, batch, labels, alpha, terms, out.parts);
  out.loss = sum_all(terms);
  out.parts.total = value_of(out.loss);
  return out;
}

}  // namespace cpcssl
