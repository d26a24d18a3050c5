#include "cpcssl/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>

namespace cpcssl {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::config, "train.learning_rate must be > 0");
  }
  if (batch_size < 1) throw Error(ErrorCode::config, "train.batch_size must be positive");
  if (mode != Mode::supervised_only && batch_size % 2 != 0) {
    throw Error(ErrorCode::config, "train.batch_size must be even in " + std::string(to_string(mode)) +
                                       " mode, got " + std::to_string(batch_size));
  }
  if (epochs < 0) throw Error(ErrorCode::config, "train.epochs must be >= 0");
  if (alpha && !(*alpha >= 0.0)) throw Error(ErrorCode::config, "train.alpha must be >= 0");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::config, "train.weight_decay must be >= 0");
  if (topk.empty()) throw Error(ErrorCode::config, "train.topk must list at least one k");
  for (Index k : topk) {
    if (k < 1) throw Error(ErrorCode::config, "train.topk entries must be positive");
  }
  gumbel.validate();
}

AdamState AdamState::zeros_like(const ParameterStore& params) {
  AdamState s;
  for (ParamId id : params.ids()) {
    s.m.emplace_back(params[id].shape());
    s.v.emplace_back(params[id].shape());
  }
  return s;
}

void adam_step(ParameterStore& params, const std::vector<Tensor>& grads, AdamState& state,
               double learning_rate, double weight_decay) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorCode::shape_mismatch, "adam: gradient and moment counts do not match the parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (ParamId id : params.ids()) {
    const auto i = static_cast<std::size_t>(id.value);
    Tensor& p = params[id];
    if (grads[i].shape() != p.shape() || state.m[i].shape() != p.shape()) {
      throw Error(ErrorCode::shape_mismatch, "adam: gradient " + to_string(grads[i].shape()) +
                                                 " for parameter " + params.name(id) + " " +
                                                 to_string(p.shape()));
    }
    auto g = grads[i].vec().array();
    auto m = state.m[i].vec().array();
    auto v = state.v[i].vec().array();
    m = AdamState::kBeta1 * m + (1.0 - AdamState::kBeta1) * g;
    v = AdamState::kBeta2 * v + (1.0 - AdamState::kBeta2) * g.square();
    if (weight_decay != 0.0) p.vec() *= 1.0 - learning_rate * weight_decay;
    p.vec().array() -= learning_rate * (m / c1) / ((v / c2).sqrt() + AdamState::kEpsilon);
  }
}

MixedBatcher::MixedBatcher(std::size_t labeled, std::size_t unlabeled, Index batch_size, RngState rng)
    : labeled_(labeled), unlabeled_(unlabeled), half_(unlabeled > 0 ? batch_size / 2 : batch_size),
      rng_(rng) {
  if (labeled_ == 0) throw Error(ErrorCode::invalid_argument, "empty labelled split");
  if (half_ < 1) throw Error(ErrorCode::invalid_argument, "batch too small to split");
  steps_ = std::max<Index>(1, static_cast<Index>(std::max(labeled_, unlabeled_)) / half_);
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, RngState& rng) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_index(static_cast<Index>(i)))]);
  }
  return v;
}

/// Draws `count` items from repeated reshuffles of [0, n).
std::vector<std::size_t> recycled(std::size_t n, std::size_t count, RngState& rng) {
  std::vector<std::size_t> out;
  out.reserve(count);
  while (out.size() < count) {
    const auto pass = shuffled(n, rng);
    for (std::size_t i = 0; i < pass.size() && out.size() < count; ++i) out.push_back(pass[i]);
  }
  return out;
}

}  // namespace

std::vector<MixedBatch> MixedBatcher::epoch(Index epoch) const {
  RngState rng = rng_.fork(static_cast<std::uint64_t>(epoch));
  const auto half = static_cast<std::size_t>(half_);
  const auto steps = static_cast<std::size_t>(steps_);
  const auto lab = recycled(labeled_, half * steps, rng);
  std::vector<std::size_t> unl;
  if (unlabeled_ > 0) unl = recycled(unlabeled_, half * steps, rng);
  std::vector<MixedBatch> out(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    out[s].labeled.assign(lab.begin() + static_cast<std::ptrdiff_t>(s * half),
                          lab.begin() + static_cast<std::ptrdiff_t>((s + 1) * half));
    if (unlabeled_ > 0) {
      out[s].unlabeled.assign(unl.begin() + static_cast<std::ptrdiff_t>(s * half),
                              unl.begin() + static_cast<std::ptrdiff_t>((s + 1) * half));
    }
  }
  return out;
}

namespace {

void check_finite(const LossBreakdown& p) {
  const std::pair<const char*, double> terms[] = {
      {"nce", p.nce_sum},
      {"classification", p.cls_sum + p.cls_loss},
      {"context log-density", p.context_nll},
      {"class prior", p.class_prior},
      {"gaussian entropy", p.gaussian_entropy},
      {"categorical entropy", p.categorical_entropy},
      {"total", p.total},
  };
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::non_finite, std::string("non-finite ") + name + " term in the objective");
    }
  }
}

}  // namespace

LossBreakdown train_step(SslModel& model, AdamState& adam, std::span<const Example* const> examples,
                         std::span<const int> labels, const TrainConfig& config, double alpha,
                         double tau, RngState rng) {
  Tape tape;
  Graph g(tape, model.params);
  Objective obj;
  if (model.mode == Mode::supervised_only) {
    const auto batch = encode_batch(g, model.encoder, examples.first(labels.size()));
    obj = supervised_objective(g, model, batch, labels, alpha);
  } else {
    const auto batch = encode_batch(g, model.encoder, examples);
    const auto noise = draw_batch_noise(batch, model.cpc, model.classifier.num_classes, rng);
    obj = model.mode == Mode::cpc ? total_objective_cpc(g, model, batch, labels, alpha, noise)
                                  : total_objective_ccpc(g, model, batch, labels, alpha, tau, noise);
  }
  check_finite(obj.parts);
  const auto grads = dense_gradients(model.params, backward(tape, obj.loss));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].all_finite()) {
      throw Error(ErrorCode::non_finite, "non-finite gradient for parameter " +
                                             model.params.name(ParamId{static_cast<int>(i)}));
    }
  }
  const double wd = model.mode == Mode::supervised_only ? config.weight_decay : 0.0;
  adam_step(model.params, grads, adam, config.learning_rate, wd);
  return obj.parts;
}

Eigen::VectorXd predict_log_probs(const SslModel& model, const Example& example) {
  Tape tape;
  Graph g(tape, model.params);
  const Example* one[] = {&example};
  const auto batch = encode_batch(g, model.encoder, one);
  return classify(g, model.classifier, batch.pooled[0]).value().vec();
}

unsigned worker_threads() {
  if (const char* env = std::getenv("CPCSSL_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<unsigned>(std::min<long>(n, 256));
  }
  return 1;
}

namespace {

/// Runs fn(i) for i in [0, n) on up to worker_threads() threads.
template <typename Fn>
void parallel_for(std::size_t n, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(worker_threads(), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::vector<double> evaluate_topk(const SslModel& model, const Dataset& data, std::span<const Index> ks,
                                  const std::map<std::int64_t, int>* labels) {
  if (data.empty()) throw Error(ErrorCode::invalid_argument, "evaluation on an empty dataset");
  std::vector<int> truth(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Example& ex = data.examples[i];
    std::optional<int> y = ex.label;
    if (labels) {
      auto it = labels->find(ex.id);
      if (it != labels->end()) y = it->second;
    }
    if (!y) throw Error(ErrorCode::invalid_argument, "evaluation example " + std::to_string(ex.id) + " has no label");
    truth[i] = *y;
  }
  std::vector<Eigen::VectorXd> scores(data.size());
  parallel_for(data.size(), [&](std::size_t i) { scores[i] = predict_log_probs(model, data.examples[i]); });
  std::vector<double> acc;
  for (Index k : ks) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) hits += topk_hit(scores[i], truth[i], k) ? 1 : 0;
    acc.push_back(static_cast<double>(hits) / static_cast<double>(data.size()));
  }
  return acc;
}

double mi_lower_bound(double nce_loss, Index contrastive_size) {
  return std::log(static_cast<double>(contrastive_size)) - nce_loss;
}

std::vector<double> nce_losses(const SslModel& model, const Dataset& data, Index batch_size, RngState rng) {
  if (model.mode == Mode::supervised_only) {
    throw Error(ErrorCode::incompatible, "supervised-only models have no InfoNCE term");
  }
  if (batch_size < 1) throw Error(ErrorCode::invalid_argument, "batch size must be positive");
  std::vector<double> out;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < data.size(); start += bs) {
    std::vector<const Example*> examples;
    for (std::size_t i = start; i < std::min(data.size(), start + bs); ++i) examples.push_back(&data.examples[i]);
    Tape tape;
    Graph g(tape, model.params);
    const auto batch = encode_batch(g, model.encoder, examples);
    const auto noise = draw_batch_noise(batch, model.cpc, model.classifier.num_classes, rng.fork(start));
    for (std::size_t e = 0; e < batch.sequences_of.size(); ++e) {
      Var y;
      if (model.mode == Mode::ccpc) {
        // Condition on the classifier's most likely class.
        Index best = 0;
        classify(g, model.classifier, batch.pooled[e]).value().vec().maxCoeff(&best);
        Tensor onehot(Shape{model.classifier.num_classes});
        onehot[best] = 1.0;
        y = g.constant(std::move(onehot));
      }
      for (int seq : batch.sequences_of[e]) {
        std::vector<std::pair<int, Index>> refs;
        for (Index i = 0; i < model.cpc.context_steps; ++i) refs.emplace_back(seq, i);
        const Var state = aggregate_state(g, model.aggregator, ad::gather_rows(batch.z, refs));
        const auto dist = gaussian_context(g, model.aggregator.head, state, y);
        const Var c = sample_context(dist, noise.context_eps[static_cast<std::size_t>(seq)]);
        LossBreakdown parts;
        sequence_nce(g, model, batch, seq, noise.tasks[static_cast<std::size_t>(seq)], c, parts);
        out.insert(out.end(), parts.nce_per_step.begin(), parts.nce_per_step.end());
      }
    }
  }
  return out;
}

nlohmann::json to_json(const EpochMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["epoch"] = m.epoch;
  j["j_total"] = m.j_total;
  j["nce_mean"] = opt(m.nce_mean);
  j["cls_loss"] = m.cls_loss;
  j["mi_bound"] = opt(m.mi_bound);
  j["top1"] = m.top1;
  j["topk"] = m.topk;
  j["tau"] = opt(m.tau);
  j["wall_ms"] = m.wall_ms;
  return j;
}

Trainer::Trainer(SslModel model, const Split& split, const Dataset* eval, TrainConfig config)
    : model_(std::move(model)),
      split_(split),
      eval_(eval),
      config_(std::move(config)),
      alpha_(config_.alpha ? *config_.alpha : default_alpha(split)),
      adam_(AdamState::zeros_like(model_.params)),
      rng_{config_.seed, 0},
      batcher_(split.labeled.size(), split.unlabeled.size(), config_.batch_size, rng_.fork("batches")) {
  config_.validate();
  if (config_.mode != Mode::supervised_only && split.unlabeled.empty()) {
    throw Error(ErrorCode::invalid_argument, "empty unlabelled split in " + std::string(to_string(config_.mode)) + " mode");
  }
  if (model_.mode != config_.mode) {
    throw Error(ErrorCode::incompatible, "model built for " + std::string(to_string(model_.mode)) +
                                             " but training in " + std::string(to_string(config_.mode)));
  }
}

void Trainer::restore(ParameterStore params, AdamState adam, RngState rng, Index epoch) {
  if (params.size() != model_.params.size()) {
    throw Error(ErrorCode::incompatible, "checkpoint parameter set does not match the model");
  }
  for (ParamId id : model_.params.ids()) {
    if (params.name(id) != model_.params.name(id) || params[id].shape() != model_.params[id].shape()) {
      throw Error(ErrorCode::incompatible, "checkpoint parameter " + params.name(id) +
                                               " does not match model parameter " + model_.params.name(id));
    }
  }
  if (rng != rng_) throw Error(ErrorCode::incompatible, "checkpoint was written under a different seed");
  model_.params = std::move(params);
  adam_ = std::move(adam);
  epoch_ = epoch;
}

EpochMetrics Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  const double tau = this->tau();
  const auto plan = batcher_.epoch(epoch_);
  const RngState steps = rng_.fork("steps").fork(static_cast<std::uint64_t>(epoch_));
  LossBreakdown sum;
  double cls_sum = 0.0;
  for (std::size_t s = 0; s < plan.size(); ++s) {
    std::vector<const Example*> examples;
    std::vector<int> labels;
    for (std::size_t i : plan[s].labeled) {
      const Example& ex = split_.labeled.examples[i];
      examples.push_back(&ex);
      labels.push_back(*ex.label);
    }
    if (model_.mode != Mode::supervised_only) {
      for (std::size_t i : plan[s].unlabeled) examples.push_back(&split_.unlabeled.examples[i]);
    }
    const LossBreakdown parts = train_step(model_, adam_, examples, labels, config_, alpha_, tau, steps.fork(s));
    sum += parts;
    cls_sum += parts.cls_loss;
  }
  const double n = static_cast<double>(plan.size());
  EpochMetrics m;
  m.epoch = epoch_ + 1;
  m.j_total = sum.total / n;
  m.cls_loss = cls_sum / n;
  if (model_.mode != Mode::supervised_only) {
    m.nce_mean = sum.nce_mean();
    m.mi_bound = mi_lower_bound(*m.nce_mean, model_.cpc.contrastive_size);
  }
  if (model_.mode == Mode::ccpc) m.tau = tau;

  const Index ks[] = {1, *std::max_element(config_.topk.begin(), config_.topk.end())};
  std::vector<double> acc;
  if (eval_) {
    acc = evaluate_topk(model_, *eval_, ks);
  } else if (!split_.unlabeled.empty()) {
    acc = evaluate_topk(model_, split_.unlabeled, ks, &split_.hidden_labels);
  } else {
    acc = evaluate_topk(model_, split_.labeled, ks);
  }
  m.top1 = acc.front();
  m.topk = acc.back();
  ++epoch_;
  if (config_.record_wall_ms) {
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  }
  return m;
}

}  // namespace cpcssl
