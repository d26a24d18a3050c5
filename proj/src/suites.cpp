#include "cpcssl/suites.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cpcssl/ops.hpp"

namespace cpcssl {

using namespace ad;

namespace {

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

// Gradient checks use enlarged scales so no term is flat; default_scales
// keeps the initialization training starts from.
ModelConfig tiny_model(Index num_classes, bool default_scales = false) {
  ModelConfig c;
  c.image.channels = 1;
  c.image.patch = 4;
  c.image.layers = {{2, 3, 1}};
  c.cpc.context_steps = 2;
  c.cpc.prediction_steps = 2;
  c.cpc.contrastive_size = 3;
  c.cpc.latent_dim = 3;
  c.cpc.context_dim = 3;
  c.num_classes = static_cast<int>(num_classes);
  if (!default_scales) {
    c.log_var_bias = -1.0;
    c.predictor_scale = 3.0;
  }
  return c;
}

Example random_example(std::int64_t id, Index sequences, Index length, RngState& rng) {
  Example ex;
  ex.id = id;
  for (Index s = 0; s < sequences; ++s) {
    SequenceSample seq;
    for (Index i = 0; i < length; ++i) seq.patches.push_back(rng.normal_tensor({1, 4, 4}));
    ex.sequences.push_back(std::move(seq));
  }
  return ex;
}

struct TinyProblem {
  SslModel model;
  std::vector<Example> examples;
  std::vector<const Example*> ptrs;
  BatchNoise noise;
};

TinyProblem tiny_problem(Mode mode, Index num_classes, std::uint64_t seed, bool default_scales = false) {
  TinyProblem p;
  RngState root{seed, 0};
  RngState init = root.fork("model");
  p.model = build_model(tiny_model(num_classes, default_scales), mode, init);
  RngState data = root.fork("data");
  p.examples.push_back(random_example(0, 2, 4, data));
  for (std::int64_t i = 1; i < 4; ++i) p.examples.push_back(random_example(i, 1, 4, data));
  for (const auto& ex : p.examples) p.ptrs.push_back(&ex);
  if (mode != Mode::supervised_only) {
    Tape tape;
    Graph g(tape, p.model.params);
    const auto batch = encode_batch(g, p.model.encoder, p.ptrs);
    p.noise = draw_batch_noise(batch, p.model.cpc, num_classes, root.fork("noise"));
  }
  return p;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double standard_error(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double n = static_cast<double>(v.size());
  return std::sqrt(ss / (n - 1.0) / n);
}

Eigen::VectorXd vector_of(const Var& v) { return v.value().vec(); }
double scalar_of(const Var& v) { return v.value()[0]; }

}  // namespace

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

std::vector<GradientCase> gradient_cases(std::uint64_t seed) {
  std::vector<GradientCase> out;
  const std::vector<int> labels{1, 2};
  const double alpha = 0.7;
  const double tau = 0.5;

  auto check = [&](const std::string& name, const TinyProblem& p, auto build) {
    out.push_back({name, grad_check(
                             [&](Graph& g) {
                               const auto batch = encode_batch(g, p.model.encoder, p.ptrs);
                               return build(g, batch);
                             },
                             p.model.params)});
  };

  const TinyProblem cpc = tiny_problem(Mode::cpc, 3, seed);
  check("cpc labelled", cpc, [&](Graph& g, const EncodedBatch& b) {
    return labeled_loss_cpc(g, cpc.model, b, 0, 1, cpc.noise).loss;
  });
  check("cpc unlabelled", cpc, [&](Graph& g, const EncodedBatch& b) {
    return unlabeled_loss_cpc(g, cpc.model, b, 2, cpc.noise).loss;
  });
  check("cpc total", cpc, [&](Graph& g, const EncodedBatch& b) {
    return total_objective_cpc(g, cpc.model, b, labels, alpha, cpc.noise).loss;
  });

  const TinyProblem ccpc = tiny_problem(Mode::ccpc, 3, seed);
  check("ccpc labelled bound", ccpc, [&](Graph& g, const EncodedBatch& b) {
    return ccpc_labeled_bound(g, ccpc.model, b, 0, 1, ccpc.noise).loss;
  });
  check("ccpc unlabelled bound", ccpc, [&](Graph& g, const EncodedBatch& b) {
    return ccpc_unlabeled_bound(g, ccpc.model, b, 2, tau, ccpc.noise).loss;
  });
  check("ccpc total", ccpc, [&](Graph& g, const EncodedBatch& b) {
    return total_objective_ccpc(g, ccpc.model, b, labels, alpha, tau, ccpc.noise).loss;
  });

  const TinyProblem sup = tiny_problem(Mode::supervised_only, 3, seed);
  check("supervised", sup, [&](Graph& g, const EncodedBatch& b) {
    return supervised_objective(g, sup.model, b, labels, alpha).loss;
  });
  return out;
}

SuiteReport verify_gradients(double tolerance, std::uint64_t seed) {
  SuiteReport r{"gradients", {}};
  for (const auto& c : gradient_cases(seed)) {
    r.checks.push_back({c.name, c.result.max_rel_error < tolerance,
                        "max rel err " + fmt(c.result.max_rel_error, 3) + " over " +
                            std::to_string(c.result.coordinates) + " coords (worst " + c.result.worst_param +
                            "[" + std::to_string(c.result.worst_index) + "])"});
  }
  return r;
}

std::vector<double> chance_nce_ratios(Index seeds, Index examples) {
  std::vector<double> out;
  ModelConfig config = mi_suite_model();
  for (Index s = 0; s < seeds; ++s) {
    RngState root{static_cast<std::uint64_t>(s), 0};
    RngState init = root.fork("model");
    RngState data = root.fork("data");
    const SslModel model = build_model(config, Mode::cpc, init);
    const Dataset ds = make_synthetic_dataset(SyntheticSpec{}, examples, data);
    const auto losses = nce_losses(model, ds, 16, root.fork("noise"));
    out.push_back(mean_of(losses) / std::log(static_cast<double>(config.cpc.contrastive_size)));
  }
  return out;
}

SuiteReport verify_chance(Index seeds, double low, double high) {
  SuiteReport r{"chance", {}};
  const auto ratios = chance_nce_ratios(seeds);
  for (std::size_t s = 0; s < ratios.size(); ++s) {
    r.checks.push_back({"seed " + std::to_string(s), ratios[s] >= low && ratios[s] <= high,
                        "mean NCE / ln N = " + fmt(ratios[s], 5)});
  }
  return r;
}

SyntheticSpec mi_suite_spec(double sigma, double latent_scale) {
  SyntheticSpec spec;
  spec.class_scale = 0.0;
  spec.latent_scale = latent_scale;
  spec.noise_sigma = sigma;
  return spec;
}

ModelConfig mi_suite_model() {
  ModelConfig c;
  c.image.channels = 1;
  c.image.patch = 6;
  c.image.layers = {{8, 3, 1}};
  c.cpc.context_steps = 2;
  c.cpc.prediction_steps = 4;
  c.cpc.contrastive_size = 8;
  c.cpc.latent_dim = 32;
  c.cpc.context_dim = 32;
  return c;
}

MiPoint mi_bound_point(double sigma, const MiSuiteOptions& o) {
  const SyntheticSpec spec = mi_suite_spec(sigma, o.latent_scale);
  RngState root = RngState{o.seed, 0}.fork("mi");
  RngState train_rng = root.fork("train"), eval_rng = root.fork("eval"), init = root.fork("model");
  const Dataset train = make_synthetic_dataset(spec, o.train_count, train_rng);
  const Dataset eval = make_synthetic_dataset(spec, o.eval_count, eval_rng);
  SslModel model = build_model(mi_suite_model(), Mode::cpc, init);
  AdamState adam = AdamState::zeros_like(model.params);
  TrainConfig tc;
  tc.learning_rate = o.learning_rate;

  const auto n = train.size();
  const RngState order = root.fork("order"), steps = root.fork("steps");
  for (Index e = 0; e < o.epochs; ++e) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    RngState shuffle = order.fork(static_cast<std::uint64_t>(e));
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[static_cast<std::size_t>(shuffle.uniform_index(static_cast<Index>(i)))]);
    const auto bs = static_cast<std::size_t>(o.batch_size);
    for (std::size_t start = 0; start + bs <= n; start += bs) {
      std::vector<const Example*> batch;
      for (std::size_t i = start; i < start + bs; ++i) batch.push_back(&train.examples[idx[i]]);
      train_step(model, adam, batch, {}, tc, 0.0, 1.0, steps.fork(static_cast<std::uint64_t>(e)).fork(start));
    }
  }

  const auto losses = nce_losses(model, eval, o.batch_size, root.fork("eval_noise"));
  MiPoint p;
  p.sigma = sigma;
  p.truth = synthetic_mutual_information(spec, model.cpc.context_steps, 1);
  p.estimate = mi_lower_bound(mean_of(losses), model.cpc.contrastive_size);
  p.standard_error = standard_error(losses);
  p.terms = static_cast<Index>(losses.size());
  return p;
}

SuiteReport verify_bounds(const MiSuiteOptions& options, double se_multiple, double positive_above) {
  SuiteReport r{"bounds", {}};
  for (double sigma : options.sigmas) {
    const MiPoint p = mi_bound_point(sigma, options);
    const std::string what = "estimate " + fmt(p.estimate, 4) + " (SE " + fmt(p.standard_error, 3) + "), true MI " +
                             fmt(p.truth, 4);
    r.checks.push_back({"sigma " + fmt(sigma) + " below truth", p.estimate <= p.truth + se_multiple * p.standard_error,
                        what});
    if (p.truth > positive_above) {
      r.checks.push_back({"sigma " + fmt(sigma) + " positive", p.estimate > 0.0, what});
    }
  }
  return r;
}

double GumbelFrequencies::max_z() const {
  double worst = 0.0;
  const double n = static_cast<double>(draws);
  for (Index i = 0; i < target.size(); ++i) {
    const double p = target[i];
    worst = std::max(worst, std::abs(frequency[i] - p) / std::sqrt(p * (1.0 - p) / n));
  }
  return worst;
}

Eigen::VectorXd gumbel_test_target(Index classes) {
  if (classes == 3) return Eigen::Vector3d(0.6, 0.3, 0.1);
  if (classes == 10) {
    Eigen::VectorXd p(10);
    p << 0.25, 0.15, 0.12, 0.10, 0.09, 0.08, 0.07, 0.06, 0.05, 0.03;
    return p;
  }
  throw Error(ErrorCode::invalid_argument, "test targets exist for 3 and 10 classes");
}

namespace {

// One relaxed draw through the autodiff op.
Eigen::VectorXd relaxed_draw(const Eigen::VectorXd& log_p, double tau, RngState& rng) {
  Tape tape;
  const Var lp = tape.constant(Tensor(Shape{log_p.size()}, log_p));
  return vector_of(gumbel_softmax_sample(lp, tau, rng));
}

}  // namespace

GumbelFrequencies gumbel_argmax_frequencies(const Eigen::VectorXd& probs, double tau, Index draws, RngState rng) {
  GumbelFrequencies out;
  out.tau = tau;
  out.draws = draws;
  out.target = probs;
  out.frequency = Eigen::VectorXd::Zero(probs.size());
  const Eigen::VectorXd log_p = probs.array().log();
  for (Index i = 0; i < draws; ++i) {
    Index best = 0;
    relaxed_draw(log_p, tau, rng).maxCoeff(&best);
    out.frequency[best] += 1.0;
  }
  out.frequency /= static_cast<double>(draws);
  return out;
}

double gumbel_peak_fraction(const Eigen::VectorXd& probs, double tau, Index draws, double threshold, RngState rng) {
  const Eigen::VectorXd log_p = probs.array().log();
  Index hits = 0;
  for (Index i = 0; i < draws; ++i) {
    if (relaxed_draw(log_p, tau, rng).maxCoeff() > threshold) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(draws);
}

SuiteReport verify_gumbel(Index draws, double z_limit, double peak_tau, double peak_threshold, double peak_fraction) {
  SuiteReport r{"gumbel", {}};
  const RngState root = RngState{0, 0}.fork("gumbel");
  for (Index M : {3, 10}) {
    for (double tau : {1.0, 0.1}) {
      const auto f = gumbel_argmax_frequencies(gumbel_test_target(M), tau, draws,
                                               root.fork(static_cast<std::uint64_t>(M)).fork(tau == 1.0 ? "1" : "0.1"));
      r.checks.push_back({"argmax M=" + std::to_string(M) + " tau=" + fmt(tau), f.max_z() <= z_limit,
                          "max |f - p| = " + fmt(f.max_z(), 3) + " sd"});
    }
    const double frac = gumbel_peak_fraction(gumbel_test_target(M), peak_tau, draws, peak_threshold,
                                             root.fork(static_cast<std::uint64_t>(M)).fork("peak"));
    r.checks.push_back({"peak M=" + std::to_string(M) + " tau=" + fmt(peak_tau), frac >= peak_fraction,
                        "max coordinate > " + fmt(peak_threshold) + " in " + fmt(100.0 * frac, 4) + "% of draws"});
  }
  return r;
}

EnumerationResult ccpc_enumeration(Index draws, double tau, std::uint64_t seed) {
  const Index M = 3;
  const TinyProblem p = tiny_problem(Mode::ccpc, M, seed, true);
  const int example = 2;
  EnumerationResult out;
  out.draws = draws;
  out.tau = tau;

  auto bound_at = [&](const Eigen::VectorXd& y) {
    Tape tape;
    Graph g(tape, p.model.params);
    const auto batch = encode_batch(g, p.model.encoder, p.ptrs);
    return scalar_of(ccpc_unlabeled_bound_at(g, p.model, batch, example, g.constant(Tensor(Shape{M}, y)), p.noise).loss);
  };
  Eigen::VectorXd log_q;
  {
    Tape tape;
    Graph g(tape, p.model.params);
    const auto batch = encode_batch(g, p.model.encoder, p.ptrs);
    log_q = vector_of(classify(g, p.model.classifier, batch.pooled[example]));
  }
  out.q = log_q.array().exp();
  out.bound_at.resize(M);
  for (Index y = 0; y < M; ++y) out.bound_at[y] = bound_at(Eigen::VectorXd::Unit(M, y));
  out.exact = out.q.dot(out.bound_at);

  RngState rng = RngState{seed, 0}.fork("enumeration");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(draws));
  for (Index i = 0; i < draws; ++i) values.push_back(bound_at(relaxed_draw(log_q, tau, rng)));
  out.relaxed_mean = mean_of(values);
  out.standard_error = standard_error(values);
  return out;
}

SuiteReport verify_enumeration(Index draws, double tau, double se_multiple) {
  const auto e = ccpc_enumeration(draws, tau);
  const double gap = std::abs(e.relaxed_mean - e.exact);
  return {"enumeration",
          {{"relaxed vs exact, tau=" + fmt(tau), gap <= se_multiple * e.standard_error,
            "relaxed " + fmt(e.relaxed_mean, 8) + " exact " + fmt(e.exact, 8) + " gap " + fmt(gap, 3) + " = " +
                fmt(gap / e.standard_error, 3) + " SE"}}};
}

std::vector<EntropyOracle> entropy_oracles(Index samples, std::uint64_t seed) {
  std::vector<EntropyOracle> out;
  const RngState root = RngState{seed, 0}.fork("entropy");
  {
    Eigen::VectorXd mu(4), log_var(4);
    mu << 0.5, -1.0, 2.0, 0.0;
    log_var << -1.0, 0.0, 0.5, 2.0;
    Tape tape;
    const ContextDistribution dist{tape.constant(Tensor(Shape{4}, mu)), tape.constant(Tensor(Shape{4}, log_var))};
    EntropyOracle o{"gaussian", scalar_of(gaussian_entropy(dist)), 0.0, 0.0, samples};
    RngState rng = root.fork("gaussian");
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(samples));
    for (Index i = 0; i < samples; ++i) {
      Tape t;
      const ContextDistribution d{t.constant(Tensor(Shape{4}, mu)), t.constant(Tensor(Shape{4}, log_var))};
      const Var x = sample_context(d, rng);
      v.push_back(-scalar_of(gaussian_log_density(x, d)));
    }
    o.monte_carlo = mean_of(v);
    o.standard_error = standard_error(v);
    out.push_back(o);
  }
  for (Index M : {3, 10}) {
    const Eigen::VectorXd p = gumbel_test_target(M);
    Tape tape;
    const Var lp = tape.constant(Tensor(Shape{M}, Eigen::VectorXd(p.array().log())));
    EntropyOracle o{"categorical M=" + std::to_string(M), scalar_of(categorical_entropy(lp)), 0.0, 0.0, samples};
    RngState rng = root.fork(static_cast<std::uint64_t>(M));
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(samples));
    for (Index i = 0; i < samples; ++i) {
      double u = rng.uniform();
      Index y = 0;
      while (y + 1 < M && u > p[y]) u -= p[y++];
      v.push_back(-std::log(p[y]));
    }
    o.monte_carlo = mean_of(v);
    o.standard_error = standard_error(v);
    out.push_back(o);
  }
  return out;
}

SuiteReport verify_entropy(Index samples, double se_multiple) {
  SuiteReport r{"entropy", {}};
  for (const auto& o : entropy_oracles(samples)) {
    const double gap = std::abs(o.analytic - o.monte_carlo);
    r.checks.push_back({o.name, gap <= se_multiple * o.standard_error,
                        "analytic " + fmt(o.analytic, 7) + " MC " + fmt(o.monte_carlo, 7) + " (" +
                            fmt(gap / o.standard_error, 3) + " SE)"});
  }
  return r;
}

SuiteReport verify_complexity(const ModelConfig& config, const PatchGridSpec& grid, Index batch_size,
                              double tolerance, double max_ratio) {
  const ComplexityReport c = complexity_report(config, grid, batch_size, RngState{0, 0});
  auto err = [](double e) { return fmt(100.0 * e, 3) + "%"; };
  return {"complexity",
          {{"train formula", c.train_error() <= tolerance,
            "measured " + std::to_string(c.measured_train) + " vs " + std::to_string(c.predicted_train) + " (" +
                err(c.train_error()) + ")"},
           {"ssl test formula", c.test_error() <= tolerance,
            "measured " + std::to_string(c.measured_test) + " vs " + std::to_string(c.predicted_test) + " (" +
                err(c.test_error()) + ")"},
           {"supervised test formula", c.supervised_test_error() <= tolerance,
            "measured " + std::to_string(c.measured_supervised_test) + " vs " +
                std::to_string(c.predicted_supervised_test) + " (" + err(c.supervised_test_error()) + ")"},
           {"ssl / supervised test cost", c.test_ratio() <= max_ratio,
            fmt(c.test_ratio(), 4) + "; overlapping crops cost " + fmt(c.overlap_factor, 3) +
                "x one pass over the image"},
           {"C_ag / C_enc", c.ag_to_enc() < 0.1, fmt(c.ag_to_enc(), 4)}}};
}

std::vector<std::string> suite_names() {
  return {"gradients", "chance", "bounds", "gumbel", "enumeration", "entropy", "complexity"};
}

std::vector<SuiteReport> run_suites(const std::string& name) {
  if (name == "all") {
    std::vector<SuiteReport> out;
    for (const auto& n : suite_names()) out.push_back(run_suites(n).front());
    return out;
  }
  if (name == "gradients") return {verify_gradients()};
  if (name == "chance") return {verify_chance()};
  if (name == "bounds") return {verify_bounds()};
  if (name == "gumbel") return {verify_gumbel()};
  if (name == "enumeration") return {verify_enumeration()};
  if (name == "entropy") return {verify_entropy()};
  if (name == "complexity") return {verify_complexity()};
  throw Error(ErrorCode::invalid_argument, "unknown suite '" + name + "'");
}

}  // namespace cpcssl
