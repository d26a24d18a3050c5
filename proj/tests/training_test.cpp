#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <map>
#include <numeric>
#include <set>

#include "cpcssl/suites.hpp"
#include "cpcssl/synthetic.hpp"
#include "cpcssl/training.hpp"

using namespace cpcssl;

namespace {

ParameterStore one_param(Tensor value) {
  ParameterStore s;
  s.add("w", std::move(value));
  return s;
}

ModelConfig small_model() {
  ModelConfig c;
  c.image.channels = 1;
  c.image.patch = 6;
  c.image.layers = {{4, 3, 1}};
  c.cpc = CpcConfig{2, 2, 4, 8, 8};
  c.num_classes = 10;
  return c;
}

Dataset synthetic(Index n, std::uint64_t seed, double sigma = 0.5) {
  SyntheticSpec spec;
  spec.noise_sigma = sigma;
  spec.sequence_length = 4;
  RngState rng{seed, 0};
  return make_synthetic_dataset(spec, n, rng);
}

}  // namespace

// Adam.

TEST(Adam, FirstStepOracle) {
  ParameterStore p = one_param(Tensor::vector({1.0, -2.0, 0.5}));
  AdamState st = AdamState::zeros_like(p);
  const std::vector<Tensor> g{Tensor::vector({0.3, -4.0, 0.0})};
  adam_step(p, g, st, 0.01);
  // Bias correction makes the first update lr * g / (|g| + eps).
  EXPECT_NEAR(p[ParamId{0}][0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p[ParamId{0}][1], -2.0 + 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(p[ParamId{0}][2], 0.5);
  EXPECT_EQ(st.step, 1u);
  EXPECT_NEAR(st.m[0][1], -0.4, 1e-15);
  EXPECT_NEAR(st.v[0][1], 0.016, 1e-15);
}

TEST(Adam, SecondStepOracle) {
  ParameterStore p = one_param(Tensor::vector({0.0}));
  AdamState st = AdamState::zeros_like(p);
  adam_step(p, {Tensor::vector({1.0})}, st, 0.1);
  adam_step(p, {Tensor::vector({3.0})}, st, 0.1);
  const double m = 0.9 * 0.1 + 0.1 * 3.0;
  const double v = 0.999 * 0.001 + 0.001 * 9.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p[ParamId{0}][0], -0.1 * (1.0 / (1.0 + 1e-8)) - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-12);
}

TEST(Adam, ZeroGradientIsAFixedPoint) {
  const Tensor start = Tensor::vector({1.5, -0.25});
  ParameterStore p = one_param(start);
  AdamState st = AdamState::zeros_like(p);
  for (int i = 0; i < 10; ++i) adam_step(p, {Tensor(Shape{2})}, st, 0.1);
  EXPECT_EQ(p[ParamId{0}], start);
  adam_step(p, {Tensor(Shape{2})}, st, 0.1, 0.5);
  EXPECT_NEAR(p[ParamId{0}][0], 1.5 * 0.95, 1e-15);
}

TEST(Adam, RejectsMismatchedGradients) {
  ParameterStore p = one_param(Tensor::vector({1.0, 2.0}));
  AdamState st = AdamState::zeros_like(p);
  EXPECT_THROW(adam_step(p, {Tensor::vector({1.0})}, st, 0.1), Error);
  EXPECT_THROW(adam_step(p, {}, st, 0.1), Error);
}

// Batching.

TEST(Batcher, EightPlusEight) {
  const MixedBatcher b(8, 8, 16, RngState{1, 0});
  EXPECT_EQ(b.steps_per_epoch(), 1);
  const auto plan = b.epoch(0);
  ASSERT_EQ(plan.size(), 1u);
  EXPECT_EQ(std::set<std::size_t>(plan[0].labeled.begin(), plan[0].labeled.end()).size(), 8u);
  EXPECT_EQ(std::set<std::size_t>(plan[0].unlabeled.begin(), plan[0].unlabeled.end()).size(), 8u);
}

TEST(Batcher, RecyclesTheSmallLabelledSet) {
  const MixedBatcher b(10, 990, 16, RngState{2, 0});
  EXPECT_EQ(b.steps_per_epoch(), 123);
  std::map<std::size_t, int> lab;
  std::set<std::size_t> unl;
  for (const auto& batch : b.epoch(0)) {
    ASSERT_EQ(batch.labeled.size(), 8u);
    ASSERT_EQ(batch.unlabeled.size(), 8u);
    for (auto i : batch.labeled) ++lab[i];
    for (auto i : batch.unlabeled) EXPECT_TRUE(unl.insert(i).second);
  }
  ASSERT_EQ(lab.size(), 10u);
  for (const auto& [i, n] : lab) {
    EXPECT_GE(n, 98);
    EXPECT_LE(n, 99);
  }
}

TEST(Batcher, LabelledOnlyFillsWholeBatches) {
  const MixedBatcher b(40, 0, 16, RngState{3, 0});
  EXPECT_EQ(b.steps_per_epoch(), 2);
  for (const auto& batch : b.epoch(0)) {
    EXPECT_EQ(batch.labeled.size(), 16u);
    EXPECT_TRUE(batch.unlabeled.empty());
  }
  EXPECT_THROW(MixedBatcher(0, 10, 16, RngState{}), Error);
}

TEST(Batcher, EpochsAreReproducibleAndDistinct) {
  const MixedBatcher a(50, 50, 10, RngState{4, 0});
  const MixedBatcher b(50, 50, 10, RngState{4, 0});
  EXPECT_EQ(a.epoch(3)[0].labeled, b.epoch(3)[0].labeled);
  EXPECT_NE(a.epoch(3)[0].labeled, a.epoch(4)[0].labeled);
}

// Top-k.

TEST(TopK, PerfectAndTies) {
  const Eigen::Vector4d s(0.1, 0.9, 0.3, 0.2);
  EXPECT_TRUE(topk_hit(s, 1, 1));
  EXPECT_FALSE(topk_hit(s, 2, 1));
  EXPECT_TRUE(topk_hit(s, 2, 2));
  EXPECT_TRUE(topk_hit(s, 0, 4));
  const Eigen::Vector3d tie(0.5, 0.5, 0.5);
  EXPECT_TRUE(topk_hit(tie, 0, 1));
  EXPECT_FALSE(topk_hit(tie, 1, 1));
  EXPECT_TRUE(topk_hit(tie, 1, 2));
  EXPECT_FALSE(topk_hit(tie, 2, 2));
}

TEST(TopK, RandomScoresHitAtChance) {
  RngState rng{5, 0};
  const int n = 20000;
  int hit1 = 0, hit5 = 0;
  for (int i = 0; i < n; ++i) {
    const Tensor s = rng.normal_tensor({10});
    const Index y = rng.uniform_index(10);
    const bool h1 = topk_hit(s.vec(), y, 1), h5 = topk_hit(s.vec(), y, 5);
    EXPECT_TRUE(!h1 || h5);
    hit1 += h1;
    hit5 += h5;
  }
  EXPECT_NEAR(hit1 / double(n), 0.1, 5.0 * std::sqrt(0.09 / n));
  EXPECT_NEAR(hit5 / double(n), 0.5, 5.0 * std::sqrt(0.25 / n));
}

TEST(TopK, AccuracyIsMonotoneInK) {
  RngState rng{6, 0};
  const SslModel m = build_model(small_model(), Mode::supervised_only, rng);
  const Dataset ds = synthetic(60, 7);
  const std::vector<Index> ks{1, 2, 5, 10};
  const auto acc = evaluate_topk(m, ds, ks);
  for (std::size_t i = 1; i < acc.size(); ++i) EXPECT_GE(acc[i], acc[i - 1]);
  EXPECT_DOUBLE_EQ(acc.back(), 1.0);
  Dataset unl = ds;
  for (auto& ex : unl.examples) ex.label.reset();
  EXPECT_THROW(evaluate_topk(m, unl, ks), Error);
}

TEST(TopK, ThreadCountDoesNotChangeResults) {
  RngState rng{6, 0};
  const SslModel m = build_model(small_model(), Mode::cpc, rng);
  const Dataset ds = synthetic(40, 8);
  const std::vector<Index> ks{1, 3};
  ::unsetenv("CPCSSL_THREADS");
  EXPECT_EQ(worker_threads(), 1u);
  const auto one = evaluate_topk(m, ds, ks);
  ::setenv("CPCSSL_THREADS", "4", 1);
  EXPECT_EQ(worker_threads(), 4u);
  const auto four = evaluate_topk(m, ds, ks);
  ::unsetenv("CPCSSL_THREADS");
  EXPECT_EQ(one, four);
}

// Training.

TEST(Training, TwoHundredStepsReduceNce) {
  RngState init{0, 0};
  SslModel m = build_model(small_model(), Mode::cpc, init);
  AdamState adam = AdamState::zeros_like(m.params);
  const Dataset ds = synthetic(800, 9, 0.25);
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  const RngState steps{10, 0};
  std::vector<double> nce;
  for (int s = 0; s < 200; ++s) {
    std::vector<const Example*> batch;
    for (int i = 0; i < 16; ++i) batch.push_back(&ds.examples[static_cast<std::size_t>((s * 16 + i) % 800)]);
    nce.push_back(train_step(m, adam, batch, {}, cfg, 0.0, 1.0, steps.fork(static_cast<std::uint64_t>(s))).nce_mean());
  }
  const double first = std::accumulate(nce.begin(), nce.begin() + 20, 0.0) / 20;
  const double last = std::accumulate(nce.end() - 20, nce.end(), 0.0) / 20;
  EXPECT_NEAR(first, std::log(4.0), 0.1);
  EXPECT_LT(last, first - 0.2);
}

TEST(Training, SupervisedWithEverythingLabelledHasZeroAlpha) {
  const Dataset ds = synthetic(64, 11);
  std::vector<std::int64_t> all;
  for (const auto& ex : ds.examples) all.push_back(ex.id);
  const Split split = split_from_ids(ds, all);
  EXPECT_TRUE(split.unlabeled.empty());
  EXPECT_EQ(default_alpha(split), 0.0);
  TrainConfig cfg;
  cfg.mode = Mode::supervised_only;
  cfg.epochs = 2;
  RngState init{0, 0};
  Trainer t(build_model(small_model(), Mode::supervised_only, init), split, nullptr, cfg);
  EXPECT_EQ(t.alpha(), 0.0);
  const EpochMetrics m = t.run_epoch();
  EXPECT_EQ(m.epoch, 1);
  EXPECT_FALSE(m.nce_mean.has_value());
  EXPECT_FALSE(m.tau.has_value());
  EXPECT_GT(m.cls_loss, 0.0);
}

TEST(Training, SemiSupervisedModesNeedUnlabelledData) {
  const Dataset ds = synthetic(32, 12);
  std::vector<std::int64_t> all;
  for (const auto& ex : ds.examples) all.push_back(ex.id);
  const Split split = split_from_ids(ds, all);
  TrainConfig cfg;
  RngState init{0, 0};
  EXPECT_THROW(Trainer(build_model(small_model(), Mode::cpc, init), split, nullptr, cfg), Error);
}

TEST(Training, ModelAndModeMustAgree) {
  const Dataset ds = synthetic(32, 12);
  RngState r{0, 0};
  const Split split = split_labeled(ds, 0.25, r);
  TrainConfig cfg;
  cfg.mode = Mode::ccpc;
  RngState init{0, 0};
  try {
    Trainer(build_model(small_model(), Mode::cpc, init), split, nullptr, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::incompatible);
  }
}

TEST(Training, EpochsAreDeterministic) {
  const Dataset ds = synthetic(64, 13);
  RngState r{0, 0};
  const Split split = split_labeled(ds, 0.25, r);
  TrainConfig cfg;
  cfg.mode = Mode::ccpc;
  auto run = [&] {
    RngState init{0, 0};
    Trainer t(build_model(small_model(), Mode::ccpc, init), split, nullptr, cfg);
    t.run_epoch();
    return std::pair{to_json(t.run_epoch()).dump(), t.model().params};
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Metrics, JsonFields) {
  EpochMetrics m;
  m.epoch = 3;
  m.nce_mean = 1.2;
  m.mi_bound = std::log(8.0) - 1.2;
  m.tau = 0.5;
  const auto j = to_json(m);
  for (const char* key : {"epoch", "j_total", "nce_mean", "cls_loss", "mi_bound", "top1", "topk", "tau", "wall_ms"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j.size(), 9u);
  EXPECT_EQ(j["epoch"], 3);
  EpochMetrics sup;
  EXPECT_TRUE(to_json(sup)["nce_mean"].is_null());
}

TEST(Config, TrainValidation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 15;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.alpha = -1.0;
  EXPECT_THROW(c.validate(), Error);
}
