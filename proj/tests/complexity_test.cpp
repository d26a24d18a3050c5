#include <gtest/gtest.h>

#include "cpcssl/complexity.hpp"

using namespace cpcssl;

namespace {

ModelConfig synthetic_model() {
  ModelConfig c;
  c.image.patch = 6;
  c.image.layers = {{8, 3, 1}};
  c.cpc = CpcConfig{2, 4, 8, 32, 32};
  return c;
}

}  // namespace

TEST(Complexity, AnalyticOracles) {
  const ModelConfig c = synthetic_model();
  // conv: 8 filters x 9 taps x 4x4 outputs; projection 32 x 128.
  EXPECT_EQ(encoder_macs(c), 8u * 9u * 16u + 32u * 128u);
  // GRU: three gates of 32 x 64 per step; head: two 32 x 32 maps.
  EXPECT_EQ(context_macs(c.cpc, 32), 2u * 3u * 32u * 64u + 2u * 32u * 32u);
  EXPECT_EQ(context_macs(c.cpc, 32, 10), 2u * 3u * 32u * 64u + 2u * 32u * 42u);
  EXPECT_EQ(aggregator_macs(c.cpc, 32), context_macs(c.cpc, 32) + 4u * (32u * 32u + 8u * 32u));
  EXPECT_EQ(classifier_macs(32, 10), 320u);
}

TEST(Complexity, TrainingCostFormula) {
  EXPECT_EQ(train_cost(16, 8, 4, 2, 100, 10, 5), 16u * (32u + 2u) * 100u + 16u * 10u + 16u * 5u);
  // One candidate and no prediction steps: only the t context patches are encoded.
  EXPECT_EQ(train_cost(4, 1, 0, 3, 100, 10, 5), 4u * 3u * 100u + 4u * 10u + 4u * 5u);
  EXPECT_EQ(train_cost(1, 1, 0, 0, 100, 10, 5), 15u);
}

TEST(Complexity, MeasuredMatchesAnalytic) {
  for (const ModelConfig& c : {ModelConfig{}, synthetic_model()}) {
    const PatchGridSpec grid{c.image.patch * 2, c.image.patch, c.image.patch / 2};
    const ComplexityReport r = complexity_report(c, grid, 16, RngState{1, 0});
    EXPECT_EQ(r.measured_c_enc, r.c_enc);
    EXPECT_EQ(r.measured_c_ag, r.c_ag);
    EXPECT_EQ(r.measured_c_cls, r.c_cls);
    EXPECT_EQ(r.measured_train, r.predicted_train);
    EXPECT_EQ(r.measured_test, r.predicted_test);
    EXPECT_EQ(r.measured_supervised_test, r.predicted_supervised_test);
    EXPECT_LT(r.measured_train_shared, r.measured_train);
  }
}

TEST(Complexity, DefaultImageModelRatios) {
  const ComplexityReport r = complexity_report(ModelConfig{}, PatchGridSpec{}, 16, RngState{2, 0});
  EXPECT_LT(r.ag_to_enc(), 0.1);
  EXPECT_DOUBLE_EQ(r.overlap_factor, 2.25);
  EXPECT_EQ(r.patches, 9);
  EXPECT_EQ(r.sequences, 3);
  EXPECT_LT(r.test_ratio(), 1.3);
  EXPECT_GT(r.test_ratio(), 1.0);
}

TEST(Complexity, RelativeError) {
  EXPECT_DOUBLE_EQ(ComplexityReport::relative_error(105, 100), 0.05);
  EXPECT_DOUBLE_EQ(ComplexityReport::relative_error(95, 100), 0.05);
  EXPECT_DOUBLE_EQ(ComplexityReport::relative_error(100, 100), 0.0);
}

TEST(Complexity, JsonReport) {
  const auto j = to_json(complexity_report(synthetic_model(), PatchGridSpec{12, 6, 3}, 8, RngState{}));
  EXPECT_TRUE(j.contains("c_enc"));
  EXPECT_EQ(j["train"]["predicted"], j["train"]["measured"]);
  EXPECT_EQ(j["test"]["relative_error"], 0.0);
}
