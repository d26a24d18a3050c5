#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cpcssl/config.hpp"
#include "cpcssl/experiment.hpp"

using namespace cpcssl;
namespace fs = std::filesystem;

namespace {

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path dir = fs::temp_directory_path() / "cpcssl_config";
  fs::create_directories(dir);
  std::ofstream(dir / name) << text;
  return dir / name;
}

std::string config_error(const std::string& text) {
  try {
    build_config(read_config_text(text, "run.ini", {}));
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::config) << e.what();
    return e.what();
  }
  ADD_FAILURE() << "accepted:\n" << text;
  return {};
}

}  // namespace

TEST(Config, Defaults) {
  const ExperimentConfig c = build_config({});
  EXPECT_EQ(c.data.format, DataFormat::synthetic);
  EXPECT_EQ(c.train.mode, Mode::cpc);
  EXPECT_EQ(c.train.batch_size, 16);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 1e-3);
  EXPECT_EQ(c.train.epochs, 15);
  EXPECT_FALSE(c.train.alpha.has_value());
  EXPECT_DOUBLE_EQ(c.data.labeled_fraction, 0.01);
  EXPECT_EQ(c.model.num_classes, c.data.synthetic.num_classes);
  EXPECT_EQ(c.model.image.patch, c.data.synthetic.patch_height);
  EXPECT_DOUBLE_EQ(c.train.gumbel.tau, 1.0);
}

TEST(Config, SectionsAndComments) {
  const auto a = read_config_text("# top\n[train]\nepochs = 3 \n; note\n\n[ccpc]\ntau=0.5\n", "x.ini", {});
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].origin, "x.ini:3");
  const ExperimentConfig c = build_config(a);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_DOUBLE_EQ(c.train.gumbel.tau, 0.5);
}

TEST(Config, RejectsOddBatchSize) {
  const std::string msg = config_error("[train]\nbatch_size = 15\n");
  EXPECT_NE(msg.find("batch"), std::string::npos);
}

TEST(Config, UnknownKeyNamesTheLine) {
  const std::string msg = config_error("[train]\nepochs = 2\n\nlearning_rat = 0.1\n");
  EXPECT_NE(msg.find("run.ini:4"), std::string::npos) << msg;
  EXPECT_NE(msg.find("learning_rat"), std::string::npos) << msg;
}

TEST(Config, TypeErrorsNameTheLine) {
  const std::string msg = config_error("[model]\nlatent_dim = many\n");
  EXPECT_NE(msg.find("run.ini:2"), std::string::npos) << msg;
  config_error("[train]\nepochs = 2.5\n");
  config_error("[train]\nmode = semi\n");
  config_error("[data]\nlabeled_fraction = 0\n");
  config_error("[model]\nconv_layers = 8:3\n");
}

TEST(Config, StructuralErrors) {
  config_error("[nope]\nx = 1\n");
  config_error("epochs = 1\n");
  config_error("[train]\nepochs = 1\nepochs = 2\n");
  config_error("[train]\nepochs\n");
  config_error("[train\n");
  config_error("[data]\nlabeled_fraction = 1\n");
}

TEST(Config, OverridesApplyLast) {
  const fs::path p = write_file("over.ini", "[train]\nepochs = 4\nseed = 1\n");
  const ExperimentConfig c = parse_config(p, {"train.epochs=9", "model.conv_layers=4:3:1,6:3:2"});
  EXPECT_EQ(c.train.epochs, 9);
  EXPECT_EQ(c.train.seed, 1u);
  ASSERT_EQ(c.model.image.layers.size(), 2u);
  EXPECT_EQ(c.model.image.layers[1], (ConvLayerSpec{6, 3, 2}));
  EXPECT_THROW(parse_override("epochs=3"), Error);
  EXPECT_THROW(parse_override("train.bogus=3"), Error);
}

TEST(Config, AlphaAutoAndExplicit) {
  EXPECT_FALSE(build_config(read_config_text("[train]\nalpha = auto\n", "a", {})).train.alpha.has_value());
  EXPECT_DOUBLE_EQ(*build_config(read_config_text("[train]\nalpha = 2.5\n", "a", {})).train.alpha, 2.5);
}

TEST(Config, EchoPinsAlphaAndRoundTrips) {
  ExperimentConfig c = parse_config({}, {"data.train_count=200", "data.test_count=0", "model.prediction_steps=4", "train.seed=3"});
  const ExperimentData data = load_experiment_data(c);
  const ExperimentConfig r = resolved(c, data.split);
  ASSERT_TRUE(r.train.alpha.has_value());
  EXPECT_DOUBLE_EQ(*r.train.alpha, 8.0 * 198.0 / 2.0);
  const std::string echo = effective_config(r);
  EXPECT_NE(echo.find("alpha = 792"), std::string::npos) << echo;
  const ExperimentConfig back = build_config(read_config_text(echo, "echo.ini", {}));
  EXPECT_EQ(effective_config(back), echo);
}

TEST(Config, EchoListsEveryKey) {
  const std::string echo = effective_config(build_config({}));
  for (const std::string& key : config_keys()) {
    const auto dot = key.find('.');
    EXPECT_NE(echo.find("\n" + key.substr(dot + 1) + " = "), std::string::npos) << key;
  }
}

TEST(Config, SyntheticSpecFileAndRelativePaths) {
  write_file("spec.json", R"({"num_classes": 4, "noise_sigma": 0.5, "sequence_length": 8})");
  const fs::path p = write_file("withspec.ini", "[data]\nsynthetic_spec = spec.json\nsynthetic_noise_sigma = 0.75\n[train]\ntopk = 1,3\n");
  const ExperimentConfig c = parse_config(p);
  EXPECT_EQ(c.data.synthetic.num_classes, 4);
  EXPECT_EQ(c.model.num_classes, 4);
  EXPECT_EQ(c.data.synthetic.sequence_length, 8);
  EXPECT_DOUBLE_EQ(c.data.synthetic.noise_sigma, 0.75);
  EXPECT_TRUE(fs::path(c.data.synthetic_spec).is_absolute());
}

TEST(Config, TextDerivesLatentWidth) {
  const ExperimentConfig c =
      build_config(read_config_text("[data]\nformat = text\ntrain_data = docs.txt\n[model]\nwidths = 2,3\nfilters = 5\n", "t", {}));
  EXPECT_EQ(c.model.encoder, EncoderKind::text);
  EXPECT_EQ(c.model.cpc.latent_dim, 10);
}

TEST(Config, DataFormatNames) {
  for (DataFormat f : {DataFormat::synthetic, DataFormat::idx_images, DataFormat::idx_sequences, DataFormat::text}) {
    EXPECT_EQ(parse_data_format(to_string(f)), f);
  }
  EXPECT_THROW(parse_data_format("csv"), Error);
}

TEST(Config, ShippedSyntheticConfig) {
  const ExperimentConfig c = parse_config(fs::path(CPCSSL_SOURCE_DIR) / "configs" / "synthetic.ini");
  EXPECT_EQ(c.data.train_count, 5000);
  EXPECT_EQ(c.model.cpc.prediction_steps, 4);
  EXPECT_EQ(c.model.cpc.contrastive_size, 8);
  EXPECT_EQ(c.model.image.layers, (std::vector<ConvLayerSpec>{{8, 3, 1}}));
  EXPECT_NO_THROW(c.model.cpc.check_sequence_length(c.data.synthetic.sequence_length));
}
