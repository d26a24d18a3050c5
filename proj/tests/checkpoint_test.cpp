#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cpcssl/checkpoint.hpp"
#include "cpcssl/experiment.hpp"

using namespace cpcssl;
namespace fs = std::filesystem;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.mode = Mode::ccpc;
  c.params.add("enc/w", Tensor::matrix({{1.5, -2.0}, {0.25, 1e-300}}));
  c.params.add("cls/b", Tensor::vector({3.0, -0.0, 7.0}));
  c.adam = AdamState::zeros_like(c.params);
  c.adam.m[0][1] = 0.125;
  c.adam.v[1][2] = 4.5;
  c.adam.step = 0x1'0000'0003ULL;
  c.rng = RngState{0xDEADBEEFCAFEF00DULL, 17};
  c.epoch = 4;
  return c;
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return std::uint32_t(b[at]) | std::uint32_t(b[at + 1]) << 8 | std::uint32_t(b[at + 2]) << 16 |
         std::uint32_t(b[at + 3]) << 24;
}

ErrorCode decode_error(std::span<const std::uint8_t> bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode accepted damaged bytes";
  return ErrorCode::usage;
}

}  // namespace

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  ASSERT_GT(bytes.size(), 17u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CPCS");
  EXPECT_EQ(read_u32(bytes, 4), kCheckpointVersion);
  EXPECT_EQ(bytes[8], 1);  // ccpc
  // 2 params, 2 x 2 moments, adam/step, rng, epoch.
  EXPECT_EQ(read_u32(bytes, 9), 9u);
  const std::uint32_t name_len = read_u32(bytes, 13);
  EXPECT_EQ(std::string(bytes.begin() + 17, bytes.begin() + 17 + name_len), "param/enc/w");
}

TEST(Checkpoint, RoundTripIsExact) {
  const Checkpoint c = sample_checkpoint();
  const auto bytes = encode_checkpoint(c);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(back, c);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_TRUE(std::signbit(back.params[ParamId{1}][1]));
}

TEST(Checkpoint, EveryCorruptByteIsDetected) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= 0x10;
    // A damaged magic is not a checkpoint at all.
    EXPECT_EQ(decode_error(bad), i < 4 ? ErrorCode::format : ErrorCode::checksum) << "byte " << i;
  }
}

TEST(Checkpoint, TruncationIsDetected) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    const std::span<const std::uint8_t> cut(bytes.data(), n);
    const ErrorCode code = decode_error(cut);
    EXPECT_TRUE(code == ErrorCode::checksum || code == ErrorCode::format) << n;
  }
}

TEST(Checkpoint, VersionMismatchIsReported) {
  auto bytes = encode_checkpoint(sample_checkpoint());
  bytes[4] = 2;
  // Recompute the trailing CRC so only the version differs.
  const auto body = std::span<const std::uint8_t>(bytes.data(), bytes.size() - 4);
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::uint8_t byte : body) {
    crc ^= byte;
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  crc ^= 0xFFFFFFFFu;
  for (int k = 0; k < 4; ++k) bytes[bytes.size() - 4 + static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(crc >> (8 * k));
  EXPECT_EQ(decode_error(bytes), ErrorCode::version);
}

TEST(Checkpoint, FileRoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "cpcssl_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const Checkpoint c = sample_checkpoint();
  save_checkpoint(dir / "a.cpcs", c);
  EXPECT_EQ(load_checkpoint(dir / "a.cpcs"), c);
  EXPECT_EQ(std::distance(fs::directory_iterator(dir), fs::directory_iterator()), 1);
  try {
    load_checkpoint(dir / "missing.cpcs");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::io);
  }
}

TEST(Resume, MatchesAnUninterruptedRun) {
  const fs::path dir = fs::temp_directory_path() / "cpcssl_resume";
  fs::remove_all(dir);
  ExperimentConfig config = parse_config({}, {"data.train_count=96", "data.test_count=32",
                                              "data.labeled_fraction=0.25", "model.conv_layers=4:3:1",
                                              "model.latent_dim=8", "model.context_dim=8",
                                              "model.prediction_steps=3", "model.contrastive_size=4",
                                              "train.epochs=3", "train.mode=ccpc", "train.seed=7"});
  const ExperimentData data = load_experiment_data(config);
  std::ostringstream log;
  run_training(config, data, RunPaths{dir / "full"}, std::nullopt, log);

  ExperimentConfig partial = config;
  partial.train.epochs = 2;
  run_training(partial, data, RunPaths{dir / "split"}, std::nullopt, log);
  run_training(config, data, RunPaths{dir / "split"}, RunPaths{dir / "split"}.checkpoint(), log);

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(RunPaths{dir / "full"}.checkpoint()), slurp(RunPaths{dir / "split"}.checkpoint()));
  EXPECT_EQ(slurp(RunPaths{dir / "full"}.metrics()), slurp(RunPaths{dir / "split"}.metrics()));
  EXPECT_EQ(load_checkpoint(RunPaths{dir / "full"}.checkpoint()).epoch, 3);
}

TEST(Resume, RejectsAnotherMode) {
  const fs::path dir = fs::temp_directory_path() / "cpcssl_resume_mode";
  fs::remove_all(dir);
  const std::vector<std::string> base{"data.train_count=64", "data.test_count=0", "data.labeled_fraction=0.25",
                                      "model.conv_layers=4:3:1", "model.latent_dim=8", "model.context_dim=8",
                                      "model.prediction_steps=3", "model.contrastive_size=4", "train.epochs=1"};
  const ExperimentConfig cpc = parse_config({}, base);
  const ExperimentData data = load_experiment_data(cpc);
  std::ostringstream log;
  run_training(cpc, data, RunPaths{dir}, std::nullopt, log);
  auto with_mode = base;
  with_mode.push_back("train.mode=ccpc");
  const ExperimentConfig ccpc = parse_config({}, with_mode);
  try {
    run_training(ccpc, data, RunPaths{dir / "b"}, RunPaths{dir}.checkpoint(), log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::incompatible);
  }
}
