#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include <nlohmann/json.hpp>

#include "cpcssl/checkpoint.hpp"
#include "cpcssl/config.hpp"
#include "cpcssl/text.hpp"

namespace cpcssl {

struct ExperimentData {
  Dataset train;
  Dataset test;  // may be empty: evaluation then uses the hidden labels
  Split split;
  std::optional<Vocabulary> vocab;
};

/// Loads or generates the data named by `config.data` and splits it. Random
/// draws come from fork("data") of the root seed.
ExperimentData load_experiment_data(const ExperimentConfig& config);

nlohmann::json split_manifest(const Split& split, double fraction, std::uint64_t seed);
std::vector<std::int64_t> read_split_manifest(const std::filesystem::path& path);

/// Config with alpha pinned to its effective value.
ExperimentConfig resolved(const ExperimentConfig& config, const Split& split);

SslModel build_experiment_model(const ExperimentConfig& config, Mode mode);

/// Output files of one training run.
struct RunPaths {
  std::filesystem::path dir;

  std::filesystem::path config() const { return dir / "config.ini"; }
  std::filesystem::path split() const { return dir / "split.json"; }
  std::filesystem::path metrics() const { return dir / "metrics.jsonl"; }
  std::filesystem::path checkpoint() const { return dir / "checkpoint.cpcs"; }
};

/// Trains for config.train.epochs epochs, writing the effective config, the
/// split manifest, one metrics line per epoch and a checkpoint every
/// checkpoint_every epochs and at the end. With `resume`, training restarts
/// from that checkpoint and metrics lines past its epoch are dropped first.
void run_training(const ExperimentConfig& config, const ExperimentData& data, const RunPaths& paths,
                  const std::optional<std::filesystem::path>& resume, std::ostream& log);

}  // namespace cpcssl
