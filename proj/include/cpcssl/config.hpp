#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cpcssl/data.hpp"
#include "cpcssl/synthetic.hpp"
#include "cpcssl/training.hpp"

namespace cpcssl {

enum class DataFormat { synthetic, idx_images, idx_sequences, text };

std::string_view to_string(DataFormat format);
DataFormat parse_data_format(std::string_view text);

struct DataConfig {
  DataFormat format = DataFormat::synthetic;
  /// JSON SyntheticSpec, loaded before any synthetic_* key is applied.
  std::string synthetic_spec;
  SyntheticSpec synthetic;
  Index train_count = 5000;
  Index test_count = 1000;
  std::string train_data, train_labels;
  std::string test_data, test_labels;
  PatchGridSpec grid;
  double labeled_fraction = 0.01;
  /// JSON list of labelled ids; when set it replaces the random split.
  std::string split_manifest;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  Index checkpoint_every = 1;  // epochs; 0 keeps only the final checkpoint
  Index eval_batch_size = 64;
};

/// One `section.key = value` line, with where it came from for diagnostics.
/// Relative paths are resolved against `base_dir`.
struct ConfigAssignment {
  std::string section;
  std::string key;
  std::string value;
  std::string origin;  // "file:line" or "--set"
  std::filesystem::path base_dir;
};

/// INI-style text: `[section]` headers, `key = value` lines, `#` or `;`
/// comments. Keys repeated within one file are rejected.
std::vector<ConfigAssignment> read_config_text(std::string_view text, const std::string& name,
                                               const std::filesystem::path& base_dir);
std::vector<ConfigAssignment> read_config_file(const std::filesystem::path& path);
/// `section.key=value` from the command line.
ConfigAssignment parse_override(std::string_view text);

/// Applies assignments over the defaults and validates. Fields derived from
/// others (latent_dim of a text encoder, num_classes from a synthetic spec)
/// are filled in unless assigned.
ExperimentConfig build_config(const std::vector<ConfigAssignment>& assignments);
ExperimentConfig parse_config(const std::filesystem::path& path,
                              const std::vector<std::string>& overrides = {});

void validate(const ExperimentConfig& config);

/// Every addressable key with its current value, as config text. With a
/// resolved alpha the echo pins it, so the text alone reproduces the run.
std::string effective_config(const ExperimentConfig& config);

/// All addressable keys as "section.key".
std::vector<std::string> config_keys();

}  // namespace cpcssl
