#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "cpcssl/rng.hpp"
#include "cpcssl/tensor.hpp"

namespace cpcssl {

/// Ordered patches (image crops [C x p x p] or token-id rows [L]) with an optional label.
struct SequenceSample {
  std::vector<Tensor> patches;
  std::optional<int> label;
  std::int64_t id = 0;

  Index length() const noexcept { return static_cast<Index>(patches.size()); }
};

/// One labelled unit: an image (one sequence per grid column), a document, or
/// a synthetic sequence. Classification happens at this level.
struct Example {
  std::int64_t id = 0;
  std::vector<SequenceSample> sequences;
  std::optional<int> label;
};

struct Dataset {
  std::vector<Example> examples;
  int num_classes = 0;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
};

struct PatchGridSpec {
  Index image_size = 32;
  Index patch = 16;
  Index stride = 8;

  Index grid_side() const { return (image_size - patch) / stride + 1; }
  Index overlap() const { return patch - stride; }
  void validate() const;
};

/// grid[i][j] covers rows [i*s, i*s + p) and columns [j*s, j*s + p).
using PatchGrid = std::vector<std::vector<Tensor>>;

PatchGrid extract_patch_grid(const Tensor& image, const PatchGridSpec& spec);
/// Sequence j is grid column j read top to bottom; every sequence carries `label`.
std::vector<SequenceSample> grid_to_sequences(const PatchGrid& grid, std::optional<int> label,
                                              std::int64_t first_id);
Example image_example(const Tensor& image, const PatchGridSpec& spec, std::optional<int> label,
                      std::int64_t id);

/// Labelled/unlabelled partition. Unlabelled examples have their labels
/// removed; the true labels are kept in `hidden_labels` for evaluation only.
struct Split {
  Dataset labeled;
  Dataset unlabeled;
  std::map<std::int64_t, int> hidden_labels;

  /// |D_U| / |D_L|.
  double rho() const;
};

/// Uniform random subset of round(fraction * |D|) examples keeps its labels.
/// No stratification by class.
Split split_labeled(const Dataset& dataset, double fraction, RngState& rng);
/// Rebuilds a split from the labelled ids recorded in a split manifest.
Split split_from_ids(const Dataset& dataset, const std::vector<std::int64_t>& labeled_ids);
std::vector<std::int64_t> labeled_ids(const Split& split);

/// Classification weight 8 * rho.
double default_alpha(const Split& split);

}  // namespace cpcssl
