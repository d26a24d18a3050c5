#include "cpcssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace cpcssl {

void PatchGridSpec::validate() const {
  if (image_size < 1 || patch < 1 || stride < 1) {
    throw Error(ErrorCode::invalid_argument, "patch grid sizes must be positive");
  }
  if (patch > image_size) {
    throw Error(ErrorCode::invalid_argument, "patch larger than image");
  }
  if (stride > patch) {
    throw Error(ErrorCode::invalid_argument, "patch stride exceeds patch size (negative overlap)");
  }
  if ((image_size - patch) % stride != 0) {
    throw Error(ErrorCode::invalid_argument,
                "image size " + std::to_string(image_size) + " minus patch " + std::to_string(patch) +
                    " is not divisible by stride " + std::to_string(stride));
  }
}

PatchGrid extract_patch_grid(const Tensor& image, const PatchGridSpec& spec) {
  spec.validate();
  if (image.rank() != 3 || image.dim(1) != spec.image_size || image.dim(2) != spec.image_size) {
    throw Error(ErrorCode::shape_mismatch, "image " + to_string(image.shape()) +
                                               " does not match a square image of side " +
                                               std::to_string(spec.image_size));
  }
  const Index C = image.dim(0), S = spec.image_size, p = spec.patch, G = spec.grid_side();
  PatchGrid grid(static_cast<std::size_t>(G), std::vector<Tensor>(static_cast<std::size_t>(G)));
  for (Index i = 0; i < G; ++i) {
    for (Index j = 0; j < G; ++j) {
      Tensor crop(Shape{C, p, p});
      for (Index c = 0; c < C; ++c) {
        crop.mat(C * p, p).block(c * p, 0, p, p) =
            image.mat(C * S, S).block(c * S + i * spec.stride, j * spec.stride, p, p);
      }
      grid[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = std::move(crop);
    }
  }
  return grid;
}

std::vector<SequenceSample> grid_to_sequences(const PatchGrid& grid, std::optional<int> label,
                                              std::int64_t first_id) {
  std::vector<SequenceSample> out;
  const std::size_t G = grid.size();
  for (std::size_t j = 0; j < G; ++j) {
    SequenceSample seq;
    seq.label = label;
    seq.id = first_id + static_cast<std::int64_t>(j);
    for (std::size_t i = 0; i < G; ++i) {
      if (grid[i].size() != G) throw Error(ErrorCode::shape_mismatch, "patch grid is not square");
      seq.patches.push_back(grid[i][j]);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

Example image_example(const Tensor& image, const PatchGridSpec& spec, std::optional<int> label,
                      std::int64_t id) {
  Example ex;
  ex.id = id;
  ex.label = label;
  ex.sequences = grid_to_sequences(extract_patch_grid(image, spec), label, id * spec.grid_side());
  return ex;
}

double Split::rho() const {
  if (labeled.empty()) throw Error(ErrorCode::invalid_argument, "rho of a split without labels");
  return static_cast<double>(unlabeled.size()) / static_cast<double>(labeled.size());
}

double default_alpha(const Split& split) { return 8.0 * split.rho(); }

namespace {

Example hide_label(Example ex) {
  ex.label.reset();
  for (auto& s : ex.sequences) s.label.reset();
  return ex;
}

}  // namespace

Split split_labeled(const Dataset& dataset, double fraction, RngState& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "labeled fraction must lie in (0, 1)");
  }
  const auto n = static_cast<Index>(dataset.size());
  const auto count = static_cast<Index>(std::llround(fraction * static_cast<double>(n)));
  if (count == 0) {
    throw Error(ErrorCode::invalid_argument, "labeled fraction " + std::to_string(fraction) +
                                                 " of " + std::to_string(n) +
                                                 " examples selects no labeled items");
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  for (Index i = 0; i < count; ++i) {
    const Index j = i + rng.uniform_index(n - i);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  std::vector<std::int64_t> ids;
  for (Index i = 0; i < count; ++i) ids.push_back(dataset.examples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].id);
  return split_from_ids(dataset, ids);
}

Split split_from_ids(const Dataset& dataset, const std::vector<std::int64_t>& labeled_ids) {
  const std::set<std::int64_t> chosen(labeled_ids.begin(), labeled_ids.end());
  Split split;
  split.labeled.num_classes = dataset.num_classes;
  split.unlabeled.num_classes = dataset.num_classes;
  std::size_t found = 0;
  for (const Example& ex : dataset.examples) {
    if (chosen.count(ex.id)) {
      if (!ex.label) {
        throw Error(ErrorCode::invalid_argument,
                    "example " + std::to_string(ex.id) + " selected as labeled has no label");
      }
      split.labeled.examples.push_back(ex);
      ++found;
    } else {
      if (ex.label) split.hidden_labels[ex.id] = *ex.label;
      split.unlabeled.examples.push_back(hide_label(ex));
    }
  }
  if (found != chosen.size()) {
    throw Error(ErrorCode::invalid_argument, "split manifest names ids absent from the dataset");
  }
  if (split.labeled.empty()) throw Error(ErrorCode::invalid_argument, "split selects no labeled items");
  return split;
}

std::vector<std::int64_t> labeled_ids(const Split& split) {
  std::vector<std::int64_t> ids;
  for (const Example& ex : split.labeled.examples) ids.push_back(ex.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace cpcssl
