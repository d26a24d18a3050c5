#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cpcssl/data.hpp"

namespace cpcssl {

/// IDX container: two zero bytes, a type byte, a rank byte, big-endian u32
/// dims, then big-endian values. Type 0x08 holds unsigned bytes (images
/// 0x00000803, labels 0x00000801); type 0x0E holds 64-bit floats, used for
/// real-valued patch sequences ([count x T x P], magic 0x00000E03).
struct IdxArray {
  static constexpr std::uint8_t kUnsignedByte = 0x08;
  static constexpr std::uint8_t kFloat64 = 0x0E;

  std::uint8_t type = kUnsignedByte;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// u8 images [count x H x W] as [1 x H x W] tensors scaled to [0, 1].
std::vector<Tensor> read_idx_images(const std::filesystem::path& path);
std::vector<int> read_idx_labels(const std::filesystem::path& path);

/// Square images cut into patch-grid column sequences, one Example per image.
Dataset load_idx_image_dataset(const std::filesystem::path& images,
                               const std::filesystem::path& labels, const PatchGridSpec& grid,
                               int num_classes);

/// Real-valued sequences [count x T x (h*w)] as examples of [1 x h x w] patches.
Dataset load_idx_sequence_dataset(const std::filesystem::path& sequences,
                                  const std::filesystem::path& labels, Index patch_height,
                                  Index patch_width, int num_classes);
void save_idx_sequence_dataset(const Dataset& dataset, const std::filesystem::path& sequences,
                               const std::filesystem::path& labels);

}  // namespace cpcssl
