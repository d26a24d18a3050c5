#include "cpcssl/idx.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cpcssl {

namespace {

std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

void put_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xFF));
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

IdxArray read_idx(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || p[0] != 0 || p[1] != 0) {
    throw Error(ErrorCode::format, path.string() + ": not an IDX file");
  }
  IdxArray arr;
  arr.type = p[2];
  const std::size_t rank = p[3];
  if (arr.type != IdxArray::kUnsignedByte && arr.type != IdxArray::kFloat64) {
    throw Error(ErrorCode::format, path.string() + ": unsupported IDX element type");
  }
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() < header) throw Error(ErrorCode::format, path.string() + ": truncated IDX header");
  std::size_t count = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    arr.dims.push_back(read_be32(p + 4 + 4 * d));
    count *= arr.dims.back();
  }
  const std::size_t width = arr.type == IdxArray::kUnsignedByte ? 1 : 8;
  if (bytes.size() != header + count * width) {
    throw Error(ErrorCode::format, path.string() + ": IDX payload size does not match its dims");
  }
  arr.values.resize(count);
  const unsigned char* body = p + header;
  for (std::size_t i = 0; i < count; ++i) {
    if (width == 1) {
      arr.values[i] = body[i];
    } else {
      std::uint64_t bits = 0;
      for (std::size_t b = 0; b < 8; ++b) bits = (bits << 8) | body[i * 8 + b];
      arr.values[i] = std::bit_cast<double>(bits);
    }
  }
  return arr;
}

void write_idx(const std::filesystem::path& path, const IdxArray& arr) {
  std::string out;
  out.push_back(0);
  out.push_back(0);
  out.push_back(static_cast<char>(arr.type));
  out.push_back(static_cast<char>(arr.dims.size()));
  std::size_t count = 1;
  for (auto d : arr.dims) {
    put_be32(out, d);
    count *= d;
  }
  if (count != arr.values.size()) throw Error(ErrorCode::shape_mismatch, "IDX dims do not match values");
  for (double v : arr.values) {
    if (arr.type == IdxArray::kUnsignedByte) {
      if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
        throw Error(ErrorCode::invalid_argument, "value does not fit an unsigned byte");
      }
      out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    } else {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<char>((bits >> shift) & 0xFF));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::io, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrorCode::io, "short write to " + path.string());
}

std::vector<Tensor> read_idx_images(const std::filesystem::path& path) {
  const IdxArray arr = read_idx(path);
  if (arr.type != IdxArray::kUnsignedByte || arr.dims.size() != 3) {
    throw Error(ErrorCode::format, path.string() + ": expected IDX magic 0x00000803 (u8 images)");
  }
  const Index n = arr.dims[0], h = arr.dims[1], w = arr.dims[2];
  std::vector<Tensor> images;
  images.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Tensor img(Shape{1, h, w});
    for (Index k = 0; k < h * w; ++k) img[k] = arr.values[static_cast<std::size_t>(i * h * w + k)] / 255.0;
    images.push_back(std::move(img));
  }
  return images;
}

std::vector<int> read_idx_labels(const std::filesystem::path& path) {
  const IdxArray arr = read_idx(path);
  if (arr.type != IdxArray::kUnsignedByte || arr.dims.size() != 1) {
    throw Error(ErrorCode::format, path.string() + ": expected IDX magic 0x00000801 (u8 labels)");
  }
  return std::vector<int>(arr.values.begin(), arr.values.end());
}

namespace {

void check_labels(const std::vector<int>& labels, std::size_t count, int num_classes) {
  if (labels.size() != count) {
    throw Error(ErrorCode::format, "label count " + std::to_string(labels.size()) +
                                       " does not match example count " + std::to_string(count));
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw Error(ErrorCode::format,
                  "label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

}  // namespace

Dataset load_idx_image_dataset(const std::filesystem::path& images,
                               const std::filesystem::path& labels, const PatchGridSpec& grid,
                               int num_classes) {
  const auto imgs = read_idx_images(images);
  const auto ys = read_idx_labels(labels);
  check_labels(ys, imgs.size(), num_classes);
  Dataset ds;
  ds.num_classes = num_classes;
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    ds.examples.push_back(image_example(imgs[i], grid, ys[i], static_cast<std::int64_t>(i)));
  }
  return ds;
}

Dataset load_idx_sequence_dataset(const std::filesystem::path& sequences,
                                  const std::filesystem::path& labels, Index patch_height,
                                  Index patch_width, int num_classes) {
  const IdxArray arr = read_idx(sequences);
  if (arr.type != IdxArray::kFloat64 || arr.dims.size() != 3) {
    throw Error(ErrorCode::format, sequences.string() + ": expected IDX magic 0x00000E03 (f64 sequences)");
  }
  const Index n = arr.dims[0], T = arr.dims[1], P = arr.dims[2];
  if (P != patch_height * patch_width) {
    throw Error(ErrorCode::shape_mismatch, "patch width " + std::to_string(P) + " is not " +
                                               std::to_string(patch_height) + "x" +
                                               std::to_string(patch_width));
  }
  const auto ys = read_idx_labels(labels);
  check_labels(ys, static_cast<std::size_t>(n), num_classes);
  Dataset ds;
  ds.num_classes = num_classes;
  for (Index i = 0; i < n; ++i) {
    SequenceSample seq;
    seq.id = i;
    seq.label = ys[static_cast<std::size_t>(i)];
    for (Index t = 0; t < T; ++t) {
      Tensor patch(Shape{1, patch_height, patch_width});
      std::memcpy(patch.vec().data(), arr.values.data() + (i * T + t) * P, sizeof(double) * static_cast<std::size_t>(P));
      seq.patches.push_back(std::move(patch));
    }
    Example ex;
    ex.id = i;
    ex.label = seq.label;
    ex.sequences.push_back(std::move(seq));
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

void save_idx_sequence_dataset(const Dataset& dataset, const std::filesystem::path& sequences,
                               const std::filesystem::path& labels) {
  if (dataset.empty()) throw Error(ErrorCode::invalid_argument, "cannot save an empty dataset");
  const SequenceSample& first = dataset.examples.front().sequences.at(0);
  const Index T = first.length(), P = first.patches.at(0).size();
  IdxArray data{IdxArray::kFloat64, {static_cast<std::uint32_t>(dataset.size()),
                                     static_cast<std::uint32_t>(T), static_cast<std::uint32_t>(P)}, {}};
  IdxArray ys{IdxArray::kUnsignedByte, {static_cast<std::uint32_t>(dataset.size())}, {}};
  for (const Example& ex : dataset.examples) {
    if (ex.sequences.size() != 1 || ex.sequences[0].length() != T) {
      throw Error(ErrorCode::shape_mismatch, "sequence datasets need one fixed-length sequence per example");
    }
    if (!ex.label) throw Error(ErrorCode::invalid_argument, "cannot save an example without a label");
    for (const Tensor& p : ex.sequences[0].patches) data.values.insert(data.values.end(), p.vec().begin(), p.vec().end());
    ys.values.push_back(*ex.label);
  }
  write_idx(sequences, data);
  write_idx(labels, ys);
}

}  // namespace cpcssl
