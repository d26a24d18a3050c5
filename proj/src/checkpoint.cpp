#include "cpcssl/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace cpcssl {

namespace {

constexpr char kMagic[4] = {'C', 'P', 'C', 'S'};
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  void record(const std::string& name, const Tensor& t) {
    put(static_cast<std::uint32_t>(name.size()));
    put_bytes(name.data(), name.size());
    put(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put(static_cast<std::uint64_t>(d));
    put_bytes(t.vec().data(), sizeof(double) * static_cast<std::size_t>(t.size()));
  }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw Error(ErrorCode::format, "checkpoint record runs past the end");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::pair<std::string, Tensor> record() {
    const auto len = get<std::uint32_t>();
    const auto* p = take(len);
    std::string name(reinterpret_cast<const char*>(p), len);
    const auto rank = get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(get<std::uint64_t>()));
    const Index n = numel(shape);
    Tensor t(shape);
    std::memcpy(t.vec().data(), take(sizeof(double) * static_cast<std::size_t>(n)), sizeof(double) * n);
    return {std::move(name), std::move(t)};
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

// 64-bit counters stored as two exact 32-bit halves.
void put_u64(Tensor& t, Index at, std::uint64_t v) {
  t[at] = static_cast<double>(v >> 32);
  t[at + 1] = static_cast<double>(v & 0xFFFFFFFFu);
}

std::uint64_t get_u64(const Tensor& t, Index at) {
  return (static_cast<std::uint64_t>(t[at]) << 32) | static_cast<std::uint64_t>(t[at + 1]);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const std::size_t n = ckpt.params.size();
  if (ckpt.adam.m.size() != n || ckpt.adam.v.size() != n) {
    throw Error(ErrorCode::shape_mismatch, "optimizer state does not mirror the parameter set");
  }
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint8_t>(ckpt.mode));
  w.put(static_cast<std::uint32_t>(3 * n + 3));
  for (ParamId id : ckpt.params.ids()) w.record("param/" + ckpt.params.name(id), ckpt.params[id]);
  for (ParamId id : ckpt.params.ids()) w.record("adam/m/" + ckpt.params.name(id), ckpt.adam.m[id.value]);
  for (ParamId id : ckpt.params.ids()) w.record("adam/v/" + ckpt.params.name(id), ckpt.adam.v[id.value]);
  Tensor step(Shape{2});
  put_u64(step, 0, ckpt.adam.step);
  w.record("adam/step", step);
  Tensor rng(Shape{4});
  put_u64(rng, 0, ckpt.rng.seed);
  put_u64(rng, 2, ckpt.rng.counter);
  w.record("rng", rng);
  w.record("epoch", Tensor::scalar(static_cast<double>(ckpt.epoch)));
  w.put(crc32_of(w.bytes));
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 17 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0) {
      throw Error(ErrorCode::checksum, "checkpoint is truncated");
    }
    throw Error(ErrorCode::format, "not a checkpoint (bad magic)");
  }
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (crc32_of(body) != stored) throw Error(ErrorCode::checksum, "checkpoint checksum mismatch");

  Reader r(body);
  r.take(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::version, "checkpoint version " + std::to_string(version) + ", expected " +
                                        std::to_string(kCheckpointVersion));
  }
  const auto mode = r.get<std::uint8_t>();
  if (mode > static_cast<std::uint8_t>(Mode::supervised_only)) {
    throw Error(ErrorCode::format, "unknown mode byte " + std::to_string(mode));
  }
  Checkpoint ckpt;
  ckpt.mode = static_cast<Mode>(mode);
  const auto count = r.get<std::uint32_t>();
  bool have_step = false, have_rng = false, have_epoch = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = r.record();
    auto expect = [&](Index size) {
      if (t.size() != size) throw Error(ErrorCode::format, "record " + name + " has the wrong size");
    };
    if (name.starts_with("param/")) {
      ckpt.params.add(name.substr(6), std::move(t));
    } else if (name.starts_with("adam/m/")) {
      ckpt.adam.m.push_back(std::move(t));
    } else if (name.starts_with("adam/v/")) {
      ckpt.adam.v.push_back(std::move(t));
    } else if (name == "adam/step") {
      expect(2);
      ckpt.adam.step = get_u64(t, 0);
      have_step = true;
    } else if (name == "rng") {
      expect(4);
      ckpt.rng = {get_u64(t, 0), get_u64(t, 2)};
      have_rng = true;
    } else if (name == "epoch") {
      expect(1);
      ckpt.epoch = static_cast<Index>(t[0]);
      have_epoch = true;
    } else {
      throw Error(ErrorCode::format, "unknown checkpoint record " + name);
    }
  }
  if (!r.done()) throw Error(ErrorCode::format, "trailing bytes after checkpoint records");
  if (!have_step || !have_rng || !have_epoch) throw Error(ErrorCode::format, "checkpoint is missing state records");
  if (ckpt.adam.m.size() != ckpt.params.size() || ckpt.adam.v.size() != ckpt.params.size()) {
    throw Error(ErrorCode::format, "optimizer moments do not match the parameter records");
  }
  for (ParamId id : ckpt.params.ids()) {
    const auto& shape = ckpt.params[id].shape();
    if (ckpt.adam.m[id.value].shape() != shape || ckpt.adam.v[id.value].shape() != shape) {
      throw Error(ErrorCode::format, "optimizer moments for " + ckpt.params.name(id) + " have the wrong shape");
    }
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::io, "cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint make_checkpoint(const Trainer& trainer) {
  return {trainer.model().mode, trainer.model().params, trainer.adam(), trainer.rng(), trainer.epoch()};
}

void restore_trainer(Trainer& trainer, const Checkpoint& ckpt) {
  if (ckpt.mode != trainer.model().mode) {
    throw Error(ErrorCode::incompatible, "checkpoint mode " + std::string(to_string(ckpt.mode)) +
                                             " does not match run mode " +
                                             std::string(to_string(trainer.model().mode)));
  }
  trainer.restore(ckpt.params, ckpt.adam, ckpt.rng, ckpt.epoch);
}

}  // namespace cpcssl
