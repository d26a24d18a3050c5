#include "cpcssl/rng.hpp"

#include <cmath>
#include <numbers>

namespace cpcssl {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t RngState::next_u64() {
  ++counter;
  return splitmix64(seed + counter * kGolden);
}

double RngState::uniform() {
  // (k + 0.5) / 2^53 for k in [0, 2^53) never hits 0 or 1.
  const std::uint64_t k = next_u64() >> 11;
  return (static_cast<double>(k) + 0.5) * 0x1.0p-53;
}

Index RngState::uniform_index(Index n) {
  if (n <= 0) {
    throw Error(ErrorCode::invalid_argument, "uniform_index needs n > 0");
  }
  const auto range = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % range);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return static_cast<Index>(x % range);
}

double RngState::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngState::gumbel() { return -std::log(-std::log(uniform())); }

Tensor RngState::normal_tensor(Shape shape) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = normal();
  return t;
}

Tensor RngState::gumbel_tensor(Shape shape) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = gumbel();
  return t;
}

RngState RngState::fork(std::string_view label) const { return fork(fnv1a(label)); }

RngState RngState::fork(std::uint64_t key) const {
  RngState child;
  child.seed = splitmix64(splitmix64(seed ^ splitmix64(key)) + counter);
  child.counter = 0;
  return child;
}

}  // namespace cpcssl
