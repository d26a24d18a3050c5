#pragma once

#include <cstdint>
#include <string_view>

#include "cpcssl/tensor.hpp"

namespace cpcssl {

/// Counter-based random stream.
///
/// Draw i of a stream is splitmix64(seed + (i + 1) * 0x9E3779B97F4A7C15), using
/// the splitmix64 finalizer constants 0xBF58476D1CE4E5B9 and
/// 0x94D049BB133111EB. The state is the pair (seed, counter), so copying an
/// RngState replays the same draws. Integer streams are identical on every
/// platform; normal and Gumbel variates go through std::log/std::cos and are
/// identical wherever libm is.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1), 53 bits of resolution.
  double uniform();
  /// Uniform integer in [0, n), rejection-sampled so it is exactly unbiased.
  Index uniform_index(Index n);
  /// Standard normal via Box-Muller; consumes two draws per variate.
  double normal();
  /// Standard Gumbel(0, 1): -log(-log(U)).
  double gumbel();

  Tensor normal_tensor(Shape shape);
  Tensor gumbel_tensor(Shape shape);

  /// Independent child stream keyed by a label; the parent is not advanced.
  RngState fork(std::string_view label) const;
  RngState fork(std::uint64_t key) const;

  friend bool operator==(const RngState&, const RngState&) = default;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace cpcssl
