#pragma once

#include <cstdint>

namespace mvcl {

struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  friend bool operator==(const RngState&, const RngState&) = default;
};

/// Counter-based generator: draw k is a pure function of (seed, k), so the
/// sequence is identical on every platform and streams can be split off
/// without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_{seed, 0} {}
  explicit Rng(RngState state) : state_(state) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one draw per pair of uniforms).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream keyed by `stream`; does not advance this one.
  Rng split(std::uint64_t stream) const;

  const RngState& state() const { return state_; }

 private:
  RngState state_;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace mvcl
