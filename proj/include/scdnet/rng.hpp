// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace scdnet {

/// Seeded random stream. All draws derive from the engine alone, so the
/// serialized engine state fully determines what comes next.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in (0, 1].
  double uniform_open_low() { return 1.0 - uniform(); }
  double normal();
  std::uint64_t below(std::uint64_t n);
  std::uint64_t next_u64() { return engine_(); }

  /// Independent child stream, deterministic in (this stream, tag).
  Rng fork(std::uint64_t tag);

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

}  // namespace scdnet
