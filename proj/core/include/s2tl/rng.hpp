#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace s2tl {

/// Seeded generator shared by weight init, dropout and batch shuffling.
/// The state serializes to text so checkpoints can resume a run exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 24 bits of resolution.
  float uniform() { return static_cast<float>(engine_() >> 40) * 0x1.0p-24f; }
  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();

  std::string state() const;
  void set_state(const std::string& text);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace s2tl
