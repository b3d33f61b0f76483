#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace reslt {

/// Seeded generator that can derive independent child streams by name.
///
/// Every random draw in the library flows from an explicit 64-bit seed through
/// one of these; there is no global generator. `split("name")` always yields
/// the same child for the same parent seed and name, independent of how many
/// values the parent has already produced.
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  Rng split(std::string_view name) const;
  Rng split(std::uint64_t index) const;

  double uniform(double lo, double hi);
  double normal();
  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() noexcept { return engine_; }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer; used to decorrelate derived seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace reslt
