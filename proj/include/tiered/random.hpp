#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace tiered {

/// Seeded random stream with platform-independent conversions.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The standard distributions are implementation-defined, so every
/// conversion to doubles, bounded integers and categorical draws is done here.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t n);

    bool bernoulli(double p) { return uniform() < p; }

    /// Index drawn from an unnormalized nonnegative weight vector.
    std::size_t categorical(std::span<const double> weights);

  private:
    std::mt19937_64 engine_;
};

/// Per-run seed as a pure function of (master seed, task index, purpose tag).
///
/// splitmix64 finalizer over the master seed, the index and an FNV-1a hash of
/// the tag. Distinct purposes get statistically independent streams.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::string_view tag);

} // namespace tiered
