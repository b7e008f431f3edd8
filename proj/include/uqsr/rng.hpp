#pragma once

#include <cstdint>

namespace uqsr::rng {

/// SplitMix64 finalizer: the avalanche function of Steele, Lea and Flood's
/// SplitMix64 generator, used here as the mixing core of a counter-based
/// generator.  Every draw is a pure function of (seed, stream, counter), so
/// sequences are bit-reproducible across platforms and thread counts, and
/// disjoint streams can be handed to parallel workers.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Derives an independent seed for a sub-task (frame noise, dataset shard,
/// ...) so nested generators never share a (seed, stream) pair with their
/// parent.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t label) {
    return splitmix64(splitmix64(seed) ^ splitmix64(label ^ 0xA5A5A5A5DEADBEEFULL));
}

/// Inverse of the standard normal CDF, Wichura's algorithm AS 241 (PPND16).
/// Absolute error below 1e-15 over (0,1); used for both Gaussian sampling
/// (inverse-CDF method) and interval half-widths in calibration metrics.
/// Out-of-range p returns +/-infinity (p=0,1) or NaN (p<0, p>1).
double normal_quantile(double p);

/// Two-sided central interval half-width: z such that a standard normal
/// falls in [-z, z] with probability alpha.  two_sided_quantile(0.9) = 1.6449.
double two_sided_quantile(double alpha);

/// Counter-based generator: SplitMix64 in counter mode.
///
/// key  = splitmix64(splitmix64(seed) ^ splitmix64(stream + golden))
/// draw = splitmix64(key + counter * golden)
///
/// (seed, stream) pairs index statistically independent sequences; the
/// counter advances by one per 64-bit draw.  There is no hidden state, so
/// a generator can be reconstructed mid-sequence from (seed, stream, n).
class Prng {
  public:
    explicit Prng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(splitmix64(splitmix64(seed) ^ splitmix64(stream + kGolden))) {}

    std::uint64_t next_u64() { return splitmix64(key_ + (counter_++) * kGolden); }

    /// Uniform on the open interval (0,1): (k + 1/2) / 2^53 for k in [0, 2^53).
    double next_unit() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Uniform on [lo, hi).
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    /// Standard normal draw via the inverse CDF.
    double next_gaussian() { return normal_quantile(next_unit()); }

    /// Uniform integer in [lo, hi] inclusive.  Uses the multiply-shift map on
    /// the full 64-bit draw; bias is (hi-lo+1)/2^64, negligible for the small
    /// ranges used here.
    std::int64_t next_int(std::int64_t lo, std::int64_t hi);

    std::uint64_t counter() const { return counter_; }

  private:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace uqsr::rng
