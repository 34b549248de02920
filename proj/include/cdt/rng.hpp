#pragma once

#include <cstdint>

#include "cdt/tensor.hpp"

namespace cdt {

// Portable deterministic generator: xorshift64* (Marsaglia/Vigna) with
// splitmix64 seed scrambling. Constants below are the published ones; the
// first raw outputs for seeds 0 and 42 are locked by test vectors in
// tests/test_numerics.cpp.
//
//   state' = xorshift(state) with shifts 12, 25, 27
//   output = state' * 0x2545F4914F6CDD1D
//
// Same seed gives a bit-identical raw stream on every platform. Gaussian
// draws go through libm (log/cos/sin) and are deterministic per platform.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }
    // Next raw 64-bit output; advances state.
    std::uint64_t next_u64();
    // Uniform in [0, 1): top 53 bits of the raw stream.
    double uniform();
    // Uniform integer in [lo, hi], both inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    // One standard normal draw (Box-Muller pair, second value discarded).
    double normal();

    // Independent stream for parallel/per-sample use; pure function of
    // (seed, stream), unaffected by draws already made on this generator.
    Rng fork(std::uint64_t stream) const;

  private:
    std::uint64_t seed_ = 0;
    std::uint64_t state_ = 0;
};

// I.i.d. standard normal tensor via Box-Muller on the portable stream.
// Consumes two uniforms per element pair (an odd final element costs a
// full pair, the spare is discarded so no state hides between calls).
Tensor gaussian(Rng& rng, const Shape& shape);

} // namespace cdt
