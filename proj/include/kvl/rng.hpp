#pragma once

#include <cstdint>
#include <string_view>

#include "kvl/tensor.hpp"

namespace kvl {

// Deterministic 64-bit generator: xoshiro256++ seeded via splitmix64.
// Identical seed yields an identical u64 stream on every platform.
// Named substreams let one root seed drive independent streams
// ("data", "init", "augment") so ablation modes share identical data.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // [0, 1) with 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller (pairs cached).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Uniform integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n);

    Rng substream(std::string_view name) const;
    Rng substream(std::uint64_t index) const;

    Tensor normal_tensor(Shape shape, double mean, double stddev);
    Tensor uniform_tensor(Shape shape, double lo, double hi);

  private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

}  // namespace kvl
