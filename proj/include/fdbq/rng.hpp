#pragma once

#include <cstddef>
#include <cstdint>

namespace fdbq {

// Counter-based generator: every draw is splitmix64(key + counter * gamma).
// Streams derived from one run seed never overlap and do not depend on the
// order in which other streams are consumed.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

    std::uint64_t next_u64() noexcept;
    double uniform() noexcept;  // [0, 1), 53 random bits
    double normal() noexcept;   // N(0, 1), Box-Muller, cached pair
    std::size_t below(std::size_t n) noexcept;

    // Independent child stream, e.g. one per layer or per sample.
    Rng derive(std::uint64_t stream) const noexcept;

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace fdbq
