#pragma once

#include <cstdint>
#include <vector>

namespace dcpl {

// Splittable counter-based generator.
//
// A stream is identified by a 64-bit key derived from (seed, stream id).
// Draw i of a stream is splitmix64(key + i·γ) with γ = 0x9E3779B97F4A7C15,
// i.e. the SplitMix64 output sequence started at `key`. Splitting hashes the
// parent key together with a child index, so children depend only on
// (parent key, index) and never on how many draws the parent made.
//
// Uniform doubles take the top 53 bits; normals use Box-Muller on two
// consecutive uniforms (cosine branch only, no cached spare, so every
// normal consumes exactly two draws).
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64();
    double uniform();                       // [0, 1)
    double normal();                        // N(0, 1)
    double normal(double mean, double std);
    std::size_t below(std::size_t n);       // uniform in [0, n)
    bool bernoulli(double p);

    // Independent child stream; `index` distinguishes siblings.
    Rng split(std::uint64_t index) const;

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }
    result_type operator()() { return next_u64(); }

private:
    Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t key);

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace dcpl
