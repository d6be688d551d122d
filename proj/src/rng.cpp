#include "dcpl/rng.hpp"

#include <cmath>
#include <numbers>

namespace dcpl {

namespace {
constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
constexpr std::uint64_t kStreamMul = 0xD1B54A32D192ED03ull;
}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
    x += kGamma;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : Rng(seed, stream, splitmix64(splitmix64(seed) ^ (stream * kStreamMul + 1))) {}

Rng::Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t key)
    : seed_(seed), stream_(stream), key_(key) {}

std::uint64_t Rng::next_u64() {
    // splitmix64 adds γ itself, so this is the SplitMix64 sequence from key_.
    return splitmix64(key_ + (counter_++) * kGamma);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::normal(double mean, double std) { return mean + std * normal(); }

std::size_t Rng::below(std::size_t n) {
    // Lemire's multiply-shift; the bias for n << 2^64 is far below anything observable here.
    const auto wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::size_t>(wide >> 64);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

Rng Rng::split(std::uint64_t index) const {
    const std::uint64_t child = splitmix64(key_ ^ splitmix64(index * kStreamMul + 0x632BE59BD9B4E019ull));
    return Rng(seed_, index, child);
}

}  // namespace dcpl
