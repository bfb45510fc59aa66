#include "dance/rng.hpp"

#include "dance/errors.hpp"

#include <cmath>

namespace dance {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer; full-period bit mixer.
std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), counter_(0) {
    key_ = mix64(seed + kGolden * (stream + 1));
}

std::uint64_t RngStream::next_u64() {
    ++counter_;
    return mix64(key_ + kGolden * counter_);
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal(double mean, double stddev) {
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
}

double RngStream::gumbel() {
    return -std::log(-std::log(uniform_open()));
}

std::uint64_t RngStream::below(std::uint64_t n) {
    if (n == 0) throw RangeError("RngStream::below: n must be >= 1");
    // Rejection keeps the draw unbiased; counter advances per attempt, which
    // is still deterministic for a given stream.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    for (;;) {
        const std::uint64_t x = next_u64();
        if (x < limit) return x % n;
    }
}

void RngStream::restore(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    seed_ = seed;
    stream_ = stream;
    key_ = mix64(seed + kGolden * (stream + 1));
    counter_ = counter;
}

RngSet::RngSet(std::uint64_t seed) : seed_(seed) {
    const std::uint64_t last = static_cast<std::uint64_t>(RngUse::eval);
    streams_.reserve(last + 1);
    for (std::uint64_t s = 0; s <= last; ++s) {
        streams_.emplace_back(seed, s);
    }
}

RngStream& RngSet::use(RngUse u) {
    return streams_.at(static_cast<std::size_t>(u));
}

} // namespace dance
