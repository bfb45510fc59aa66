#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dance {

// Counter-based random stream: draw i is a pure function of (seed, stream, i).
// Each consumer owns a stream, so adding draws to one consumer never perturbs
// another, and replay only needs the three integers below.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64();

    // [0, 1) with 53 random bits.
    double uniform();
    // (0, 1); safe under log().
    double uniform_open();
    // Box-Muller; consumes two draws per value, no cached spare.
    double normal(double mean, double stddev);
    // Standard Gumbel(0,1) via -ln(-ln u).
    double gumbel();
    // Unbiased integer in [0, n), n >= 1.
    std::uint64_t below(std::uint64_t n);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }
    std::uint64_t counter() const { return counter_; }
    void restore(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter);

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

// One stream per consumer. Values are stable identifiers: they are written
// into checkpoints, so only append here.
enum class RngUse : std::uint64_t {
    init = 1,
    gate_noise = 2,
    sampling = 3,
    shuffle = 4,
    data = 5,
    score_noise = 6,
    baseline_score_noise = 7,
    path_drop = 8,
    eval = 9,
};

// The named streams a run owns; serialized wholesale in checkpoints.
class RngSet {
public:
    RngSet() = default;
    explicit RngSet(std::uint64_t seed);

    RngStream& use(RngUse u);
    const std::vector<RngStream>& streams() const { return streams_; }
    std::vector<RngStream>& streams() { return streams_; }
    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_ = 0;
    std::vector<RngStream> streams_;
};

} // namespace dance
