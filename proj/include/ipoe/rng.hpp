#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipoe/hash.hpp"

namespace ipoe {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed for a named substream of a root seed. Adding a new substream never
// perturbs the draws of existing ones.
inline std::uint64_t substream_seed(std::uint64_t root_seed, std::string_view name) {
    return splitmix64(root_seed ^ fnv1a64(name));
}

// A counted random stream. Every bounded draw consumes exactly one engine
// output, so the draw counter fully determines the stream position and a
// resumed run can fast-forward to it.
class Substream {
public:
    Substream() : Substream(0) {}
    explicit Substream(std::uint64_t seed) : engine_(seed), draws_(0) {}

    std::uint64_t next() {
        ++draws_;
        return engine_();
    }

    // Uniform in [0, n). One engine output per call (128-bit multiply trick);
    // the residual modulo bias is irrelevant at the n this project uses.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::logic_error("Substream::below: n must be positive");
        return static_cast<std::uint64_t>(
            (static_cast<__uint128_t>(next()) * static_cast<__uint128_t>(n)) >> 64);
    }

    std::uint64_t draws() const { return draws_; }

    void discard_to(std::uint64_t target) {
        if (target < draws_)
            throw std::logic_error("Substream::discard_to: cannot rewind a stream");
        engine_.discard(target - draws_);
        draws_ = target;
    }

    // Fisher-Yates over indices [0, n).
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(idx[i - 1], idx[j]);
        }
        return idx;
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t draws_;
};

// The run's named substreams. Names are fixed per call site (sampling,
// remove, replace, shuffle, subsample) so that operator draws stay
// independent and positions can be persisted as plain counters.
class RngSuite {
public:
    explicit RngSuite(std::uint64_t root_seed) : root_seed_(root_seed) {}

    Substream& stream(const std::string& name) {
        auto it = streams_.find(name);
        if (it == streams_.end()) {
            it = streams_.emplace(name, Substream(substream_seed(root_seed_, name))).first;
        }
        return it->second;
    }

    // Override the seed of one stream (the sampler and subsample streams are
    // independently seedable per their configs).
    void seed_stream(const std::string& name, std::uint64_t seed) {
        streams_.insert_or_assign(name, Substream(seed));
    }

    std::map<std::string, std::uint64_t> counters() const {
        std::map<std::string, std::uint64_t> out;
        for (const auto& [name, s] : streams_) out.emplace(name, s.draws());
        return out;
    }

    void restore(const std::map<std::string, std::uint64_t>& counters) {
        for (const auto& [name, count] : counters) stream(name).discard_to(count);
    }

    std::uint64_t root_seed() const { return root_seed_; }

private:
    std::uint64_t root_seed_;
    std::map<std::string, Substream> streams_;
};

// Seed for round r of a multi-round run.
inline std::uint64_t round_seed(std::uint64_t root_seed, int round) {
    return splitmix64(root_seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(round + 1)));
}

}  // namespace ipoe
