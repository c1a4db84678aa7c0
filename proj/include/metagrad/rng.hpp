#pragma once

#include <cstdint>
#include <cmath>
#include <initializer_list>
#include <span>

// Counter-derived splittable random streams. All randomness in the project
// flows from one master seed via StreamTree; no global RNG anywhere. Streams
// are keyed by index path (update, lifetime, ...), so results do not depend
// on thread scheduling.

namespace metagrad {

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ 0x632be59bd9b4e019ull ^ splitmix64(b));
}

// xoshiro256++ core (Blackman & Vigna), seeded via splitmix64 expansion.
class Xoshiro256pp {
  public:
    explicit Xoshiro256pp(std::uint64_t seed) {
        std::uint64_t z = seed;
        for (auto& w : s_) {
            z = splitmix64(z + 0x9e3779b97f4a7c15ull);
            w = z;
        }
        if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 0x1ull;
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4];
};

class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t bits() { return eng_.next(); }

    // [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(eng_.next() >> 11) * 0x1.0p-53; }

    // (0, 1]; safe as a log() argument
    double uniform_open0() { return (static_cast<double>(eng_.next() >> 11) + 1.0) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased integer in [0, n) via rejection
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = eng_.next();
            if (r >= threshold) return r % n;
        }
    }

    // Box-Muller without the cached spare: stream consumption stays a fixed
    // two draws per call, which keeps replay alignment trivial.
    double normal() {
        const double u1 = uniform_open0();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // index into a probability vector (sums to ~1); drift falls into the last bin
    int categorical(std::span<const double> probs) {
        const double u = uniform();
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

  private:
    Xoshiro256pp eng_;
};

// Deterministic derivation tree over the master seed. child(i) narrows scope
// (outer update, lifetime, ...); stream(tag) yields an independent stream.
struct StreamTree {
    std::uint64_t seed = 0;

    StreamTree child(std::uint64_t index) const { return StreamTree{mix64(seed, index)}; }

    StreamTree child(std::initializer_list<std::uint64_t> path) const {
        StreamTree t = *this;
        for (std::uint64_t i : path) t = t.child(i);
        return t;
    }

    RngStream stream(std::uint64_t tag = 0) const {
        return RngStream(mix64(seed, tag ^ 0xd1b54a32d192ed03ull));
    }
};

}  // namespace metagrad
