#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace prunekit {

// Deterministic splitmix64 generator. We roll our own normal/uniform
// sampling because std::*_distribution output is implementation-defined,
// and traces/datasets must be byte-reproducible from a seed.
//
// Stream derivation: child stream state = seed XOR fnv1a64(tag), so one
// experiment seed fans out to independent streams for init, shuffling,
// synthetic data and probe vectors.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    static uint64_t fnv1a64(std::string_view tag) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (char c : tag) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        return h;
    }

    static uint64_t derive_seed(uint64_t seed, std::string_view tag) {
        return seed ^ fnv1a64(tag);
    }

    static Rng stream(uint64_t seed, std::string_view tag) {
        return Rng(derive_seed(seed, tag));
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform(); // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double rademacher() { return (next_u64() & 1u) ? 1.0 : -1.0; }

    // uniform index in [0, n)
    size_t index(size_t n) { return static_cast<size_t>(next_u64() % n); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace prunekit
