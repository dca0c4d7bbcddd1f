#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace g2v {

// Deterministic pseudo-random source. Every run owns a single root seed;
// independent consumers derive named child streams so that adding a consumer
// never perturbs the draws seen by existing ones. The generator is a
// splitmix64 core, which is plenty for simulation and initialization and is
// identical on every platform (no reliance on std:: distribution internals).
class Rng {
public:
    explicit Rng(uint64_t seed) : root_(seed), state_(mix(seed ^ kStateSalt)) {}

    // Child stream derived from the root seed, a stream name, and an index.
    // Derivation does not consume randomness from this stream.
    Rng stream(std::string_view name, uint64_t index = 0) const {
        uint64_t h = fnv1a(name);
        return Rng(mix(root_ ^ mix(h + 0x9e3779b97f4a7c15ull * (index + 1))));
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    // Uniform on [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer on [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        u1 = std::max(u1, 1e-300);
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.141592653589793 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = next_u64() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

    // Sample k distinct indices from [0, n). Order is the draw order.
    std::vector<int> sample_distinct(int n, int k) {
        std::vector<int> pool(n);
        for (int i = 0; i < n; ++i) pool[i] = i;
        std::vector<int> out;
        out.reserve(k);
        for (int i = 0; i < k; ++i) {
            int j = uniform_int(i, n - 1);
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

    uint64_t root_seed() const { return root_; }

private:
    static constexpr uint64_t kStateSalt = 0x2545f4914f6cdd1dull;

    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static uint64_t fnv1a(std::string_view s) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (char c : s) {
            h ^= static_cast<uint8_t>(c);
            h *= 0x100000001b3ull;
        }
        return h;
    }

    uint64_t root_;
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace g2v
