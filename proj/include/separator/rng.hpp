#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>
#include <random>

namespace separator {

// Deterministic RNG used everywhere. All distributions are implemented
// explicitly on top of mt19937_64 so that results are pinned by this file,
// not by the standard library's distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // 53-bit uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // Standard normal, Box-Muller with cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Unbiased integer in [0, n).
    uint64_t below(uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        const uint64_t limit = (UINT64_MAX / n) * n;
        uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return x % n;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (size_t i = v.size() - 1; i > 0; --i) {
            const size_t j = static_cast<size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    template <class T>
    const T& choice(const std::vector<T>& v) {
        if (v.empty()) throw std::invalid_argument("Rng::choice: empty vector");
        return v[below(v.size())];
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Textual state, round-trippable; spare cache included so resumed
    // streams continue bit-exactly. The spare is stored as its raw bit
    // pattern — decimal/hexfloat text does not round-trip reliably.
    std::string state() const {
        std::ostringstream os;
        uint64_t bits;
        std::memcpy(&bits, &spare_, sizeof bits);
        os << gen_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << bits;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        int flag = 0;
        uint64_t bits = 0;
        is >> gen_ >> flag >> bits;
        if (is.fail()) throw std::runtime_error("Rng::set_state: malformed state string");
        has_spare_ = flag != 0;
        std::memcpy(&spare_, &bits, sizeof spare_);
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_{false};
    double spare_{0.0};
};

// Derives independent stream seeds from a base seed (splitmix64 mix).
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace separator
