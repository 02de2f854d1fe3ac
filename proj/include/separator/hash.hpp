#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>

namespace separator {

// Streaming 64-bit FNV-1a; used to content-address checkpoints and configs.
struct Fnv1a {
    uint64_t state = 1469598103934665603ull;

    void update(const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            state ^= p[i];
            state *= 1099511628211ull;
        }
    }
    void update(const std::string& s) { update(s.data(), s.size()); }
    void update(uint64_t v) { update(&v, sizeof v); }
    void update(double v) {
        uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof bits);
        update(bits);
    }

    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state));
        return buf;
    }
};

inline std::string fnv1a_hex(const std::string& s) {
    Fnv1a h;
    h.update(s);
    return h.hex();
}

}  // namespace separator
