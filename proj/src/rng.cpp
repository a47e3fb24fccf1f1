#include "swaplab/rng.hpp"

namespace swaplab {
namespace {

struct Ctr4 {
    uint32_t v[4];
};

inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
    uint64_t p = static_cast<uint64_t>(a) * b;
    hi = static_cast<uint32_t>(p >> 32);
    lo = static_cast<uint32_t>(p);
}

// Philox4x32-10 block function (Salmon et al. reference constants).
Ctr4 philox4x32(Ctr4 ctr, uint32_t key0, uint32_t key1) {
    constexpr uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        uint32_t hi0, lo0, hi1, lo1;
        mulhilo(M0, ctr.v[0], hi0, lo0);
        mulhilo(M1, ctr.v[2], hi1, lo1);
        Ctr4 out;
        out.v[0] = hi1 ^ ctr.v[1] ^ key0;
        out.v[1] = lo1;
        out.v[2] = hi0 ^ ctr.v[3] ^ key1;
        out.v[3] = lo0;
        ctr = out;
        key0 += W0;
        key1 += W1;
    }
    return ctr;
}

} // namespace

RngStream::RngStream(uint64_t seed, uint32_t stream, uint64_t counter) : seed_(seed), stream_(stream), counter_(counter) {}

uint32_t RngStream::purpose_id(const std::string& purpose) {
    uint32_t h = 2166136261u;
    for (unsigned char c : purpose) {
        h ^= c;
        h *= 16777619u;
    }
    return h;
}

RngStream RngStream::derive(const std::string& purpose) const { return RngStream(seed_, purpose_id(purpose)); }

RngStream RngStream::derive_indexed(const std::string& purpose, uint64_t index) const {
    return RngStream(seed_, purpose_id(purpose), index << 32);
}

uint32_t RngStream::next_u32() {
    uint64_t block = counter_ >> 2;
    unsigned lane = static_cast<unsigned>(counter_ & 3u);
    Ctr4 ctr{{static_cast<uint32_t>(block), static_cast<uint32_t>(block >> 32), stream_,
              static_cast<uint32_t>(seed_ >> 32)}};
    Ctr4 out = philox4x32(ctr, static_cast<uint32_t>(seed_), static_cast<uint32_t>(seed_ >> 32) ^ stream_);
    ++counter_;
    return out.v[lane];
}

float RngStream::uniform() {
    // 2^-32; strictly below 1.0f after rounding of (2^32-1) * 2^-32 is not
    // guaranteed in f32, so map through double first.
    return static_cast<float>(next_u32() * (1.0 / 4294967296.0));
}

float RngStream::uniform(float lo, float hi) {
    return lo + (hi - lo) * uniform();
}

uint64_t RngStream::uniform_index(uint64_t n) {
    if (n == 0) return 0;
    return (static_cast<uint64_t>(next_u32()) << 32 | next_u32()) % n;
}

} // namespace swaplab
