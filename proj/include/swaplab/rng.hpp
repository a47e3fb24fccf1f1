#pragma once

#include <cstdint>
#include <string>

namespace swaplab {

/// Splittable counter-based random stream (Philox4x32-10).
///
/// A stream is identified by (seed, stream id); the stream id is derived by
/// hashing a purpose string, so substreams for data, model init, attacks, ...
/// occupy disjoint counter blocks by construction. State is (seed, stream,
/// counter) and serializes exactly, so checkpoints can resume mid-stream.
class RngStream {
public:
    RngStream() : RngStream(0, "default") {}
    RngStream(uint64_t seed, const std::string& purpose) : RngStream(seed, purpose_id(purpose)) {}
    RngStream(uint64_t seed, uint32_t stream, uint64_t counter = 0);

    /// Substream with the same seed, a new purpose, counter reset to 0.
    RngStream derive(const std::string& purpose) const;
    /// Substream partitioned by index: each index owns a disjoint 2^32 counter block.
    RngStream derive_indexed(const std::string& purpose, uint64_t index) const;

    uint32_t next_u32();
    /// Uniform in [0, 1).
    float uniform();
    /// Uniform in [lo, hi).
    float uniform(float lo, float hi);
    /// Uniform integer in [0, n).
    uint64_t uniform_index(uint64_t n);

    uint64_t seed() const { return seed_; }
    uint32_t stream() const { return stream_; }
    uint64_t counter() const { return counter_; }
    void set_counter(uint64_t c) { counter_ = c; }

    static uint32_t purpose_id(const std::string& purpose); // FNV-1a

private:
    uint64_t seed_ = 0;
    uint32_t stream_ = 0;
    uint64_t counter_ = 0;
};

} // namespace swaplab
