#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "swaplab/optim.hpp"
#include "swaplab/rng.hpp"

namespace swaplab {

/// On-disk state of an RNG stream, stored in the checkpoint manifest.
struct RngRecord {
    std::string purpose;
    uint64_t seed = 0;
    uint32_t stream = 0;
    uint64_t counter = 0;
};

/// Checkpoint = manifest.json + blob.bin in one directory. The manifest
/// lists {name, shape, byte offset} per tensor (values and Adam moments),
/// per-parameter step counters, RNG stream counters, and a freeform `meta`
/// object (phase, architecture, lineage, ...). Tensors are raw
/// little-endian f32 in the blob, so a save/load round trip is bit-exact.
struct Checkpoint {
    ParamSet params;
    std::vector<RngRecord> rng;
    nlohmann::json meta;

    void save(const std::filesystem::path& dir) const;
    static Checkpoint load(const std::filesystem::path& dir);

    RngStream restore_stream(const std::string& purpose) const;
    void record_stream(const std::string& purpose, const RngStream& s);
};

/// True when both directories hold byte-identical manifest and blob files.
bool checkpoints_identical(const std::filesystem::path& a, const std::filesystem::path& b);

} // namespace swaplab
