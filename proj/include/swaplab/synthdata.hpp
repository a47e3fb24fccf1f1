#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "swaplab/rng.hpp"
#include "swaplab/tensor.hpp"

namespace swaplab {

/// One face crop with its mask — the unit of every dataset.
struct FaceSample {
    Tensor image; // H x W x C in [0,1]
    Tensor mask;  // H x W x 1 in [0,1]
    int frame_index = 0;
    std::string identity_tag;
};

using Dataset = std::vector<FaceSample>;

/// Deterministic parameters of one synthetic identity: face geometry,
/// feature offsets, palette, texture seed, and smooth motion trajectories.
/// Same spec + seed always renders the same sequence.
struct SynthIdentitySpec {
    std::string tag = "A";

    // geometry (fractions of image size / face radius)
    double center_x = 0.5, center_y = 0.52;
    double radius_x = 0.30, radius_y = 0.38;
    double eye_dx = 0.42, eye_dy = -0.28, eye_r = 0.17, pupil_r = 0.08;
    double brow_dy = -0.52, brow_h = 0.07;
    double mouth_dy = 0.45, mouth_w = 0.46, mouth_h = 0.13;
    double feather = 0.10; // mask feather half-width, in normalized radius units

    // palette
    double skin[3] = {0.85, 0.67, 0.55};
    double bg_top[3] = {0.20, 0.28, 0.38};
    double bg_bottom[3] = {0.38, 0.44, 0.52};
    double eye_color[3] = {0.15, 0.25, 0.45};
    double mouth_color[3] = {0.62, 0.25, 0.25};

    // texture
    uint64_t texture_seed = 1;
    double texture_amp = 0.02;

    // motion (per-frame trajectories; motion_scale = 0 freezes the sequence)
    double motion_scale = 1.0;
    double drift_amp_x = 0.8, drift_freq_x = 0.110, drift_phase_x = 0.3;
    double drift_amp_y = 0.6, drift_freq_y = 0.073, drift_phase_y = 1.1;
    double wobble_amp = 0.03, wobble_freq = 0.059, wobble_phase = 0.7;
    double mouth_amp = 0.35, mouth_freq = 0.127, mouth_phase = 0.2;
    double noise_amp = 0.0; // optional per-frame pixel noise

    static SynthIdentitySpec preset(const std::string& tag); // "A", "B", "C"
    static SynthIdentitySpec random(const std::string& tag, RngStream& rng);

    nlohmann::json to_json() const;
    static SynthIdentitySpec from_json(const nlohmann::json& j);
};

/// Source/target/transfer datasets plus the protected subsequence of D_A.
struct DatasetPartition {
    Dataset d_a, d_b, d_c;
    size_t protected_begin = 0;
    size_t protected_end = 0; // half-open

    size_t protected_count() const { return protected_end - protected_begin; }
    Dataset protected_samples() const;
    Dataset unprotected_samples() const;
};

Dataset synthesize_sequence(const SynthIdentitySpec& spec, int n_frames, int resolution, RngStream& rng);

DatasetPartition build_partition(const SynthIdentitySpec& spec_a, const SynthIdentitySpec& spec_b,
                                 const SynthIdentitySpec& spec_c, int frames_per_identity, size_t protected_begin,
                                 size_t protected_end, int resolution, RngStream& rng);

/// Frames-as-files storage: frame_NNNNNN.ppm (P6) + mask_NNNNNN.pgm (P5),
/// 8-bit, numbered by frame_index. Reading quantized frames differs from the
/// written f32 data by at most 1/(2*255) per element.
void write_frames(const std::filesystem::path& dir, const Dataset& samples);
Dataset read_frames(const std::filesystem::path& dir);

/// Single 8-bit binary PPM (H x W x 3) — used for report image strips.
void write_ppm(const std::filesystem::path& file, const Tensor& image);

/// Every file read_frames() touched since the last take(); the harness
/// records this in run manifests to audit dataset hygiene.
namespace io_audit {
void record(const std::filesystem::path& p);
std::vector<std::string> take();
} // namespace io_audit

} // namespace swaplab
