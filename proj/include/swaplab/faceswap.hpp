#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "swaplab/checkpoint.hpp"
#include "swaplab/optim.hpp"
#include "swaplab/synthdata.hpp"
#include "swaplab/tape.hpp"
#include "swaplab/transforms.hpp"

namespace swaplab {

/// h128-mini: no skip connections. sae-mini: encoder stages concatenated
/// into the matching decoder stages (decoders only).
enum class SwapArch { H128Mini, SaeMini };

const char* arch_name(SwapArch a);
SwapArch arch_from_name(const std::string& s);

enum class Side { A, B };

/// Shared-encoder dual-decoder face swapper. Each decoder emits a face
/// (3 channels) and a mask (1 channel), both through sigmoid heads.
struct SwapModel {
    SwapArch arch = SwapArch::H128Mini;
    int resolution = 32;
    ParamSet params;

    static SwapModel init(SwapArch arch, int resolution, RngStream& rng);
};

struct TrainConfig {
    int iterations = 3000; // T
    int batch_size = 16;
    OptimConfig optimizer{5e-5f, 0.5f, 0.999f, 1e-8f};
    AugmentConfig augment;
    uint64_t seed = 0;
    // Namespaces the RNG substreams, so a retrained victim never shares its
    // fresh initialization with the model an attack was trained against.
    std::string stream_namespace = "pretrain";
};

/// Tape leaves for a subset of a ParamSet, keyed by parameter name.
struct BoundParams {
    std::map<std::string, ValueId> ids;
    ValueId at(const std::string& name) const;
};

/// Creates one leaf per parameter whose name starts with any given prefix.
BoundParams bind_params(Tape& tape, const ParamSet& params, const std::vector<std::string>& prefixes,
                        bool trainable);

struct EncoderTaps {
    ValueId e1, e2, e3; // post-activation conv stages
    ValueId seed;       // dense bottleneck reshaped back to a map
};

/// Shared network builders (the adversarial generator reuses them).
void init_encoder_params(ParamSet& p, const std::string& prefix, int in_channels, int resolution, RngStream& rng);
void init_decoder_params(ParamSet& p, const std::string& prefix, bool with_skips, RngStream& rng);
EncoderTaps encoder_forward(Tape& tape, const BoundParams& bp, const std::string& prefix, ValueId x, int resolution);
/// Returns the 16-channel pre-head feature map at full resolution.
ValueId decoder_forward(Tape& tape, const BoundParams& bp, const std::string& prefix, bool with_skips,
                        const EncoderTaps& taps);

struct SwapOutputs {
    ValueId face;
    ValueId mask;
};

SwapOutputs swap_forward(Tape& tape, const BoundParams& bp, SwapArch arch, Side side, ValueId x, int resolution);

/// Replicates a 1-channel mask to `channels` so it can gate an image with
/// pointwise ops (the op set has no broadcasting).
ValueId tile_mask(Tape& tape, ValueId mask, int channels);

/// Blend H(x) = face(x) * mask(x) + x * (1 - mask(x)) through decoder B.
ValueId swap_blend(Tape& tape, const BoundParams& bp, SwapArch arch, ValueId x, int resolution);

// FaceSwap losses; all are means over elements, so values are batch-size
// invariant.
ValueId loss_face(Tape& tape, ValueId pred_face, ValueId target, ValueId mask);
ValueId loss_mask(Tape& tape, ValueId pred_mask, ValueId mask);
ValueId loss_rec(Tape& tape, ValueId pred_face, ValueId pred_mask, ValueId target, ValueId mask);

/// Stacks samples into an N x H x W x C batch (images) and N x H x W x 1 (masks).
Tensor stack_images(const std::vector<const FaceSample*>& batch);
Tensor stack_masks(const std::vector<const FaceSample*>& batch);

/// One optimization step on the encoder and the selected decoder: augment,
/// forward, reverse sweep, Adam. Returns L_rec on the augmented batch.
float train_step(SwapModel& model, Side side, const std::vector<const FaceSample*>& batch, const AugmentConfig& aug,
                 const OptimConfig& opt, RngStream& aug_rng);

struct PretrainResult {
    SwapModel model;
    std::vector<float> loss_a;
    std::vector<float> loss_b;
};

/// Alternates one A-batch step and one B-batch step per iteration, T times.
/// The hook (when set) runs after each iteration, e.g. to persist periodic
/// checkpoints.
using TrainHook = std::function<void(int iteration, const SwapModel&)>;
PretrainResult pretrain(const Dataset& data_a, const Dataset& data_b, SwapArch arch, const TrainConfig& cfg,
                        const TrainHook& hook = {});

/// Deepfake output for a full sequence; inputs and outputs stay f32.
std::vector<Tensor> swap_sequence(const SwapModel& model, const Dataset& frames);

/// Checkpoint helpers (manifest records architecture and resolution).
void save_model(const SwapModel& model, const std::filesystem::path& dir, const nlohmann::json& extra_meta,
                const std::vector<RngRecord>& rng = {});
SwapModel load_model(const std::filesystem::path& dir);

} // namespace swaplab
