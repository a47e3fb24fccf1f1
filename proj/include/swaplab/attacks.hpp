#pragma once

#include <functional>

#include "swaplab/faceswap.hpp"

namespace swaplab {

/// Conditional perturbation generator with the l-infinity budget built into
/// the architecture: output = clip(x + epsilon * tanh(head), 0, 1), so no
/// projection step is ever needed and epsilon = 0 forces G(x, N) = x.
/// Conditioning: (theta/Theta, shift_x/Psi, shift_y/Psi) tiled as three
/// constant channels and concatenated to the image.
struct AdvGenerator {
    float epsilon = 2.0f / 255.0f;
    float theta_max = 10.0f;
    float psi_max = 3.2f;
    int resolution = 32;
    ParamSet params;

    static AdvGenerator init(float epsilon, float theta_max, float psi_max, int resolution, RngStream& rng);
};

/// Constant conditioning channels for a batch of distortions.
Tensor distortion_channels(const std::vector<AffineDistortion>& ds, float theta_max, float psi_max, int resolution);

/// Recorded generator forward on an N x H x W x 3 batch leaf.
ValueId generator_forward(Tape& tape, const BoundParams& bp, const AdvGenerator& gen, ValueId x, ValueId cond);

/// G(x, N) for one image (no gradients kept).
Tensor ogan_perturb(const AdvGenerator& gen, const Tensor& image, const AffineDistortion& n);

/// Distortion loss -rms(h_adv - h_x): the negated, element-count-normalized
/// L2 norm, so step sizes are resolution independent.
ValueId loss_dist(Tape& tape, ValueId h_adv, ValueId h_x);

/// Adversarial loss of Eq-style OGAN training: masked L1 between the A-side
/// face output on x_adv and the distorted original N(x).
ValueId loss_adv(Tape& tape, ValueId f_a_face_on_adv, ValueId distorted_target, ValueId mask);

struct PgdConfig {
    float epsilon = 2.0f / 255.0f;
    float alpha = 0.001f;
    int iterations = 200;
    uint64_t seed = 0;

    void validate() const;
};

/// Builds the recorded deepfake output for one image leaf.
using TapeImageFn = std::function<ValueId(Tape&, ValueId)>;

/// PGD Distorting Attack core: x_0 = x + U[-eps, eps] noise, then
/// x_{t+1} = clip_valid(clip_box(x_t - alpha * sign(grad loss_dist))).
/// Every iterate stays inside the eps box around x and inside [0,1].
Tensor pgd_distort_fn(const TapeImageFn& deepfake, const Tensor& image, const PgdConfig& cfg, RngStream& init_rng);

/// Distorting Attack against a trained swap model (H = blend through f_B).
/// The init noise substream is keyed by frame_index, so results do not
/// depend on processing order.
Tensor pgd_distort(const SwapModel& model, const Tensor& image, const PgdConfig& cfg, int frame_index);

struct OganConfig {
    float epsilon = 2.0f / 255.0f;
    float theta_max = 10.0f; // Theta, degrees
    float psi_max = 3.2f;    // Psi, pixels
    int batch_size = 16;
    int batch_iters = 8;
    int epochs = 48; // M
    OptimConfig gen_optimizer{5e-5f, 0.9f, 0.9999f, 1e-8f};
    OptimConfig swap_optimizer{5e-5f, 0.5f, 0.999f, 1e-8f};
    AugmentConfig augment;
    uint64_t seed = 0;
};

struct OganResult {
    AdvGenerator generator;
    std::vector<AffineDistortion> distortions; // aligned with P_A order
    SwapModel cotrained;                       // evolved copy; the input model is untouched
    std::vector<float> adv_loss;               // one value per generator step
};

/// Bilevel alternating training: the per-sample distortions are sampled once
/// up front and stay fixed across epochs; each epoch walks the P_A batches
/// (batch_iters generator steps, then one f_A step on the augmented
/// adversarial batch and one f_B step), then sweeps D_A minus P_A.
OganResult ogan_train(const DatasetPartition& part, const SwapModel& pretrained, const OganConfig& cfg);

/// One adversarial image per protected sample; masks and frame indices
/// unchanged. Distortions are matched by frame_index and must cover every
/// sample.
Dataset protect_with_generator(const AdvGenerator& gen, const std::vector<std::pair<int, AffineDistortion>>& np,
                               const Dataset& protected_samples);
Dataset protect_with_pgd(const SwapModel& model, const Dataset& protected_samples, const PgdConfig& cfg);

/// Attack artifact I/O: JSON list of {frame_index, theta, shift_x, shift_y}.
void save_distortions(const std::filesystem::path& file, const Dataset& protected_samples,
                      const std::vector<AffineDistortion>& ds);
std::vector<std::pair<int, AffineDistortion>> load_distortions(const std::filesystem::path& file);

void save_generator(const AdvGenerator& gen, const std::filesystem::path& dir, const nlohmann::json& extra_meta);
AdvGenerator load_generator(const std::filesystem::path& dir);

} // namespace swaplab
