#pragma once

#include "swaplab/rng.hpp"
#include "swaplab/tape.hpp"
#include "swaplab/tensor.hpp"

namespace swaplab {

/// Rotation about the image center followed by a pixel shift
/// (positive = right/down). (0, 0, 0) is the identity.
struct AffineDistortion {
    float theta_deg = 0.0f;
    float shift_x = 0.0f;
    float shift_y = 0.0f;
};

struct DistortionSamplerConfig {
    float theta_max = 10.0f; // degrees
    float psi_max = 3.2f;    // pixels

    void validate() const;
};

struct AugmentConfig {
    float max_rotation_deg = 10.0f;
    float max_translate_frac = 0.05f; // of width
    float zoom_range = 0.05f;
    float color_jitter = 0.05f;
    bool enable_rotation = true;
    bool enable_translation = true;
    bool enable_zoom = true;
    bool enable_color_jitter = true;

    static AugmentConfig none();
    void validate() const;
};

/// theta ~ U[-Theta, Theta]; shift_x, shift_y ~ U[-Psi, Psi], independent.
AffineDistortion sample_distortion(const DistortionSamplerConfig& cfg, RngStream& rng);

/// Inverse-map coefficients for "rotate by theta about the center, scale by
/// zoom, then shift" — what the bilinear warp kernel consumes. theta > 0
/// rotates a point on the +x axis toward +y (downward on screen).
WarpCoeffs affine_inverse_coeffs(int h, int w, double theta_deg, double shift_x, double shift_y, double zoom = 1.0);

/// Warps one H x W x C image (values in [0,1]); bilinear with edge-clamped
/// sampling, bit-exact on the identity distortion.
Tensor apply_affine(const Tensor& img, const AffineDistortion& d);

/// Recorded (differentiable) variant.
ValueId apply_affine(Tape& tape, ValueId img, const AffineDistortion& d);

/// One sample's augmentation: identical geometry for image and mask, color
/// jitter on the image only, outputs clipped to [0,1].
void augment_sample(Tensor& image, Tensor& mask, const AugmentConfig& cfg, RngStream& rng);

} // namespace swaplab
