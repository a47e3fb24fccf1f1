#include "swaplab/transforms.hpp"

#include <cmath>
#include <stdexcept>

#include "swaplab/image_kernels.hpp"

namespace swaplab {

namespace {
constexpr double kPi = 3.14159265358979323846;

void check_image(const Tensor& img, const char* who) {
    if (img.ndim() != 3) throw ShapeError(std::string(who) + ": expected HxWxC image, got " + img.shape_str());
}
} // namespace

void DistortionSamplerConfig::validate() const {
    if (theta_max < 0.0f || psi_max < 0.0f) throw std::invalid_argument("distortion sampler: Theta and Psi must be >= 0");
}

AugmentConfig AugmentConfig::none() {
    AugmentConfig c;
    c.max_rotation_deg = 0.0f;
    c.max_translate_frac = 0.0f;
    c.zoom_range = 0.0f;
    c.color_jitter = 0.0f;
    return c;
}

void AugmentConfig::validate() const {
    if (max_rotation_deg < 0.0f || max_translate_frac < 0.0f || zoom_range < 0.0f || color_jitter < 0.0f)
        throw std::invalid_argument("augment: amplitudes must be >= 0");
}

AffineDistortion sample_distortion(const DistortionSamplerConfig& cfg, RngStream& rng) {
    cfg.validate();
    AffineDistortion d;
    d.theta_deg = rng.uniform(-cfg.theta_max, cfg.theta_max);
    d.shift_x = rng.uniform(-cfg.psi_max, cfg.psi_max);
    d.shift_y = rng.uniform(-cfg.psi_max, cfg.psi_max);
    return d;
}

WarpCoeffs affine_inverse_coeffs(int h, int w, double theta_deg, double shift_x, double shift_y, double zoom) {
    // forward: p' = zoom * R(theta) * (p - c) + c + t; invert for sampling
    const double cx = (w - 1) * 0.5;
    const double cy = (h - 1) * 0.5;
    const double rad = theta_deg * kPi / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double inv_zoom = 1.0 / zoom;
    WarpCoeffs k;
    k.a = cs * inv_zoom;
    k.b = sn * inv_zoom;
    k.c = (-cs * (cx + shift_x) - sn * (cy + shift_y)) * inv_zoom + cx;
    k.d = -sn * inv_zoom;
    k.e = cs * inv_zoom;
    k.f = (sn * (cx + shift_x) - cs * (cy + shift_y)) * inv_zoom + cy;
    return k;
}

Tensor apply_affine(const Tensor& img, const AffineDistortion& d) {
    check_image(img, "apply_affine");
    const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
    if (d.theta_deg == 0.0f && d.shift_x == 0.0f && d.shift_y == 0.0f) return img; // identity, bit-exact
    Tensor out(img.shape());
    warp_bilinear(img.data(), out.data(), h, w, c, affine_inverse_coeffs(h, w, d.theta_deg, d.shift_x, d.shift_y));
    return out;
}

ValueId apply_affine(Tape& tape, ValueId img, const AffineDistortion& d) {
    const Tensor& t = tape.val(img);
    const bool batched = t.ndim() == 4;
    const int h = t.dim(batched ? 1 : 0), w = t.dim(batched ? 2 : 1);
    return tape.affine_warp(img, affine_inverse_coeffs(h, w, d.theta_deg, d.shift_x, d.shift_y));
}

void augment_sample(Tensor& image, Tensor& mask, const AugmentConfig& cfg, RngStream& rng) {
    cfg.validate();
    check_image(image, "augment");
    check_image(mask, "augment");
    const int h = image.dim(0), w = image.dim(1);
    if (mask.dim(0) != h || mask.dim(1) != w)
        throw ShapeError("augment: mask " + mask.shape_str() + " vs image " + image.shape_str());

    double theta = 0.0, tx = 0.0, ty = 0.0, zoom = 1.0;
    if (cfg.enable_rotation) theta = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    if (cfg.enable_translation) {
        const float amp = cfg.max_translate_frac * static_cast<float>(w);
        tx = rng.uniform(-amp, amp);
        ty = rng.uniform(-amp, amp);
    }
    if (cfg.enable_zoom) zoom = 1.0 + rng.uniform(-cfg.zoom_range, cfg.zoom_range);

    if (theta != 0.0 || tx != 0.0 || ty != 0.0 || zoom != 1.0) {
        const WarpCoeffs k = affine_inverse_coeffs(h, w, theta, tx, ty, zoom);
        Tensor wi(image.shape()), wm(mask.shape());
        warp_bilinear(image.data(), wi.data(), h, w, image.dim(2), k);
        warp_bilinear(mask.data(), wm.data(), h, w, mask.dim(2), k);
        image = std::move(wi);
        mask = std::move(wm);
    }

    if (cfg.enable_color_jitter) {
        const int c = image.dim(2);
        for (int ch = 0; ch < c; ++ch) {
            const float delta = rng.uniform(-cfg.color_jitter, cfg.color_jitter);
            for (int64_t i = ch; i < image.numel(); i += c) {
                float v = image[i] + delta;
                image[i] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            }
        }
    }
}

} // namespace swaplab
