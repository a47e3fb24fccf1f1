#pragma once

#include "swaplab/tape.hpp"
#include "swaplab/tensor.hpp"

namespace swaplab {

/// Bilinear warp of one H x W x C image by inverse-map coefficients.
/// Sample coordinates are clamped to the image rectangle (edge padding).
/// The identity map reproduces the input bit-exactly.
void warp_bilinear(const float* src, float* dst, int h, int w, int c, const WarpCoeffs& inv);

/// Adjoint of warp_bilinear: scatters dst-gradients back through the
/// bilinear weights, in fixed row-major order.
void warp_bilinear_grad(const float* dgrad, float* sgrad, int h, int w, int c, const WarpCoeffs& inv);

} // namespace swaplab
