// Image quality metrics. All operate on linear RGB with a dynamic
// range of 1. Sharpness is measured as the variance of a 3x3 Laplacian
// response on luma; higher means sharper.
#pragma once

#include <functional>

#include "blursplat/image.hpp"

namespace blursplat {

inline constexpr double kPsnrCap = 99.0;

// 10*log10(1 / MSE) over all pixels and channels, capped at kPsnrCap
// (identical images report the cap).
double psnr(const Image& pred, const Image& target);

// PSNR restricted to pixels the mask flags. Throws if the mask selects
// nothing.
double psnr_masked(const Image& pred, const Image& target, const Mask& mask);

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
// K2 = 0.03, averaged over the three channels on the valid interior.
double ssim(const Image& pred, const Image& target);

// Variance of the 3x3 Laplacian response on Rec.601 luma, interior
// pixels only. Zero for constant (and affine) images.
double laplacian_variance(const Image& img);

// Best metric value over integer translations of pred against target,
// evaluated on the overlap region. The default grid is offsets
// {0..max_shift}^2; `symmetric` widens it to {-max_shift..max_shift}^2.
// `maximize` selects max (quality scores) vs min (distances).
double shift_invariant(
    const std::function<double(const Image&, const Image&)>& metric,
    const Image& pred, const Image& target, int max_shift,
    bool symmetric = false, bool maximize = true);

}  // namespace blursplat
