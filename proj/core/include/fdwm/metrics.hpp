#pragma once

#include <vector>

#include "fdwm/geometry.hpp"

namespace fdwm {

// 10*log10(range^2 / MSE) over RGB, capped at 99 dB for zero MSE.
double psnr(const RgbdFrame& pred, const RgbdFrame& gt, double data_range = 1.0);

// PSNR restricted to pixels where the mask is set; the mask selects moved
// regions when comparing against the persistence baseline.
double psnr_masked(const RgbdFrame& pred, const RgbdFrame& gt, const std::vector<uint8_t>& mask,
                   double data_range = 1.0);

// Uniform 8x8 windows, stride 1, grayscale = channel mean,
// C1=(0.01*range)^2, C2=(0.03*range)^2.
double ssim(const RgbdFrame& pred, const RgbdFrame& gt, double data_range = 1.0);

// mean Euclidean norm of the per-pixel flow difference, meters
double flow_epe(const SceneFlowField& f_hat, const SceneFlowField& f);
double flow_mse(const SceneFlowField& f_hat, const SceneFlowField& f);

// sample Pearson correlation; needs n >= 3 and non-constant inputs
double pearson_r(const std::vector<double>& x, const std::vector<double>& y);

// pixels whose ground-truth flow is nonzero
std::vector<uint8_t> moved_mask(const SceneFlowField& gt_flow);

}  // namespace fdwm
