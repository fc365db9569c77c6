#pragma once

#include "tpinv/camera.hpp"
#include "tpinv/image.hpp"

namespace tpinv {

struct MetricsReport {
    Scalar mse = 0;
    Scalar psnr = 0;
    Scalar ssim = 0;
    Scalar geo_err = 0;
};

// PSNR is capped at 99 dB so identical images stay finite.
Scalar psnr_db(Scalar mse);

// Mean per-channel SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// unit dynamic range, valid-window positions only.
Scalar ssim_index(const Tensor& pred, const Tensor& gt);

// RMS distance between depth maps standardized to zero mean and unit variance.
// A map with near-zero variance standardizes to all zeros.
Scalar geometry_error(const Tensor& pred_depth, const Tensor& gt_depth);

MetricsReport eval_metrics(const Tensor& pred, const Tensor& gt,
                           const Tensor& pred_depth, const Tensor& gt_depth);

}  // namespace tpinv
