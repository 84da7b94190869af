#pragma once

#include <vector>

#include "gld/cameraops.hpp"
#include "gld/tensor.hpp"

namespace gld {

/// 10*log10(1/MSE) for images in [0,1]; capped at 99 dB for exact matches.
double psnr(const Tensor& a, const Tensor& b);

/// Mean structural similarity with the standard 11x11 Gaussian window,
/// sigma 1.5, valid-mode, averaged over channels. a,b: [H,W,3] or [H,W].
double ssim(const Tensor& a, const Tensor& b);

struct DepthMetrics {
  double abs_rel = 0;
  double sq_rel = 0;
  double rmse = 0;
  double delta1 = 0;  // fraction within 1.25x
  double scale = 1;   // median-alignment factor applied to the prediction
};

/// Median-scaled depth error over pixels where gt > 0. pred, gt: [H,W].
/// align=false skips the median scaling (scale stays 1).
DepthMetrics depth_metrics(const Tensor& pred, const Tensor& gt, bool align = true);

struct TrajectoryMetrics {
  double ate = 0;         // RMSE of camera centers after Sim(3) alignment
  double rpe_rot_deg = 0; // mean consecutive-pair rotation error
  double rpe_trans = 0;   // mean consecutive-pair translation error
};

TrajectoryMetrics trajectory_metrics(const std::vector<CameraPose>& pred,
                                     const std::vector<CameraPose>& gt);

/// Mean two-view cycle reprojection distance in pixels, divided by the
/// image diagonal. Pixels are carried a->b with depth_a and back with the
/// depth map of b sampled at the landing pixel; only in-bounds samples with
/// valid depth on both ends participate, so corrupting either depth map can
/// only push the score up.
double reprojection_error(const Tensor& depth_a, const Tensor& depth_b, const CameraPose& pose_a,
                          const CameraPose& pose_b, int samples, Rng& rng);

}  // namespace gld
