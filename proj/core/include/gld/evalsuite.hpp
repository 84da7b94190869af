#pragma once

#include <string>
#include <vector>

#include "gld/geoenc.hpp"
#include "gld/metrics.hpp"
#include "gld/mvdiff.hpp"
#include "gld/pipeline.hpp"
#include "gld/scenegen.hpp"

namespace gld {

/// Trajectory accuracy of a generated window: run the full window (source
/// images at their positions, generated images at target positions) through
/// the frozen encoder's pose head and compare against the ground-truth
/// cameras in the normalized gauge.
TrajectoryMetrics pose_metrics(const GeoModel& enc, const Tensor& window_images,
                               const std::vector<CameraPose>& gt_poses);

/// Fraction of ground-truth correspondences recovered by cosine
/// nearest-neighbor token matching. feats_a/b: [T,C] token maps over a
/// grid_h x grid_w grid covering an image_size image. A match counts when
/// the matched token's center lies within threshold_px of the true target
/// pixel. Ties resolve to the lowest token index.
double pck_probe(const Tensor& feats_a, const Tensor& feats_b, int grid_h, int grid_w,
                 int image_size, const CorrespondenceSet& pairs, double threshold_px);

/// Expected PCK when matches land on uniformly random tokens; the chance
/// floor for the probes above.
double pck_chance(int grid_h, int grid_w, int image_size, const CorrespondenceSet& pairs,
                  double threshold_px);

struct AttentionProbeResult {
  std::vector<std::string> layers;  // enc0.., dec0.. in forward order
  std::vector<double> pck;
};

/// Correspondence quality of the denoiser's attention maps: one forward at
/// mid noise on real latents of the given level, capturing q/k right before
/// the score computation at every joint attention layer, then matching view
/// a's queries against view b's keys under the PCK criterion.
AttentionProbeResult attention_probe(const DiffusionModel& model, const GeoModel& enc,
                                     const LatentStats& stats, const MultiViewSequence& seq,
                                     int view_a, int view_b, int level,
                                     const CorrespondenceSet& pairs, double threshold_px,
                                     double t_mid = 0.5);

/// All metric columns for one evaluated window.
struct SceneMetrics {
  double psnr = 0, ssim = 0;
  double absrel = 0, sqrel = 0, rmse = 0, delta1 = 0;
  double ate = 0, rpe_rot_deg = 0, rpe_trans = 0;
  double reproj = 0;
  double pck = 0;  // frozen-feature correspondence between window endpoints
};

SceneMetrics mean_metrics(const std::vector<SceneMetrics>& rows);

/// Generate the targets of one scene window and score them: 2D fidelity on
/// targets, depth metrics from the geometry readout, trajectory metrics via
/// the frozen pose head, and cycle reprojection over consecutive targets.
SceneMetrics evaluate_scene(const GenerationPipeline& pipe, const MultiViewSequence& seq,
                            const std::vector<int>& window, const std::vector<int>& src_idx,
                            int boundary, const SamplerConfig& scfg, bool use_cascade = true);

/// Deterministic choice of validation scenes, frame windows, source views,
/// and per-scene seeds; shared by every evaluation driver so ablation rows
/// stay comparable.
struct EvalWindow {
  std::string scene_id;
  MultiViewSequence seq;
  std::vector<int> window, src_idx;
  uint64_t seed = 0;
};
std::vector<EvalWindow> make_eval_windows(const ExperimentConfig& cfg,
                                          const std::string& data_root);

struct EvalRow {
  std::string label;  // scene id or aggregate tag
  uint64_t seed = 0;
  std::vector<int> window, src_idx;
  SceneMetrics m;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // per scene, then one "mean" row
  std::string config_fingerprint;
  std::string estimator = "frozen_pose_head";
  std::string to_csv() const;  // includes fixed reference rows
  std::string to_json_text() const;
};

/// Full evaluation over the validation split at the given boundary.
EvalReport run_eval(const GenerationPipeline& pipe, const std::string& data_root, int boundary,
                    bool use_cascade);

/// Per-level feature correspondence (PCK, percent) of the frozen encoder
/// over validation scenes; one row per level plus fixed reference rows.
void pck_report(const GeoModel& enc, const ExperimentConfig& cfg, const std::string& data_root,
                const std::string& out_csv);

/// Attention-probe curve for a loaded denoiser (level, or -1 for the
/// cascade model) averaged over validation scenes; CSV layer,pck_percent
/// plus the chance floor.
void attention_report(const GenerationPipeline& pipe, int level, const std::string& data_root,
                      const std::string& out_csv);

}  // namespace gld
