#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gld/config.hpp"
#include "gld/geoenc.hpp"
#include "gld/mvdiff.hpp"
#include "gld/rgbdec.hpp"

namespace gld {

struct SamplerConfig {
  int n_steps = 50;
  double cfg_scale = 1.5;
  uint64_t seed = 0;
};

/// Velocity field queried during sampling: (z_t, t) -> u.
using VelocityFn = std::function<Tensor(const Tensor&, double)>;

/// Integrates z' = -u(z,t) from t=1 down to t=0 with n_steps uniform Euler
/// steps, starting from z1 (pure noise at t=1).
Tensor euler_integrate(const Tensor& z1, const VelocityFn& velocity, int n_steps);

/// Wall-clock phases of one generation: sampling levels boundary..1,
/// deriving deeper levels through the frozen trunk, sampling level 0, and
/// decoding. Milliseconds.
struct GenerationTimings {
  double sample_boundary_ms = 0;
  double propagate_ms = 0;
  double sample_level0_ms = 0;
  double decode_ms = 0;
  double total_ms = 0;
  std::string to_json_text() const;
};

struct GenerationResult {
  Tensor images;                         // [M,H,W,3] decoded target views
  Tensor depth;                          // [M,H,W] geometry readout, targets
  std::vector<CameraPose> est_poses;     // geometry readout, full window
  MultiLevelFeatures latents;            // complete level set, raw space
  std::vector<int> src_idx, tgt_idx;     // positions within the window
  std::vector<CameraPose> window_poses;  // requested cameras, normalized
  GenerationTimings timings;
};

/// Artifact naming convention inside a run directory.
std::string artifact_geoenc(const std::string& run_dir);
std::string artifact_stats(const std::string& run_dir);
std::string artifact_rgbdec(const std::string& run_dir);
std::string artifact_mvdiff(const std::string& run_dir, int level);  // -1 = cascade

/// Holds every frozen model needed for generation. The constructor loads
/// the encoder, latent stats, and RGB decoder (all required) plus whichever
/// diffusion checkpoints exist under run_dir, and errors out if any
/// artifact was produced under a different config or encoder snapshot.
class GenerationPipeline {
 public:
  /// geoenc_override, when non-empty, replaces the conventional encoder
  /// checkpoint path under run_dir.
  GenerationPipeline(const ExperimentConfig& cfg, const std::string& run_dir,
                     const std::string& geoenc_override = "");

  const ExperimentConfig& config() const { return cfg_; }
  const GeoModel& encoder() const { return *enc_; }
  const RgbDecoder& decoder() const { return *dec_; }
  const LatentStats& stats() const { return stats_; }
  /// Loaded level model or null.
  const DiffusionModel* level_model(int level) const;
  const DiffusionModel* cascade_model() const { return cascade_.get(); }

  /// Euler integration of the learned velocity field from t=1 to t=0 with
  /// classifier-free guidance; returns the level latent in normalized
  /// space. The unconditional branch is skipped exactly when cfg_scale is 1.
  Tensor sample_level(const DiffusionModel& model, const ConditionInputs& cond,
                      const SamplerConfig& scfg, Rng& rng, const Tensor& cascade_cond = {}) const;

  /// Sample levels boundary..0 (level 0 through the cascade model when
  /// use_cascade and one is loaded and boundary >= 1), derive levels above
  /// the boundary with the frozen trunk, then decode RGB and geometry.
  /// src_images: [N,H,W,3] for the window positions listed in src_idx; the
  /// remaining positions of window_poses are the targets.
  GenerationResult generate(const Tensor& src_images, const std::vector<int>& src_idx,
                            const std::vector<CameraPose>& window_poses, int boundary,
                            const SamplerConfig& scfg, bool use_cascade = true) const;

 private:
  ExperimentConfig cfg_;
  std::unique_ptr<GeoModel> enc_;
  LatentStats stats_;
  std::unique_ptr<RgbDecoder> dec_;
  std::vector<std::unique_ptr<DiffusionModel>> level_models_;
  std::unique_ptr<DiffusionModel> cascade_;
};

/// Persist a result as images/*.png + depth/*.f32 + cameras.json +
/// latents.bin + timings.json under dir.
void save_generation(const GenerationResult& r, const std::string& dir);
MultiLevelFeatures load_latents(const std::string& path);

/// NVS quality as a function of the synthesis boundary: one row per
/// boundary k with {psnr, ssim, absrel, rmse, delta1} over the validation
/// scenes, all levels <= k sampled independently. CSV gains fixed
/// reference rows for comparison.
void boundary_sweep(const GenerationPipeline& pipe, const std::string& data_root,
                    const std::string& out_csv);

/// Independent vs cascaded level-0 generation at boundary 1 under identical
/// seeds and view choices; emits 2D and trajectory metrics per row.
void cascade_ablation(const GenerationPipeline& pipe, const std::string& data_root,
                      const std::string& out_csv);

}  // namespace gld
