#pragma once

#include <string>
#include <vector>

#include "gld/cameraops.hpp"
#include "gld/config.hpp"
#include "gld/geoenc.hpp"
#include "gld/nn.hpp"

namespace gld {

/// Linear noise path z_t = (1-t)*clean + t*noise with target velocity
/// u = noise - clean; t = 1 is pure noise.
struct FlowSample {
  Tensor z;
  Tensor u;
};
FlowSample flow_interpolate(const Tensor& clean, const Tensor& noise, double t);

/// Everything the denoiser knows about the window besides the noisy latent:
/// clean source features scattered into their view rows (target rows zero),
/// a source/target indicator, per-token view rays, and per-view projective
/// maps for attention modulation.
struct ConditionInputs {
  Tensor src_tokens;  // [V,T,C], zero on target rows
  Tensor indicator;   // [V,T,1], 0 = source, 1 = target
  Tensor plucker;     // [V,T,6]
  Tensor pose;        // [V,4,4]  P = K_norm * E, after pose normalization
  Tensor pose_inv;    // [V,4,4]
};

/// src_feats: [N,T,C] features of the source views only (already
/// normalized), in src_idx order. poses: all V raw camera poses.
/// drop_camera replaces extrinsics with identity and zeroes the rays, which
/// collapses the attention modulation to a no-op.
ConditionInputs build_condition(const Tensor& src_feats, const std::vector<int>& src_idx,
                                int v_total, const std::vector<CameraPose>& poses, int image_size,
                                int grid, bool drop_camera);

/// Unconditional branch for guidance: sources hidden, cameras kept.
ConditionInputs drop_sources(const ConditionInputs& c);

/// Two-stack denoiser. A condition encoder (width enc_dim) reads
/// concat(z_t, source features[, cascade condition]) and produces per-token
/// state; a wider velocity decoder reads z_t and is modulated token-wise by
/// that state. Both stacks attend jointly over all view-token pairs with
/// projective pose modulation, pick their patch embedder per token from the
/// source/target indicator, and receive rays additively. The velocity head
/// starts at zero.
class DiffusionModel {
 public:
  DiffusionModel(const DiffusionConfig& cfg, int latent_dim, int grid, bool cascade,
                 uint64_t seed);

  /// cascade_cond: required (a noised level-above latent, [V,T,C]) when the
  /// model was built with cascade=true, an error otherwise.
  nn::Var forward(nn::Graph& g, const Tensor& z_t, const ConditionInputs& cond, double t,
                  const Tensor& cascade_cond = {}) const;

  /// Frozen forward returning a plain tensor.
  Tensor predict_velocity(const Tensor& z_t, const ConditionInputs& cond, double t,
                          const Tensor& cascade_cond = {}) const;

  nn::ParamStore params;
  DiffusionConfig cfg;
  int latent_dim = 0, grid = 0;
  bool cascade = false;

 private:
  nn::Linear enc_src_embed_, enc_tgt_embed_;  // (2C or 3C) -> enc_dim
  nn::Linear dec_src_embed_, dec_tgt_embed_;  // C -> dec_dim
  nn::Linear enc_rays_, dec_rays_;
  nn::Linear time_fc1_, time_fc2_;
  std::vector<nn::AdaLnBlock> enc_blocks_;
  nn::Linear cond_proj_;  // enc_dim -> dec_dim token-wise modulation input
  std::vector<nn::AdaLnBlock> dec_blocks_;
  nn::Linear head_;  // dec_dim -> C, zero-initialized
  nn::RopeTables rope_enc_, rope_dec_;

  nn::Var run_stack(nn::Graph& g, nn::Var x, const std::vector<nn::AdaLnBlock>& blocks,
                    const nn::Var& cond, const ConditionInputs& ci, const nn::RopeTables& rope,
                    const nn::QkObserver* observe, const std::string& stack_tag) const;

 public:
  /// Observer invoked for every attention layer during forward; used by
  /// representation probes. Tags look like "enc0", "dec3".
  mutable const nn::QkObserver* qk_observer = nullptr;
};

Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double scale);

struct DiffTrainResult {
  double final_loss = 0;
  double mean_loss_last10 = 0;
};

/// Train the level model (level in [0, n_levels)) or the cascade model
/// (level == -1; conditions additionally on a noised level-1 latent).
/// Chain-checks the encoder checkpoint and latent stats fingerprints.
DiffTrainResult train_mvdiff(const ExperimentConfig& cfg, const std::string& data_root,
                             const std::string& geoenc_path, const std::string& stats_path,
                             int level, const std::string& out_path);

/// Kind string stored in diffusion checkpoints: mvdiff_l<k> or
/// mvdiff_cascade.
std::string mvdiff_kind(int level);

}  // namespace gld
