#pragma once

#include <string>
#include <vector>

#include "gld/cameraops.hpp"
#include "gld/config.hpp"
#include "gld/dataset_io.hpp"
#include "gld/nn.hpp"

namespace gld {

/// Per-level, per-channel normalization statistics for the encoder's
/// feature space. Standard deviations are floored at 1e-4 so degenerate
/// channels cannot blow up the normalized values.
struct LatentStats {
  std::vector<Tensor> mean;   // one [C] per level
  std::vector<Tensor> stdev;  // one [C] per level
  std::string corpus_id;

  bool defined() const { return !mean.empty(); }
  std::string to_json_text() const;
  static LatentStats from_json_text(const std::string& text);
};

/// Features tapped from several encoder depths. levels[k] is [V,T,C] with
/// k = 0 the shallowest tap. The `normalized` flag tracks whether
/// normalize_features was applied, so double (de)normalization is an error
/// instead of silent corruption.
struct MultiLevelFeatures {
  std::vector<Tensor> levels;
  int grid_h = 0, grid_w = 0;
  bool normalized = false;
};

void normalize_features(MultiLevelFeatures& f, const LatentStats& stats);
void denormalize_features(MultiLevelFeatures& f, const LatentStats& stats);

/// Multi-view feature encoder with geometry heads. The trunk patchifies
/// each view, adds a fixed sin/cos grid embedding shared by all views, and
/// alternates within-view and cross-view attention blocks; no camera input
/// anywhere, so outputs are equivariant to view permutations. Features are
/// read out at the configured tap depths.
class GeoModel {
 public:
  GeoModel(const EncoderConfig& cfg, int image_size, uint64_t seed);

  int grid() const { return grid_; }
  int n_levels() const { return int(cfg.taps.size()); }

  /// images: [V,H,W,3]. Returns one [V,T,C] per tap, shallow to deep.
  std::vector<nn::Var> encode(nn::Graph& g, const Tensor& images) const;

  /// Frozen no-grad encode, packaged for downstream consumers.
  MultiLevelFeatures encode_frozen(const Tensor& images) const;

  /// Resume the frozen trunk from the level-k tap: runs the blocks between
  /// tap k and the deepest tap on f_k ([V,T,C]) and returns features for
  /// levels k..deepest (index 0 of the result aliases f_k). Because the
  /// same block objects run in both paths, this matches a full encode
  /// bit for bit on real level-k features.
  std::vector<Tensor> propagate(const Tensor& f_k, int level_k) const;

  struct GeoHeads {
    nn::Var depth;  // [V,H,W,1], positive
    nn::Var rays;   // [V,H,W,6]
    nn::Var pose;   // [V,10]: first two rotation columns, translation, log focal
    nn::Var rot;    // [V,9] orthonormalized rotation, row-major
  };
  /// Dense geometry and camera readout from the tapped features. Poses are
  /// predicted relative to the last view: each view's pooled tokens are
  /// paired with the last view's, which fixes the gauge without breaking
  /// the trunk's permutation equivariance.
  GeoHeads decode_geometry(nn::Graph& g, const std::vector<nn::Var>& levels) const;

  /// Convenience for frozen inference: depth [V,H,W], rays [V,H,W,6],
  /// poses as CameraPose (intrinsics from the predicted focal).
  struct GeoOutput {
    Tensor depth;
    Tensor rays;
    std::vector<CameraPose> poses;
  };
  GeoOutput infer_geometry(const Tensor& images) const;

  /// Same readout from already-computed raw-space level tensors, e.g.
  /// synthesized ones.
  GeoOutput geometry_from_levels(const std::vector<Tensor>& levels) const;

  nn::ParamStore params;
  EncoderConfig cfg;
  int image_size = 0;

 private:
  int grid_ = 0;
  Tensor pos_emb_;  // [T, C]
  nn::Linear patch_embed_;
  std::vector<nn::Block> blocks_;
  // geometry decoder
  std::vector<nn::Linear> level_proj_;
  Tensor fuse_w1_, fuse_b1_, fuse_w2_, fuse_b2_;   // 3x3 convs at grid res
  std::vector<Tensor> up_w_, up_b_;                // conv + pixel-shuffle stages
  Tensor head_w_, head_b_;                         // shared 3x3 conv before heads
  nn::Linear depth_head_, ray_head_;
  nn::Linear pose_fc1_, pose_fc2_;

  nn::Var trunk_block(nn::Graph& g, nn::Var x, int block_idx) const;
};

/// Scale-invariant log depth loss with a validity mask, plus ray and pose
/// regression. Returns the scalar total; parts reported for logging.
struct GeoLossParts {
  double total = 0, depth = 0, rays = 0, pose = 0;
};

/// One training run over the dataset at root. Writes a "geoenc" checkpoint
/// with config fingerprint metadata and returns the final loss parts.
GeoLossParts train_geoenc(const ExperimentConfig& cfg, const std::string& data_root,
                          const std::string& out_path);

/// Mean/std over the configured dataset using full-view frozen encodes.
LatentStats compute_latent_stats(const GeoModel& model, const std::string& data_root,
                                 const DatasetManifest& manifest, int max_scenes = 0);

}  // namespace gld
