#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gld {

struct DataConfig {
  std::string root = "data/synth";
  int image_size = 64;
  int views = 8;            // frames per stored sequence
  int scenes = 48;
  int val_scenes = 8;
  int min_objects = 3;
  int max_objects = 6;
  double min_coverage = 0.30;
  int frame_interval_min = 1;  // stride when sampling a training window
  int frame_interval_max = 1;
  uint64_t seed = 1234;
};

struct EncoderConfig {
  int patch = 4;
  int dim = 128;
  int blocks = 8;
  int heads = 4;
  std::vector<int> taps = {2, 4, 6, 8};  // 1-indexed block outputs, shallow to deep
  int fusion_dim = 64;                   // geometry decoder fusion width
  int pose_hidden = 128;
};

struct RgbDecConfig {
  int dim = 128;
  int blocks = 4;
  int heads = 4;
  double level_dropout = 0.5;
};

struct DiffusionConfig {
  int enc_dim = 128;  // condition encoder width
  int enc_blocks = 4;
  int dec_dim = 256;  // velocity decoder width
  int dec_blocks = 2;
  int cascade_dec_blocks = 2;
  int heads = 4;
  double cfg_scale = 1.5;
  double cond_dropout = 0.1;
  double camera_dropout = 0.1;
  double tau_max = 0.3;
  int sample_steps = 20;
  double rope_theta = 100.0;
  bool use_rope = true;
};

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  int geo_steps = 300;
  int dec_steps = 300;
  int diff_steps = 300;
  int src_min = 1;  // source views per training window
  int src_max = 4;
  double si_log_lambda = 0.85;
  double pose_loss_weight = 1.0;
  double ray_loss_weight = 1.0;
  uint64_t seed = 7;
};

struct EvalConfig {
  int scenes = 4;
  int src_views = 2;           // conditioning views per evaluated window
  int pck_pairs = 64;          // correspondences per view pair
  double pck_threshold = 0.1;  // fraction of the image diagonal
  int reproj_samples = 256;
  uint64_t seed = 99;
};

struct ExperimentConfig {
  std::string run_dir = "runs/default";
  DataConfig data;
  EncoderConfig enc;
  RgbDecConfig rgbdec;
  DiffusionConfig diff;
  TrainConfig train;
  EvalConfig eval;

  /// Parse from JSON; absent keys keep their defaults, unknown keys error.
  static ExperimentConfig from_json_text(const std::string& text);
  std::string to_json_text() const;

  /// Stable hash of the canonical JSON form; stamped into every artifact so
  /// later stages can refuse inputs built under a different setup.
  std::string fingerprint() const;

  /// Small sizes for fast end-to-end runs on one core.
  static ExperimentConfig smoke();
  /// Widths and depths of the full-scale reference setup. Not runnable on a
  /// laptop; kept for documentation and config diffing.
  static ExperimentConfig reference_scale();
};

/// Apply "a.b.c=value" overrides to a config JSON text; value parsed as a
/// JSON literal when possible, else taken as a string.
std::string apply_json_overrides(const std::string& json_text,
                                 const std::vector<std::string>& overrides);

/// GLD_DATA_DIR wins over the config value when set.
std::string resolve_data_root(const std::string& from_config);

}  // namespace gld
