#pragma once

#include <string>
#include <vector>

#include "gld/config.hpp"
#include "gld/geoenc.hpp"
#include "gld/nn.hpp"

namespace gld {

/// Feature-to-RGB decoder. Each level (present or not) contributes a
/// projected token stream; absent levels are stood in for by a learned
/// per-level mask token so the decoder can run from any non-empty subset.
/// Projections are concatenated channel-wise, refined by within-view
/// attention blocks, and read out through a sigmoid, so outputs always lie
/// in [0,1].
class RgbDecoder {
 public:
  RgbDecoder(const RgbDecConfig& cfg, const EncoderConfig& enc_cfg, int image_size,
             uint64_t seed);

  /// levels[k] may be an undefined Tensor when present[k] is false.
  nn::Var decode(nn::Graph& g, const std::vector<Tensor>& levels,
                 const std::vector<bool>& present, int n_views) const;

  /// Frozen inference; features must be in the raw (denormalized) space.
  Tensor decode_frozen(const MultiLevelFeatures& feats, const std::vector<bool>& present) const;
  Tensor decode_frozen(const MultiLevelFeatures& feats) const;  // all levels

  nn::ParamStore params;
  RgbDecConfig cfg;
  int image_size = 0;

 private:
  int grid_ = 0, patch_ = 0, levels_ = 0, in_dim_ = 0;
  std::vector<Tensor> mask_tokens_;   // [1,C] learned stand-ins
  std::vector<nn::Linear> proj_;      // C -> dim/levels
  Tensor pos_emb_;                    // [T, dim]
  std::vector<nn::Block> blocks_;
  nn::RmsNorm final_norm_;
  nn::Linear out_;
};

/// Pick a non-empty random level subset: each level kept with probability
/// (1 - dropout), redrawn until at least one survives.
std::vector<bool> sample_level_subset(int n_levels, double dropout, Rng& rng);

struct RgbTrainResult {
  double final_loss = 0;
  double final_l1 = 0;
  double final_ssim = 0;  // SSIM of the last batch, not the loss term
};

/// Trains against frozen encoder features with level dropout; writes an
/// "rgbdec" checkpoint stamped with the config fingerprint and the encoder
/// parameter fingerprint for chain checking.
RgbTrainResult train_rgbdec(const ExperimentConfig& cfg, const std::string& data_root,
                            const std::string& geoenc_path, const std::string& out_path);

/// Reconstruction quality over the validation split, decoding from each
/// level alone and from the full set.
/// Writes CSV `subset,psnr,ssim` plus a fixed reference row.
void recon_report(const ExperimentConfig& cfg, const std::string& data_root,
                  const std::string& geoenc_path, const std::string& rgbdec_path,
                  const std::string& out_csv);

}  // namespace gld
