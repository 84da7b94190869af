#include "gld/rgbdec.hpp"

#include <cmath>
#include <cstring>

#include <json.hpp>

#include "gld/checkpoint.hpp"
#include "gld/metrics.hpp"

namespace gld {

using nn::Graph;
using nn::Var;

namespace {

Tensor tile_rows(const Tensor& t, int v) {
  Tensor out({v, t.dim(0), t.dim(1)});
  for (int i = 0; i < v; ++i)
    std::memcpy(out.data() + int64_t(i) * t.numel(), t.data(), size_t(t.numel()) * sizeof(float));
  return out;
}

int mlp_hidden(int dim) { return ((8 * dim / 3) + 7) / 8 * 8; }

Tensor gaussian_kernel11() {
  constexpr int k = 11;
  constexpr double sigma = 1.5;
  Tensor out({k, k});
  double win[k];
  double s = 0;
  for (int i = 0; i < k; ++i) {
    const double x = i - (k - 1) / 2.0;
    win[i] = std::exp(-x * x / (2 * sigma * sigma));
    s += win[i];
  }
  for (int i = 0; i < k; ++i) win[i] /= s;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) out.at(int64_t(i) * k + j) = float(win[i] * win[j]);
  return out;
}

}  // namespace

RgbDecoder::RgbDecoder(const RgbDecConfig& cfg_in, const EncoderConfig& enc_cfg,
                       int image_size_in, uint64_t seed)
    : cfg(cfg_in), image_size(image_size_in) {
  patch_ = enc_cfg.patch;
  grid_ = image_size / patch_;
  levels_ = int(enc_cfg.taps.size());
  check(cfg.dim % levels_ == 0, "rgb decoder dim must divide by level count");
  check(cfg.dim % cfg.heads == 0, "rgb decoder dim not divisible by heads");
  in_dim_ = enc_cfg.dim;
  Rng rng(seed);
  for (int k = 0; k < levels_; ++k) {
    mask_tokens_.push_back(
        params.create(str("mask_token", k), {1, in_dim_}, rng, 0.02f));
    proj_.emplace_back(params, str("proj", k), in_dim_, cfg.dim / levels_, rng);
  }
  pos_emb_ = nn::sincos_pos_emb_2d(grid_, grid_, cfg.dim);
  for (int b = 0; b < cfg.blocks; ++b)
    blocks_.emplace_back(params, str("block", b), cfg.dim, cfg.heads, mlp_hidden(cfg.dim), rng);
  final_norm_ = nn::RmsNorm(params, "final_norm", cfg.dim);
  out_ = nn::Linear(params, "out", cfg.dim, patch_ * patch_ * 3, rng);
}

Var RgbDecoder::decode(Graph& g, const std::vector<Tensor>& levels,
                       const std::vector<bool>& present, int n_views) const {
  check(int(levels.size()) == levels_ && int(present.size()) == levels_,
        "decode: expected ", levels_, " levels");
  bool any = false;
  for (bool p : present) any |= p;
  check(any, "decode: at least one level must be present");
  const int t = grid_ * grid_;
  std::vector<Var> streams;
  for (int k = 0; k < levels_; ++k) {
    Var toks;
    if (present[size_t(k)]) {
      tensor_check_shape(levels[size_t(k)], {n_views, t, in_dim_}, "decode level");
      toks = g.constant(levels[size_t(k)]);
    } else {
      toks = ad::reshape(g, nn::broadcast_rows(g, g.leaf(mask_tokens_[size_t(k)]), n_views * t),
                         {n_views, t, in_dim_});
    }
    streams.push_back(proj_[size_t(k)](g, toks));
  }
  Var x = ad::concat(g, streams, -1);
  x = ad::add(g, x, g.constant(tile_rows(pos_emb_, n_views)));
  for (const nn::Block& b : blocks_) x = b.forward(g, x, /*local=*/true);
  x = out_(g, final_norm_(g, x));
  x = ad::reshape(g, x, {n_views, grid_, grid_, patch_, patch_, 3});
  x = ad::permute(g, x, {0, 1, 3, 2, 4, 5});
  x = ad::reshape(g, x, {n_views, image_size, image_size, 3});
  return ad::sigmoid(g, x);
}

Tensor RgbDecoder::decode_frozen(const MultiLevelFeatures& feats,
                                 const std::vector<bool>& present) const {
  check(!feats.normalized, "decode_frozen wants raw-space features");
  check(!feats.levels.empty(), "decode_frozen: empty features");
  int n_views = 0;
  for (size_t k = 0; k < feats.levels.size(); ++k)
    if (present[k]) {
      n_views = feats.levels[k].dim(0);
      break;
    }
  check(n_views > 0, "decode_frozen: no present level");
  Graph g;
  g.recording = false;
  return decode(g, feats.levels, present, n_views).v;
}

Tensor RgbDecoder::decode_frozen(const MultiLevelFeatures& feats) const {
  return decode_frozen(feats, std::vector<bool>(feats.levels.size(), true));
}

std::vector<bool> sample_level_subset(int n_levels, double dropout, Rng& rng) {
  check(n_levels >= 1 && dropout >= 0 && dropout < 1, "sample_level_subset: bad arguments");
  for (;;) {
    std::vector<bool> keep(static_cast<size_t>(n_levels), false);
    bool any = false;
    for (int k = 0; k < n_levels; ++k) {
      keep[size_t(k)] = rng.uniform() >= dropout;
      any |= keep[size_t(k)];
    }
    if (any) return keep;
  }
}

namespace {

// Differentiable mean SSIM with the same window as the evaluation metric.
Var ssim_mean_op(Graph& g, const Var& x, const Var& y) {
  static const Tensor kWin = gaussian_kernel11();
  constexpr float c1 = 0.01f * 0.01f, c2 = 0.03f * 0.03f;
  auto w = [&](const Var& v) { return ad::depthwise_conv_const(g, v, kWin); };
  Var mx = w(x), my = w(y);
  Var mxy = ad::mul(g, mx, my);
  Var mx2 = ad::mul(g, mx, mx), my2 = ad::mul(g, my, my);
  Var sx = ad::sub(g, w(ad::mul(g, x, x)), mx2);
  Var sy = ad::sub(g, w(ad::mul(g, y, y)), my2);
  Var sxy = ad::sub(g, w(ad::mul(g, x, y)), mxy);
  auto plus = [&](const Var& v, float c) { return ad::add(g, v, g.constant(Tensor::scalar(c))); };
  Var num = ad::mul(g, plus(ad::scale(g, mxy, 2.0f), c1), plus(ad::scale(g, sxy, 2.0f), c2));
  Var den = ad::mul(g, plus(ad::add(g, mx2, my2), c1), plus(ad::add(g, sx, sy), c2));
  return ad::mean_all(g, ad::mul(g, num, ad::recip(g, den)));
}

}  // namespace

RgbTrainResult train_rgbdec(const ExperimentConfig& cfg, const std::string& data_root,
                            const std::string& geoenc_path, const std::string& out_path) {
  const DatasetManifest manifest = manifest_read(data_root);
  GeoModel enc(cfg.enc, manifest.image_size, cfg.train.seed);
  const CheckpointInfo enc_info = checkpoint_load(geoenc_path, "geoenc", enc.params);
  {
    nlohmann::json meta = nlohmann::json::parse(enc_info.meta_json);
    const std::string fp = meta.value("config_fingerprint", "");
    check(fp == cfg.fingerprint(), "encoder checkpoint was built under a different config (",
          fp, " vs ", cfg.fingerprint(), ")");
  }
  RgbDecoder dec(cfg.rgbdec, cfg.enc, manifest.image_size, cfg.train.seed + 1);
  nn::AdamW opt(dec.params, float(cfg.train.lr), 0.9f, 0.95f, float(cfg.train.weight_decay),
                float(cfg.train.grad_clip));
  Rng rng(cfg.train.seed + 17);
  const int train_scenes = std::max(1, int(manifest.scenes.size()) - cfg.data.val_scenes);
  RgbTrainResult out;
  for (int step = 0; step < cfg.train.dec_steps; ++step) {
    const int si = int(rng.uniform_int(uint64_t(train_scenes)));
    MultiViewSequence seq = dataset_read_scene(data_root + "/" + manifest.scenes[size_t(si)]);
    std::vector<int> idx =
        sample_window(int(seq.views.size()), cfg.data.views, cfg.data.frame_interval_min,
                      cfg.data.frame_interval_max, rng);
    const Tensor images = stack_images(seq, idx);
    MultiLevelFeatures feats = enc.encode_frozen(images);
    std::vector<bool> present =
        sample_level_subset(int(feats.levels.size()), cfg.rgbdec.level_dropout, rng);
    Graph g;
    Var pred = dec.decode(g, feats.levels, present, int(idx.size()));
    Var target = g.constant(images);
    Var l1 = ad::l1_loss(g, pred, target);
    Var sm = ssim_mean_op(g, pred, target);
    Var loss = ad::add(g, l1, ad::sub(g, g.constant(Tensor::scalar(1.0f)), sm));
    check(std::isfinite(loss.v.at(0)), "rgb decoder training diverged at step ", step);
    g.backward(loss);
    opt.step(g);
    out.final_loss = loss.v.at(0);
    out.final_l1 = l1.v.at(0);
    out.final_ssim = sm.v.at(0);
  }
  nlohmann::json meta;
  meta["config"] = nlohmann::json::parse(cfg.to_json_text());
  meta["config_fingerprint"] = cfg.fingerprint();
  meta["encoder_fingerprint"] = nn::params_fingerprint(enc.params);
  meta["corpus_id"] = manifest.corpus_id;
  checkpoint_save(out_path, "rgbdec", dec.params, meta.dump());
  return out;
}

void recon_report(const ExperimentConfig& cfg, const std::string& data_root,
                  const std::string& geoenc_path, const std::string& rgbdec_path,
                  const std::string& out_csv) {
  const DatasetManifest manifest = manifest_read(data_root);
  GeoModel enc(cfg.enc, manifest.image_size, cfg.train.seed);
  checkpoint_load(geoenc_path, "geoenc", enc.params);
  RgbDecoder dec(cfg.rgbdec, cfg.enc, manifest.image_size, cfg.train.seed + 1);
  checkpoint_load(rgbdec_path, "rgbdec", dec.params);

  const int n_levels = enc.n_levels();
  std::vector<std::pair<std::string, std::vector<bool>>> subsets;
  for (int k = 0; k < n_levels; ++k) {
    std::vector<bool> present(size_t(n_levels), false);
    present[size_t(k)] = true;
    subsets.emplace_back(str("level", k), present);
  }
  subsets.emplace_back("all", std::vector<bool>(size_t(n_levels), true));

  const int first_val = std::max(0, int(manifest.scenes.size()) - cfg.data.val_scenes);
  std::vector<double> sum_psnr(subsets.size(), 0.0), sum_ssim(subsets.size(), 0.0);
  int n_images = 0;
  for (size_t s = size_t(first_val); s < manifest.scenes.size(); ++s) {
    MultiViewSequence seq = dataset_read_scene(data_root + "/" + manifest.scenes[s]);
    std::vector<int> all(seq.views.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = int(i);
    const Tensor images = stack_images(seq, all);
    MultiLevelFeatures feats = enc.encode_frozen(images);
    for (size_t si = 0; si < subsets.size(); ++si) {
      const Tensor pred = dec.decode_frozen(feats, subsets[si].second);
      for (size_t v = 0; v < seq.views.size(); ++v) {
        const int hw = manifest.image_size;
        Tensor pv = pred.reshaped({int(seq.views.size()), hw, hw, 3});
        Tensor one({hw, hw, 3});
        std::memcpy(one.data(), pv.data() + int64_t(v) * one.numel(),
                    size_t(one.numel()) * sizeof(float));
        sum_psnr[si] += psnr(one, seq.views[v].image);
        sum_ssim[si] += ssim(one, seq.views[v].image);
      }
    }
    n_images += int(seq.views.size());
  }
  check(n_images > 0, "recon_report: no validation scenes");

  std::string csv = "subset,psnr,ssim\n";
  for (size_t si = 0; si < subsets.size(); ++si) {
    csv += str(subsets[si].first, ",", sum_psnr[si] / n_images, ",", sum_ssim[si] / n_images,
               "\n");
  }
  csv += "paper_table1,35.41,0.960\n";
  csv += "reference:paper_table_5_level0,28.01,\n";
  csv += "reference:paper_table_5_level1,25.36,\n";
  csv += "reference:paper_table_5_level2,14.01,\n";
  csv += "reference:paper_table_5_level3,10.19,\n";
  write_text_file(out_csv, csv);
}

}  // namespace gld
