#include "gld/mvdiff.hpp"

#include <cmath>
#include <cstring>

#include <json.hpp>

#include "gld/checkpoint.hpp"
#include "gld/dataset_io.hpp"

namespace gld {

using nn::Graph;
using nn::Var;
namespace ad = gld::ad;

FlowSample flow_interpolate(const Tensor& clean, const Tensor& noise, double t) {
  check(clean.same_shape(noise), "flow endpoints differ in shape: ", clean.shape_str(), " vs ",
        noise.shape_str());
  FlowSample out;
  out.z = Tensor(clean.shape());
  out.u = Tensor(clean.shape());
  const float tf = float(t), omt = 1.0f - tf;
  const float* c = clean.data();
  const float* n = noise.data();
  for (int64_t i = 0; i < clean.numel(); ++i) {
    out.z.data()[i] = omt * c[i] + tf * n[i];
    out.u.data()[i] = n[i] - c[i];
  }
  return out;
}

namespace {

Tensor mat4_to_tensor_row(const Eigen::Matrix4d& m, float* dst) {
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) dst[r * 4 + c] = float(m(r, c));
  return {};
}

int mlp_hidden_for(int dim) { return ((8 * dim / 3) + 7) / 8 * 8; }

}  // namespace

ConditionInputs build_condition(const Tensor& src_feats, const std::vector<int>& src_idx,
                                int v_total, const std::vector<CameraPose>& poses, int image_size,
                                int grid, bool drop_camera) {
  check(src_feats.rank() == 3, "source features must be [N,T,C], got ", src_feats.shape_str());
  check(int(src_idx.size()) == src_feats.dim(0), "src_idx count ", src_idx.size(),
        " != feature views ", src_feats.dim(0));
  check(int(poses.size()) == v_total, "pose count ", poses.size(), " != views ", v_total);
  const int T = src_feats.dim(1), C = src_feats.dim(2);
  check(T == grid * grid, "token count ", T, " != grid ", grid, "^2");

  ConditionInputs out;
  out.src_tokens = Tensor({v_total, T, C});
  out.indicator = Tensor::full({v_total, T, 1}, 1.0f);
  for (int i = 0; i < int(src_idx.size()); ++i) {
    const int v = src_idx[size_t(i)];
    check(v >= 0 && v < v_total, "source index ", v, " out of range");
    std::memcpy(out.src_tokens.data() + int64_t(v) * T * C,
                src_feats.data() + int64_t(i) * T * C, sizeof(float) * size_t(T) * size_t(C));
    float* ind = out.indicator.data() + int64_t(v) * T;
    std::fill(ind, ind + T, 0.0f);
  }

  const std::vector<CameraPose> normd = normalize_poses(poses);
  out.plucker = Tensor({v_total, T, 6});
  out.pose = Tensor({v_total, 4, 4});
  out.pose_inv = Tensor({v_total, 4, 4});
  for (int v = 0; v < v_total; ++v) {
    if (!drop_camera) {
      Tensor pl = plucker_embedding(normd[size_t(v)], grid, grid, image_size, image_size);
      std::memcpy(out.plucker.data() + int64_t(v) * T * 6, pl.data(),
                  sizeof(float) * size_t(T) * 6);
    }
    const Eigen::Matrix4d e =
        drop_camera ? Eigen::Matrix4d::Identity() : normd[size_t(v)].extrinsic4();
    const Eigen::Matrix4d p = normd[size_t(v)].intrinsic4_normalized(image_size, image_size) * e;
    mat4_to_tensor_row(p, out.pose.data() + v * 16);
    mat4_to_tensor_row(p.inverse(), out.pose_inv.data() + v * 16);
  }
  return out;
}

ConditionInputs drop_sources(const ConditionInputs& c) {
  ConditionInputs out = c;
  out.src_tokens = Tensor(c.src_tokens.shape());
  out.indicator = Tensor::full(c.indicator.shape(), 1.0f);
  return out;
}

// ------------------------------------------------------------- model --

DiffusionModel::DiffusionModel(const DiffusionConfig& cfg_in, int latent_dim_in, int grid_in,
                               bool cascade_in, uint64_t seed)
    : cfg(cfg_in), latent_dim(latent_dim_in), grid(grid_in), cascade(cascade_in) {
  check(cfg.enc_dim % cfg.heads == 0 && cfg.dec_dim % cfg.heads == 0,
        "stack widths must divide by head count");
  check((cfg.enc_dim / cfg.heads) % 4 == 0 && (cfg.dec_dim / cfg.heads) % 4 == 0,
        "head dims must divide by 4 for pose modulation");
  Rng rng(seed);
  const int in_ch = latent_dim * (cascade ? 3 : 2);
  enc_src_embed_ = nn::Linear(params, "enc_src_embed", in_ch, cfg.enc_dim, rng);
  enc_tgt_embed_ = nn::Linear(params, "enc_tgt_embed", in_ch, cfg.enc_dim, rng);
  dec_src_embed_ = nn::Linear(params, "dec_src_embed", latent_dim, cfg.dec_dim, rng);
  dec_tgt_embed_ = nn::Linear(params, "dec_tgt_embed", latent_dim, cfg.dec_dim, rng);
  enc_rays_ = nn::Linear(params, "enc_rays", 6, cfg.enc_dim, rng);
  dec_rays_ = nn::Linear(params, "dec_rays", 6, cfg.dec_dim, rng);
  time_fc1_ = nn::Linear(params, "time_fc1", cfg.enc_dim, cfg.enc_dim, rng);
  time_fc2_ = nn::Linear(params, "time_fc2", cfg.enc_dim, cfg.enc_dim, rng);
  for (int b = 0; b < cfg.enc_blocks; ++b)
    enc_blocks_.emplace_back(params, str("enc", b), cfg.enc_dim, cfg.heads,
                             mlp_hidden_for(cfg.enc_dim), rng);
  cond_proj_ = nn::Linear(params, "cond_proj", cfg.enc_dim, cfg.dec_dim, rng);
  const int n_dec = cascade ? cfg.cascade_dec_blocks : cfg.dec_blocks;
  for (int b = 0; b < n_dec; ++b)
    dec_blocks_.emplace_back(params, str("dec", b), cfg.dec_dim, cfg.heads,
                             mlp_hidden_for(cfg.dec_dim), rng);
  head_ = nn::Linear(params, "velocity_head", cfg.dec_dim, latent_dim, rng, true, true);
  if (cfg.use_rope) {
    rope_enc_ = nn::make_axial_rope(grid, grid, cfg.enc_dim, cfg.enc_dim / cfg.heads,
                                    float(cfg.rope_theta));
    rope_dec_ = nn::make_axial_rope(grid, grid, cfg.dec_dim, cfg.dec_dim / cfg.heads,
                                    float(cfg.rope_theta));
  }
}

namespace {

// Replicate the 0/1 indicator over C channels, optionally flipped, so the
// per-token embedder choice becomes two masked linears.
Tensor tile_indicator(const Tensor& ind, int C, bool invert) {
  const int V = ind.dim(0), T = ind.dim(1);
  Tensor out({V, T, C});
  for (int64_t i = 0; i < int64_t(V) * T; ++i) {
    const float m = invert ? 1.0f - ind.data()[i] : ind.data()[i];
    float* row = out.data() + i * C;
    std::fill(row, row + C, m);
  }
  return out;
}

}  // namespace

Var DiffusionModel::run_stack(Graph& g, Var x, const std::vector<nn::AdaLnBlock>& blocks,
                              const Var& cond, const ConditionInputs& ci,
                              const nn::RopeTables& rope, const nn::QkObserver* observe,
                              const std::string& stack_tag) const {
  nn::AttentionContext ctx;
  ctx.pose = &ci.pose;
  ctx.pose_inv = &ci.pose_inv;
  if (cfg.use_rope) ctx.rope = &rope;
  ctx.observe = observe;
  for (size_t b = 0; b < blocks.size(); ++b) {
    ctx.tag = str(stack_tag, b);
    x = blocks[b].forward(g, x, cond, ctx);
  }
  return x;
}

Var DiffusionModel::forward(Graph& g, const Tensor& z_t, const ConditionInputs& cond, double t,
                            const Tensor& cascade_cond) const {
  tensor_check_shape(z_t, {-1, grid * grid, latent_dim}, "noisy latent");
  const int V = z_t.dim(0), T = z_t.dim(1);
  check(cond.src_tokens.same_shape(z_t), "condition features must match the latent shape");
  if (cascade)
    check(cascade_cond.defined() && cascade_cond.same_shape(z_t),
          "cascade model needs a level-above condition latent");
  else
    check(!cascade_cond.defined(), "level model does not take a cascade condition");

  std::vector<Var> enc_in_parts = {g.constant(z_t), g.constant(cond.src_tokens)};
  if (cascade) enc_in_parts.push_back(g.constant(cascade_cond));
  Var enc_in = ad::concat(g, enc_in_parts, -1);

  const Tensor src_mask_e = tile_indicator(cond.indicator, cfg.enc_dim, true);
  const Tensor tgt_mask_e = tile_indicator(cond.indicator, cfg.enc_dim, false);
  Var x = ad::add(g, ad::mul(g, enc_src_embed_(g, enc_in), g.constant(src_mask_e)),
                  ad::mul(g, enc_tgt_embed_(g, enc_in), g.constant(tgt_mask_e)));
  x = ad::add(g, x, enc_rays_(g, g.constant(cond.plucker)));

  Var tf = g.constant(nn::timestep_features(float(t), cfg.enc_dim));
  Var temb = time_fc2_(g, ad::silu(g, time_fc1_(g, tf)));
  Var tcond = ad::reshape(g, nn::broadcast_rows(g, temb, V * T), {V, T, cfg.enc_dim});
  Var s = run_stack(g, x, enc_blocks_, tcond, cond, rope_enc_, qk_observer, "enc");

  Var zc = g.constant(z_t);
  const Tensor src_mask_d = tile_indicator(cond.indicator, cfg.dec_dim, true);
  const Tensor tgt_mask_d = tile_indicator(cond.indicator, cfg.dec_dim, false);
  Var y = ad::add(g, ad::mul(g, dec_src_embed_(g, zc), g.constant(src_mask_d)),
                  ad::mul(g, dec_tgt_embed_(g, zc), g.constant(tgt_mask_d)));
  y = ad::add(g, y, dec_rays_(g, g.constant(cond.plucker)));
  Var s_proj = cond_proj_(g, s);
  y = run_stack(g, y, dec_blocks_, s_proj, cond, rope_dec_, qk_observer, "dec");
  return head_(g, ad::layernorm(g, y));
}

Tensor DiffusionModel::predict_velocity(const Tensor& z_t, const ConditionInputs& cond, double t,
                                        const Tensor& cascade_cond) const {
  Graph g;
  g.recording = false;
  return forward(g, z_t, cond, t, cascade_cond).v;
}

Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double scale) {
  check(v_cond.same_shape(v_uncond), "guidance branches differ in shape");
  Tensor out(v_cond.shape());
  const float s = float(scale);
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data()[i] = v_uncond.data()[i] + s * (v_cond.data()[i] - v_uncond.data()[i]);
  return out;
}

std::string mvdiff_kind(int level) {
  return level < 0 ? std::string("mvdiff_cascade") : str("mvdiff_l", level);
}

// ---------------------------------------------------------- training --

DiffTrainResult train_mvdiff(const ExperimentConfig& cfg, const std::string& data_root,
                             const std::string& geoenc_path, const std::string& stats_path,
                             int level, const std::string& out_path) {
  const DatasetManifest manifest = manifest_read(data_root);
  GeoModel enc(cfg.enc, manifest.image_size, cfg.train.seed);
  const CheckpointInfo enc_info = checkpoint_load(geoenc_path, "geoenc", enc.params);
  {
    nlohmann::json meta = nlohmann::json::parse(enc_info.meta_json);
    const std::string fp = meta.value("config_fingerprint", "");
    check(fp == cfg.fingerprint(), "encoder checkpoint was built under a different config (", fp,
          " vs ", cfg.fingerprint(), ")");
  }
  const std::string stats_text = read_text_file(stats_path);
  const LatentStats stats = LatentStats::from_json_text(stats_text);
  check(stats.corpus_id.rfind(manifest.corpus_id, 0) == 0,
        "latent stats were computed on a different corpus (", stats.corpus_id, " vs ",
        manifest.corpus_id, ")");

  const bool cascade = level < 0;
  const int gen_level = cascade ? 0 : level;
  const int n_levels = enc.n_levels();
  check(gen_level < n_levels, "level ", gen_level, " out of range, encoder has ", n_levels);
  if (cascade) check(n_levels >= 2, "cascade model needs at least two feature levels");

  DiffusionModel model(cfg.diff, cfg.enc.dim, enc.grid(), cascade,
                       cfg.train.seed + 101 + uint64_t(gen_level));
  nn::AdamW opt(model.params, float(cfg.train.lr), 0.9f, 0.95f, float(cfg.train.weight_decay),
                float(cfg.train.grad_clip));
  Rng rng(cfg.train.seed + 997 + uint64_t(level < 0 ? 64 : level) * 131);

  const int train_scenes = std::max(1, int(manifest.scenes.size()) - cfg.data.val_scenes);
  DiffTrainResult out;
  std::vector<double> tail;
  for (int step = 0; step < cfg.train.diff_steps; ++step) {
    const int si = int(rng.uniform_int(uint64_t(train_scenes)));
    MultiViewSequence seq = dataset_read_scene(data_root + "/" + manifest.scenes[size_t(si)]);
    std::vector<int> idx =
        sample_window(int(seq.views.size()), cfg.data.views, cfg.data.frame_interval_min,
                      cfg.data.frame_interval_max, rng);
    const int V = int(idx.size());

    MultiLevelFeatures full = enc.encode_frozen(stack_images(seq, idx));
    normalize_features(full, stats);

    const int span = std::max(1, cfg.train.src_max - cfg.train.src_min + 1);
    int n_src = cfg.train.src_min + int(rng.uniform_int(uint64_t(span)));
    n_src = std::min(n_src, V - 1);
    std::vector<int> src_idx = sample_views(V, n_src, rng);
    std::vector<int> src_frames;
    for (int sidx : src_idx) src_frames.push_back(idx[size_t(sidx)]);
    MultiLevelFeatures src_feats = enc.encode_frozen(stack_images(seq, src_frames));
    normalize_features(src_feats, stats);

    const bool drop_cam = rng.uniform() < cfg.diff.camera_dropout;
    ConditionInputs cond =
        build_condition(src_feats.levels[size_t(gen_level)], src_idx, V, gather_poses(seq, idx),
                        manifest.image_size, enc.grid(), drop_cam);
    if (rng.uniform() < cfg.diff.cond_dropout) cond = drop_sources(cond);

    const Tensor target = full.levels[size_t(gen_level)];
    const double t = rng.uniform();
    FlowSample fs = flow_interpolate(target, Tensor::randn(target.shape(), rng), t);
    Tensor cascade_z;
    if (cascade) {
      const Tensor& above = full.levels[1];
      const double tau = rng.uniform() * cfg.diff.tau_max;
      cascade_z = flow_interpolate(above, Tensor::randn(above.shape(), rng), tau).z;
    }

    Graph g;
    Var v = model.forward(g, fs.z, cond, t, cascade_z);
    Var loss = ad::mse_loss(g, v, g.constant(fs.u));
    check(std::isfinite(loss.v.at(0)), "diffusion training diverged at step ", step);
    g.backward(loss);
    opt.step(g);
    out.final_loss = loss.v.at(0);
    tail.push_back(out.final_loss);
    if (tail.size() > 10) tail.erase(tail.begin());
  }
  for (double l : tail) out.mean_loss_last10 += l;
  if (!tail.empty()) out.mean_loss_last10 /= double(tail.size());

  nlohmann::json meta;
  meta["config"] = nlohmann::json::parse(cfg.to_json_text());
  meta["config_fingerprint"] = cfg.fingerprint();
  meta["encoder_fingerprint"] = nn::params_fingerprint(enc.params);
  meta["stats_fingerprint"] = fnv1a_hex(stats_text);
  meta["corpus_id"] = manifest.corpus_id;
  meta["level"] = level;
  meta["latent_dim"] = cfg.enc.dim;
  meta["grid"] = enc.grid();
  checkpoint_save(out_path, mvdiff_kind(level), model.params, meta.dump());
  return out;
}

}  // namespace gld
