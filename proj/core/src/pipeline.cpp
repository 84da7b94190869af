#include "gld/pipeline.hpp"

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "gld/checkpoint.hpp"
#include "gld/dataset_io.hpp"
#include "gld/evalsuite.hpp"

namespace gld {

namespace fs = std::filesystem;

std::string artifact_geoenc(const std::string& d) { return d + "/geoenc.ckpt"; }
std::string artifact_stats(const std::string& d) { return d + "/latent_stats.json"; }
std::string artifact_rgbdec(const std::string& d) { return d + "/rgbdec.ckpt"; }
std::string artifact_mvdiff(const std::string& d, int level) {
  return level < 0 ? d + "/mvdiff_cascade.ckpt" : str(d, "/mvdiff_l", level, ".ckpt");
}

std::string GenerationTimings::to_json_text() const {
  nlohmann::json j;
  j["sample_boundary_ms"] = sample_boundary_ms;
  j["propagate_ms"] = propagate_ms;
  j["sample_level0_ms"] = sample_level0_ms;
  j["decode_ms"] = decode_ms;
  j["total_ms"] = total_ms;
  return j.dump(2);
}

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

Tensor denorm_level(const Tensor& z, const LatentStats& stats, int level) {
  const Tensor& m = stats.mean[size_t(level)];
  const Tensor& d = stats.stdev[size_t(level)];
  const int C = z.dim(-1);
  check(m.numel() == C, "stats width ", m.numel(), " != latent width ", C);
  Tensor out(z.shape());
  const int64_t rows = z.numel() / C;
  for (int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < C; ++c)
      out.data()[r * C + c] = z.data()[r * C + c] * d.data()[c] + m.data()[c];
  return out;
}

}  // namespace

GenerationPipeline::GenerationPipeline(const ExperimentConfig& cfg, const std::string& run_dir,
                                       const std::string& geoenc_override)
    : cfg_(cfg) {
  const std::string fp = cfg_.fingerprint();
  auto check_meta = [&](const CheckpointInfo& info, const std::string& what,
                        const std::string& enc_fp, const std::string& stats_fp) {
    nlohmann::json meta = nlohmann::json::parse(info.meta_json);
    const std::string got = meta.value("config_fingerprint", "");
    check(got == fp, what, " was built under a different config (", got, " vs ", fp, ")");
    if (!enc_fp.empty()) {
      const std::string e = meta.value("encoder_fingerprint", "");
      check(e == enc_fp, what, " chains to a different encoder snapshot");
    }
    if (!stats_fp.empty() && meta.contains("stats_fingerprint"))
      check(meta["stats_fingerprint"].get<std::string>() == stats_fp,
            what, " chains to different latent stats");
  };

  enc_ = std::make_unique<GeoModel>(cfg_.enc, cfg_.data.image_size, cfg_.train.seed);
  const std::string geo_path =
      geoenc_override.empty() ? artifact_geoenc(run_dir) : geoenc_override;
  check(fs::exists(geo_path), "missing encoder checkpoint: ", geo_path);
  const CheckpointInfo geo_info = checkpoint_load(geo_path, "geoenc", enc_->params);
  check_meta(geo_info, "encoder checkpoint", "", "");
  const std::string enc_fp = nn::params_fingerprint(enc_->params);

  check(fs::exists(artifact_stats(run_dir)), "missing latent stats: ", artifact_stats(run_dir));
  const std::string stats_text = read_text_file(artifact_stats(run_dir));
  stats_ = LatentStats::from_json_text(stats_text);
  check(int(stats_.mean.size()) == enc_->n_levels(), "latent stats level count mismatch");
  const std::string stats_fp = fnv1a_hex(stats_text);

  dec_ = std::make_unique<RgbDecoder>(cfg_.rgbdec, cfg_.enc, cfg_.data.image_size,
                                      cfg_.train.seed + 1);
  check(fs::exists(artifact_rgbdec(run_dir)), "missing rgb decoder checkpoint: ",
        artifact_rgbdec(run_dir));
  check_meta(checkpoint_load(artifact_rgbdec(run_dir), "rgbdec", dec_->params),
             "rgb decoder checkpoint", enc_fp, "");

  level_models_.resize(size_t(enc_->n_levels()));
  for (int l = 0; l < enc_->n_levels(); ++l) {
    const std::string path = artifact_mvdiff(run_dir, l);
    if (!fs::exists(path)) continue;
    auto m = std::make_unique<DiffusionModel>(cfg_.diff, cfg_.enc.dim, enc_->grid(), false,
                                              cfg_.train.seed + 101 + uint64_t(l));
    check_meta(checkpoint_load(path, mvdiff_kind(l), m->params), str("level ", l, " denoiser"),
               enc_fp, stats_fp);
    level_models_[size_t(l)] = std::move(m);
  }
  const std::string cpath = artifact_mvdiff(run_dir, -1);
  if (fs::exists(cpath)) {
    cascade_ = std::make_unique<DiffusionModel>(cfg_.diff, cfg_.enc.dim, enc_->grid(), true,
                                                cfg_.train.seed + 101);
    check_meta(checkpoint_load(cpath, mvdiff_kind(-1), cascade_->params), "cascade denoiser",
               enc_fp, stats_fp);
  }
}

const DiffusionModel* GenerationPipeline::level_model(int level) const {
  check(level >= 0 && level < int(level_models_.size()), "level ", level, " out of range");
  return level_models_[size_t(level)].get();
}

Tensor euler_integrate(const Tensor& z1, const VelocityFn& velocity, int n_steps) {
  check(n_steps >= 1, "sampler needs at least one step");
  Tensor z = z1.clone();
  const double dt = 1.0 / n_steps;
  for (int i = 0; i < n_steps; ++i) {
    const double t = 1.0 - i * dt;
    const Tensor u = velocity(z, t);
    check(u.numel() == z.numel(), "velocity shape mismatch");
    for (int64_t e = 0; e < z.numel(); ++e) z.data()[e] -= float(dt) * u.data()[e];
  }
  return z;
}

Tensor GenerationPipeline::sample_level(const DiffusionModel& model, const ConditionInputs& cond,
                                        const SamplerConfig& scfg, Rng& rng,
                                        const Tensor& cascade_cond) const {
  const int V = cond.src_tokens.dim(0), T = cond.src_tokens.dim(1), C = cond.src_tokens.dim(2);
  const Tensor z1 = Tensor::randn({V, T, C}, rng);
  const ConditionInputs uncond = drop_sources(cond);
  return euler_integrate(
      z1,
      [&](const Tensor& z, double t) {
        Tensor u = model.predict_velocity(z, cond, t, cascade_cond);
        if (scfg.cfg_scale != 1.0)
          u = cfg_velocity(u, model.predict_velocity(z, uncond, t, cascade_cond), scfg.cfg_scale);
        return u;
      },
      scfg.n_steps);
}

GenerationResult GenerationPipeline::generate(const Tensor& src_images,
                                              const std::vector<int>& src_idx,
                                              const std::vector<CameraPose>& window_poses,
                                              int boundary, const SamplerConfig& scfg,
                                              bool use_cascade) const {
  const int n_levels = enc_->n_levels();
  const int V = int(window_poses.size());
  const int N = int(src_idx.size());
  check(N >= 1 && N < V, "need at least one source and one target view");
  check(boundary >= 0 && boundary < n_levels, "boundary ", boundary, " out of range");
  tensor_check_shape(src_images, {N, cfg_.data.image_size, cfg_.data.image_size, 3},
                     "source images");
  for (int l = 1; l <= boundary; ++l)
    check(level_models_[size_t(l)] != nullptr, "no denoiser for level ", l);
  const bool cascade_l0 = use_cascade && boundary >= 1 && cascade_ != nullptr;
  if (!cascade_l0)
    check(level_models_[0] != nullptr, "no denoiser for level 0");

  GenerationResult res;
  res.src_idx = src_idx;
  for (int v = 0; v < V; ++v)
    if (std::find(src_idx.begin(), src_idx.end(), v) == src_idx.end()) res.tgt_idx.push_back(v);
  res.window_poses = normalize_poses(window_poses);

  const double t_start = now_ms();
  MultiLevelFeatures src_feats = enc_->encode_frozen(src_images);
  normalize_features(src_feats, stats_);
  Rng base(scfg.seed);

  auto condition_for = [&](int level) {
    return build_condition(src_feats.levels[size_t(level)], src_idx, V, window_poses,
                           cfg_.data.image_size, enc_->grid(), false);
  };

  std::vector<Tensor> sampled_norm(static_cast<size_t>(n_levels));
  double t0 = now_ms();
  for (int l = boundary; l >= 1; --l) {
    Rng rl = base.fork(uint64_t(l));
    sampled_norm[size_t(l)] = sample_level(*level_models_[size_t(l)], condition_for(l), scfg, rl);
  }
  res.timings.sample_boundary_ms = now_ms() - t0;

  t0 = now_ms();
  std::vector<Tensor> raw(static_cast<size_t>(n_levels));
  for (int l = 1; l <= boundary; ++l)
    raw[size_t(l)] = denorm_level(sampled_norm[size_t(l)], stats_, l);
  if (boundary > 0) {
    std::vector<Tensor> deeper = enc_->propagate(raw[size_t(boundary)], boundary);
    for (int l = boundary + 1; l < n_levels; ++l)
      raw[size_t(l)] = deeper[size_t(l - boundary)];
  }
  res.timings.propagate_ms = now_ms() - t0;

  t0 = now_ms();
  {
    Rng r0 = base.fork(0);
    const DiffusionModel& m0 = cascade_l0 ? *cascade_ : *level_models_[0];
    sampled_norm[0] =
        sample_level(m0, condition_for(0), scfg, r0, cascade_l0 ? sampled_norm[1] : Tensor{});
    raw[0] = denorm_level(sampled_norm[0], stats_, 0);
  }
  if (boundary == 0) {
    std::vector<Tensor> deeper = enc_->propagate(raw[0], 0);
    for (int l = 1; l < n_levels; ++l) raw[size_t(l)] = deeper[size_t(l)];
  }
  res.timings.sample_level0_ms = now_ms() - t0;

  res.latents.levels = raw;
  res.latents.grid_h = enc_->grid();
  res.latents.grid_w = enc_->grid();
  res.latents.normalized = false;

  t0 = now_ms();
  const Tensor rgb = dec_->decode_frozen(res.latents);
  GeoModel::GeoOutput geo = enc_->geometry_from_levels(raw);
  res.est_poses = geo.poses;
  const int H = cfg_.data.image_size;
  const int M = int(res.tgt_idx.size());
  res.images = Tensor({M, H, H, 3});
  res.depth = Tensor({M, H, H});
  for (int j = 0; j < M; ++j) {
    const int v = res.tgt_idx[size_t(j)];
    std::memcpy(res.images.data() + int64_t(j) * H * H * 3,
                rgb.data() + int64_t(v) * H * H * 3, sizeof(float) * size_t(H) * H * 3);
    std::memcpy(res.depth.data() + int64_t(j) * H * H, geo.depth.data() + int64_t(v) * H * H,
                sizeof(float) * size_t(H) * H);
  }
  res.timings.decode_ms = now_ms() - t0;
  res.timings.total_ms = now_ms() - t_start;
  return res;
}

// --------------------------------------------------------- persistence --

void save_generation(const GenerationResult& r, const std::string& dir) {
  fs::create_directories(dir + "/images");
  fs::create_directories(dir + "/depth");
  const int M = r.images.dim(0), H = r.images.dim(1);
  for (int j = 0; j < M; ++j) {
    Tensor img({H, H, 3}), dep({H, H});
    std::memcpy(img.data(), r.images.data() + int64_t(j) * img.numel(),
                sizeof(float) * size_t(img.numel()));
    std::memcpy(dep.data(), r.depth.data() + int64_t(j) * dep.numel(),
                sizeof(float) * size_t(dep.numel()));
    char name[32];
    std::snprintf(name, sizeof(name), "view_%02d", r.tgt_idx[size_t(j)]);
    write_png_rgb8(str(dir, "/images/", name, ".png"), img);
    std::snprintf(name, sizeof(name), "depth_%02d", r.tgt_idx[size_t(j)]);
    write_f32(str(dir, "/depth/", name, ".f32"), dep);
  }
  write_text_file(dir + "/cameras.json", poses_to_json(r.window_poses));
  write_text_file(dir + "/timings.json", r.timings.to_json_text());

  std::ofstream out(dir + "/latents.bin", std::ios::binary);
  check(out.good(), "cannot write ", dir, "/latents.bin");
  const char magic[8] = {'G', 'L', 'D', 'L', 'A', 'T', 'S', '1'};
  out.write(magic, 8);
  const uint32_t n = uint32_t(r.latents.levels.size());
  out.write(reinterpret_cast<const char*>(&n), 4);
  for (const Tensor& t : r.latents.levels) {
    const uint32_t rank = uint32_t(t.rank());
    out.write(reinterpret_cast<const char*>(&rank), 4);
    for (int d = 0; d < t.rank(); ++d) {
      const uint32_t dim = uint32_t(t.dim(d));
      out.write(reinterpret_cast<const char*>(&dim), 4);
    }
  }
  for (const Tensor& t : r.latents.levels)
    out.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.numel() * 4));
  check(out.good(), "short write on ", dir, "/latents.bin");
}

MultiLevelFeatures load_latents(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open ", path);
  char magic[8];
  in.read(magic, 8);
  check(in.good() && std::memcmp(magic, "GLDLATS1", 8) == 0, path, " is not a latent dump");
  uint32_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 4);
  check(n >= 1 && n <= 16, "implausible level count in ", path);
  std::vector<std::vector<int>> shapes(n);
  for (uint32_t k = 0; k < n; ++k) {
    uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 4);
    check(rank >= 1 && rank <= 6, "bad rank in ", path);
    for (uint32_t d = 0; d < rank; ++d) {
      uint32_t dim = 0;
      in.read(reinterpret_cast<char*>(&dim), 4);
      shapes[k].push_back(int(dim));
    }
  }
  MultiLevelFeatures f;
  for (uint32_t k = 0; k < n; ++k) {
    Tensor t(shapes[k]);
    in.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * 4));
    check(in.good(), "truncated latent dump ", path);
    f.levels.push_back(std::move(t));
  }
  const int T = f.levels[0].dim(1);
  f.grid_h = f.grid_w = int(std::lround(std::sqrt(double(T))));
  f.normalized = false;
  return f;
}

// ----------------------------------------------------------- drivers --

void boundary_sweep(const GenerationPipeline& pipe, const std::string& data_root,
                    const std::string& out_csv) {
  const ExperimentConfig& cfg = pipe.config();
  const std::vector<EvalWindow> windows = make_eval_windows(cfg, data_root);
  std::string csv = "boundary,psnr,ssim,absrel,rmse,delta1\n";
  for (int k = 0; k < pipe.encoder().n_levels(); ++k) {
    std::vector<SceneMetrics> rows;
    for (const EvalWindow& w : windows) {
      SamplerConfig scfg{cfg.diff.sample_steps, cfg.diff.cfg_scale, w.seed};
      rows.push_back(evaluate_scene(pipe, w.seq, w.window, w.src_idx, k, scfg, false));
    }
    const SceneMetrics m = mean_metrics(rows);
    csv += str(k, ",", m.psnr, ",", m.ssim, ",", m.absrel, ",", m.rmse, ",", m.delta1, "\n");
  }
  csv += "reference:paper_table_2_k0,12.55,0.323,0.267,0.400,0.641\n";
  csv += "reference:paper_table_2_k1,13.61,0.366,0.191,0.311,0.744\n";
  csv += "reference:paper_table_2_k2,13.35,0.355,0.254,0.393,0.659\n";
  csv += "reference:paper_table_2_k3,13.35,0.355,0.260,0.402,0.647\n";
  write_text_file(out_csv, csv);
}

void cascade_ablation(const GenerationPipeline& pipe, const std::string& data_root,
                      const std::string& out_csv) {
  const ExperimentConfig& cfg = pipe.config();
  check(pipe.cascade_model() != nullptr, "cascade ablation needs the cascade denoiser");
  const std::vector<EvalWindow> windows = make_eval_windows(cfg, data_root);
  std::string views_used;
  std::string csv = "mode,psnr,ssim,ate,rpe_rot_deg,rpe_trans,reproj,views\n";
  for (const bool use_cascade : {false, true}) {
    std::vector<SceneMetrics> rows;
    std::string views;
    for (const EvalWindow& w : windows) {
      SamplerConfig scfg{cfg.diff.sample_steps, cfg.diff.cfg_scale, w.seed};
      rows.push_back(evaluate_scene(pipe, w.seq, w.window, w.src_idx, 1, scfg, use_cascade));
      for (int v : w.window) views += str(v, " ");
      views += ";";
    }
    if (views_used.empty()) views_used = views;
    check(views == views_used, "ablation rows drifted apart in eval views");
    const SceneMetrics m = mean_metrics(rows);
    csv += str(use_cascade ? "cascaded" : "independent", ",", m.psnr, ",", m.ssim, ",", m.ate,
               ",", m.rpe_rot_deg, ",", m.rpe_trans, ",", m.reproj, ",\"", views, "\"\n");
  }
  csv += "reference:paper_table_7_independent,18.81,0.692,0.197,7.179,0.430,0.666,\n";
  csv += "reference:paper_table_7_cascaded,19.00,0.695,0.182,6.694,0.397,0.652,\n";
  write_text_file(out_csv, csv);
}

}  // namespace gld
