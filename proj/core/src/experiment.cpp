#include "gld/experiment.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>

#include <json.hpp>

#include "gld/checkpoint.hpp"
#include "gld/dataset_io.hpp"
#include "gld/evalsuite.hpp"
#include "gld/geoenc.hpp"
#include "gld/mvdiff.hpp"
#include "gld/pipeline.hpp"
#include "gld/rgbdec.hpp"

namespace gld {

namespace fs = std::filesystem;

std::string RunPaths::mvdiff(int level) const { return artifact_mvdiff(run_dir, level); }

RunPaths run_paths(const ExperimentConfig& cfg) {
  RunPaths p;
  p.data_root = resolve_data_root(cfg.data.root);
  p.run_dir = cfg.run_dir;
  p.config_json = cfg.run_dir + "/config.json";
  p.geoenc = artifact_geoenc(cfg.run_dir);
  p.stats = artifact_stats(cfg.run_dir);
  p.rgbdec = artifact_rgbdec(cfg.run_dir);
  p.report_dir = cfg.run_dir + "/report";
  return p;
}

void save_run_config(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.run_dir);
  write_text_file(cfg.run_dir + "/config.json", cfg.to_json_text());
}

namespace {

GeoModel load_encoder(const ExperimentConfig& cfg, const std::string& path) {
  GeoModel enc(cfg.enc, cfg.data.image_size, cfg.train.seed);
  const CheckpointInfo info = checkpoint_load(path, "geoenc", enc.params);
  nlohmann::json meta = nlohmann::json::parse(info.meta_json);
  const std::string got = meta.value("config_fingerprint", "");
  check(got == cfg.fingerprint(), "encoder checkpoint was built under a different config (", got,
        " vs ", cfg.fingerprint(), ")");
  return enc;
}

}  // namespace

std::string stage_gen_data(const ExperimentConfig& cfg) {
  SceneGenConfig sg;
  sg.image_size = cfg.data.image_size;
  sg.views = cfg.data.views;
  sg.min_objects = cfg.data.min_objects;
  sg.max_objects = cfg.data.max_objects;
  sg.min_coverage = cfg.data.min_coverage;
  const RunPaths p = run_paths(cfg);
  const DatasetManifest m =
      dataset_generate(p.data_root, cfg.data.seed, cfg.data.scenes, sg, cfg.fingerprint());
  return str("wrote ", m.scenes.size(), " scenes under ", p.data_root, " (corpus ", m.corpus_id,
             ")");
}

std::string stage_train_geo(const ExperimentConfig& cfg) {
  const RunPaths p = run_paths(cfg);
  save_run_config(cfg);
  const GeoLossParts r = train_geoenc(cfg, p.data_root, p.geoenc);
  return str("geoenc loss ", r.total, " (depth ", r.depth, " rays ", r.rays, " pose ", r.pose,
             ") -> ", p.geoenc);
}

std::string stage_compute_stats(const ExperimentConfig& cfg) {
  const RunPaths p = run_paths(cfg);
  save_run_config(cfg);
  const GeoModel enc = load_encoder(cfg, p.geoenc);
  DatasetManifest manifest = manifest_read(p.data_root);
  const int train_n =
      std::max(1, int(manifest.scenes.size()) - std::min(int(manifest.scenes.size()) - 1,
                                                         cfg.data.val_scenes));
  manifest.scenes.resize(size_t(train_n));  // stats come from the training split only
  const LatentStats stats = compute_latent_stats(enc, p.data_root, manifest);
  write_text_file(p.stats, stats.to_json_text());
  return str("latent stats over ", train_n, " scenes -> ", p.stats);
}

std::string stage_train_dec(const ExperimentConfig& cfg) {
  const RunPaths p = run_paths(cfg);
  save_run_config(cfg);
  const RgbTrainResult r = train_rgbdec(cfg, p.data_root, p.geoenc, p.rgbdec);
  return str("rgbdec loss ", r.final_loss, " (l1 ", r.final_l1, " ssim ", r.final_ssim, ") -> ",
             p.rgbdec);
}

std::string stage_train_diff(const ExperimentConfig& cfg, int level) {
  const RunPaths p = run_paths(cfg);
  save_run_config(cfg);
  const std::string out = p.mvdiff(level);
  const DiffTrainResult r = train_mvdiff(cfg, p.data_root, p.geoenc, p.stats, level, out);
  return str(mvdiff_kind(level), " loss ", r.final_loss, " (last10 mean ", r.mean_loss_last10,
             ") -> ", out);
}

std::string stage_sample(const ExperimentConfig& cfg, int boundary, int scene, uint64_t seed,
                         bool use_cascade, const std::string& out_dir,
                         const std::string& geo_ckpt) {
  const RunPaths p = run_paths(cfg);
  const std::string geo = geo_ckpt.empty() ? p.geoenc : geo_ckpt;
  check(fs::exists(geo), "missing encoder checkpoint: ", geo);
  for (int l = 1; l <= boundary; ++l)
    check(fs::exists(p.mvdiff(l)), "missing denoiser checkpoint: ", p.mvdiff(l));
  if (!(use_cascade && boundary >= 1 && fs::exists(p.mvdiff(-1))))
    check(fs::exists(p.mvdiff(0)), "missing denoiser checkpoint: ", p.mvdiff(0));
  const GenerationPipeline pipe(cfg, p.run_dir, geo);
  const std::vector<EvalWindow> windows = make_eval_windows(cfg, p.data_root);
  check(!windows.empty(), "no validation scenes to sample");
  check(scene >= 0 && scene < int(windows.size()), "scene index ", scene, " out of range (",
        windows.size(), " eval scenes)");
  const EvalWindow& w = windows[size_t(scene)];

  std::vector<int> src_frames;
  for (int pos : w.src_idx) src_frames.push_back(w.window[size_t(pos)]);
  SamplerConfig scfg;
  scfg.n_steps = cfg.diff.sample_steps;
  scfg.cfg_scale = cfg.diff.cfg_scale;
  scfg.seed = seed != 0 ? seed : w.seed;
  const GenerationResult res =
      pipe.generate(stack_images(w.seq, src_frames), w.src_idx, gather_poses(w.seq, w.window),
                    boundary, scfg, use_cascade);
  const std::string dir =
      out_dir.empty() ? str(p.run_dir, "/samples/scene", scene, "_k", boundary) : out_dir;
  save_generation(res, dir);
  return str("sampled ", res.tgt_idx.size(), " target views of ", w.scene_id, " in ",
             res.timings.total_ms, " ms -> ", dir);
}

std::string stage_eval(const ExperimentConfig& cfg, int boundary, bool use_cascade) {
  const RunPaths p = run_paths(cfg);
  const GenerationPipeline pipe(cfg, p.run_dir);
  const EvalReport rep = run_eval(pipe, p.data_root, boundary, use_cascade);
  write_text_file(p.run_dir + "/eval.csv", rep.to_csv());
  write_text_file(p.run_dir + "/eval.json", rep.to_json_text());
  const SceneMetrics& m = rep.rows.back().m;
  return str("eval over ", rep.rows.size() - 1, " scenes: psnr ", m.psnr, " ssim ", m.ssim,
             " absrel ", m.absrel, " ate ", m.ate, " -> ", p.run_dir, "/eval.csv");
}

std::string stage_sweep_boundary(const ExperimentConfig& cfg) {
  const RunPaths p = run_paths(cfg);
  const GenerationPipeline pipe(cfg, p.run_dir);
  const std::string out = p.run_dir + "/boundary_sweep.csv";
  boundary_sweep(pipe, p.data_root, out);
  return str("boundary sweep -> ", out);
}

std::string stage_ablate_cascade(const ExperimentConfig& cfg) {
  const RunPaths p = run_paths(cfg);
  const GenerationPipeline pipe(cfg, p.run_dir);
  const std::string out = p.run_dir + "/cascade_ablation.csv";
  cascade_ablation(pipe, p.data_root, out);
  return str("cascade ablation -> ", out);
}

std::string stage_probe_pck(const ExperimentConfig& cfg) {
  const RunPaths p = run_paths(cfg);
  const GeoModel enc = load_encoder(cfg, p.geoenc);
  const std::string out = p.run_dir + "/pck_levels.csv";
  pck_report(enc, cfg, p.data_root, out);
  return str("feature correspondence -> ", out);
}

Tensor report_grid(const Tensor& src, const Tensor& gen, const Tensor& gt) {
  const int N = src.dim(0), M = gen.dim(0), H = src.dim(1), W = src.dim(2);
  tensor_check_shape(gen, {M, H, W, 3}, "generated images");
  tensor_check_shape(gt, {M, H, W, 3}, "ground-truth targets");
  const int cols = N + M + 1;
  Tensor out({M * H, cols * W, 3});
  out.fill(1.0f);
  auto blit = [&](const Tensor& t, int idx, int row, int col) {
    const float* cell = t.data() + int64_t(idx) * H * W * 3;
    for (int y = 0; y < H; ++y)
      std::memcpy(out.data() + ((int64_t(row) * H + y) * cols * W + int64_t(col) * W) * 3,
                  cell + int64_t(y) * W * 3, sizeof(float) * size_t(W) * 3);
  };
  for (int r = 0; r < M; ++r) {
    for (int i = 0; i < N; ++i) blit(src, i, r, i);
    for (int j = 0; j < M; ++j) blit(gen, j, r, N + j);
    blit(gt, r, r, N + M);
  }
  return out;
}

std::string stage_report(const ExperimentConfig& cfg) {
  const RunPaths p = run_paths(cfg);
  fs::create_directories(p.report_dir);
  save_run_config(cfg);

  nlohmann::json arts = nlohmann::json::object();
  std::vector<std::string> gaps;
  auto note = [&](const std::string& name, const std::string& path, bool checkpoint) {
    const bool ok = fs::exists(path);
    nlohmann::json e;
    e["path"] = path;
    e["present"] = ok;
    if (ok && checkpoint) {
      const CheckpointInfo info = checkpoint_peek(path);
      nlohmann::json meta = nlohmann::json::parse(info.meta_json);
      e["kind"] = info.kind;
      e["config_fingerprint"] = meta.value("config_fingerprint", "");
      if (meta.contains("encoder_fingerprint")) e["encoder_fingerprint"] = meta["encoder_fingerprint"];
      if (meta.contains("stats_fingerprint")) e["stats_fingerprint"] = meta["stats_fingerprint"];
    }
    if (!ok) gaps.push_back(name);
    arts[name] = e;
    return ok;
  };

  const bool have_geo = note("geoenc", p.geoenc, true);
  const bool have_stats = note("latent_stats", p.stats, false);
  const bool have_dec = note("rgbdec", p.rgbdec, true);
  bool have_level[4] = {false, false, false, false};
  const int n_levels = int(cfg.enc.taps.size());
  for (int l = 0; l < n_levels && l < 4; ++l)
    have_level[l] = note(mvdiff_kind(l), p.mvdiff(l), true);
  const bool have_cascade = note(mvdiff_kind(-1), p.mvdiff(-1), true);
  note("boundary_sweep_csv", p.run_dir + "/boundary_sweep.csv", false);
  note("cascade_ablation_csv", p.run_dir + "/cascade_ablation.csv", false);

  std::vector<std::string> emitted;
  for (const char* csv : {"boundary_sweep.csv", "cascade_ablation.csv"}) {
    const std::string src_csv = str(p.run_dir, "/", csv);
    if (fs::exists(src_csv)) {
      fs::copy_file(src_csv, str(p.report_dir, "/", csv), fs::copy_options::overwrite_existing);
      emitted.push_back(csv);
    }
  }
  if (have_geo) {
    const GeoModel enc = load_encoder(cfg, p.geoenc);
    pck_report(enc, cfg, p.data_root, p.report_dir + "/pck_levels.csv");
    emitted.push_back("pck_levels.csv");
    if (have_dec) {
      recon_report(cfg, p.data_root, p.geoenc, p.rgbdec, p.report_dir + "/recon_levels.csv");
      emitted.push_back("recon_levels.csv");
    }
  }

  if (have_geo && have_stats && have_dec) {
    const GenerationPipeline pipe(cfg, p.run_dir);
    int boundary = -1;
    const bool l0_ready = have_level[0] || have_cascade;
    if (have_level[1] && l0_ready)
      boundary = 1;
    else if (have_level[0])
      boundary = 0;
    if (boundary >= 0) {
      const std::vector<EvalWindow> windows = make_eval_windows(cfg, p.data_root);
      if (!windows.empty()) {
        const EvalWindow& w = windows.front();
        std::vector<int> src_frames, tgt_frames;
        for (int pos : w.src_idx) src_frames.push_back(w.window[size_t(pos)]);
        for (int pos = 0; pos < int(w.window.size()); ++pos)
          if (std::find(w.src_idx.begin(), w.src_idx.end(), pos) == w.src_idx.end())
            tgt_frames.push_back(w.window[size_t(pos)]);
        SamplerConfig scfg;
        scfg.n_steps = cfg.diff.sample_steps;
        scfg.cfg_scale = cfg.diff.cfg_scale;
        scfg.seed = w.seed;
        const Tensor src = stack_images(w.seq, src_frames);
        const GenerationResult res = pipe.generate(src, w.src_idx, gather_poses(w.seq, w.window),
                                                   boundary, scfg, have_cascade);
        write_png_rgb8(p.report_dir + "/grid_scene0.png",
                       report_grid(src, res.images, stack_images(w.seq, tgt_frames)));
        write_text_file(p.report_dir + "/timings.json", res.timings.to_json_text());
        emitted.push_back("grid_scene0.png");
        emitted.push_back("timings.json");
      }
      const EvalReport rep = run_eval(pipe, p.data_root, boundary, have_cascade);
      write_text_file(p.report_dir + "/eval.csv", rep.to_csv());
      write_text_file(p.report_dir + "/eval.json", rep.to_json_text());
      emitted.push_back("eval.csv");
      emitted.push_back("eval.json");

      int probe_level = -2;
      for (int l : {1, 0, 2, 3})
        if (l < n_levels && have_level[l]) {
          probe_level = l;
          break;
        }
      if (probe_level == -2 && have_cascade) probe_level = -1;
      if (probe_level != -2) {
        attention_report(pipe, probe_level, p.data_root, p.report_dir + "/attention_probe.csv");
        emitted.push_back("attention_probe.csv");
      }
    } else {
      gaps.push_back("generation (no usable denoiser checkpoints)");
    }
  }

  nlohmann::json manifest;
  manifest["config_fingerprint"] = cfg.fingerprint();
  manifest["run_dir"] = p.run_dir;
  manifest["data_root"] = p.data_root;
  manifest["artifacts"] = arts;
  manifest["emitted"] = emitted;
  manifest["gaps"] = gaps;
  write_text_file(p.report_dir + "/manifest.json", manifest.dump(2));

  std::string gap_note = gaps.empty() ? "complete" : str(gaps.size(), " gaps");
  return str("report (", gap_note, ") -> ", p.report_dir);
}

}  // namespace gld
