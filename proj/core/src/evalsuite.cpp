#include "gld/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include <json.hpp>

#include "gld/dataset_io.hpp"

namespace gld {

TrajectoryMetrics pose_metrics(const GeoModel& enc, const Tensor& window_images,
                               const std::vector<CameraPose>& gt_poses) {
  check(window_images.dim(0) >= 3, "trajectory alignment needs at least 3 views");
  check(window_images.dim(0) == int(gt_poses.size()), "view count mismatch");
  GeoModel::GeoOutput out = enc.infer_geometry(window_images);
  return trajectory_metrics(out.poses, normalize_poses(gt_poses));
}

// ------------------------------------------------------------- probes --

namespace {

double row_norm(const float* p, int c) {
  double s = 0;
  for (int i = 0; i < c; ++i) s += double(p[i]) * p[i];
  return std::sqrt(s);
}

}  // namespace

double pck_probe(const Tensor& feats_a, const Tensor& feats_b, int grid_h, int grid_w,
                 int image_size, const CorrespondenceSet& pairs, double threshold_px) {
  check(feats_a.rank() == 2 && feats_b.rank() == 2, "token maps must be [T,C]");
  check(feats_a.dim(1) == feats_b.dim(1), "descriptor widths differ");
  const int T = grid_h * grid_w, C = feats_a.dim(1);
  check(feats_a.dim(0) == T && feats_b.dim(0) == T, "token count != grid size");
  check(!pairs.matches.empty(), "correspondence probe needs at least one pair");

  const double cell_w = double(image_size) / grid_w;
  const double cell_h = double(image_size) / grid_h;
  std::vector<double> norm_b(static_cast<size_t>(T));
  for (int j = 0; j < T; ++j) norm_b[size_t(j)] = row_norm(feats_b.data() + int64_t(j) * C, C);

  int correct = 0;
  for (const Correspondence& m : pairs.matches) {
    const int tx = std::clamp(int(m.ua / cell_w), 0, grid_w - 1);
    const int ty = std::clamp(int(m.va / cell_h), 0, grid_h - 1);
    const float* q = feats_a.data() + int64_t(ty * grid_w + tx) * C;
    const double qn = row_norm(q, C);
    int best = 0;
    double best_sim = -2.0;
    for (int j = 0; j < T; ++j) {
      const float* kr = feats_b.data() + int64_t(j) * C;
      double dot = 0;
      for (int i = 0; i < C; ++i) dot += double(q[i]) * kr[i];
      const double sim = dot / std::max(qn * norm_b[size_t(j)], 1e-12);
      if (sim > best_sim) {
        best_sim = sim;
        best = j;
      }
    }
    const double cx = (best % grid_w + 0.5) * cell_w;
    const double cy = (best / grid_w + 0.5) * cell_h;
    if (std::hypot(cx - m.ub, cy - m.vb) <= threshold_px) ++correct;
  }
  return double(correct) / double(pairs.matches.size());
}

double pck_chance(int grid_h, int grid_w, int image_size, const CorrespondenceSet& pairs,
                  double threshold_px) {
  check(!pairs.matches.empty(), "chance level needs at least one pair");
  const double cell_w = double(image_size) / grid_w;
  const double cell_h = double(image_size) / grid_h;
  double acc = 0;
  for (const Correspondence& m : pairs.matches) {
    int hits = 0;
    for (int j = 0; j < grid_h * grid_w; ++j) {
      const double cx = (j % grid_w + 0.5) * cell_w;
      const double cy = (j / grid_w + 0.5) * cell_h;
      if (std::hypot(cx - m.ub, cy - m.vb) <= threshold_px) ++hits;
    }
    acc += double(hits) / double(grid_h * grid_w);
  }
  return acc / double(pairs.matches.size());
}

namespace {

Tensor view_row(const Tensor& t, int v) {
  const int T = t.dim(1), C = t.dim(2);
  Tensor out({T, C});
  std::memcpy(out.data(), t.data() + int64_t(v) * T * C, sizeof(float) * size_t(T) * size_t(C));
  return out;
}

}  // namespace

AttentionProbeResult attention_probe(const DiffusionModel& model, const GeoModel& enc,
                                     const LatentStats& stats, const MultiViewSequence& seq,
                                     int view_a, int view_b, int level,
                                     const CorrespondenceSet& pairs, double threshold_px,
                                     double t_mid) {
  check(view_a != view_b, "probe needs two distinct views");
  check(level >= 0 && level < enc.n_levels(), "level out of range");
  const std::vector<int> idx = {view_a, view_b};
  const Tensor images = stack_images(seq, idx);
  MultiLevelFeatures full = enc.encode_frozen(images);
  normalize_features(full, stats);
  MultiLevelFeatures src = enc.encode_frozen(stack_images(seq, {view_a}));
  normalize_features(src, stats);

  const ConditionInputs cond =
      build_condition(src.levels[size_t(level)], {0}, 2, gather_poses(seq, idx),
                      enc.image_size, enc.grid(), false);
  Rng rng(0x9e3779b97f4a7c15ull);
  const Tensor z_t =
      flow_interpolate(full.levels[size_t(level)], Tensor::randn(full.levels[size_t(level)].shape(), rng), t_mid)
          .z;
  Tensor cascade_cond;
  if (model.cascade) cascade_cond = full.levels[1];

  std::map<std::string, std::pair<Tensor, Tensor>> captured;
  nn::QkObserver obs = [&](const std::string& tag, const Tensor& q, const Tensor& k) {
    captured[tag] = {q.clone(), k.clone()};
  };
  model.qk_observer = &obs;
  model.predict_velocity(z_t, cond, t_mid, cascade_cond);
  model.qk_observer = nullptr;

  AttentionProbeResult out;
  const int n_dec = model.cascade ? model.cfg.cascade_dec_blocks : model.cfg.dec_blocks;
  std::vector<std::string> tags;
  for (int b = 0; b < model.cfg.enc_blocks; ++b) tags.push_back(str("enc", b));
  for (int b = 0; b < n_dec; ++b) tags.push_back(str("dec", b));
  for (const std::string& tag : tags) {
    auto it = captured.find(tag);
    check(it != captured.end(), "attention layer ", tag, " produced no capture");
    const Tensor qa = view_row(it->second.first, 0);
    const Tensor kb = view_row(it->second.second, 1);
    out.layers.push_back(tag);
    out.pck.push_back(
        pck_probe(qa, kb, enc.grid(), enc.grid(), enc.image_size, pairs, threshold_px));
  }
  return out;
}

// --------------------------------------------------------- evaluation --

SceneMetrics mean_metrics(const std::vector<SceneMetrics>& rows) {
  check(!rows.empty(), "no scenes evaluated");
  SceneMetrics m;
  for (const SceneMetrics& r : rows) {
    m.psnr += r.psnr;
    m.ssim += r.ssim;
    m.absrel += r.absrel;
    m.sqrel += r.sqrel;
    m.rmse += r.rmse;
    m.delta1 += r.delta1;
    m.ate += r.ate;
    m.rpe_rot_deg += r.rpe_rot_deg;
    m.rpe_trans += r.rpe_trans;
    m.reproj += r.reproj;
    m.pck += r.pck;
  }
  const double n = double(rows.size());
  m.psnr /= n;
  m.ssim /= n;
  m.absrel /= n;
  m.sqrel /= n;
  m.rmse /= n;
  m.delta1 /= n;
  m.ate /= n;
  m.rpe_rot_deg /= n;
  m.rpe_trans /= n;
  m.reproj /= n;
  m.pck /= n;
  return m;
}

SceneMetrics evaluate_scene(const GenerationPipeline& pipe, const MultiViewSequence& seq,
                            const std::vector<int>& window, const std::vector<int>& src_idx,
                            int boundary, const SamplerConfig& scfg, bool use_cascade) {
  const ExperimentConfig& cfg = pipe.config();
  const int H = cfg.data.image_size;
  std::vector<int> src_frames;
  for (int s : src_idx) src_frames.push_back(window[size_t(s)]);
  const Tensor src_images = stack_images(seq, src_frames);
  const std::vector<CameraPose> poses = gather_poses(seq, window);

  GenerationResult res =
      pipe.generate(src_images, src_idx, poses, boundary, scfg, use_cascade);

  SceneMetrics out;
  const int M = int(res.tgt_idx.size());
  check(M >= 1, "window has no target views");
  std::vector<DepthMetrics> dms;
  for (int j = 0; j < M; ++j) {
    const int v = res.tgt_idx[size_t(j)];
    const ViewSample& gt = seq.views[size_t(window[size_t(v)])];
    Tensor img({H, H, 3}), dep({H, H});
    std::memcpy(img.data(), res.images.data() + int64_t(j) * img.numel(),
                sizeof(float) * size_t(img.numel()));
    std::memcpy(dep.data(), res.depth.data() + int64_t(j) * dep.numel(),
                sizeof(float) * size_t(dep.numel()));
    out.psnr += psnr(img, gt.image);
    out.ssim += ssim(img, gt.image);
    dms.push_back(depth_metrics(dep, gt.depth));
  }
  out.psnr /= M;
  out.ssim /= M;
  for (const DepthMetrics& d : dms) {
    out.absrel += d.abs_rel / M;
    out.sqrel += d.sq_rel / M;
    out.rmse += d.rmse / M;
    out.delta1 += d.delta1 / M;
  }

  Tensor mixed = stack_images(seq, window);
  for (int j = 0; j < M; ++j) {
    const int v = res.tgt_idx[size_t(j)];
    std::memcpy(mixed.data() + int64_t(v) * H * H * 3, res.images.data() + int64_t(j) * H * H * 3,
                sizeof(float) * size_t(H) * H * 3);
  }
  const TrajectoryMetrics tm = pose_metrics(pipe.encoder(), mixed, poses);
  out.ate = tm.ate;
  out.rpe_rot_deg = tm.rpe_rot_deg;
  out.rpe_trans = tm.rpe_trans;

  {
    Rng crng(scfg.seed ^ 0x5151DE57ull);
    const CorrespondenceSet pairs =
        gt_correspondences(seq, window.front(), window.back(), cfg.eval.pck_pairs, crng);
    if (!pairs.matches.empty()) {
      const GeoModel& enc = pipe.encoder();
      const MultiLevelFeatures mf = enc.encode_frozen(mixed);
      const int level = std::min(2, int(mf.levels.size()) - 1);
      const int T = mf.levels[size_t(level)].dim(1), C = mf.levels[size_t(level)].dim(2);
      auto view_feats = [&](int v) {
        Tensor f({T, C});
        std::memcpy(f.data(), mf.levels[size_t(level)].data() + int64_t(v) * T * C,
                    sizeof(float) * size_t(T) * C);
        return f;
      };
      const double thr = cfg.eval.pck_threshold * H * std::sqrt(2.0);
      out.pck = pck_probe(view_feats(0), view_feats(int(window.size()) - 1), mf.grid_h, mf.grid_w,
                          H, pairs, thr);
    }
  }

  if (M >= 2) {
    Rng rng(scfg.seed ^ 0xABCDEF12ull);
    double acc = 0;
    for (int j = 0; j + 1 < M; ++j) {
      const int va = res.tgt_idx[size_t(j)], vb = res.tgt_idx[size_t(j + 1)];
      Tensor da({H, H}), db({H, H});
      std::memcpy(da.data(), res.depth.data() + int64_t(j) * H * H,
                  sizeof(float) * size_t(H) * H);
      std::memcpy(db.data(), res.depth.data() + int64_t(j + 1) * H * H,
                  sizeof(float) * size_t(H) * H);
      acc += reprojection_error(da, db, res.est_poses[size_t(va)], res.est_poses[size_t(vb)],
                                cfg.eval.reproj_samples, rng);
    }
    out.reproj = acc / double(M - 1);
  }
  return out;
}

std::vector<EvalWindow> make_eval_windows(const ExperimentConfig& cfg,
                                          const std::string& data_root) {
  const DatasetManifest manifest = manifest_read(data_root);
  const int first_val = std::max(0, int(manifest.scenes.size()) - cfg.data.val_scenes);
  const int n = std::min(cfg.eval.scenes, int(manifest.scenes.size()) - first_val);
  check(n > 0, "no validation scenes available");
  Rng rng(cfg.eval.seed);
  std::vector<EvalWindow> out;
  for (int i = 0; i < n; ++i) {
    EvalWindow w;
    w.scene_id = manifest.scenes[size_t(first_val + i)];
    w.seq = dataset_read_scene(data_root + "/" + w.scene_id);
    w.window = sample_window(int(w.seq.views.size()), cfg.data.views,
                             cfg.data.frame_interval_min, cfg.data.frame_interval_max, rng);
    const int n_src = std::min(cfg.eval.src_views, int(w.window.size()) - 1);
    w.src_idx = sample_views(int(w.window.size()), n_src, rng);
    w.seed = rng.next_u64();
    out.push_back(std::move(w));
  }
  return out;
}

// ----------------------------------------------------------- reports --

namespace {

nlohmann::json paper_reference_block() {
  nlohmann::json r;
  r["paper_table_2"] = {
      {"columns", {"psnr", "ssim", "lpips", "absrel", "rmse", "delta1"}},
      {"k0", {12.55, 0.323, 0.579, 0.267, 0.400, 0.641}},
      {"k1", {13.61, 0.366, 0.555, 0.191, 0.311, 0.744}},
      {"k2", {13.35, 0.355, 0.566, 0.254, 0.393, 0.659}},
      {"k3", {13.35, 0.355, 0.567, 0.260, 0.402, 0.647}}};
  r["paper_table_3"] = {
      {"columns", {"psnr", "ssim", "lpips", "ate", "rpe_r", "rpe_t", "reproj", "met3r"}},
      {"re10k", {16.362, 0.630, 0.431, 0.211, 7.07, 0.444, 0.673, 0.328}},
      {"dl3dv", {15.499, 0.468, 0.438, 0.209, 5.75, 0.466, 0.612, 0.378}}};
  r["paper_table_4"] = {{"columns", {"f0", "f1", "f2", "f3", "dinov2"}},
                        {"pck_percent", {22.25, 35.98, 40.70, 20.98, 31.64}}};
  r["paper_table_5"] = {{"columns", {"f0", "f1", "f2", "f3"}},
                        {"psnr", {28.01, 25.36, 14.01, 10.19}},
                        {"ssim", {0.922, 0.873, 0.627, 0.508}}};
  r["paper_table_7"] = {
      {"columns", {"psnr", "ssim", "lpips", "ate", "rpe_r", "rpe_t", "reproj", "met3r"}},
      {"independent", {18.81, 0.692, 0.335, 0.197, 7.179, 0.430, 0.666, 0.335}},
      {"cascaded", {19.00, 0.695, 0.327, 0.182, 6.694, 0.397, 0.652, 0.326}}};
  r["paper_table_9"] = {{"columns", {"absrel", "sqrel", "delta1", "psnr"}},
                        {"gld", {0.160, 0.410, 0.800, 14.80}}};
  return r;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += str(v[i], i + 1 < v.size() ? " " : "");
  return s;
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::string csv =
      "label,seed,window,src_idx,psnr,ssim,absrel,sqrel,rmse,delta1,ate,rpe_rot_deg,rpe_trans,"
      "reproj,pck\n";
  for (const EvalRow& r : rows) {
    csv += str(r.label, ",", r.seed, ",\"", join_ints(r.window), "\",\"", join_ints(r.src_idx),
               "\",", r.m.psnr, ",", r.m.ssim, ",", r.m.absrel, ",", r.m.sqrel, ",", r.m.rmse,
               ",", r.m.delta1, ",", r.m.ate, ",", r.m.rpe_rot_deg, ",", r.m.rpe_trans, ",",
               r.m.reproj, ",", r.m.pck, "\n");
  }
  csv += "reference:paper_table_3_re10k,,,,16.362,0.630,,,,,0.211,7.07,0.444,0.673,\n";
  csv += "reference:paper_table_3_dl3dv,,,,15.499,0.468,,,,,0.209,5.75,0.466,0.612,\n";
  csv += "reference:paper_table_9,,,,14.80,,0.160,0.410,,0.800,,,,,\n";
  return csv;
}

std::string EvalReport::to_json_text() const {
  nlohmann::json j;
  j["config_fingerprint"] = config_fingerprint;
  j["estimator"] = estimator;
  j["note"] =
      "lpips and met3r columns are out of scope; ssim stands in for perceptual quality. pck is "
      "the frozen-feature correspondence between window endpoints at level 2.";
  nlohmann::json rws = nlohmann::json::array();
  for (const EvalRow& r : rows) {
    nlohmann::json e;
    e["label"] = r.label;
    e["seed"] = r.seed;
    e["window"] = r.window;
    e["src_idx"] = r.src_idx;
    e["psnr"] = r.m.psnr;
    e["ssim"] = r.m.ssim;
    e["absrel"] = r.m.absrel;
    e["sqrel"] = r.m.sqrel;
    e["rmse"] = r.m.rmse;
    e["delta1"] = r.m.delta1;
    e["ate"] = r.m.ate;
    e["rpe_rot_deg"] = r.m.rpe_rot_deg;
    e["rpe_trans"] = r.m.rpe_trans;
    e["reproj"] = r.m.reproj;
    e["pck"] = r.m.pck;
    rws.push_back(std::move(e));
  }
  j["rows"] = std::move(rws);
  j["reference"] = paper_reference_block();
  return j.dump(2);
}

EvalReport run_eval(const GenerationPipeline& pipe, const std::string& data_root, int boundary,
                    bool use_cascade) {
  const ExperimentConfig& cfg = pipe.config();
  EvalReport report;
  report.config_fingerprint = cfg.fingerprint();
  std::vector<SceneMetrics> all;
  for (const EvalWindow& w : make_eval_windows(cfg, data_root)) {
    SamplerConfig scfg{cfg.diff.sample_steps, cfg.diff.cfg_scale, w.seed};
    EvalRow row;
    row.label = w.scene_id;
    row.seed = w.seed;
    row.window = w.window;
    row.src_idx = w.src_idx;
    row.m = evaluate_scene(pipe, w.seq, w.window, w.src_idx, boundary, scfg, use_cascade);
    all.push_back(row.m);
    report.rows.push_back(std::move(row));
  }
  EvalRow mean;
  mean.label = "mean";
  mean.m = mean_metrics(all);
  report.rows.push_back(std::move(mean));
  return report;
}

void pck_report(const GeoModel& enc, const ExperimentConfig& cfg, const std::string& data_root,
                const std::string& out_csv) {
  const double thr = cfg.eval.pck_threshold * cfg.data.image_size * std::sqrt(2.0);
  Rng rng(cfg.eval.seed + 5);
  std::vector<double> acc(size_t(enc.n_levels()), 0.0);
  int n_pairs = 0;
  for (const EvalWindow& w : make_eval_windows(cfg, data_root)) {
    const int va = w.window.front(), vb = w.window.back();
    CorrespondenceSet pairs =
        gt_correspondences(w.seq, va, vb, cfg.eval.pck_pairs, rng);
    if (pairs.matches.empty()) continue;
    MultiLevelFeatures feats = enc.encode_frozen(stack_images(w.seq, {va, vb}));
    for (int l = 0; l < enc.n_levels(); ++l) {
      acc[size_t(l)] += pck_probe(view_row(feats.levels[size_t(l)], 0),
                                  view_row(feats.levels[size_t(l)], 1), enc.grid(), enc.grid(),
                                  enc.image_size, pairs, thr);
    }
    ++n_pairs;
  }
  check(n_pairs > 0, "no usable correspondence sets for the probe");
  std::string csv = "level,pck_percent\n";
  for (int l = 0; l < enc.n_levels(); ++l)
    csv += str("level", l, ",", 100.0 * acc[size_t(l)] / n_pairs, "\n");
  csv += "reference:paper_table_4_f0,22.25\n";
  csv += "reference:paper_table_4_f1,35.98\n";
  csv += "reference:paper_table_4_f2,40.70\n";
  csv += "reference:paper_table_4_f3,20.98\n";
  csv += "reference:paper_table_4_dinov2,31.64\n";
  write_text_file(out_csv, csv);
}

void attention_report(const GenerationPipeline& pipe, int level, const std::string& data_root,
                      const std::string& out_csv) {
  const ExperimentConfig& cfg = pipe.config();
  const GeoModel& enc = pipe.encoder();
  const DiffusionModel* model =
      level < 0 ? pipe.cascade_model() : pipe.level_model(std::max(level, 0));
  check(model != nullptr, "no denoiser loaded for the probe");
  const double thr = cfg.eval.pck_threshold * cfg.data.image_size * std::sqrt(2.0);
  Rng rng(cfg.eval.seed + 9);

  std::vector<std::string> layers;
  std::vector<double> acc;
  double chance = 0;
  int n = 0;
  for (const EvalWindow& w : make_eval_windows(cfg, data_root)) {
    const int va = w.window.front(), vb = w.window.back();
    CorrespondenceSet pairs = gt_correspondences(w.seq, va, vb, cfg.eval.pck_pairs, rng);
    if (pairs.matches.empty()) continue;
    AttentionProbeResult res = attention_probe(*model, enc, pipe.stats(), w.seq, va, vb,
                                               std::max(level, 0), pairs, thr);
    if (layers.empty()) {
      layers = res.layers;
      acc.assign(layers.size(), 0.0);
    }
    for (size_t i = 0; i < res.pck.size(); ++i) acc[i] += res.pck[i];
    chance += pck_chance(enc.grid(), enc.grid(), enc.image_size, pairs, thr);
    ++n;
  }
  check(n > 0, "no usable correspondence sets for the probe");
  std::string csv = "layer,pck_percent\n";
  for (size_t i = 0; i < layers.size(); ++i)
    csv += str(layers[i], ",", 100.0 * acc[i] / n, "\n");
  csv += str("chance,", 100.0 * chance / n, "\n");
  csv += "reference:paper_appendix_d1,correspondence stays near chance in the condition encoder "
         "and emerges in the velocity decoder\n";
  write_text_file(out_csv, csv);
}

}  // namespace gld
