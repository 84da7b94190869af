#include "gld/geoenc.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <json.hpp>

#include "gld/checkpoint.hpp"

namespace gld {

using nn::Graph;
using nn::Var;

namespace {

Tensor tile_rows(const Tensor& t, int v) {
  check(t.rank() == 2, "tile_rows wants [T,C]");
  Tensor out({v, t.dim(0), t.dim(1)});
  for (int i = 0; i < v; ++i)
    std::memcpy(out.data() + int64_t(i) * t.numel(), t.data(), size_t(t.numel()) * sizeof(float));
  return out;
}

int mlp_hidden(int dim) { return ((8 * dim / 3) + 7) / 8 * 8; }

// x [V,3] -> row L2-normalized, via ops so gradients flow.
Var normalize_rows3(Graph& g, const Var& x) {
  Var sq = ad::mul(g, x, x);
  Var ss = ad::matmul(g, sq, g.constant(Tensor::full({3, 1}, 1.0f)));  // [V,1]
  Var inv = ad::rsqrt(g, ad::add(g, ss, g.constant(Tensor::scalar(1e-8f))));
  Var inv3 = ad::matmul(g, inv, g.constant(Tensor::full({1, 3}, 1.0f)));
  return ad::mul(g, x, inv3);
}

Var rowdot3(Graph& g, const Var& a, const Var& b) {
  return ad::matmul(g, ad::mul(g, a, b), g.constant(Tensor::full({3, 1}, 1.0f)));
}

Var bcast3(Graph& g, const Var& col) {
  return ad::matmul(g, col, g.constant(Tensor::full({1, 3}, 1.0f)));
}

// 6D rotation parameterization -> row-major rotation matrices [V,9].
Var rot6d_to_matrix_rows(Graph& g, const Var& six) {
  Var a = ad::slice(g, six, -1, 0, 3);
  Var b = ad::slice(g, six, -1, 3, 3);
  Var x = normalize_rows3(g, a);
  Var y = normalize_rows3(g, ad::sub(g, b, ad::mul(g, x, bcast3(g, rowdot3(g, x, b)))));
  auto comp = [&](const Var& v, int i) { return ad::slice(g, v, -1, i, 1); };
  Var x0 = comp(x, 0), x1 = comp(x, 1), x2 = comp(x, 2);
  Var y0 = comp(y, 0), y1 = comp(y, 1), y2 = comp(y, 2);
  Var z0 = ad::sub(g, ad::mul(g, x1, y2), ad::mul(g, x2, y1));
  Var z1 = ad::sub(g, ad::mul(g, x2, y0), ad::mul(g, x0, y2));
  Var z2 = ad::sub(g, ad::mul(g, x0, y1), ad::mul(g, x1, y0));
  // Row-major [x y z] columns: rows are (x_i, y_i, z_i).
  return ad::concat(g, {x0, y0, z0, x1, y1, z1, x2, y2, z2}, -1);
}

}  // namespace

// ------------------------------------------------------------ GeoModel --

GeoModel::GeoModel(const EncoderConfig& cfg_in, int image_size_in, uint64_t seed)
    : cfg(cfg_in), image_size(image_size_in) {
  check(cfg.patch == 1 || cfg.patch == 2 || cfg.patch == 4, "encoder patch must be 1, 2, or 4");
  check(image_size % cfg.patch == 0, "image size not divisible by patch");
  check(cfg.dim % cfg.heads == 0, "encoder dim not divisible by heads");
  check(!cfg.taps.empty(), "need at least one tap");
  for (size_t i = 0; i < cfg.taps.size(); ++i) {
    check(cfg.taps[i] >= 1 && cfg.taps[i] <= cfg.blocks, "tap out of range");
    if (i) check(cfg.taps[i] > cfg.taps[i - 1], "taps must be increasing");
  }
  grid_ = image_size / cfg.patch;
  Rng rng(seed);
  pos_emb_ = nn::sincos_pos_emb_2d(grid_, grid_, cfg.dim);
  patch_embed_ = nn::Linear(params, "trunk.patch", cfg.patch * cfg.patch * 3, cfg.dim, rng);
  for (int b = 0; b < cfg.blocks; ++b)
    blocks_.emplace_back(params, str("trunk.block", b), cfg.dim, cfg.heads, mlp_hidden(cfg.dim),
                         rng);

  const int f = cfg.fusion_dim;
  for (size_t k = 0; k < cfg.taps.size(); ++k)
    level_proj_.emplace_back(params, str("geodec.proj", k), cfg.dim, f, rng);
  const float cs = nn::lecun_std(9 * f);
  fuse_w1_ = params.create("geodec.fuse1.w", {3, 3, f, f}, rng, cs);
  fuse_b1_ = params.zeros("geodec.fuse1.b", {f});
  fuse_w2_ = params.create("geodec.fuse2.w", {3, 3, f, f}, rng, cs);
  fuse_b2_ = params.zeros("geodec.fuse2.b", {f});
  for (int p = cfg.patch; p > 1; p /= 2) {
    const int i = int(up_w_.size());
    up_w_.push_back(params.create(str("geodec.up", i, ".w"), {3, 3, f, 4 * f}, rng, cs));
    up_b_.push_back(params.zeros(str("geodec.up", i, ".b"), {4 * f}));
  }
  head_w_ = params.create("geodec.head.w", {3, 3, f, f}, rng, cs);
  head_b_ = params.zeros("geodec.head.b", {f});
  depth_head_ = nn::Linear(params, "geodec.depth", f, 1, rng);
  ray_head_ = nn::Linear(params, "geodec.rays", f, 6, rng);
  pose_fc1_ = nn::Linear(params, "geodec.pose1", 2 * cfg.dim, cfg.pose_hidden, rng);
  pose_fc2_ = nn::Linear(params, "geodec.pose2", cfg.pose_hidden, 10, rng);
}

Var GeoModel::trunk_block(Graph& g, Var x, int block_idx) const {
  // Odd 1-indexed blocks look within a view, even ones across all views.
  const bool local = block_idx % 2 == 0;
  return blocks_[size_t(block_idx)].forward(g, x, local);
}

std::vector<Var> GeoModel::encode(Graph& g, const Tensor& images) const {
  check(images.rank() == 4 && images.dim(3) == 3, "encode: images [V,H,W,3], got ",
        images.shape_str());
  check(images.dim(1) == image_size && images.dim(2) == image_size,
        "encode: image size mismatch");
  const int v = images.dim(0);
  const int p = cfg.patch;
  const int t = grid_ * grid_;
  Var x = g.constant(images);
  x = ad::reshape(g, x, {v, grid_, p, grid_, p, 3});
  x = ad::permute(g, x, {0, 1, 3, 2, 4, 5});
  x = ad::reshape(g, x, {v, t, p * p * 3});
  x = patch_embed_(g, x);
  x = ad::add(g, x, g.constant(tile_rows(pos_emb_, v)));
  std::vector<Var> taps;
  for (int b = 0; b < cfg.blocks; ++b) {
    x = trunk_block(g, x, b);
    if (std::find(cfg.taps.begin(), cfg.taps.end(), b + 1) != cfg.taps.end()) taps.push_back(x);
  }
  return taps;
}

MultiLevelFeatures GeoModel::encode_frozen(const Tensor& images) const {
  Graph g;
  g.recording = false;
  std::vector<Var> taps = encode(g, images);
  MultiLevelFeatures f;
  f.grid_h = grid_;
  f.grid_w = grid_;
  for (const Var& v : taps) f.levels.push_back(v.v);
  return f;
}

std::vector<Tensor> GeoModel::propagate(const Tensor& f_k, int level_k) const {
  check(level_k >= 0 && level_k < n_levels(), "propagate: bad level");
  check(f_k.rank() == 3 && f_k.dim(2) == cfg.dim, "propagate: features [V,T,C]");
  Graph g;
  g.recording = false;
  Var x = g.constant(f_k);
  std::vector<Tensor> out{f_k};
  for (int b = cfg.taps[size_t(level_k)]; b < cfg.taps.back(); ++b) {
    x = trunk_block(g, x, b);
    if (std::find(cfg.taps.begin(), cfg.taps.end(), b + 1) != cfg.taps.end()) out.push_back(x.v);
  }
  return out;
}

GeoModel::GeoHeads GeoModel::decode_geometry(Graph& g, const std::vector<Var>& levels) const {
  check(levels.size() == size_t(n_levels()), "decode_geometry: want ", n_levels(), " levels");
  const int v = levels[0].dim(0);
  const int f = cfg.fusion_dim;
  Var fused = level_proj_[0](g, levels[0]);
  for (size_t k = 1; k < levels.size(); ++k)
    fused = ad::add(g, fused, level_proj_[k](g, levels[k]));
  fused = ad::reshape(g, fused, {v, grid_, grid_, f});
  fused = ad::silu(g, ad::conv2d(g, fused, g.leaf(fuse_w1_), g.leaf(fuse_b1_)));
  fused = ad::silu(g, ad::conv2d(g, fused, g.leaf(fuse_w2_), g.leaf(fuse_b2_)));
  for (size_t i = 0; i < up_w_.size(); ++i) {
    fused = ad::conv2d(g, fused, g.leaf(up_w_[i]), g.leaf(up_b_[i]));
    fused = ad::silu(g, ad::pixel_shuffle(g, fused, 2));
  }
  fused = ad::silu(g, ad::conv2d(g, fused, g.leaf(head_w_), g.leaf(head_b_)));

  GeoHeads heads;
  heads.depth = ad::add(g, ad::softplus(g, depth_head_(g, fused)),
                        g.constant(Tensor::scalar(0.01f)));
  heads.rays = ray_head_(g, fused);

  const Var& deep = levels.back();
  const int t = deep.dim(1);
  Tensor pool_w({v, 1, t});
  pool_w.fill(1.0f / float(t));
  Var pooled = ad::reshape(g, ad::bmm(g, g.constant(pool_w), deep), {v, cfg.dim});
  Var anchor = nn::broadcast_rows(g, ad::slice(g, pooled, 0, v - 1, 1), v);
  Var h = ad::concat(g, {pooled, anchor}, -1);
  heads.pose = pose_fc2_(g, ad::silu(g, pose_fc1_(g, h)));
  heads.rot = rot6d_to_matrix_rows(g, ad::slice(g, heads.pose, -1, 0, 6));
  return heads;
}

GeoModel::GeoOutput GeoModel::infer_geometry(const Tensor& images) const {
  Graph g;
  g.recording = false;
  std::vector<Var> levels = encode(g, images);
  std::vector<Tensor> raw;
  for (const Var& l : levels) raw.push_back(l.v);
  return geometry_from_levels(raw);
}

GeoModel::GeoOutput GeoModel::geometry_from_levels(const std::vector<Tensor>& raw) const {
  Graph g;
  g.recording = false;
  std::vector<Var> levels;
  for (const Tensor& t : raw) levels.push_back(g.constant(t));
  GeoHeads heads = decode_geometry(g, levels);
  const int v = raw.empty() ? 0 : raw[0].dim(0);
  GeoOutput out;
  out.depth = heads.depth.v.reshaped({v, image_size, image_size});
  out.rays = heads.rays.v;
  for (int i = 0; i < v; ++i) {
    CameraPose p;
    const float* r = heads.rot.v.data() + int64_t(i) * 9;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) p.R(a, b) = r[a * 3 + b];
    const float* raw = heads.pose.v.data() + int64_t(i) * 10;
    p.t = Eigen::Vector3d{raw[6], raw[7], raw[8]};
    const double focal = std::exp(double(raw[9])) * image_size;
    p.K << focal, 0, image_size / 2.0, 0, focal, image_size / 2.0, 0, 0, 1;
    out.poses.push_back(p);
  }
  return out;
}

// --------------------------------------------------------- latent stats --

std::string LatentStats::to_json_text() const {
  nlohmann::json j;
  j["corpus_id"] = corpus_id;
  nlohmann::json levels = nlohmann::json::array();
  for (size_t k = 0; k < mean.size(); ++k) {
    nlohmann::json e;
    for (int64_t i = 0; i < mean[k].numel(); ++i) e["mean"].push_back(mean[k].at(i));
    for (int64_t i = 0; i < stdev[k].numel(); ++i) e["std"].push_back(stdev[k].at(i));
    levels.push_back(std::move(e));
  }
  j["levels"] = std::move(levels);
  return j.dump();
}

LatentStats LatentStats::from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  LatentStats s;
  s.corpus_id = j.at("corpus_id").get<std::string>();
  for (const auto& e : j.at("levels")) {
    const auto m = e.at("mean").get<std::vector<float>>();
    const auto d = e.at("std").get<std::vector<float>>();
    check(m.size() == d.size(), "latent stats: mean/std length mismatch");
    s.mean.push_back(Tensor::from({int(m.size())}, m));
    s.stdev.push_back(Tensor::from({int(d.size())}, d));
  }
  return s;
}

LatentStats compute_latent_stats(const GeoModel& model, const std::string& data_root,
                                 const DatasetManifest& manifest, int max_scenes) {
  const int n_levels = model.n_levels();
  const int c = model.cfg.dim;
  std::vector<std::vector<double>> sum(size_t(n_levels), std::vector<double>(size_t(c), 0.0));
  std::vector<std::vector<double>> sumsq(size_t(n_levels), std::vector<double>(size_t(c), 0.0));
  int64_t rows = 0;
  int used = 0;
  for (const std::string& scene : manifest.scenes) {
    if (max_scenes > 0 && used >= max_scenes) break;
    ++used;
    MultiViewSequence seq = dataset_read_scene(data_root + "/" + scene);
    std::vector<int> all(seq.views.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = int(i);
    MultiLevelFeatures f = model.encode_frozen(stack_images(seq, all));
    for (int k = 0; k < n_levels; ++k) {
      const Tensor& lv = f.levels[size_t(k)];
      const int64_t r = lv.rows2d();
      for (int64_t i = 0; i < r; ++i) {
        const float* row = lv.data() + i * c;
        for (int ch = 0; ch < c; ++ch) {
          sum[size_t(k)][size_t(ch)] += row[ch];
          sumsq[size_t(k)][size_t(ch)] += double(row[ch]) * row[ch];
        }
      }
      if (k == 0) rows += r;
    }
  }
  check(rows > 0, "compute_latent_stats: empty dataset");
  LatentStats s;
  s.corpus_id = str(manifest.corpus_id, ":fullV", manifest.views);
  for (int k = 0; k < n_levels; ++k) {
    Tensor m({c}), d({c});
    for (int ch = 0; ch < c; ++ch) {
      const double mu = sum[size_t(k)][size_t(ch)] / double(rows);
      const double var = std::max(0.0, sumsq[size_t(k)][size_t(ch)] / double(rows) - mu * mu);
      m.at(ch) = float(mu);
      d.at(ch) = std::max(float(std::sqrt(var)), 1e-4f);
    }
    s.mean.push_back(m);
    s.stdev.push_back(d);
  }
  return s;
}

void normalize_features(MultiLevelFeatures& f, const LatentStats& stats) {
  check(!f.normalized, "features already normalized");
  check(f.levels.size() == stats.mean.size(), "latent stats level count mismatch");
  for (size_t k = 0; k < f.levels.size(); ++k) {
    Tensor& lv = f.levels[k];
    const int c = lv.dim(-1);
    check(stats.mean[k].numel() == c, "latent stats channel mismatch");
    for (int64_t i = 0; i < lv.rows2d(); ++i) {
      float* row = lv.data() + i * c;
      for (int ch = 0; ch < c; ++ch)
        row[ch] = (row[ch] - stats.mean[k].at(ch)) / stats.stdev[k].at(ch);
    }
  }
  f.normalized = true;
}

void denormalize_features(MultiLevelFeatures& f, const LatentStats& stats) {
  check(f.normalized, "features are not normalized");
  check(f.levels.size() == stats.mean.size(), "latent stats level count mismatch");
  for (size_t k = 0; k < f.levels.size(); ++k) {
    Tensor& lv = f.levels[k];
    const int c = lv.dim(-1);
    for (int64_t i = 0; i < lv.rows2d(); ++i) {
      float* row = lv.data() + i * c;
      for (int ch = 0; ch < c; ++ch)
        row[ch] = row[ch] * stats.stdev[k].at(ch) + stats.mean[k].at(ch);
    }
  }
  f.normalized = false;
}

// ------------------------------------------------------------- training --

namespace {

struct GeoTargets {
  Tensor log_depth;  // [V,H,W,1], 0 where invalid
  Tensor mask;       // [V,H,W,1]
  double valid = 0;
  Tensor rays;       // [V,H,W,6]
  Tensor rot;        // [V,9]
  Tensor trans;      // [V,3]
  Tensor logf;       // [V,1]
};

GeoTargets make_geo_targets(const MultiViewSequence& seq, const std::vector<int>& idx,
                            int image_size) {
  double scale = 1.0;
  std::vector<CameraPose> norm = normalize_poses(gather_poses(seq, idx), &scale);
  const int v = int(idx.size());
  GeoTargets t;
  t.log_depth = Tensor({v, image_size, image_size, 1});
  t.mask = Tensor({v, image_size, image_size, 1});
  t.rays = Tensor({v, image_size, image_size, 6});
  t.rot = Tensor({v, 9});
  t.trans = Tensor({v, 3});
  t.logf = Tensor({v, 1});
  for (int i = 0; i < v; ++i) {
    const Tensor& d = seq.views[size_t(idx[size_t(i)])].depth;
    for (int64_t px = 0; px < d.numel(); ++px) {
      const float z = d.at(px);
      if (z > 0) {
        t.log_depth.at(int64_t(i) * d.numel() + px) = std::log(float(z / scale));
        t.mask.at(int64_t(i) * d.numel() + px) = 1.0f;
        t.valid += 1;
      }
    }
    Tensor pl = plucker_embedding(norm[size_t(i)], image_size, image_size, image_size,
                                  image_size);
    std::memcpy(t.rays.data() + int64_t(i) * pl.numel(), pl.data(),
                size_t(pl.numel()) * sizeof(float));
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) t.rot.at(int64_t(i) * 9 + a * 3 + b) = float(norm[size_t(i)].R(a, b));
    for (int a = 0; a < 3; ++a) t.trans.at(int64_t(i) * 3 + a) = float(norm[size_t(i)].t(a));
    t.logf.at(i) = float(std::log(norm[size_t(i)].K(0, 0) / image_size));
  }
  return t;
}

}  // namespace

GeoLossParts train_geoenc(const ExperimentConfig& cfg, const std::string& data_root,
                          const std::string& out_path) {
  const DatasetManifest manifest = manifest_read(data_root);
  GeoModel model(cfg.enc, manifest.image_size, cfg.train.seed);
  nn::AdamW opt(model.params, float(cfg.train.lr), 0.9f, 0.95f, float(cfg.train.weight_decay),
                float(cfg.train.grad_clip));
  Rng rng(cfg.train.seed);
  Rng data_rng = rng.fork(1);
  const int train_scenes = std::max(1, int(manifest.scenes.size()) - cfg.data.val_scenes);
  GeoLossParts last;
  for (int step = 0; step < cfg.train.geo_steps; ++step) {
    const int si = int(data_rng.uniform_int(uint64_t(train_scenes)));
    MultiViewSequence seq = dataset_read_scene(data_root + "/" + manifest.scenes[size_t(si)]);
    std::vector<int> idx =
        sample_window(int(seq.views.size()), cfg.data.views, cfg.data.frame_interval_min,
                      cfg.data.frame_interval_max, data_rng);
    GeoTargets tg = make_geo_targets(seq, idx, manifest.image_size);

    Graph g;
    std::vector<Var> levels = model.encode(g, stack_images(seq, idx));
    GeoModel::GeoHeads heads = model.decode_geometry(g, levels);

    // Scale-invariant log depth over valid pixels.
    Var mask = g.constant(tg.mask);
    Var diff = ad::mul(g, ad::sub(g, ad::log_(g, heads.depth), g.constant(tg.log_depth)), mask);
    const float inv_m = 1.0f / float(std::max(1.0, tg.valid));
    Var mean_sq = ad::scale(g, ad::sum_all(g, ad::mul(g, diff, diff)), inv_m);
    Var mean_d = ad::scale(g, ad::sum_all(g, diff), inv_m);
    Var l_depth =
        ad::sub(g, mean_sq, ad::scale(g, ad::mul(g, mean_d, mean_d), float(cfg.train.si_log_lambda)));

    Var l_rays = ad::mse_loss(g, heads.rays, g.constant(tg.rays));
    Var l_rot = ad::mse_loss(g, heads.rot, g.constant(tg.rot));
    Var l_trans = ad::mse_loss(g, ad::slice(g, heads.pose, -1, 6, 3), g.constant(tg.trans));
    Var l_focal = ad::mse_loss(g, ad::slice(g, heads.pose, -1, 9, 1), g.constant(tg.logf));
    Var l_pose = ad::add(g, ad::add(g, l_rot, l_trans), l_focal);

    Var total = ad::add(g, l_depth,
                        ad::add(g, ad::scale(g, l_rays, float(cfg.train.ray_loss_weight)),
                                ad::scale(g, l_pose, float(cfg.train.pose_loss_weight))));
    check(std::isfinite(total.v.at(0)), "geoenc training diverged at step ", step);
    g.backward(total);
    opt.step(g);

    last.total = total.v.at(0);
    last.depth = l_depth.v.at(0);
    last.rays = l_rays.v.at(0);
    last.pose = l_pose.v.at(0);
  }

  nlohmann::json meta;
  meta["config"] = nlohmann::json::parse(cfg.to_json_text());
  meta["config_fingerprint"] = cfg.fingerprint();
  meta["seed"] = cfg.train.seed;
  meta["image_size"] = manifest.image_size;
  meta["corpus_id"] = manifest.corpus_id;
  checkpoint_save(out_path, "geoenc", model.params, meta.dump());
  return last;
}

}  // namespace gld
