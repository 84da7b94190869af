#include "gld/config.hpp"

#include <cstdlib>

#include <json.hpp>

#include "gld/common.hpp"

namespace gld {

using nlohmann::json;

namespace {

// Assign only the keys present in j; reject unknown keys so typos in config
// files fail loudly instead of silently keeping defaults.
template <typename T>
void take(json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  out = it->get<T>();
  j.erase(it);
}

void expect_empty(const json& j, const char* section) {
  if (j.empty()) return;
  std::string keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys += it.key() + " ";
  throw Error(str("unknown config keys in ", section, ": ", keys));
}

json data_to_json(const DataConfig& c) {
  return json{{"root", c.root},
              {"image_size", c.image_size},
              {"views", c.views},
              {"scenes", c.scenes},
              {"val_scenes", c.val_scenes},
              {"min_objects", c.min_objects},
              {"max_objects", c.max_objects},
              {"min_coverage", c.min_coverage},
              {"frame_interval_min", c.frame_interval_min},
              {"frame_interval_max", c.frame_interval_max},
              {"seed", c.seed}};
}

void data_from_json(json j, DataConfig& c) {
  take(j, "root", c.root);
  take(j, "image_size", c.image_size);
  take(j, "views", c.views);
  take(j, "scenes", c.scenes);
  take(j, "val_scenes", c.val_scenes);
  take(j, "min_objects", c.min_objects);
  take(j, "max_objects", c.max_objects);
  take(j, "min_coverage", c.min_coverage);
  take(j, "frame_interval_min", c.frame_interval_min);
  take(j, "frame_interval_max", c.frame_interval_max);
  take(j, "seed", c.seed);
  expect_empty(j, "data");
}

json enc_to_json(const EncoderConfig& c) {
  return json{{"patch", c.patch},   {"dim", c.dim},
              {"blocks", c.blocks}, {"heads", c.heads},
              {"taps", c.taps},     {"fusion_dim", c.fusion_dim},
              {"pose_hidden", c.pose_hidden}};
}

void enc_from_json(json j, EncoderConfig& c) {
  take(j, "patch", c.patch);
  take(j, "dim", c.dim);
  take(j, "blocks", c.blocks);
  take(j, "heads", c.heads);
  take(j, "taps", c.taps);
  take(j, "fusion_dim", c.fusion_dim);
  take(j, "pose_hidden", c.pose_hidden);
  expect_empty(j, "enc");
}

json rgbdec_to_json(const RgbDecConfig& c) {
  return json{{"dim", c.dim},
              {"blocks", c.blocks},
              {"heads", c.heads},
              {"level_dropout", c.level_dropout}};
}

void rgbdec_from_json(json j, RgbDecConfig& c) {
  take(j, "dim", c.dim);
  take(j, "blocks", c.blocks);
  take(j, "heads", c.heads);
  take(j, "level_dropout", c.level_dropout);
  expect_empty(j, "rgbdec");
}

json diff_to_json(const DiffusionConfig& c) {
  return json{{"enc_dim", c.enc_dim},
              {"enc_blocks", c.enc_blocks},
              {"dec_dim", c.dec_dim},
              {"dec_blocks", c.dec_blocks},
              {"cascade_dec_blocks", c.cascade_dec_blocks},
              {"heads", c.heads},
              {"cfg_scale", c.cfg_scale},
              {"cond_dropout", c.cond_dropout},
              {"camera_dropout", c.camera_dropout},
              {"tau_max", c.tau_max},
              {"sample_steps", c.sample_steps},
              {"rope_theta", c.rope_theta},
              {"use_rope", c.use_rope}};
}

void diff_from_json(json j, DiffusionConfig& c) {
  take(j, "enc_dim", c.enc_dim);
  take(j, "enc_blocks", c.enc_blocks);
  take(j, "dec_dim", c.dec_dim);
  take(j, "dec_blocks", c.dec_blocks);
  take(j, "cascade_dec_blocks", c.cascade_dec_blocks);
  take(j, "heads", c.heads);
  take(j, "cfg_scale", c.cfg_scale);
  take(j, "cond_dropout", c.cond_dropout);
  take(j, "camera_dropout", c.camera_dropout);
  take(j, "tau_max", c.tau_max);
  take(j, "sample_steps", c.sample_steps);
  take(j, "rope_theta", c.rope_theta);
  take(j, "use_rope", c.use_rope);
  expect_empty(j, "diff");
}

json train_to_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"grad_clip", c.grad_clip},
              {"geo_steps", c.geo_steps},
              {"dec_steps", c.dec_steps},
              {"diff_steps", c.diff_steps},
              {"src_min", c.src_min},
              {"src_max", c.src_max},
              {"si_log_lambda", c.si_log_lambda},
              {"pose_loss_weight", c.pose_loss_weight},
              {"ray_loss_weight", c.ray_loss_weight},
              {"seed", c.seed}};
}

void train_from_json(json j, TrainConfig& c) {
  take(j, "lr", c.lr);
  take(j, "weight_decay", c.weight_decay);
  take(j, "grad_clip", c.grad_clip);
  take(j, "geo_steps", c.geo_steps);
  take(j, "dec_steps", c.dec_steps);
  take(j, "diff_steps", c.diff_steps);
  take(j, "src_min", c.src_min);
  take(j, "src_max", c.src_max);
  take(j, "si_log_lambda", c.si_log_lambda);
  take(j, "pose_loss_weight", c.pose_loss_weight);
  take(j, "ray_loss_weight", c.ray_loss_weight);
  take(j, "seed", c.seed);
  expect_empty(j, "train");
}

json eval_to_json(const EvalConfig& c) {
  return json{{"scenes", c.scenes},
              {"src_views", c.src_views},
              {"pck_pairs", c.pck_pairs},
              {"pck_threshold", c.pck_threshold},
              {"reproj_samples", c.reproj_samples},
              {"seed", c.seed}};
}

void eval_from_json(json j, EvalConfig& c) {
  take(j, "scenes", c.scenes);
  take(j, "src_views", c.src_views);
  take(j, "pck_pairs", c.pck_pairs);
  take(j, "pck_threshold", c.pck_threshold);
  take(j, "reproj_samples", c.reproj_samples);
  take(j, "seed", c.seed);
  expect_empty(j, "eval");
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j = json::parse(text);
  ExperimentConfig c;
  take(j, "run_dir", c.run_dir);
  if (j.contains("data")) {
    data_from_json(j["data"], c.data);
    j.erase("data");
  }
  if (j.contains("enc")) {
    enc_from_json(j["enc"], c.enc);
    j.erase("enc");
  }
  if (j.contains("rgbdec")) {
    rgbdec_from_json(j["rgbdec"], c.rgbdec);
    j.erase("rgbdec");
  }
  if (j.contains("diff")) {
    diff_from_json(j["diff"], c.diff);
    j.erase("diff");
  }
  if (j.contains("train")) {
    train_from_json(j["train"], c.train);
    j.erase("train");
  }
  if (j.contains("eval")) {
    eval_from_json(j["eval"], c.eval);
    j.erase("eval");
  }
  expect_empty(j, "top level");
  return c;
}

std::string ExperimentConfig::to_json_text() const {
  json j;
  j["run_dir"] = run_dir;
  j["data"] = data_to_json(data);
  j["enc"] = enc_to_json(enc);
  j["rgbdec"] = rgbdec_to_json(rgbdec);
  j["diff"] = diff_to_json(diff);
  j["train"] = train_to_json(train);
  j["eval"] = eval_to_json(eval);
  return j.dump(2);
}

std::string ExperimentConfig::fingerprint() const {
  return fnv1a_hex(json::parse(to_json_text()).dump());
}

ExperimentConfig ExperimentConfig::smoke() {
  ExperimentConfig c;
  c.run_dir = "runs/smoke";
  c.data.image_size = 32;
  c.data.views = 4;
  c.data.scenes = 12;
  c.data.val_scenes = 3;
  c.enc.dim = 64;
  c.enc.blocks = 8;
  c.enc.heads = 4;
  c.enc.taps = {2, 4, 6, 8};
  c.enc.fusion_dim = 48;
  c.rgbdec.dim = 64;
  c.rgbdec.blocks = 2;
  c.diff.enc_dim = 64;
  c.diff.enc_blocks = 2;
  c.diff.dec_dim = 96;
  c.diff.dec_blocks = 2;
  c.diff.heads = 4;
  c.diff.sample_steps = 8;
  c.train.geo_steps = 60;
  c.train.dec_steps = 60;
  c.train.diff_steps = 60;
  c.train.src_max = 2;
  c.eval.scenes = 2;
  return c;
}

ExperimentConfig ExperimentConfig::reference_scale() {
  ExperimentConfig c;
  c.run_dir = "runs/reference";
  c.data.image_size = 448;
  c.data.views = 8;
  c.enc.patch = 14;
  c.enc.dim = 1536;
  c.enc.blocks = 12;
  c.enc.heads = 16;
  c.enc.taps = {5, 7, 9, 11};
  c.diff.enc_dim = 768;
  c.diff.enc_blocks = 28;
  c.diff.dec_dim = 2048;
  c.diff.dec_blocks = 6;
  c.diff.cascade_dec_blocks = 2;
  c.diff.heads = 16;
  c.diff.sample_steps = 50;
  return c;
}

std::string apply_json_overrides(const std::string& json_text,
                                 const std::vector<std::string>& overrides) {
  json j = json::parse(json_text);
  for (const std::string& kv : overrides) {
    const size_t eq = kv.find('=');
    check(eq != std::string::npos, "override must look like a.b=value: ", kv);
    const std::string path = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    json* node = &j;
    size_t pos = 0;
    for (;;) {
      const size_t dot = path.find('.', pos);
      const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
      check(!key.empty(), "bad override path: ", path);
      if (dot == std::string::npos) {
        json parsed = json::parse(value, nullptr, false);
        (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
        break;
      }
      node = &(*node)[key];
      pos = dot + 1;
    }
  }
  return j.dump();
}

std::string resolve_data_root(const std::string& from_config) {
  const char* env = std::getenv("GLD_DATA_DIR");
  return env && *env ? env : from_config;
}

}  // namespace gld
