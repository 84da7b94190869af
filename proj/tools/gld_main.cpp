#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gld/config.hpp"
#include "gld/dataset_io.hpp"
#include "gld/experiment.hpp"

namespace {

struct GlobalOpts {
  std::string config_path;
  bool smoke = false;
  std::vector<std::string> sets;
  std::string run_dir;
  std::string data_root;

  gld::ExperimentConfig load() const {
    std::string text = config_path.empty()
                           ? (smoke ? gld::ExperimentConfig::smoke() : gld::ExperimentConfig{})
                                 .to_json_text()
                           : gld::read_text_file(config_path);
    if (!sets.empty()) text = gld::apply_json_overrides(text, sets);
    gld::ExperimentConfig cfg = gld::ExperimentConfig::from_json_text(text);
    if (!run_dir.empty()) cfg.run_dir = run_dir;
    if (!data_root.empty()) cfg.data.root = data_root;
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geometric latent diffusion: data, training, sampling and reports"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts g;
  app.add_option("--config", g.config_path, "config JSON file (defaults used when omitted)");
  app.add_flag("--smoke", g.smoke, "start from the fast small-scale preset");
  app.add_option("--set", g.sets, "dotted-path config override, e.g. train.geo_steps=100");
  app.add_option("--run-dir", g.run_dir, "override the run directory");
  app.add_option("--data-root", g.data_root, "override the dataset root");

  std::function<std::string()> action;

  auto* gen = app.add_subcommand("gen-data", "render the procedural dataset");
  int gen_scenes = -1;
  uint64_t gen_seed = 0;
  gen->add_option("--scenes", gen_scenes, "number of scenes");
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "generator seed");
  gen->callback([&, gen_seed_opt] {
    action = [&, gen_seed_opt] {
      gld::ExperimentConfig cfg = g.load();
      if (gen_scenes > 0) cfg.data.scenes = gen_scenes;
      if (gen_seed_opt->count() > 0) cfg.data.seed = gen_seed;
      return gld::stage_gen_data(cfg);
    };
  });

  auto* tg = app.add_subcommand("train-geo", "train the geometric feature encoder");
  tg->callback([&] { action = [&] { return gld::stage_train_geo(g.load()); }; });

  auto* cs = app.add_subcommand("compute-stats", "per-level latent mean/std over the train split");
  cs->callback([&] { action = [&] { return gld::stage_compute_stats(g.load()); }; });

  auto* td = app.add_subcommand("train-dec", "train the RGB decoder on frozen features");
  td->callback([&] { action = [&] { return gld::stage_train_dec(g.load()); }; });

  auto* tf = app.add_subcommand("train-diff", "train one denoiser");
  int tf_level = -1;
  bool tf_cascade = false;
  auto* lvl_opt = tf->add_option("--level", tf_level, "feature level 0..3")
                      ->check(CLI::Range(0, 3));
  auto* casc_opt = tf->add_flag("--cascade", tf_cascade, "train the level-1-conditioned level-0 model");
  lvl_opt->excludes(casc_opt);
  tf->callback([&, lvl_opt, casc_opt] {
    action = [&, lvl_opt, casc_opt] {
      if (lvl_opt->count() == 0 && casc_opt->count() == 0)
        throw gld::Error("train-diff needs --level {0..3} or --cascade");
      return gld::stage_train_diff(g.load(), tf_cascade ? -1 : tf_level);
    };
  });

  auto* sa = app.add_subcommand("sample", "generate target views for one validation scene");
  int sa_boundary = 1, sa_scene = 0;
  uint64_t sa_seed = 0;
  bool sa_no_cascade = false;
  std::string sa_out, sa_geo;
  sa->add_option("--boundary", sa_boundary, "deepest explicitly sampled level")->check(CLI::Range(0, 3));
  sa->add_option("--scene", sa_scene, "validation scene index");
  sa->add_option("--seed", sa_seed, "sampler seed (0 keeps the per-scene default)");
  sa->add_flag("--no-cascade", sa_no_cascade, "sample level 0 independently");
  sa->add_option("--out", sa_out, "output directory (default under the run dir)");
  sa->add_option("--geo-ckpt", sa_geo, "explicit encoder checkpoint path");
  sa->callback([&] {
    action = [&] {
      return gld::stage_sample(g.load(), sa_boundary, sa_scene, sa_seed, !sa_no_cascade, sa_out,
                               sa_geo);
    };
  });

  auto* ev = app.add_subcommand("eval", "full metric suite over the validation split");
  int ev_boundary = 1;
  bool ev_no_cascade = false;
  ev->add_option("--boundary", ev_boundary, "deepest explicitly sampled level")->check(CLI::Range(0, 3));
  ev->add_flag("--no-cascade", ev_no_cascade, "sample level 0 independently");
  ev->callback([&] {
    action = [&] { return gld::stage_eval(g.load(), ev_boundary, !ev_no_cascade); };
  });

  auto* sw = app.add_subcommand("sweep-boundary", "metrics for every sampling boundary");
  sw->callback([&] { action = [&] { return gld::stage_sweep_boundary(g.load()); }; });

  auto* ab = app.add_subcommand("ablate-cascade", "cascaded vs independent level-0 sampling");
  ab->callback([&] { action = [&] { return gld::stage_ablate_cascade(g.load()); }; });

  auto* pk = app.add_subcommand("probe-pck", "feature correspondence per encoder level");
  pk->callback([&] { action = [&] { return gld::stage_probe_pck(g.load()); }; });

  auto* rp = app.add_subcommand("report", "collect grids, tables and the artifact manifest");
  rp->callback([&] { action = [&] { return gld::stage_report(g.load()); }; });

  try {
    app.parse(argc, argv);
    if (action) std::printf("%s\n", action().c_str());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
