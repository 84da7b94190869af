#pragma once

#include <cstdint>
#include <string>

#include "gld/config.hpp"
#include "gld/tensor.hpp"

namespace gld {

/// Canonical artifact locations for one run.
struct RunPaths {
  std::string data_root;
  std::string run_dir;
  std::string config_json;
  std::string geoenc;
  std::string stats;
  std::string rgbdec;
  std::string report_dir;
  std::string mvdiff(int level) const;  // level -1 addresses the cascade model
};
RunPaths run_paths(const ExperimentConfig& cfg);

/// Writes the resolved config (canonical JSON) into the run directory so
/// every artifact sits next to the settings that produced it.
void save_run_config(const ExperimentConfig& cfg);

// Stage drivers behind the command-line tool. Each writes its artifact
// under the run directory, refuses upstream artifacts with mismatched
// fingerprints, and returns a one-line summary for logging.

std::string stage_gen_data(const ExperimentConfig& cfg);
std::string stage_train_geo(const ExperimentConfig& cfg);
std::string stage_compute_stats(const ExperimentConfig& cfg);
std::string stage_train_dec(const ExperimentConfig& cfg);
std::string stage_train_diff(const ExperimentConfig& cfg, int level);  // -1 = cascade
std::string stage_sample(const ExperimentConfig& cfg, int boundary, int scene, uint64_t seed,
                         bool use_cascade, const std::string& out_dir,
                         const std::string& geo_ckpt = "");
std::string stage_eval(const ExperimentConfig& cfg, int boundary, bool use_cascade);
std::string stage_sweep_boundary(const ExperimentConfig& cfg);
std::string stage_ablate_cascade(const ExperimentConfig& cfg);
std::string stage_probe_pck(const ExperimentConfig& cfg);
std::string stage_report(const ExperimentConfig& cfg);

/// Side-by-side panel for one generated window: one row per target view,
/// columns are the N source views, the M generated targets, then that
/// row's ground-truth target. All inputs [*,H,W,3].
Tensor report_grid(const Tensor& src_images, const Tensor& gen_images, const Tensor& gt_images);

}  // namespace gld
