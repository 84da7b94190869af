#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "gld/cameraops.hpp"
#include "gld/rng.hpp"
#include "gld/tensor.hpp"

namespace gld {

struct TextureParams {
  Eigen::Vector3d base{0.5, 0.5, 0.5};
  Eigen::Vector3d amp{0.3, 0.3, 0.3};
  Eigen::Vector3d freq{5.0, 5.0, 5.0};  // spatial frequency per axis
  Eigen::Vector3d phase{0.0, 0.0, 0.0};
};

struct SceneObject {
  enum class Kind { kSphere, kBox, kPlane };
  Kind kind = Kind::kSphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 0.3;                    // sphere
  Eigen::Vector3d half{0.3, 0.3, 0.3};    // box half extents; plane uses x/z
  TextureParams tex;
};

struct SceneSpec {
  uint64_t seed = 0;
  std::vector<SceneObject> objects;
  Eigen::Vector3d light_dir{0.4, 0.8, 0.3};  // unit vector toward the light
  double ambient = 0.25;
  Eigen::Vector3d bg_top{0.7, 0.8, 0.9};
  Eigen::Vector3d bg_bottom{0.2, 0.2, 0.25};
};

struct ViewSample {
  Tensor image;  // [H,W,3], values already on the 8-bit grid
  Tensor depth;  // [H,W], camera-space z; 0 marks background
  CameraPose pose;
};

struct MultiViewSequence {
  std::string scene_id;
  uint64_t seed = 0;
  std::vector<ViewSample> views;
};

enum class TrajectoryKind { kOrbit, kDolly, kRandomWalk };

struct SceneGenConfig {
  int image_size = 64;
  int views = 8;
  int min_objects = 3;
  int max_objects = 6;
  double ground_plane_prob = 0.7;
  double min_coverage = 0.30;   // hit fraction required in every view
  double min_baseline = 0.25;   // max pairwise camera-center distance
  int max_attempts = 16;
  double fov_deg = 55.0;
};

SceneSpec make_scene(uint64_t seed, const SceneGenConfig& cfg);

/// World-to-camera pose for an eye looking at a target, image y pointing
/// down in world space.
CameraPose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, double focal_px,
                   int image_w, int image_h);

std::vector<CameraPose> make_trajectory(TrajectoryKind kind, int n_views, Rng& rng,
                                        const SceneGenConfig& cfg);

ViewSample render_view(const SceneSpec& scene, const CameraPose& pose, int w, int h);

/// Full pipeline with rejection: renders candidate scene/trajectory pairs
/// until every view clears min_coverage and the trajectory clears
/// min_baseline. Throws after max_attempts failures. Deterministic in seed.
MultiViewSequence generate_sequence(uint64_t seed, const SceneGenConfig& cfg);

struct Correspondence {
  double ua, va;  // pixel in view a
  double ub, vb;  // pixel in view b
  double za, zb;  // camera-space depths
};

struct CorrespondenceSet {
  int view_a = 0, view_b = 0;
  std::vector<Correspondence> matches;
  int occluded = 0;       // candidates whose landing pixel is blocked
  int out_of_bounds = 0;  // candidates projecting outside view b
  bool shortfall = false; // fewer matches than requested
};

/// Exact matches from the depth maps: sample covered pixels in view a,
/// unproject with ground-truth depth, reproject into view b, and keep pairs
/// whose landing pixel's depth agrees within depth_tol (relative). The
/// search stops after a bounded number of attempts, setting `shortfall`
/// instead of looping forever on hard pairs.
CorrespondenceSet gt_correspondences(const MultiViewSequence& seq, int view_a, int view_b,
                                     int count, Rng& rng, double depth_tol = 0.02);

}  // namespace gld
