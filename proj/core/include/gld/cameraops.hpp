#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "gld/rng.hpp"
#include "gld/tensor.hpp"

namespace gld {

/// Convention used throughout: extrinsics are world-to-camera, so a world
/// point maps to camera coordinates as x_cam = R * x_world + t. The camera
/// center in world coordinates is -R^T t. Intrinsics K are in pixels with
/// +x right, +y down, and the camera looks along +z.
struct CameraPose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();

  Eigen::Vector3d center() const { return -R.transpose() * t; }
  Eigen::Matrix4d extrinsic4() const;
  /// 4x4 intrinsics with focal lengths and principal point divided by the
  /// image size, embedded as [[K_n, 0], [0, 1]].
  Eigen::Matrix4d intrinsic4_normalized(int image_w, int image_h) const;

  /// World point -> pixel (u,v) and camera-space depth z.
  Eigen::Vector3d project(const Eigen::Vector3d& p_world) const;
  /// Pixel (u,v) at depth z -> world point.
  Eigen::Vector3d unproject(double u, double v, double z) const;
};

/// T_ab = pose of b expressed in a's frame: maps camera-b coordinates to
/// camera-a coordinates. R_ab = R_a R_b^T, t_ab = t_a - R_ab t_b.
CameraPose relative_pose(const CameraPose& a, const CameraPose& b);

/// Gauge-fix a pose list: express everything relative to the last pose (the
/// last becomes identity), then scale translations so the farthest camera
/// center sits at distance 1 from the origin. Coincident cameras skip the
/// scaling. Output is invariant to global rigid motion and uniform scale of
/// the input rig.
std::vector<CameraPose> normalize_poses(const std::vector<CameraPose>& poses);
/// Same, also reporting the distance that was scaled to 1 (1.0 when the
/// cameras coincide). Dividing metric depths by it moves them into the
/// normalized frame.
std::vector<CameraPose> normalize_poses(const std::vector<CameraPose>& poses, double* scale_out);

/// Plucker ray coordinates (direction, moment = center x direction) for each
/// cell of a grid_h x grid_w grid of token centers covering the image.
/// Returns [grid_h*grid_w, 6] float rows, row-major over the grid.
Tensor plucker_embedding(const CameraPose& pose, int grid_h, int grid_w, int image_w, int image_h);

/// Pick source view indices from a window of V frames.
///   n == 1: one uniformly random index.
///   n == 2: {0, V-1}.
///   n >  2: evenly spaced across [0, V-1], rounded to nearest (ties toward
///           the smaller index), deduplicated in order.
std::vector<int> sample_views(int v_total, int n_src, Rng& rng);

/// Frame indices for a training window: stride chosen uniformly from
/// [interval_min, interval_max] (clamped so the window fits), then a random
/// start offset. length == window forces the identity window.
std::vector<int> sample_window(int length, int window, int interval_min, int interval_max,
                               Rng& rng);

/// Similarity alignment (rotation, translation, scale) of src onto dst via
/// the closed-form least-squares solution. Columns are points.
Eigen::Matrix4d umeyama_sim3(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst);

/// First two columns of a rotation matrix, orthonormalized back into SO(3).
Eigen::Matrix3d rot6d_to_matrix(const double* v6);
void matrix_to_rot6d(const Eigen::Matrix3d& r, double* v6);

double rotation_geodesic_deg(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

/// JSON round-trip for a pose list. Schema per entry:
/// {"rotation": [9, row-major], "translation": [3], "intrinsics": [9]}.
std::string poses_to_json(const std::vector<CameraPose>& poses);
std::vector<CameraPose> poses_from_json(const std::string& text);

}  // namespace gld
