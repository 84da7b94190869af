#include "gld/cameraops.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace gld {

Eigen::Matrix4d CameraPose::extrinsic4() const {
  Eigen::Matrix4d e = Eigen::Matrix4d::Identity();
  e.topLeftCorner<3, 3>() = R;
  e.topRightCorner<3, 1>() = t;
  return e;
}

Eigen::Matrix4d CameraPose::intrinsic4_normalized(int image_w, int image_h) const {
  Eigen::Matrix3d kn = K;
  kn.row(0) /= double(image_w);
  kn.row(1) /= double(image_h);
  Eigen::Matrix4d k4 = Eigen::Matrix4d::Identity();
  k4.topLeftCorner<3, 3>() = kn;
  return k4;
}

Eigen::Vector3d CameraPose::project(const Eigen::Vector3d& p_world) const {
  Eigen::Vector3d pc = R * p_world + t;
  return {K(0, 0) * pc.x() / pc.z() + K(0, 2), K(1, 1) * pc.y() / pc.z() + K(1, 2), pc.z()};
}

Eigen::Vector3d CameraPose::unproject(double u, double v, double z) const {
  Eigen::Vector3d pc{(u - K(0, 2)) / K(0, 0) * z, (v - K(1, 2)) / K(1, 1) * z, z};
  return R.transpose() * (pc - t);
}

CameraPose relative_pose(const CameraPose& a, const CameraPose& b) {
  CameraPose r;
  r.R = a.R * b.R.transpose();
  r.t = a.t - r.R * b.t;
  r.K = a.K;
  return r;
}

std::vector<CameraPose> normalize_poses(const std::vector<CameraPose>& poses) {
  return normalize_poses(poses, nullptr);
}

std::vector<CameraPose> normalize_poses(const std::vector<CameraPose>& poses, double* scale_out) {
  check(!poses.empty(), "normalize_poses: empty input");
  const CameraPose& anchor = poses.back();
  std::vector<CameraPose> out;
  out.reserve(poses.size());
  double max_dist = 0;
  for (const CameraPose& p : poses) {
    CameraPose q = relative_pose(p, anchor);
    q.K = p.K;
    max_dist = std::max(max_dist, q.center().norm());
    out.push_back(q);
  }
  const bool scalable = max_dist > 1e-12;
  if (scalable) {
    for (CameraPose& q : out) q.t /= max_dist;
  }
  if (scale_out) *scale_out = scalable ? max_dist : 1.0;
  return out;
}

Tensor plucker_embedding(const CameraPose& pose, int grid_h, int grid_w, int image_w,
                         int image_h) {
  Tensor out({grid_h * grid_w, 6});
  const Eigen::Matrix3d r_t = pose.R.transpose();
  const Eigen::Vector3d o = pose.center();
  const double su = double(image_w) / grid_w;
  const double sv = double(image_h) / grid_h;
  for (int i = 0; i < grid_h; ++i)
    for (int j = 0; j < grid_w; ++j) {
      const double u = (j + 0.5) * su;
      const double v = (i + 0.5) * sv;
      Eigen::Vector3d dir_cam{(u - pose.K(0, 2)) / pose.K(0, 0), (v - pose.K(1, 2)) / pose.K(1, 1),
                              1.0};
      Eigen::Vector3d d = (r_t * dir_cam).normalized();
      Eigen::Vector3d m = o.cross(d);
      float* row = out.data() + int64_t(i * grid_w + j) * 6;
      for (int c = 0; c < 3; ++c) {
        row[c] = float(d[c]);
        row[3 + c] = float(m[c]);
      }
    }
  return out;
}

std::vector<int> sample_views(int v_total, int n_src, Rng& rng) {
  check(v_total >= 1 && n_src >= 1 && n_src <= v_total, "sample_views: need 1 <= n <= V");
  if (n_src == 1) return {int(rng.uniform_int(v_total))};
  if (n_src == 2) return {0, v_total - 1};
  std::vector<int> out;
  for (int i = 0; i < n_src; ++i) {
    const double x = double(i) * (v_total - 1) / double(n_src - 1);
    const double fl = std::floor(x);
    int idx = (x - fl > 0.5) ? int(fl) + 1 : int(fl);  // ties round down
    if (out.empty() || idx != out.back()) out.push_back(idx);
  }
  return out;
}

std::vector<int> sample_window(int length, int window, int interval_min, int interval_max,
                               Rng& rng) {
  check(window >= 1 && length >= window, "sample_window: need length >= window");
  const int max_fit = window == 1 ? length : (length - 1) / (window - 1);
  const int lo = std::min(std::max(1, interval_min), max_fit);
  const int hi = std::min(std::max(lo, interval_max), max_fit);
  const int interval = lo + int(rng.uniform_int(uint64_t(hi - lo + 1)));
  const int span = (window - 1) * interval;
  const int start = int(rng.uniform_int(uint64_t(length - span)));
  std::vector<int> out;
  for (int i = 0; i < window; ++i) out.push_back(start + i * interval);
  return out;
}

Eigen::Matrix4d umeyama_sim3(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst) {
  check(src.cols() == dst.cols() && src.cols() >= 2, "umeyama: need matching point sets");
  return Eigen::umeyama(src, dst, true);
}

Eigen::Matrix3d rot6d_to_matrix(const double* v6) {
  Eigen::Vector3d a{v6[0], v6[1], v6[2]};
  Eigen::Vector3d b{v6[3], v6[4], v6[5]};
  Eigen::Vector3d x = a.norm() > 1e-12 ? a.normalized() : Eigen::Vector3d::UnitX();
  Eigen::Vector3d y = b - x * x.dot(b);
  y = y.norm() > 1e-12 ? y.normalized() : x.unitOrthogonal();
  Eigen::Vector3d z = x.cross(y);
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

void matrix_to_rot6d(const Eigen::Matrix3d& r, double* v6) {
  for (int i = 0; i < 3; ++i) {
    v6[i] = r(i, 0);
    v6[3 + i] = r(i, 1);
  }
}

double rotation_geodesic_deg(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const double tr = (a.transpose() * b).trace();
  const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

std::string poses_to_json(const std::vector<CameraPose>& poses) {
  nlohmann::json arr = nlohmann::json::array();
  for (const CameraPose& p : poses) {
    nlohmann::json e;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        e["rotation"].push_back(p.R(i, j));
        e["intrinsics"].push_back(p.K(i, j));
      }
    for (int i = 0; i < 3; ++i) e["translation"].push_back(p.t(i));
    arr.push_back(std::move(e));
  }
  return arr.dump(2);
}

std::vector<CameraPose> poses_from_json(const std::string& text) {
  nlohmann::json arr = nlohmann::json::parse(text);
  check(arr.is_array(), "pose json: expected an array");
  std::vector<CameraPose> out;
  for (const auto& e : arr) {
    check(e["rotation"].size() == 9 && e["translation"].size() == 3 && e["intrinsics"].size() == 9,
          "pose json: bad entry");
    CameraPose p;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        p.R(i, j) = e["rotation"][size_t(i * 3 + j)].get<double>();
        p.K(i, j) = e["intrinsics"][size_t(i * 3 + j)].get<double>();
      }
    for (int i = 0; i < 3; ++i) p.t(i) = e["translation"][size_t(i)].get<double>();
    out.push_back(p);
  }
  return out;
}

}  // namespace gld
