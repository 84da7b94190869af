#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <cmath>
#include <set>

#include "doctest.h"
#include "gld/cameraops.hpp"
#include "gld/common.hpp"
#include "gld/scenegen.hpp"
#include "test_util.hpp"

using namespace gld;

namespace {

CameraPose random_pose(Rng& rng, double focal = 40.0, int size = 32) {
  const Eigen::Vector3d eye(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
  Eigen::Vector3d target(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
  if ((eye - target).norm() < 0.5) target += Eigen::Vector3d(1, 0, 0);
  return look_at(eye, target, focal, size, size);
}

double pose_diff(const CameraPose& a, const CameraPose& b) {
  return std::max((a.R - b.R).cwiseAbs().maxCoeff(), (a.t - b.t).cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("projection round trips through unprojection") {
  Rng rng(31);
  for (int i = 0; i < 50; ++i) {
    const CameraPose p = random_pose(rng);
    const double u = rng.uniform(2, 30), v = rng.uniform(2, 30), z = rng.uniform(0.5, 5.0);
    const Eigen::Vector3d world = p.unproject(u, v, z);
    const Eigen::Vector3d back = p.project(world);
    CHECK(std::fabs(back.x() - u) < 1e-9);
    CHECK(std::fabs(back.y() - v) < 1e-9);
    CHECK(std::fabs(back.z() - z) < 1e-9);
  }
}

TEST_CASE("pose matrix helpers") {
  Rng rng(32);
  const CameraPose p = random_pose(rng);
  const Eigen::Matrix4d e = p.extrinsic4();
  CHECK((e.block<3, 3>(0, 0) - p.R).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((e.block<3, 1>(0, 3) - p.t).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(e(3, 3) == 1.0);

  // center maps to the camera origin
  const Eigen::Vector3d c = p.center();
  CHECK((p.R * c + p.t).norm() < 1e-12);

  const Eigen::Matrix4d kn = p.intrinsic4_normalized(32, 32);
  CHECK(kn(0, 0) == doctest::Approx(p.K(0, 0) / 32.0));
  CHECK(kn(1, 2) == doctest::Approx(p.K(1, 2) / 32.0));
  CHECK(kn(3, 3) == 1.0);
  CHECK(kn(2, 2) == 1.0);
}

TEST_CASE("relative pose identities") {
  Rng rng(33);
  const CameraPose a = random_pose(rng), b = random_pose(rng);

  const CameraPose self = relative_pose(a, a);
  CHECK((self.R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(self.t.norm() < 1e-12);

  // T_ab carries camera-b coordinates into camera a
  const Eigen::Vector3d world(0.3, -0.2, 1.1);
  const Eigen::Vector3d xa = a.R * world + a.t;
  const Eigen::Vector3d xb = b.R * world + b.t;
  const CameraPose ab = relative_pose(a, b);
  CHECK((ab.R * xb + ab.t - xa).norm() < 1e-12);
}

TEST_CASE("normalize_poses gauge and invariance") {
  Rng rng(34);
  std::vector<CameraPose> poses;
  for (int i = 0; i < 5; ++i) poses.push_back(random_pose(rng));

  double scale = 0;
  const std::vector<CameraPose> norm = normalize_poses(poses, &scale);
  REQUIRE(norm.size() == poses.size());
  CHECK(scale > 0);

  const CameraPose& last = norm.back();
  CHECK((last.R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(last.t.norm() < 1e-12);

  double max_dist = 0;
  for (const CameraPose& p : norm) max_dist = std::max(max_dist, p.center().norm());
  CHECK(max_dist == doctest::Approx(1.0).epsilon(1e-12));

  // global rigid motion + uniform scale leaves the gauge-fixed rig unchanged
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Matrix3d rg = testutil::random_rotation(rng);
    const double s = rng.uniform(0.2, 4.0);
    const Eigen::Vector3d tg(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
    const std::vector<CameraPose> moved = testutil::apply_sim3(poses, rg, s, tg);
    const std::vector<CameraPose> norm2 = normalize_poses(moved);
    for (size_t i = 0; i < norm.size(); ++i) CHECK(pose_diff(norm[i], norm2[i]) < 1e-9);
  }
}

TEST_CASE("normalize_poses with coincident cameras skips rescaling") {
  Rng rng(35);
  const CameraPose p = random_pose(rng);
  double scale = -1;
  const std::vector<CameraPose> norm = normalize_poses({p, p, p}, &scale);
  CHECK(scale == doctest::Approx(1.0));
  for (const CameraPose& q : norm) CHECK(q.center().norm() < 1e-12);
}

TEST_CASE("plucker rows are unit rays with orthogonal moments") {
  Rng rng(36);
  int rows_checked = 0;
  while (rows_checked < 10000) {
    const CameraPose p = random_pose(rng);
    const Tensor emb = plucker_embedding(p, 8, 8, 32, 32);
    REQUIRE(emb.rank() == 2);
    REQUIRE(emb.dim(1) == 6);
    for (int r = 0; r < emb.dim(0); ++r) {
      const float* row = emb.data() + int64_t(r) * 6;
      const double dn = std::sqrt(double(row[0]) * row[0] + double(row[1]) * row[1] +
                                  double(row[2]) * row[2]);
      const double dot =
          double(row[0]) * row[3] + double(row[1]) * row[4] + double(row[2]) * row[5];
      CHECK(std::fabs(dn - 1.0) < 1e-6);
      CHECK(std::fabs(dot) < 1e-6);
      ++rows_checked;
    }
  }
}

TEST_CASE("plucker moment is center cross direction") {
  // camera at the origin: zero moment everywhere
  CameraPose origin;
  origin.K << 10, 0, 1, 0, 10, 1, 0, 0, 1;
  const Tensor at_origin = plucker_embedding(origin, 2, 2, 2, 2);
  for (int r = 0; r < 4; ++r)
    for (int i = 3; i < 6; ++i) CHECK(std::fabs(at_origin.at(int64_t(r) * 6 + i)) < 1e-9);

  // center (1,0,0), ray along +z through the principal point: m = (0,-1,0)
  CameraPose shifted;
  shifted.t = Eigen::Vector3d(-1, 0, 0);
  shifted.K << 10, 0, 1, 0, 10, 1, 0, 0, 1;
  const Tensor emb = plucker_embedding(shifted, 1, 1, 2, 2);
  CHECK(emb.at(0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(emb.at(1) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(emb.at(2) == doctest::Approx(1.0));
  CHECK(emb.at(3) == doctest::Approx(0.0));
  CHECK(emb.at(4) == doctest::Approx(-1.0));
  CHECK(emb.at(5) == doctest::Approx(0.0));
}

TEST_CASE("source view selection") {
  Rng rng(37);
  CHECK(sample_views(8, 2, rng) == std::vector<int>{0, 7});
  CHECK(sample_views(8, 4, rng) == std::vector<int>{0, 2, 5, 7});
  CHECK(sample_views(4, 2, rng) == std::vector<int>{0, 3});
  CHECK(sample_views(2, 2, rng) == std::vector<int>{0, 1});

  // n = 1 draws uniformly but reproducibly
  Rng r1(5), r2(5);
  for (int i = 0; i < 20; ++i) {
    const std::vector<int> a = sample_views(8, 1, r1);
    REQUIRE(a.size() == 1);
    CHECK(a[0] >= 0);
    CHECK(a[0] < 8);
    CHECK(a == sample_views(8, 1, r2));
  }

  // indices stay sorted, unique, in range
  for (int n = 2; n <= 6; ++n) {
    const std::vector<int> idx = sample_views(6, n, rng);
    std::set<int> seen(idx.begin(), idx.end());
    CHECK(seen.size() == idx.size());
    CHECK(*idx.begin() == 0);
    CHECK(idx.back() == 5);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
  }
}

TEST_CASE("window sampling bounds and determinism") {
  Rng rng(38);
  const std::vector<int> identity = sample_window(4, 4, 1, 3, rng);
  CHECK(identity == std::vector<int>{0, 1, 2, 3});

  Rng r1(9), r2(9);
  for (int i = 0; i < 30; ++i) {
    const std::vector<int> w = sample_window(16, 4, 1, 3, r1);
    CHECK(w == sample_window(16, 4, 1, 3, r2));
    REQUIRE(w.size() == 4);
    const int stride = w[1] - w[0];
    CHECK(stride >= 1);
    CHECK(stride <= 3);
    for (size_t j = 1; j < w.size(); ++j) CHECK(w[j] - w[j - 1] == stride);
    CHECK(w.front() >= 0);
    CHECK(w.back() < 16);
  }
}

TEST_CASE("similarity alignment recovers an injected transform") {
  Rng rng(39);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::Matrix3Xd src(3, 12);
    for (int i = 0; i < src.cols(); ++i)
      src.col(i) = Eigen::Vector3d(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    const Eigen::Matrix3d r = testutil::random_rotation(rng);
    const double s = rng.uniform(0.3, 3.0);
    const Eigen::Vector3d t(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4));
    Eigen::Matrix3Xd dst(3, src.cols());
    for (int i = 0; i < src.cols(); ++i) dst.col(i) = s * r * src.col(i) + t;

    const Eigen::Matrix4d m = umeyama_sim3(src, dst);
    for (int i = 0; i < src.cols(); ++i) {
      const Eigen::Vector3d mapped =
          m.block<3, 3>(0, 0) * src.col(i) + m.block<3, 1>(0, 3);
      CHECK((mapped - dst.col(i)).norm() < 1e-9);
    }
  }
}

TEST_CASE("similarity alignment refuses degenerate input") {
  Eigen::Matrix3Xd two(3, 2);
  two << 0, 1, 0, 0, 0, 0;
  CHECK_THROWS_AS(umeyama_sim3(two, two), Error);
}

TEST_CASE("rotation six-vector codec") {
  Rng rng(40);
  for (int i = 0; i < 20; ++i) {
    const Eigen::Matrix3d r = testutil::random_rotation(rng);
    double v6[6];
    matrix_to_rot6d(r, v6);
    const Eigen::Matrix3d back = rot6d_to_matrix(v6);
    CHECK((back - r).cwiseAbs().maxCoeff() < 1e-9);

    // perturbed input still lands on SO(3)
    for (double& x : v6) x += rng.uniform(-0.2, 0.2);
    const Eigen::Matrix3d proj = rot6d_to_matrix(v6);
    CHECK((proj.transpose() * proj - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(proj.determinant() == doctest::Approx(1.0));
  }

  CHECK(rotation_geodesic_deg(Eigen::Matrix3d::Identity(), Eigen::Matrix3d::Identity()) ==
        doctest::Approx(0.0));
  const Eigen::Matrix3d quarter =
      Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitY()).toRotationMatrix();
  CHECK(rotation_geodesic_deg(Eigen::Matrix3d::Identity(), quarter) == doctest::Approx(90.0));
}

TEST_CASE("trajectory metrics vanish on self comparison and sim3 copies") {
  Rng rng(41);
  std::vector<CameraPose> poses;
  for (int i = 0; i < 6; ++i) poses.push_back(random_pose(rng));

  const TrajectoryMetrics self = trajectory_metrics(poses, poses);
  CHECK(self.ate < 1e-9);
  CHECK(self.rpe_rot_deg < 1e-6);
  CHECK(self.rpe_trans < 1e-9);

  const Eigen::Matrix3d rg = testutil::random_rotation(rng);
  const std::vector<CameraPose> moved =
      testutil::apply_sim3(poses, rg, 2.5, Eigen::Vector3d(1, -2, 0.5));
  const TrajectoryMetrics vs = trajectory_metrics(moved, poses);
  CHECK(vs.ate < 1e-9);
  CHECK(vs.rpe_rot_deg < 1e-6);
}

TEST_CASE("pose json round trip") {
  Rng rng(42);
  std::vector<CameraPose> poses;
  for (int i = 0; i < 3; ++i) poses.push_back(random_pose(rng));
  const std::vector<CameraPose> back = poses_from_json(poses_to_json(poses));
  REQUIRE(back.size() == poses.size());
  for (size_t i = 0; i < poses.size(); ++i) {
    CHECK(pose_diff(poses[i], back[i]) < 1e-12);
    CHECK((poses[i].K - back[i].K).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(poses_from_json("not json"), std::exception);
}
