#include "gld/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gld {

namespace {

Eigen::Vector3d rand_unit(Rng& rng) {
  // Rejection sampling keeps the distribution uniform on the sphere.
  for (;;) {
    Eigen::Vector3d v{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double n = v.norm();
    if (n > 1e-3 && n <= 1.0) return v / n;
  }
}

TextureParams rand_texture(Rng& rng) {
  TextureParams t;
  for (int c = 0; c < 3; ++c) {
    t.base[c] = rng.uniform(0.25, 0.75);
    t.amp[c] = rng.uniform(0.1, 0.3);
    t.freq[c] = rng.uniform(2.0, 9.0);
    t.phase[c] = rng.uniform(0.0, 2.0 * M_PI);
  }
  return t;
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Eigen::Vector3d normal = Eigen::Vector3d::UnitY();
  const SceneObject* obj = nullptr;
};

bool hit_sphere(const SceneObject& s, const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                Hit& h) {
  const Eigen::Vector3d oc = o - s.center;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0) return false;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t < 1e-6) t = -b + sq;
  if (t < 1e-6 || t >= h.t) return false;
  h.t = t;
  h.normal = (o + t * d - s.center).normalized();
  h.obj = &s;
  return true;
}

bool hit_box(const SceneObject& s, const Eigen::Vector3d& o, const Eigen::Vector3d& d, Hit& h) {
  double tmin = 1e-6, tmax = h.t;
  int axis = -1;
  for (int i = 0; i < 3; ++i) {
    const double lo = s.center[i] - s.half[i], hi = s.center[i] + s.half[i];
    if (std::abs(d[i]) < 1e-12) {
      if (o[i] < lo || o[i] > hi) return false;
      continue;
    }
    double t0 = (lo - o[i]) / d[i], t1 = (hi - o[i]) / d[i];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > tmin) {
      tmin = t0;
      axis = i;
    }
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return false;
  }
  if (axis < 0 || tmin >= h.t) return false;
  h.t = tmin;
  h.normal = Eigen::Vector3d::Zero();
  h.normal[axis] = d[axis] > 0 ? -1.0 : 1.0;
  h.obj = &s;
  return true;
}

bool hit_plane(const SceneObject& s, const Eigen::Vector3d& o, const Eigen::Vector3d& d, Hit& h) {
  if (std::abs(d.y()) < 1e-12) return false;
  const double t = (s.center.y() - o.y()) / d.y();
  if (t < 1e-6 || t >= h.t) return false;
  const Eigen::Vector3d p = o + t * d;
  if (std::abs(p.x() - s.center.x()) > s.half.x() || std::abs(p.z() - s.center.z()) > s.half.z())
    return false;
  h.t = t;
  h.normal = Eigen::Vector3d{0, d.y() > 0 ? -1.0 : 1.0, 0};
  h.obj = &s;
  return true;
}

Eigen::Vector3d shade(const SceneSpec& scene, const Hit& h, const Eigen::Vector3d& p) {
  const TextureParams& tx = h.obj->tex;
  const double sarg = tx.freq.dot(p);
  Eigen::Vector3d albedo;
  for (int c = 0; c < 3; ++c) albedo[c] = tx.base[c] + tx.amp[c] * std::sin(sarg + tx.phase[c]);
  const double lambert =
      scene.ambient + (1.0 - scene.ambient) * std::max(0.0, h.normal.dot(scene.light_dir));
  return (albedo * lambert).cwiseMax(0.0).cwiseMin(1.0);
}

float quantize8(double c) { return float(std::round(std::clamp(c, 0.0, 1.0) * 255.0) / 255.0); }

}  // namespace

SceneSpec make_scene(uint64_t seed, const SceneGenConfig& cfg) {
  Rng rng(seed);
  SceneSpec scene;
  scene.seed = seed;
  const int n = cfg.min_objects + int(rng.uniform_int(uint64_t(cfg.max_objects - cfg.min_objects + 1)));
  for (int i = 0; i < n; ++i) {
    SceneObject obj;
    obj.kind = rng.uniform() < 0.55 ? SceneObject::Kind::kSphere : SceneObject::Kind::kBox;
    obj.center = Eigen::Vector3d{rng.uniform(-0.7, 0.7), rng.uniform(-0.35, 0.5),
                                 rng.uniform(-0.7, 0.7)};
    if (obj.kind == SceneObject::Kind::kSphere) {
      obj.radius = rng.uniform(0.15, 0.42);
    } else {
      obj.half = Eigen::Vector3d{rng.uniform(0.12, 0.35), rng.uniform(0.12, 0.35),
                                 rng.uniform(0.12, 0.35)};
    }
    obj.tex = rand_texture(rng);
    scene.objects.push_back(obj);
  }
  if (rng.uniform() < cfg.ground_plane_prob) {
    SceneObject ground;
    ground.kind = SceneObject::Kind::kPlane;
    ground.center = Eigen::Vector3d{0, rng.uniform(-0.9, -0.6), 0};
    ground.half = Eigen::Vector3d{3.5, 0, 3.5};
    ground.tex = rand_texture(rng);
    scene.objects.push_back(ground);
  }
  Eigen::Vector3d l = rand_unit(rng);
  l.y() = std::abs(l.y()) + 0.3;
  scene.light_dir = l.normalized();
  scene.ambient = rng.uniform(0.2, 0.35);
  for (int c = 0; c < 3; ++c) {
    scene.bg_top[c] = rng.uniform(0.55, 0.9);
    scene.bg_bottom[c] = rng.uniform(0.1, 0.35);
  }
  return scene;
}

CameraPose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, double focal_px,
                   int image_w, int image_h) {
  Eigen::Vector3d f = (target - eye).normalized();
  Eigen::Vector3d up{0, 1, 0};
  if (std::abs(f.dot(up)) > 0.999) up = Eigen::Vector3d{1, 0, 0};
  const Eigen::Vector3d x = f.cross(up).normalized();
  const Eigen::Vector3d y = f.cross(x);  // = z cross x, keeps R right-handed
  CameraPose p;
  p.R.row(0) = x;
  p.R.row(1) = y;
  p.R.row(2) = f;
  p.t = -p.R * eye;
  p.K << focal_px, 0, image_w / 2.0, 0, focal_px, image_h / 2.0, 0, 0, 1;
  return p;
}

std::vector<CameraPose> make_trajectory(TrajectoryKind kind, int n_views, Rng& rng,
                                        const SceneGenConfig& cfg) {
  const double focal = (cfg.image_size / 2.0) / std::tan(cfg.fov_deg * M_PI / 360.0);
  std::vector<CameraPose> poses;
  auto aim = [&](const Eigen::Vector3d& eye, const Eigen::Vector3d& tgt) {
    poses.push_back(look_at(eye, tgt, focal, cfg.image_size, cfg.image_size));
  };
  switch (kind) {
    case TrajectoryKind::kOrbit: {
      const double radius = rng.uniform(2.0, 2.8);
      const double height = rng.uniform(0.2, 1.2);
      const double arc = rng.uniform(50.0, 140.0) * M_PI / 180.0;
      const double a0 = rng.uniform(0.0, 2.0 * M_PI);
      for (int i = 0; i < n_views; ++i) {
        const double a = a0 + arc * (n_views == 1 ? 0.0 : double(i) / (n_views - 1));
        aim({radius * std::cos(a), height, radius * std::sin(a)}, Eigen::Vector3d::Zero());
      }
      break;
    }
    case TrajectoryKind::kDolly: {
      Eigen::Vector3d dir = rand_unit(rng);
      dir.y() = std::abs(dir.y()) * 0.4 + 0.1;
      dir.normalize();
      const double r0 = rng.uniform(2.5, 3.2), r1 = rng.uniform(1.5, 2.0);
      Eigen::Vector3d lateral = dir.cross(Eigen::Vector3d::UnitY()).normalized() *
                                rng.uniform(-0.4, 0.4);
      for (int i = 0; i < n_views; ++i) {
        const double s = n_views == 1 ? 0.0 : double(i) / (n_views - 1);
        aim(dir * (r0 + (r1 - r0) * s) + lateral * s, Eigen::Vector3d::Zero());
      }
      break;
    }
    case TrajectoryKind::kRandomWalk: {
      Eigen::Vector3d pos = rand_unit(rng) * rng.uniform(2.0, 2.8);
      pos.y() = std::abs(pos.y()) * 0.5 + 0.3;
      for (int i = 0; i < n_views; ++i) {
        Eigen::Vector3d tgt{rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08),
                            rng.uniform(-0.08, 0.08)};
        aim(pos, tgt);
        pos += Eigen::Vector3d{rng.normal() * 0.12, rng.normal() * 0.06, rng.normal() * 0.12};
        const double r = std::hypot(pos.x(), pos.z());
        if (r < 1.6 || r > 3.2) {  // keep outside the scene core, inside the dome
          const double rc = std::clamp(r, 1.6, 3.2);
          pos.x() *= rc / r;
          pos.z() *= rc / r;
        }
        pos.y() = std::clamp(pos.y(), 0.15, 1.6);
      }
      break;
    }
  }
  return poses;
}

ViewSample render_view(const SceneSpec& scene, const CameraPose& pose, int w, int h) {
  ViewSample out;
  out.pose = pose;
  out.image = Tensor({h, w, 3});
  out.depth = Tensor({h, w});
  const Eigen::Vector3d eye = pose.center();
  const Eigen::Matrix3d r_t = pose.R.transpose();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double u = j + 0.5, v = i + 0.5;
      Eigen::Vector3d dir_cam{(u - pose.K(0, 2)) / pose.K(0, 0),
                              (v - pose.K(1, 2)) / pose.K(1, 1), 1.0};
      const Eigen::Vector3d d = (r_t * dir_cam).normalized();
      Hit hit;
      for (const SceneObject& obj : scene.objects) {
        switch (obj.kind) {
          case SceneObject::Kind::kSphere: hit_sphere(obj, eye, d, hit); break;
          case SceneObject::Kind::kBox: hit_box(obj, eye, d, hit); break;
          case SceneObject::Kind::kPlane: hit_plane(obj, eye, d, hit); break;
        }
      }
      Eigen::Vector3d color;
      double z = 0;
      if (hit.obj) {
        const Eigen::Vector3d p = eye + hit.t * d;
        color = shade(scene, hit, p);
        z = (pose.R * p + pose.t).z();
      } else {
        const double s = 0.5 * (d.y() + 1.0);
        color = scene.bg_bottom + s * (scene.bg_top - scene.bg_bottom);
      }
      float* px = out.image.data() + (int64_t(i) * w + j) * 3;
      for (int c = 0; c < 3; ++c) px[c] = quantize8(color[c]);
      out.depth.at(int64_t(i) * w + j) = float(z);
    }
  return out;
}

MultiViewSequence generate_sequence(uint64_t seed, const SceneGenConfig& cfg) {
  Rng rng(seed);
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const uint64_t scene_seed = rng.next_u64();
    SceneSpec scene = make_scene(scene_seed, cfg);
    const auto kind = TrajectoryKind(rng.uniform_int(3));
    std::vector<CameraPose> poses = make_trajectory(kind, cfg.views, rng, cfg);

    MultiViewSequence seq;
    seq.seed = seed;
    seq.scene_id = str("scene_", fnv1a_hex(str("seq", seed)));
    bool ok = true;
    double max_baseline = 0;
    for (size_t a = 0; a < poses.size(); ++a)
      for (size_t b = a + 1; b < poses.size(); ++b)
        max_baseline = std::max(max_baseline, (poses[a].center() - poses[b].center()).norm());
    if (cfg.views > 1 && max_baseline < cfg.min_baseline) ok = false;
    for (const CameraPose& p : poses) {
      if (!ok) break;
      ViewSample v = render_view(scene, p, cfg.image_size, cfg.image_size);
      int covered = 0;
      for (int64_t k = 0; k < v.depth.numel(); ++k) covered += v.depth.at(k) > 0 ? 1 : 0;
      if (covered < cfg.min_coverage * double(v.depth.numel())) {
        ok = false;
        break;
      }
      seq.views.push_back(std::move(v));
    }
    if (ok) return seq;
  }
  throw Error(str("generate_sequence: no valid scene after ", cfg.max_attempts,
                  " attempts (seed ", seed, ")"));
}

CorrespondenceSet gt_correspondences(const MultiViewSequence& seq, int view_a, int view_b,
                                     int count, Rng& rng, double depth_tol) {
  check(view_a >= 0 && view_a < int(seq.views.size()), "gt_correspondences: view_a out of range");
  check(view_b >= 0 && view_b < int(seq.views.size()), "gt_correspondences: view_b out of range");
  const ViewSample& va = seq.views[size_t(view_a)];
  const ViewSample& vb = seq.views[size_t(view_b)];
  const int h = va.depth.dim(0), w = va.depth.dim(1);
  CorrespondenceSet out;
  out.view_a = view_a;
  out.view_b = view_b;
  const int max_attempts = std::max(1000, count * 50);
  for (int it = 0; it < max_attempts && int(out.matches.size()) < count; ++it) {
    const int px = int(rng.uniform_int(uint64_t(w)));
    const int py = int(rng.uniform_int(uint64_t(h)));
    const float za = va.depth.at(int64_t(py) * w + px);
    if (za <= 0) continue;
    const double ua = px + 0.5, vva = py + 0.5;
    const Eigen::Vector3d world = va.pose.unproject(ua, vva, za);
    const Eigen::Vector3d proj = vb.pose.project(world);
    if (proj.z() <= 0) {
      ++out.out_of_bounds;
      continue;
    }
    const double ub = proj.x(), vvb = proj.y();
    const int qx = int(std::floor(ub)), qy = int(std::floor(vvb));
    if (qx < 0 || qx >= w || qy < 0 || qy >= h) {
      ++out.out_of_bounds;
      continue;
    }
    const float zb = vb.depth.at(int64_t(qy) * w + qx);
    if (zb <= 0 || std::abs(zb - proj.z()) > depth_tol * proj.z()) {
      ++out.occluded;
      continue;
    }
    out.matches.push_back({ua, vva, ub, vvb, double(za), proj.z()});
  }
  out.shortfall = int(out.matches.size()) < count;
  return out;
}

}  // namespace gld
