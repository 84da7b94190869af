#include "gld/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace gld {

double psnr(const Tensor& a, const Tensor& b) {
  check(a.numel() == b.numel() && a.numel() > 0, "psnr: shape mismatch");
  double mse = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = double(a.at(i)) - b.at(i);
    mse += d * d;
  }
  mse /= double(a.numel());
  if (mse <= 1e-12) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> gaussian_window() {
  constexpr int k = 11;
  constexpr double sigma = 1.5;
  std::vector<double> w(k);
  double s = 0;
  for (int i = 0; i < k; ++i) {
    const double x = i - (k - 1) / 2.0;
    w[size_t(i)] = std::exp(-x * x / (2 * sigma * sigma));
    s += w[size_t(i)];
  }
  for (double& v : w) v /= s;
  return w;
}

// Separable valid-mode Gaussian filter of a single channel [H,W].
std::vector<double> blur(const std::vector<double>& img, int h, int w, int& oh, int& ow) {
  static const std::vector<double> win = gaussian_window();
  const int k = int(win.size());
  ow = w - k + 1;
  std::vector<double> tmp(size_t(h) * size_t(ow), 0.0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < ow; ++j) {
      double s = 0;
      for (int a = 0; a < k; ++a) s += win[size_t(a)] * img[size_t(i) * w + j + a];
      tmp[size_t(i) * size_t(ow) + size_t(j)] = s;
    }
  oh = h - k + 1;
  std::vector<double> out(size_t(oh) * size_t(ow), 0.0);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      double s = 0;
      for (int a = 0; a < k; ++a) s += win[size_t(a)] * tmp[size_t(i + a) * size_t(ow) + size_t(j)];
      out[size_t(i) * size_t(ow) + size_t(j)] = s;
    }
  return out;
}

double ssim_channel(const std::vector<double>& x, const std::vector<double>& y, int h, int w) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  int oh = 0, ow = 0;
  std::vector<double> mx = blur(x, h, w, oh, ow);
  std::vector<double> my = blur(y, h, w, oh, ow);
  std::vector<double> xx(x.size()), yy(y.size()), xy(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  std::vector<double> mxx = blur(xx, h, w, oh, ow);
  std::vector<double> myy = blur(yy, h, w, oh, ow);
  std::vector<double> mxy = blur(xy, h, w, oh, ow);
  double total = 0;
  for (size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cxy = mxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / double(mx.size());
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "ssim: shape mismatch");
  check(a.rank() == 2 || (a.rank() == 3 && a.dim(2) <= 4), "ssim: want [H,W] or [H,W,C]");
  const int h = a.dim(0), w = a.dim(1);
  const int c = a.rank() == 2 ? 1 : a.dim(2);
  check(h >= 11 && w >= 11, "ssim: image smaller than the 11x11 window");
  double total = 0;
  std::vector<double> xa(size_t(h) * size_t(w)), xb(xa.size());
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        xa[size_t(i) * size_t(w) + size_t(j)] = a.at((int64_t(i) * w + j) * c + ch);
        xb[size_t(i) * size_t(w) + size_t(j)] = b.at((int64_t(i) * w + j) * c + ch);
      }
    total += ssim_channel(xa, xb, h, w);
  }
  return total / c;
}

DepthMetrics depth_metrics(const Tensor& pred, const Tensor& gt, bool align) {
  check(pred.numel() == gt.numel(), "depth_metrics: shape mismatch");
  std::vector<double> ratios;
  for (int64_t i = 0; i < gt.numel(); ++i)
    if (gt.at(i) > 0 && pred.at(i) > 0) ratios.push_back(double(gt.at(i)) / pred.at(i));
  DepthMetrics m;
  if (ratios.empty()) {
    m.abs_rel = 1.0;
    m.sq_rel = 1.0;
    m.rmse = 1.0;
    return m;
  }
  if (align) {
    std::vector<double> sorted = ratios;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    m.scale = sorted[sorted.size() / 2];
  }
  int64_t n = 0;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    if (gt.at(i) <= 0 || pred.at(i) <= 0) continue;
    const double p = double(pred.at(i)) * m.scale;
    const double g = gt.at(i);
    m.abs_rel += std::abs(p - g) / g;
    m.sq_rel += (p - g) * (p - g) / g;
    m.rmse += (p - g) * (p - g);
    const double r = std::max(p / g, g / p);
    m.delta1 += r < 1.25 ? 1 : 0;
    ++n;
  }
  m.abs_rel /= double(n);
  m.sq_rel /= double(n);
  m.rmse = std::sqrt(m.rmse / double(n));
  m.delta1 /= double(n);
  return m;
}

TrajectoryMetrics trajectory_metrics(const std::vector<CameraPose>& pred,
                                     const std::vector<CameraPose>& gt) {
  check(pred.size() == gt.size() && pred.size() >= 2, "trajectory_metrics: need matched lists");
  const int n = int(pred.size());
  Eigen::Matrix3Xd cp(3, n), cg(3, n);
  for (int i = 0; i < n; ++i) {
    cp.col(i) = pred[size_t(i)].center();
    cg.col(i) = gt[size_t(i)].center();
  }
  const Eigen::Matrix4d s = umeyama_sim3(cp, cg);
  TrajectoryMetrics m;
  double sq = 0;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d aligned = s.topLeftCorner<3, 3>() * cp.col(i) + s.topRightCorner<3, 1>();
    sq += (aligned - cg.col(i)).squaredNorm();
  }
  m.ate = std::sqrt(sq / n);
  for (int i = 0; i + 1 < n; ++i) {
    const CameraPose rp = relative_pose(pred[size_t(i) + 1], pred[size_t(i)]);
    const CameraPose rg = relative_pose(gt[size_t(i) + 1], gt[size_t(i)]);
    m.rpe_rot_deg += rotation_geodesic_deg(rp.R, rg.R);
    m.rpe_trans += (rp.t - rg.t).norm();
  }
  m.rpe_rot_deg /= n - 1;
  m.rpe_trans /= n - 1;
  return m;
}

double reprojection_error(const Tensor& depth_a, const Tensor& depth_b, const CameraPose& pose_a,
                          const CameraPose& pose_b, int samples, Rng& rng) {
  check(depth_a.rank() == 2 && depth_b.rank() == 2, "reprojection_error: depths [H,W]");
  const int h = depth_a.dim(0), w = depth_a.dim(1);
  const double diag = std::hypot(double(w), double(h));
  double total = 0;
  int used = 0;
  for (int it = 0; it < samples * 8 && used < samples; ++it) {
    const int px = int(rng.uniform_int(uint64_t(w)));
    const int py = int(rng.uniform_int(uint64_t(h)));
    const float za = depth_a.at(int64_t(py) * w + px);
    if (za <= 0) continue;
    const double ua = px + 0.5, va = py + 0.5;
    const Eigen::Vector3d pb = pose_b.project(pose_a.unproject(ua, va, za));
    if (pb.z() <= 0) continue;
    const int qx = int(std::floor(pb.x())), qy = int(std::floor(pb.y()));
    if (qx < 0 || qx >= w || qy < 0 || qy >= h) continue;
    const float zb = depth_b.at(int64_t(qy) * w + qx);
    if (zb <= 0) continue;
    const Eigen::Vector3d back = pose_a.project(pose_b.unproject(pb.x(), pb.y(), zb));
    if (back.z() <= 0) {
      total += 1.0;  // cycle leaves the camera entirely; worst-case penalty
      ++used;
      continue;
    }
    const double err = std::hypot(back.x() - ua, back.y() - va) / diag;
    total += std::min(err, 1.0);
    ++used;
  }
  return used > 0 ? total / used : 1.0;
}

}  // namespace gld
