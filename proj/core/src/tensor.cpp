#include "gld/tensor.hpp"

#include <Eigen/Core>
#include <cstdlib>

namespace gld {

bool deterministic_mode() {
  static const bool det = [] {
    const char* v = std::getenv("GLD_DETERMINISTIC");
    return v && v[0] == '1';
  }();
  return det;
}

uint64_t fnv1a(const std::string& bytes) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string fnv1a_hex(const std::string& bytes) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)fnv1a(bytes));
  return buf;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  numel_ = 1;
  for (int d : shape_) {
    check(d > 0, "tensor dims must be positive, got ", d);
    numel_ *= d;
  }
  buf_ = std::make_shared<std::vector<float>>(size_t(numel_), 0.0f);
}

Tensor Tensor::full(std::vector<int> shape, float v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, float std) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = float(rng.normal()) * std;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> data) {
  Tensor t(std::move(shape));
  check(int64_t(data.size()) == t.numel(), "from(): data size mismatch");
  std::copy(data.begin(), data.end(), t.data());
  return t;
}

Tensor Tensor::clone() const {
  Tensor t(shape_);
  std::copy(buf_->begin(), buf_->end(), t.data());
  return t;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  int64_t n = 1;
  for (int d : shape) n *= d;
  check(n == numel_, "reshape ", shape_str(), " -> incompatible element count");
  Tensor t;
  t.shape_ = std::move(shape);
  t.numel_ = numel_;
  t.buf_ = buf_;
  return t;
}

void Tensor::fill(float v) { std::fill(buf_->begin(), buf_->end(), v); }

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (size_t i = 0; i < shape_.size(); ++i) s += (i ? "," : "") + std::to_string(shape_[i]);
  return s + "]";
}

void tensor_check_shape(const Tensor& t, const std::vector<int>& shape, const char* what) {
  bool ok = t.rank() == int(shape.size());
  for (int i = 0; ok && i < t.rank(); ++i)
    if (shape[size_t(i)] != -1 && t.dim(i) != shape[size_t(i)]) ok = false;
  if (ok) return;
  std::string want = "[";
  for (size_t i = 0; i < shape.size(); ++i)
    want += str(shape[i], i + 1 < shape.size() ? "," : "");
  want += "]";
  check(false, what, ": expected shape ", want, " (-1 = any), got ", t.shape_str());
}

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

void gemm(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
          bool trans_a, bool trans_b, bool accumulate) {
  CMap ma(a, trans_a ? k : m, trans_a ? m : k);
  CMap mb(b, trans_b ? n : k, trans_b ? k : n);
  MMap mc(c, m, n);
  if (!trans_a && !trans_b) {
    if (accumulate) mc.noalias() += ma * mb;
    else mc.noalias() = ma * mb;
  } else if (!trans_a && trans_b) {
    if (accumulate) mc.noalias() += ma * mb.transpose();
    else mc.noalias() = ma * mb.transpose();
  } else if (trans_a && !trans_b) {
    if (accumulate) mc.noalias() += ma.transpose() * mb;
    else mc.noalias() = ma.transpose() * mb;
  } else {
    if (accumulate) mc.noalias() += ma.transpose() * mb.transpose();
    else mc.noalias() = ma.transpose() * mb.transpose();
  }
}

}  // namespace gld
