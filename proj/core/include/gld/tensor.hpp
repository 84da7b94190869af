#pragma once

#include <memory>
#include <vector>

#include "gld/common.hpp"
#include "gld/rng.hpp"

namespace gld {

/// Dense row-major float tensor with shared storage (shallow copies alias,
/// use clone() for a deep copy). Rank up to 6 is plenty for this project.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, float v);
  static Tensor randn(std::vector<int> shape, Rng& rng, float std = 1.0f);
  static Tensor from(std::vector<int> shape, std::vector<float> data);
  static Tensor scalar(float v) { return from({1}, {v}); }

  bool defined() const { return bool(buf_); }
  int rank() const { return int(shape_.size()); }
  int dim(int i) const { return shape_[size_t(i < 0 ? i + rank() : i)]; }
  const std::vector<int>& shape() const { return shape_; }
  int64_t numel() const { return numel_; }

  float* data() { return buf_->data(); }
  const float* data() const { return buf_->data(); }
  float& at(int64_t i) { return (*buf_)[size_t(i)]; }
  float at(int64_t i) const { return (*buf_)[size_t(i)]; }

  Tensor clone() const;
  Tensor reshaped(std::vector<int> shape) const;  // aliases storage
  void fill(float v);
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  /// Rows when the tensor is viewed as a 2D matrix [prefix, last_dim].
  int64_t rows2d() const { return numel_ / dim(-1); }

  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  int64_t numel_ = 0;
  std::shared_ptr<std::vector<float>> buf_;
};

// -- elementwise / BLAS-backed kernels used by both autograd and plain code --

/// c = a @ b for 2D views: a is [m,k], b is [k,n], c is [m,n]. `accumulate`
/// adds into c instead of overwriting.
void gemm(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
          bool trans_a = false, bool trans_b = false, bool accumulate = false);

/// Throws unless t has the given shape; -1 entries match any extent.
void tensor_check_shape(const Tensor& t, const std::vector<int>& shape, const char* what);

}  // namespace gld
