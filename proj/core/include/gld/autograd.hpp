#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "gld/tensor.hpp"

namespace gld::ad {

class Graph;

/// Handle to a value on the tape. id < 0 means constant (no grad tracking).
struct Var {
  Tensor v;
  int id = -1;

  int dim(int i) const { return v.dim(i); }
  int rank() const { return v.rank(); }
  const std::vector<int>& shape() const { return v.shape(); }
};

using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

/// Dynamic reverse-mode tape. One Graph per training step; ops append nodes
/// in topological order, backward() walks them in reverse.
class Graph {
 public:
  bool recording = true;

  /// Tracked leaf (parameter). Repeated calls with the same storage return
  /// the same node so shared parameters accumulate gradients correctly.
  Var leaf(const Tensor& t);
  Var constant(const Tensor& t) { return {t, -1}; }

  int push(const Tensor& out, BackwardFn fn);
  void accum_grad(int id, const Tensor& g);

  /// Run backprop from a scalar loss.
  void backward(const Var& loss);

  /// Gradient w.r.t. a leaf created from this exact tensor storage, or an
  /// undefined Tensor when the leaf never influenced the loss.
  Tensor leaf_grad(const Tensor& leaf) const;

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    BackwardFn back;
    std::vector<int> shape;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<const float*, int> leaf_ids_;
};

// ---- elementwise & broadcast ----
// Binary ops accept equal shapes, a rank-1 rhs broadcast over the last dim,
// or a scalar rhs ([1]).
Var add(Graph& g, const Var& a, const Var& b);
Var sub(Graph& g, const Var& a, const Var& b);
Var mul(Graph& g, const Var& a, const Var& b);
Var scale(Graph& g, const Var& a, float s);
Var neg(Graph& g, const Var& a);

Var silu(Graph& g, const Var& a);
Var gelu(Graph& g, const Var& a);
Var sigmoid(Graph& g, const Var& a);
Var softplus(Graph& g, const Var& a);
Var abs_(Graph& g, const Var& a);
Var log_(Graph& g, const Var& a);
Var rsqrt(Graph& g, const Var& a);
Var recip(Graph& g, const Var& a);

// ---- linear algebra ----
/// a: [..., K] x w: [K, N] -> [..., N]
Var matmul(Graph& g, const Var& a, const Var& w);
/// Batched: a [B,M,K] x b [B,K,N] (or [B,N,K] when trans_b) -> [B,M,N].
Var bmm(Graph& g, const Var& a, const Var& b, bool trans_b = false);

// ---- normalization / activation over last dim ----
Var rmsnorm(Graph& g, const Var& x, const Var& w, float eps = 1e-6f);
Var layernorm(Graph& g, const Var& x, float eps = 1e-6f);  // no affine
Var softmax(Graph& g, const Var& x);                       // last dim

// ---- shape ops ----
Var reshape(Graph& g, const Var& a, std::vector<int> shape);
Var permute(Graph& g, const Var& a, std::vector<int> perm);
Var slice(Graph& g, const Var& a, int dim, int start, int len);
Var concat(Graph& g, const std::vector<Var>& parts, int dim);
Var detach(Graph& g, const Var& a);

// ---- reductions ----
Var sum_all(Graph& g, const Var& a);
Var mean_all(Graph& g, const Var& a);

// ---- structured ops ----
/// x [N,H,W,Ci], w [kh,kw,Ci,Co], bias [Co]; stride 1, zero 'same' padding.
Var conv2d(Graph& g, const Var& x, const Var& w, const Var& bias);
/// Depthwise valid-mode convolution with a fixed (non-learned) kernel [k,k];
/// every channel uses the same kernel. x [N,H,W,C] -> [N,H-k+1,W-k+1,C].
Var depthwise_conv_const(Graph& g, const Var& x, const Tensor& kernel);
/// x [N,h,w,C*r*r] -> [N,h*r,w*r,C]; input channel ((dy*r+dx)*C + c).
Var pixel_shuffle(Graph& g, const Var& x, int r);
/// Rotary pairs (2i,2i+1) over the last dim. cos/sin: [T, C/2], x: [V,T,C].
Var rotary(Graph& g, const Var& x, const Tensor& cos_t, const Tensor& sin_t);
/// Per-view linear map on channel groups of 4: x [V,T,C] (C%4==0),
/// mats [V,4,4]; y_group = M_v * x_group (or M_v^T when transpose).
Var group4_transform(Graph& g, const Var& x, const Tensor& mats, bool transpose);

// ---- convenience ----
Var linear(Graph& g, const Var& x, const Var& w, const Var& b);
Var mse_loss(Graph& g, const Var& a, const Var& b);
Var l1_loss(Graph& g, const Var& a, const Var& b);

}  // namespace gld::ad
