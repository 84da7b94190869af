#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gld/autograd.hpp"
#include "gld/rng.hpp"
#include "gld/tensor.hpp"

namespace gld::nn {

using ad::Graph;
using ad::Var;

/// Named parameter registry. Insertion order is the serialization order.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor init);
  Tensor create(const std::string& name, std::vector<int> shape, Rng& rng, float std);
  Tensor zeros(const std::string& name, std::vector<int> shape);

  bool has(const std::string& name) const { return by_name_.count(name) > 0; }
  Tensor get(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  int64_t total_params() const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Tensor> by_name_;
};

/// std = 1/sqrt(fan_in); the workhorse init for linear weights here.
float lecun_std(int fan_in);

/// Hash of all parameter names, shapes, and values; identifies a trained
/// model snapshot for artifact chain checks.
std::string params_fingerprint(const ParamStore& p);

// ------------------------------------------------------------- layers --

struct Linear {
  Tensor w, b;
  bool has_bias = true;

  Linear() = default;
  Linear(ParamStore& p, const std::string& name, int in, int out, Rng& rng, bool bias = true,
         bool zero_init = false);
  Var operator()(Graph& g, const Var& x) const;
};

struct RmsNorm {
  Tensor w;

  RmsNorm() = default;
  RmsNorm(ParamStore& p, const std::string& name, int dim);
  Var operator()(Graph& g, const Var& x) const { return ad::rmsnorm(g, x, g.leaf(w)); }
};

/// SwiGLU feed-forward: down( silu(x W_gate) * (x W_up) ).
struct SwiGluMlp {
  Linear gate, up, down;

  SwiGluMlp() = default;
  SwiGluMlp(ParamStore& p, const std::string& name, int dim, int hidden, Rng& rng);
  Var operator()(Graph& g, const Var& x) const;
};

/// Precomputed axial rotary tables for an h x w token grid: the first half
/// of each head's channel pairs encodes the row index, the second half the
/// column index. Shapes [h*w, channels/2], laid out per head.
struct RopeTables {
  Tensor cos_t, sin_t;
};
RopeTables make_axial_rope(int h, int w, int channels, int head_dim, float theta = 100.0f);

/// Optional observer for attention inputs, used by analysis code. Receives
/// the per-token q/k right before the score computation.
using QkObserver = std::function<void(const std::string& tag, const Tensor& q, const Tensor& k)>;

struct AttentionContext {
  /// Per-view pose modulation: q <- rho(P)^T q, k <- rho(P)^{-1} k, where
  /// rho repeats a 4x4 matrix across channel groups. Both [V,4,4] or null.
  const Tensor* pose = nullptr;
  const Tensor* pose_inv = nullptr;
  const RopeTables* rope = nullptr;
  const QkObserver* observe = nullptr;
  std::string tag;
};

struct Attention {
  Linear wq, wk, wv, wo;
  int heads = 1;

  Attention() = default;
  Attention(ParamStore& p, const std::string& name, int dim, int heads, Rng& rng);

  /// Joint attention over all V*T tokens. x: [V,T,C].
  Var global(Graph& g, const Var& x, const AttentionContext& ctx = {}) const;
  /// Attention within each view separately. x: [V,T,C].
  Var local(Graph& g, const Var& x, const AttentionContext& ctx = {}) const;
};

/// Pre-norm transformer block; attention scope picked per call.
struct Block {
  RmsNorm norm1, norm2;
  Attention attn;
  SwiGluMlp mlp;

  Block() = default;
  Block(ParamStore& p, const std::string& name, int dim, int heads, int mlp_hidden, Rng& rng);
  Var forward(Graph& g, const Var& x, bool local, const AttentionContext& ctx = {}) const;
};

/// DiT-style block: per-token conditioning t produces shift/scale/gate pairs
/// for the attention and MLP branches; gates start at zero so the block is
/// the identity at init. x, cond: [V,T,C].
struct AdaLnBlock {
  Attention attn;
  SwiGluMlp mlp;
  Linear mod;

  AdaLnBlock() = default;
  AdaLnBlock(ParamStore& p, const std::string& name, int dim, int heads, int mlp_hidden, Rng& rng);
  Var forward(Graph& g, const Var& x, const Var& cond, const AttentionContext& ctx = {}) const;
};

// -------------------------------------------------------- embeddings --

/// Fixed 2D sin/cos grid embedding, [h*w, dim]. Rows ordered row-major.
Tensor sincos_pos_emb_2d(int h, int w, int dim);

/// Sinusoidal features of a scalar in [0,1], [1, dim].
Tensor timestep_features(float t, int dim, float max_period = 10000.0f);

/// Replicate a [1,C] row n times, differentiably.
Var broadcast_rows(Graph& g, const Var& row, int n);

// ---------------------------------------------------------- optimizer --

class AdamW {
 public:
  AdamW(ParamStore& params, float lr, float beta1 = 0.9f, float beta2 = 0.95f,
        float weight_decay = 0.0f, float grad_clip = 1.0f, float eps = 1e-8f);

  /// Apply one update from the gradients recorded in g. Returns the global
  /// gradient norm before clipping.
  float step(const Graph& g);
  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }

 private:
  ParamStore& params_;
  float lr_, beta1_, beta2_, wd_, clip_, eps_;
  int64_t t_ = 0;
  std::unordered_map<std::string, Tensor> m_, v_;
};

}  // namespace gld::nn
