#include "gld/nn.hpp"

#include <cmath>

namespace gld::nn {

Tensor ParamStore::add(const std::string& name, Tensor init) {
  check(!name.empty(), "param name empty");
  check(by_name_.find(name) == by_name_.end(), "duplicate param: ", name);
  names_.push_back(name);
  by_name_[name] = init;
  return init;
}

Tensor ParamStore::create(const std::string& name, std::vector<int> shape, Rng& rng, float std) {
  return add(name, Tensor::randn(std::move(shape), rng, std));
}

Tensor ParamStore::zeros(const std::string& name, std::vector<int> shape) {
  return add(name, Tensor::zeros(std::move(shape)));
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = by_name_.find(name);
  check(it != by_name_.end(), "unknown param: ", name);
  return it->second;
}

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& kv : by_name_) n += kv.second.numel();
  return n;
}

float lecun_std(int fan_in) { return 1.0f / std::sqrt(float(fan_in)); }

std::string params_fingerprint(const ParamStore& p) {
  std::string bytes;
  for (const std::string& name : p.names()) {
    const Tensor t = p.get(name);
    bytes += name;
    bytes.append(reinterpret_cast<const char*>(t.data()), size_t(t.numel()) * sizeof(float));
  }
  return fnv1a_hex(bytes);
}

// ------------------------------------------------------------- layers --

Linear::Linear(ParamStore& p, const std::string& name, int in, int out, Rng& rng, bool bias,
               bool zero_init)
    : has_bias(bias) {
  w = zero_init ? p.zeros(name + ".w", {in, out})
                : p.create(name + ".w", {in, out}, rng, lecun_std(in));
  if (bias) b = p.zeros(name + ".b", {out});
}

Var Linear::operator()(Graph& g, const Var& x) const {
  Var y = ad::matmul(g, x, g.leaf(w));
  if (has_bias) y = ad::add(g, y, g.leaf(b));
  return y;
}

RmsNorm::RmsNorm(ParamStore& p, const std::string& name, int dim) {
  w = p.add(name + ".w", Tensor::full({dim}, 1.0f));
}

SwiGluMlp::SwiGluMlp(ParamStore& p, const std::string& name, int dim, int hidden, Rng& rng)
    : gate(p, name + ".gate", dim, hidden, rng, false),
      up(p, name + ".up", dim, hidden, rng, false),
      down(p, name + ".down", hidden, dim, rng) {}

Var SwiGluMlp::operator()(Graph& g, const Var& x) const {
  return down(g, ad::mul(g, ad::silu(g, gate(g, x)), up(g, x)));
}

RopeTables make_axial_rope(int h, int w, int channels, int head_dim, float theta) {
  check(head_dim % 4 == 0, "axial rope needs head_dim divisible by 4");
  check(channels % head_dim == 0, "channels not a multiple of head_dim");
  const int hp = head_dim / 2;   // rotation pairs per head
  const int half = hp / 2;       // pairs per axis
  const int heads = channels / head_dim;
  const int T = h * w;
  Tensor cos_t({T, channels / 2}), sin_t({T, channels / 2});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int t = y * w + x;
      for (int i = 0; i < hp; ++i) {
        const int axis_i = i < half ? i : i - half;
        const float pos = i < half ? float(y) : float(x);
        const float ang = pos * std::pow(theta, -float(axis_i) / float(half));
        for (int hd = 0; hd < heads; ++hd) {
          cos_t.at(int64_t(t) * (channels / 2) + hd * hp + i) = std::cos(ang);
          sin_t.at(int64_t(t) * (channels / 2) + hd * hp + i) = std::sin(ang);
        }
      }
    }
  return {cos_t, sin_t};
}

Attention::Attention(ParamStore& p, const std::string& name, int dim, int heads_, Rng& rng)
    : wq(p, name + ".q", dim, dim, rng),
      wk(p, name + ".k", dim, dim, rng),
      wv(p, name + ".v", dim, dim, rng),
      wo(p, name + ".o", dim, dim, rng),
      heads(heads_) {
  check(dim % heads_ == 0, "attention dim not divisible by heads");
}

namespace {

// [V,T,C] -> [B, rows, head_dim] ready for batched scores.
Var to_heads_global(Graph& g, const Var& x, int heads) {
  const int V = x.dim(0), T = x.dim(1), C = x.dim(2);
  const int hd = C / heads;
  Var y = ad::reshape(g, x, {V * T, heads, hd});
  y = ad::permute(g, y, {1, 0, 2});  // [H, N, hd]
  return y;
}

Var from_heads_global(Graph& g, const Var& x, int V, int T, int C) {
  Var y = ad::permute(g, x, {1, 0, 2});  // [N, H, hd]
  return ad::reshape(g, y, {V, T, C});
}

Var to_heads_local(Graph& g, const Var& x, int heads) {
  const int V = x.dim(0), T = x.dim(1), C = x.dim(2);
  const int hd = C / heads;
  Var y = ad::reshape(g, x, {V, T, heads, hd});
  y = ad::permute(g, y, {0, 2, 1, 3});  // [V, H, T, hd]
  return ad::reshape(g, y, {V * heads, T, hd});
}

Var from_heads_local(Graph& g, const Var& x, int V, int heads, int T, int C) {
  Var y = ad::reshape(g, x, {V, heads, T, C / heads});
  y = ad::permute(g, y, {0, 2, 1, 3});  // [V, T, H, hd]
  return ad::reshape(g, y, {V, T, C});
}

}  // namespace

Var Attention::global(Graph& g, const Var& x, const AttentionContext& ctx) const {
  const int V = x.dim(0), T = x.dim(1), C = x.dim(2);
  const int hd = C / heads;
  Var q = wq(g, x), k = wk(g, x), v = wv(g, x);
  if (ctx.rope) {
    q = ad::rotary(g, q, ctx.rope->cos_t, ctx.rope->sin_t);
    k = ad::rotary(g, k, ctx.rope->cos_t, ctx.rope->sin_t);
  }
  if (ctx.pose) {
    check(ctx.pose_inv, "pose modulation needs both pose and pose_inv");
    q = ad::group4_transform(g, q, *ctx.pose, true);
    k = ad::group4_transform(g, k, *ctx.pose_inv, false);
  }
  if (ctx.observe) (*ctx.observe)(ctx.tag, q.v, k.v);
  Var qh = to_heads_global(g, q, heads);
  Var kh = to_heads_global(g, k, heads);
  Var vh = to_heads_global(g, v, heads);
  Var scores = ad::bmm(g, ad::scale(g, qh, 1.0f / std::sqrt(float(hd))), kh, true);
  Var probs = ad::softmax(g, scores);
  Var out = from_heads_global(g, ad::bmm(g, probs, vh), V, T, C);
  return wo(g, out);
}

Var Attention::local(Graph& g, const Var& x, const AttentionContext& ctx) const {
  const int V = x.dim(0), T = x.dim(1), C = x.dim(2);
  const int hd = C / heads;
  Var q = wq(g, x), k = wk(g, x), v = wv(g, x);
  if (ctx.rope) {
    q = ad::rotary(g, q, ctx.rope->cos_t, ctx.rope->sin_t);
    k = ad::rotary(g, k, ctx.rope->cos_t, ctx.rope->sin_t);
  }
  if (ctx.observe) (*ctx.observe)(ctx.tag, q.v, k.v);
  Var qh = to_heads_local(g, q, heads);
  Var kh = to_heads_local(g, k, heads);
  Var vh = to_heads_local(g, v, heads);
  Var scores = ad::bmm(g, ad::scale(g, qh, 1.0f / std::sqrt(float(hd))), kh, true);
  Var probs = ad::softmax(g, scores);
  Var out = from_heads_local(g, ad::bmm(g, probs, vh), V, heads, T, C);
  return wo(g, out);
}

Block::Block(ParamStore& p, const std::string& name, int dim, int heads, int mlp_hidden, Rng& rng)
    : norm1(p, name + ".norm1", dim),
      norm2(p, name + ".norm2", dim),
      attn(p, name + ".attn", dim, heads, rng),
      mlp(p, name + ".mlp", dim, mlp_hidden, rng) {}

Var Block::forward(Graph& g, const Var& x, bool local, const AttentionContext& ctx) const {
  Var h = norm1(g, x);
  h = local ? attn.local(g, h, ctx) : attn.global(g, h, ctx);
  Var y = ad::add(g, x, h);
  return ad::add(g, y, mlp(g, norm2(g, y)));
}

AdaLnBlock::AdaLnBlock(ParamStore& p, const std::string& name, int dim, int heads, int mlp_hidden,
                       Rng& rng)
    : attn(p, name + ".attn", dim, heads, rng),
      mlp(p, name + ".mlp", dim, mlp_hidden, rng),
      mod(p, name + ".mod", dim, 6 * dim, rng, true, /*zero_init=*/true) {}

Var AdaLnBlock::forward(Graph& g, const Var& x, const Var& cond, const AttentionContext& ctx) const {
  const int C = x.dim(-1);
  Var m = mod(g, ad::silu(g, cond));
  auto part = [&](int i) { return ad::slice(g, m, -1, i * C, C); };
  Var shift1 = part(0), scale1 = part(1), gate1 = part(2);
  Var shift2 = part(3), scale2 = part(4), gate2 = part(5);
  auto modulate = [&](const Var& h, const Var& sh, const Var& sc) {
    return ad::add(g, ad::add(g, h, ad::mul(g, h, sc)), sh);
  };
  Var h = modulate(ad::layernorm(g, x), shift1, scale1);
  h = attn.global(g, h, ctx);
  Var y = ad::add(g, x, ad::mul(g, gate1, h));
  Var h2 = modulate(ad::layernorm(g, y), shift2, scale2);
  return ad::add(g, y, ad::mul(g, gate2, mlp(g, h2)));
}

// -------------------------------------------------------- embeddings --

Tensor sincos_pos_emb_2d(int h, int w, int dim) {
  check(dim % 4 == 0, "sincos embedding needs dim divisible by 4");
  const int quarter = dim / 4;
  Tensor out({h * w, dim});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float* row = out.data() + int64_t(y * w + x) * dim;
      for (int i = 0; i < quarter; ++i) {
        const float f = std::pow(10000.0f, -float(i) / float(quarter));
        row[i] = std::sin(y * f);
        row[quarter + i] = std::cos(y * f);
        row[2 * quarter + i] = std::sin(x * f);
        row[3 * quarter + i] = std::cos(x * f);
      }
    }
  return out;
}

Tensor timestep_features(float t, int dim, float max_period) {
  check(dim % 2 == 0, "timestep features need even dim");
  const int half = dim / 2;
  Tensor out({1, dim});
  for (int i = 0; i < half; ++i) {
    const float freq = std::pow(max_period, float(i) / float(half));
    out.at(i) = std::cos(t * freq);
    out.at(half + i) = std::sin(t * freq);
  }
  return out;
}

Var broadcast_rows(Graph& g, const Var& row, int n) {
  check(row.rank() == 2 && row.dim(0) == 1, "broadcast_rows wants [1,C]");
  return ad::matmul(g, g.constant(Tensor::full({n, 1}, 1.0f)), row);
}

// ---------------------------------------------------------- optimizer --

AdamW::AdamW(ParamStore& params, float lr, float beta1, float beta2, float weight_decay,
             float grad_clip, float eps)
    : params_(params),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      wd_(weight_decay),
      clip_(grad_clip),
      eps_(eps) {}

float AdamW::step(const Graph& g) {
  std::vector<std::pair<std::string, Tensor>> grads;
  double sq = 0;
  for (const std::string& name : params_.names()) {
    Tensor grad = g.leaf_grad(params_.get(name));
    if (!grad.defined()) continue;
    for (int64_t i = 0; i < grad.numel(); ++i) sq += double(grad.at(i)) * grad.at(i);
    grads.emplace_back(name, grad);
  }
  const float norm = float(std::sqrt(sq));
  const float scale = (clip_ > 0 && norm > clip_) ? clip_ / norm : 1.0f;
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, float(t_));
  const float bc2 = 1.0f - std::pow(beta2_, float(t_));
  for (auto& [name, grad] : grads) {
    Tensor p = params_.get(name);
    Tensor& m = m_[name];
    Tensor& v = v_[name];
    if (!m.defined()) {
      m = Tensor::zeros(p.shape());
      v = Tensor::zeros(p.shape());
    }
    const bool decay = wd_ > 0 && p.rank() >= 2;
    for (int64_t i = 0; i < p.numel(); ++i) {
      const float gi = grad.at(i) * scale;
      m.at(i) = beta1_ * m.at(i) + (1.0f - beta1_) * gi;
      v.at(i) = beta2_ * v.at(i) + (1.0f - beta2_) * gi * gi;
      const float mh = m.at(i) / bc1;
      const float vh = v.at(i) / bc2;
      float upd = mh / (std::sqrt(vh) + eps_);
      if (decay) upd += wd_ * p.at(i);
      p.at(i) -= lr_ * upd;
    }
  }
  return norm;
}

}  // namespace gld::nn
