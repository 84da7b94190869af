#include "gld/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace gld::ad {

Var Graph::leaf(const Tensor& t) {
  if (!recording) return {t, -1};
  auto it = leaf_ids_.find(t.data());
  if (it != leaf_ids_.end()) return {t, it->second};
  int id = int(nodes_.size());
  nodes_.push_back({nullptr, t.shape()});
  leaf_ids_[t.data()] = id;
  return {t, id};
}

int Graph::push(const Tensor& out, BackwardFn fn) {
  if (!recording) return -1;
  nodes_.push_back({std::move(fn), out.shape()});
  return int(nodes_.size()) - 1;
}

void Graph::accum_grad(int id, const Tensor& g) {
  if (id < 0) return;
  Tensor& slot = grads_[size_t(id)];
  if (!slot.defined()) {
    slot = g.clone();
  } else {
    check(slot.numel() == g.numel(), "grad accumulation shape mismatch");
    float* d = slot.data();
    const float* s = g.data();
    for (int64_t i = 0; i < g.numel(); ++i) d[i] += s[i];
  }
}

void Graph::backward(const Var& loss) {
  check(loss.id >= 0, "backward() on a constant");
  check(loss.v.numel() == 1, "backward() needs a scalar loss");
  grads_.assign(nodes_.size(), Tensor());
  grads_[size_t(loss.id)] = Tensor::full({1}, 1.0f);
  for (int id = loss.id; id >= 0; --id) {
    Tensor& g = grads_[size_t(id)];
    if (!g.defined()) continue;
    Node& n = nodes_[size_t(id)];
    if (n.back) {
      n.back(*this, g);
      g = Tensor();  // interior grads are consumed; leaf grads persist
    }
  }
}

Tensor Graph::leaf_grad(const Tensor& leaf) const {
  auto it = leaf_ids_.find(leaf.data());
  if (it == leaf_ids_.end() || size_t(it->second) >= grads_.size()) return {};
  return grads_[size_t(it->second)];
}

// ---------------------------------------------------------------- helpers --

namespace {

enum class Bcast { kSame, kRow, kScalar };

Bcast bcast_kind(const Var& a, const Var& b) {
  if (b.v.numel() == 1) return Bcast::kScalar;
  if (a.v.same_shape(b.v)) return Bcast::kSame;
  if (b.rank() == 1 && b.dim(0) == a.dim(-1)) return Bcast::kRow;
  throw Error(str("shape mismatch: ", a.v.shape_str(), " vs ", b.v.shape_str()));
}

// Reduce an a-shaped gradient to b's broadcast shape.
Tensor reduce_to(const Tensor& g, Bcast kind, int cols) {
  if (kind == Bcast::kSame) return g.clone();
  if (kind == Bcast::kScalar) {
    double s = 0;
    for (int64_t i = 0; i < g.numel(); ++i) s += g.at(i);
    return Tensor::full({1}, float(s));
  }
  Tensor out({cols});
  const int64_t rows = g.numel() / cols;
  for (int64_t r = 0; r < rows; ++r) {
    const float* src = g.data() + r * cols;
    float* dst = out.data();
    for (int c = 0; c < cols; ++c) dst[c] += src[c];
  }
  return out;
}

std::vector<int64_t> strides_of(const std::vector<int>& shape) {
  std::vector<int64_t> s(shape.size());
  int64_t acc = 1;
  for (int i = int(shape.size()) - 1; i >= 0; --i) {
    s[size_t(i)] = acc;
    acc *= shape[size_t(i)];
  }
  return s;
}

void permute_copy(const Tensor& src, Tensor& dst, const std::vector<int>& perm) {
  const auto& in_shape = src.shape();
  const auto in_str = strides_of(in_shape);
  const auto& out_shape = dst.shape();
  const int r = int(perm.size());
  std::vector<int> idx(size_t(r), 0);
  const float* s = src.data();
  float* d = dst.data();
  for (int64_t o = 0; o < dst.numel(); ++o) {
    int64_t off = 0;
    for (int i = 0; i < r; ++i) off += int64_t(idx[size_t(i)]) * in_str[size_t(perm[size_t(i)])];
    d[o] = s[off];
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[size_t(i)] < out_shape[size_t(i)]) break;
      idx[size_t(i)] = 0;
    }
  }
}

}  // namespace

// ------------------------------------------------------------- arithmetic --

static Var binary_op(Graph& g, const Var& a, const Var& b, int which) {
  Bcast kind = bcast_kind(a, b);
  const int cols = a.dim(-1);
  Tensor out(a.shape());
  const float* pa = a.v.data();
  const float* pb = b.v.data();
  float* po = out.data();
  const int64_t n = a.v.numel();
  auto rhs = [&](int64_t i) {
    switch (kind) {
      case Bcast::kSame: return pb[i];
      case Bcast::kRow: return pb[i % cols];
      default: return pb[0];
    }
  };
  for (int64_t i = 0; i < n; ++i) {
    float x = pa[i], y = rhs(i);
    po[i] = which == 0 ? x + y : which == 1 ? x - y : x * y;
  }
  Var r{out, -1};
  if (!g.recording || (a.id < 0 && b.id < 0)) return r;
  int aid = a.id, bid = b.id;
  Tensor av = a.v, bv = b.v;
  r.id = g.push(out, [aid, bid, kind, cols, which, av, bv](Graph& gg, const Tensor& gout) {
    if (which == 2) {  // mul
      if (aid >= 0) {
        Tensor da(av.shape());
        const float* pgo = gout.data();
        const float* pb2 = bv.data();
        for (int64_t i = 0; i < da.numel(); ++i)
          da.at(i) = pgo[i] * (kind == Bcast::kSame ? pb2[i]
                               : kind == Bcast::kRow ? pb2[i % cols]
                                                     : pb2[0]);
        gg.accum_grad(aid, da);
      }
      if (bid >= 0) {
        Tensor prod(av.shape());
        const float* pgo = gout.data();
        const float* pa2 = av.data();
        for (int64_t i = 0; i < prod.numel(); ++i) prod.at(i) = pgo[i] * pa2[i];
        gg.accum_grad(bid, reduce_to(prod, kind, cols));
      }
    } else {
      if (aid >= 0) gg.accum_grad(aid, gout);
      if (bid >= 0) {
        Tensor gb = reduce_to(gout, kind, cols);
        if (which == 1)
          for (int64_t i = 0; i < gb.numel(); ++i) gb.at(i) = -gb.at(i);
        gg.accum_grad(bid, gb);
      }
    }
  });
  return r;
}

Var add(Graph& g, const Var& a, const Var& b) { return binary_op(g, a, b, 0); }
Var sub(Graph& g, const Var& a, const Var& b) { return binary_op(g, a, b, 1); }
Var mul(Graph& g, const Var& a, const Var& b) { return binary_op(g, a, b, 2); }

Var scale(Graph& g, const Var& a, float s) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = a.v.at(i) * s;
  Var r{out, -1};
  if (!g.recording || a.id < 0) return r;
  int aid = a.id;
  r.id = g.push(out, [aid, s](Graph& gg, const Tensor& gout) {
    Tensor da(gout.shape());
    for (int64_t i = 0; i < da.numel(); ++i) da.at(i) = gout.at(i) * s;
    gg.accum_grad(aid, da);
  });
  return r;
}

Var neg(Graph& g, const Var& a) { return scale(g, a, -1.0f); }

// Pointwise op with analytic derivative computed from the saved input.
template <typename F, typename DF>
static Var unary_op(Graph& g, const Var& a, F f, DF df) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = f(a.v.at(i));
  Var r{out, -1};
  if (!g.recording || a.id < 0) return r;
  int aid = a.id;
  Tensor av = a.v;
  r.id = g.push(out, [aid, av, df](Graph& gg, const Tensor& gout) {
    Tensor da(av.shape());
    for (int64_t i = 0; i < da.numel(); ++i) da.at(i) = gout.at(i) * df(av.at(i));
    gg.accum_grad(aid, da);
  });
  return r;
}

static float sigmoid_f(float x) { return 1.0f / (1.0f + std::exp(-x)); }

Var silu(Graph& g, const Var& a) {
  return unary_op(
      g, a, [](float x) { return x * sigmoid_f(x); },
      [](float x) {
        float s = sigmoid_f(x);
        return s * (1.0f + x * (1.0f - s));
      });
}

Var gelu(Graph& g, const Var& a) {
  constexpr float c = 0.79788456080286536f;
  return unary_op(
      g, a,
      [](float x) {
        float u = c * (x + 0.044715f * x * x * x);
        return 0.5f * x * (1.0f + std::tanh(u));
      },
      [](float x) {
        float u = c * (x + 0.044715f * x * x * x);
        float t = std::tanh(u);
        float du = c * (1.0f + 3.0f * 0.044715f * x * x);
        return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
      });
}

Var sigmoid(Graph& g, const Var& a) {
  return unary_op(
      g, a, [](float x) { return sigmoid_f(x); },
      [](float x) {
        float s = sigmoid_f(x);
        return s * (1.0f - s);
      });
}

Var softplus(Graph& g, const Var& a) {
  return unary_op(
      g, a,
      [](float x) {
        if (x > 20.0f) return x;
        if (x < -20.0f) return std::exp(x);
        return std::log1p(std::exp(x));
      },
      [](float x) { return sigmoid_f(x); });
}

Var abs_(Graph& g, const Var& a) {
  return unary_op(
      g, a, [](float x) { return std::fabs(x); },
      [](float x) { return x >= 0.0f ? 1.0f : -1.0f; });
}

Var log_(Graph& g, const Var& a) {
  return unary_op(
      g, a, [](float x) { return std::log(x); }, [](float x) { return 1.0f / x; });
}

Var rsqrt(Graph& g, const Var& a) {
  return unary_op(
      g, a, [](float x) { return 1.0f / std::sqrt(x); },
      [](float x) { return -0.5f / (x * std::sqrt(x)); });
}

Var recip(Graph& g, const Var& a) {
  return unary_op(
      g, a, [](float x) { return 1.0f / x; }, [](float x) { return -1.0f / (x * x); });
}

// --------------------------------------------------------- linear algebra --

Var matmul(Graph& g, const Var& a, const Var& w) {
  check(w.rank() == 2, "matmul: weight must be rank 2");
  const int k = w.dim(0), n = w.dim(1);
  check(a.dim(-1) == k, "matmul: inner dim mismatch ", a.v.shape_str(), " x ", w.v.shape_str());
  const int64_t m = a.v.rows2d();
  std::vector<int> out_shape = a.shape();
  out_shape.back() = n;
  Tensor out(out_shape);
  gemm(a.v.data(), w.v.data(), out.data(), m, k, n);
  Var r{out, -1};
  if (!g.recording || (a.id < 0 && w.id < 0)) return r;
  int aid = a.id, wid = w.id;
  Tensor av = a.v, wv = w.v;
  r.id = g.push(out, [aid, wid, av, wv, m, k, n](Graph& gg, const Tensor& gout) {
    if (aid >= 0) {
      Tensor da(av.shape());
      gemm(gout.data(), wv.data(), da.data(), m, n, k, false, true);
      gg.accum_grad(aid, da);
    }
    if (wid >= 0) {
      Tensor dw(wv.shape());
      gemm(av.data(), gout.data(), dw.data(), k, m, n, true, false);
      gg.accum_grad(wid, dw);
    }
  });
  return r;
}

Var bmm(Graph& g, const Var& a, const Var& b, bool trans_b) {
  check(a.rank() == 3 && b.rank() == 3, "bmm: rank-3 inputs required");
  const int B = a.dim(0), m = a.dim(1), k = a.dim(2);
  check(b.dim(0) == B, "bmm: batch mismatch");
  const int n = trans_b ? b.dim(1) : b.dim(2);
  check((trans_b ? b.dim(2) : b.dim(1)) == k, "bmm: inner dim mismatch");
  Tensor out({B, m, n});
  for (int i = 0; i < B; ++i)
    gemm(a.v.data() + int64_t(i) * m * k, b.v.data() + int64_t(i) * (trans_b ? n * k : k * n),
         out.data() + int64_t(i) * m * n, m, k, n, false, trans_b);
  Var r{out, -1};
  if (!g.recording || (a.id < 0 && b.id < 0)) return r;
  int aid = a.id, bid = b.id;
  Tensor av = a.v, bv = b.v;
  r.id = g.push(out, [aid, bid, av, bv, B, m, k, n, trans_b](Graph& gg, const Tensor& gout) {
    if (aid >= 0) {
      Tensor da(av.shape());
      for (int i = 0; i < B; ++i) {
        const float* go = gout.data() + int64_t(i) * m * n;
        const float* pb = bv.data() + int64_t(i) * (trans_b ? n * k : k * n);
        // dA = G B^T (no trans) or G B (trans_b)
        gemm(go, pb, da.data() + int64_t(i) * m * k, m, n, k, false, !trans_b);
      }
      gg.accum_grad(aid, da);
    }
    if (bid >= 0) {
      Tensor db(bv.shape());
      for (int i = 0; i < B; ++i) {
        const float* go = gout.data() + int64_t(i) * m * n;
        const float* pa = av.data() + int64_t(i) * m * k;
        float* pdb = db.data() + int64_t(i) * (trans_b ? n * k : k * n);
        if (trans_b)  // y = A B^T -> dB = G^T A
          gemm(go, pa, pdb, n, m, k, true, false);
        else  // dB = A^T G
          gemm(pa, go, pdb, k, m, n, true, false);
      }
      gg.accum_grad(bid, db);
    }
  });
  return r;
}

// ----------------------------------------------------------------- norms --

Var rmsnorm(Graph& g, const Var& x, const Var& w, float eps) {
  const int c = x.dim(-1);
  check(w.rank() == 1 && w.dim(0) == c, "rmsnorm: weight shape");
  const int64_t rows = x.v.rows2d();
  Tensor out(x.shape());
  Tensor inv_r({int(rows)});
  for (int64_t r = 0; r < rows; ++r) {
    const float* px = x.v.data() + r * c;
    float* po = out.data() + r * c;
    double ss = 0;
    for (int i = 0; i < c; ++i) ss += double(px[i]) * px[i];
    float ir = 1.0f / std::sqrt(float(ss / c) + eps);
    inv_r.at(r) = ir;
    for (int i = 0; i < c; ++i) po[i] = px[i] * ir * w.v.at(i);
  }
  Var r{out, -1};
  if (!g.recording || (x.id < 0 && w.id < 0)) return r;
  int xid = x.id, wid = w.id;
  Tensor xv = x.v, wv = w.v;
  r.id = g.push(out, [xid, wid, xv, wv, inv_r, rows, c](Graph& gg, const Tensor& gout) {
    Tensor dx(xv.shape());
    Tensor dw({c});
    for (int64_t rr = 0; rr < rows; ++rr) {
      const float* px = xv.data() + rr * c;
      const float* pg = gout.data() + rr * c;
      float ir = inv_r.at(rr);
      double dot = 0;
      for (int i = 0; i < c; ++i) {
        float xh = px[i] * ir;
        dot += double(pg[i]) * wv.at(i) * xh;
        dw.at(i) += pg[i] * xh;
      }
      float m = float(dot / c);
      float* pdx = dx.data() + rr * c;
      for (int i = 0; i < c; ++i) {
        float xh = px[i] * ir;
        pdx[i] = ir * (pg[i] * wv.at(i) - xh * m);
      }
    }
    if (xid >= 0) gg.accum_grad(xid, dx);
    if (wid >= 0) gg.accum_grad(wid, dw);
  });
  return r;
}

Var layernorm(Graph& g, const Var& x, float eps) {
  const int c = x.dim(-1);
  const int64_t rows = x.v.rows2d();
  Tensor out(x.shape());
  Tensor inv_s({int(rows)});
  for (int64_t r = 0; r < rows; ++r) {
    const float* px = x.v.data() + r * c;
    float* po = out.data() + r * c;
    double mu = 0;
    for (int i = 0; i < c; ++i) mu += px[i];
    mu /= c;
    double var = 0;
    for (int i = 0; i < c; ++i) var += (px[i] - mu) * (px[i] - mu);
    var /= c;
    float is = 1.0f / std::sqrt(float(var) + eps);
    inv_s.at(r) = is;
    for (int i = 0; i < c; ++i) po[i] = (px[i] - float(mu)) * is;
  }
  Var r{out, -1};
  if (!g.recording || x.id < 0) return r;
  int xid = x.id;
  r.id = g.push(out, [xid, out, inv_s, rows, c](Graph& gg, const Tensor& gout) {
    Tensor dx(gout.shape());
    for (int64_t rr = 0; rr < rows; ++rr) {
      const float* xh = out.data() + rr * c;  // normalized values
      const float* pg = gout.data() + rr * c;
      double gm = 0, gxm = 0;
      for (int i = 0; i < c; ++i) {
        gm += pg[i];
        gxm += double(pg[i]) * xh[i];
      }
      gm /= c;
      gxm /= c;
      float is = inv_s.at(rr);
      float* pdx = dx.data() + rr * c;
      for (int i = 0; i < c; ++i) pdx[i] = is * (pg[i] - float(gm) - xh[i] * float(gxm));
    }
    gg.accum_grad(xid, dx);
  });
  return r;
}

Var softmax(Graph& g, const Var& x) {
  const int c = x.dim(-1);
  const int64_t rows = x.v.rows2d();
  Tensor out(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const float* px = x.v.data() + r * c;
    float* po = out.data() + r * c;
    float mx = px[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, px[i]);
    double s = 0;
    for (int i = 0; i < c; ++i) {
      po[i] = std::exp(px[i] - mx);
      s += po[i];
    }
    float inv = float(1.0 / s);
    for (int i = 0; i < c; ++i) po[i] *= inv;
  }
  Var r{out, -1};
  if (!g.recording || x.id < 0) return r;
  int xid = x.id;
  r.id = g.push(out, [xid, out, rows, c](Graph& gg, const Tensor& gout) {
    Tensor dx(gout.shape());
    for (int64_t rr = 0; rr < rows; ++rr) {
      const float* y = out.data() + rr * c;
      const float* pg = gout.data() + rr * c;
      double dot = 0;
      for (int i = 0; i < c; ++i) dot += double(pg[i]) * y[i];
      float* pdx = dx.data() + rr * c;
      for (int i = 0; i < c; ++i) pdx[i] = y[i] * (pg[i] - float(dot));
    }
    gg.accum_grad(xid, dx);
  });
  return r;
}

// ------------------------------------------------------------- shape ops --

Var reshape(Graph& g, const Var& a, std::vector<int> shape) {
  Tensor out = a.v.reshaped(shape);
  Var r{out, -1};
  if (!g.recording || a.id < 0) return r;
  int aid = a.id;
  std::vector<int> in_shape = a.shape();
  r.id = g.push(out, [aid, in_shape](Graph& gg, const Tensor& gout) {
    gg.accum_grad(aid, gout.reshaped(in_shape));
  });
  return r;
}

Var permute(Graph& g, const Var& a, std::vector<int> perm) {
  check(int(perm.size()) == a.rank(), "permute: rank mismatch");
  std::vector<int> out_shape(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = a.dim(perm[i]);
  Tensor out(out_shape);
  permute_copy(a.v, out, perm);
  Var r{out, -1};
  if (!g.recording || a.id < 0) return r;
  int aid = a.id;
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[size_t(perm[i])] = int(i);
  std::vector<int> in_shape = a.shape();
  r.id = g.push(out, [aid, inv, in_shape](Graph& gg, const Tensor& gout) {
    Tensor da(in_shape);
    permute_copy(gout, da, inv);
    gg.accum_grad(aid, da);
  });
  return r;
}

Var slice(Graph& g, const Var& a, int dim, int start, int len) {
  if (dim < 0) dim += a.rank();
  check(start >= 0 && len > 0 && start + len <= a.dim(dim), "slice: out of range");
  std::vector<int> out_shape = a.shape();
  out_shape[size_t(dim)] = len;
  Tensor out(out_shape);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= a.dim(i);
  for (int i = dim + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const int64_t in_stride = int64_t(a.dim(dim)) * inner;
  const int64_t out_stride = int64_t(len) * inner;
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * out_stride, a.v.data() + o * in_stride + start * inner,
                size_t(out_stride) * sizeof(float));
  Var r{out, -1};
  if (!g.recording || a.id < 0) return r;
  int aid = a.id;
  std::vector<int> in_shape = a.shape();
  r.id = g.push(out, [aid, in_shape, outer, inner, in_stride, out_stride, start](
                         Graph& gg, const Tensor& gout) {
    Tensor da(in_shape);
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(da.data() + o * in_stride + start * inner, gout.data() + o * out_stride,
                  size_t(out_stride) * sizeof(float));
    gg.accum_grad(aid, da);
  });
  return r;
}

Var concat(Graph& g, const std::vector<Var>& parts, int dim) {
  check(!parts.empty(), "concat: empty input");
  if (dim < 0) dim += parts[0].rank();
  std::vector<int> out_shape = parts[0].shape();
  int total = 0;
  for (const Var& p : parts) total += p.dim(dim);
  out_shape[size_t(dim)] = total;
  Tensor out(out_shape);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= out_shape[size_t(i)];
  for (int i = dim + 1; i < int(out_shape.size()); ++i) inner *= out_shape[size_t(i)];
  const int64_t out_stride = int64_t(total) * inner;
  int64_t off = 0;
  std::vector<int> lens;
  for (const Var& p : parts) {
    const int64_t ps = int64_t(p.dim(dim)) * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * out_stride + off, p.v.data() + o * ps,
                  size_t(ps) * sizeof(float));
    off += ps;
    lens.push_back(p.dim(dim));
  }
  Var r{out, -1};
  bool any = false;
  for (const Var& p : parts) any |= p.id >= 0;
  if (!g.recording || !any) return r;
  std::vector<int> ids;
  std::vector<std::vector<int>> shapes;
  for (const Var& p : parts) {
    ids.push_back(p.id);
    shapes.push_back(p.shape());
  }
  r.id = g.push(out, [ids, shapes, lens, outer, inner, out_stride](Graph& gg, const Tensor& gout) {
    int64_t off2 = 0;
    for (size_t pi = 0; pi < ids.size(); ++pi) {
      const int64_t ps = int64_t(lens[pi]) * inner;
      if (ids[pi] >= 0) {
        Tensor dp(shapes[pi]);
        for (int64_t o = 0; o < outer; ++o)
          std::memcpy(dp.data() + o * ps, gout.data() + o * out_stride + off2,
                      size_t(ps) * sizeof(float));
        gg.accum_grad(ids[pi], dp);
      }
      off2 += ps;
    }
  });
  return r;
}

Var detach(Graph& g, const Var& a) { return g.constant(a.v); }

// ------------------------------------------------------------ reductions --

Var sum_all(Graph& g, const Var& a) {
  double s = 0;
  for (int64_t i = 0; i < a.v.numel(); ++i) s += a.v.at(i);
  Tensor out = Tensor::full({1}, float(s));
  Var r{out, -1};
  if (!g.recording || a.id < 0) return r;
  int aid = a.id;
  std::vector<int> in_shape = a.shape();
  r.id = g.push(out, [aid, in_shape](Graph& gg, const Tensor& gout) {
    Tensor da(in_shape);
    da.fill(gout.at(0));
    gg.accum_grad(aid, da);
  });
  return r;
}

Var mean_all(Graph& g, const Var& a) {
  return scale(g, sum_all(g, a), 1.0f / float(a.v.numel()));
}

// -------------------------------------------------------- structured ops --

namespace {

// im2col for stride-1 'same' zero padding; cols is [H*W, kh*kw*Ci].
void im2col(const float* x, int H, int W, int Ci, int kh, int kw, float* cols) {
  const int ph = kh / 2, pw = kw / 2;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      float* row = cols + (int64_t(i) * W + j) * kh * kw * Ci;
      for (int a = 0; a < kh; ++a) {
        int ii = i + a - ph;
        for (int b = 0; b < kw; ++b) {
          int jj = j + b - pw;
          float* dst = row + (a * kw + b) * Ci;
          if (ii < 0 || ii >= H || jj < 0 || jj >= W) {
            std::memset(dst, 0, size_t(Ci) * sizeof(float));
          } else {
            std::memcpy(dst, x + (int64_t(ii) * W + jj) * Ci, size_t(Ci) * sizeof(float));
          }
        }
      }
    }
}

void col2im_add(const float* cols, int H, int W, int Ci, int kh, int kw, float* x) {
  const int ph = kh / 2, pw = kw / 2;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      const float* row = cols + (int64_t(i) * W + j) * kh * kw * Ci;
      for (int a = 0; a < kh; ++a) {
        int ii = i + a - ph;
        if (ii < 0 || ii >= H) continue;
        for (int b = 0; b < kw; ++b) {
          int jj = j + b - pw;
          if (jj < 0 || jj >= W) continue;
          const float* src = row + (a * kw + b) * Ci;
          float* dst = x + (int64_t(ii) * W + jj) * Ci;
          for (int c = 0; c < Ci; ++c) dst[c] += src[c];
        }
      }
    }
}

}  // namespace

Var conv2d(Graph& g, const Var& x, const Var& w, const Var& bias) {
  check(x.rank() == 4 && w.rank() == 4, "conv2d: x [N,H,W,Ci], w [kh,kw,Ci,Co]");
  const int N = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const int kh = w.dim(0), kw = w.dim(1), Co = w.dim(3);
  check(w.dim(2) == Ci, "conv2d: channel mismatch");
  check(bias.rank() == 1 && bias.dim(0) == Co, "conv2d: bias shape");
  const int64_t colsz = int64_t(H) * W * kh * kw * Ci;
  Tensor out({N, H, W, Co});
  std::vector<float> cols(static_cast<size_t>(colsz));
  for (int n = 0; n < N; ++n) {
    im2col(x.v.data() + int64_t(n) * H * W * Ci, H, W, Ci, kh, kw, cols.data());
    gemm(cols.data(), w.v.data(), out.data() + int64_t(n) * H * W * Co, int64_t(H) * W,
         int64_t(kh) * kw * Ci, Co);
  }
  float* po = out.data();
  for (int64_t rc = 0; rc < int64_t(N) * H * W; ++rc)
    for (int c = 0; c < Co; ++c) po[rc * Co + c] += bias.v.at(c);
  Var r{out, -1};
  if (!g.recording || (x.id < 0 && w.id < 0 && bias.id < 0)) return r;
  int xid = x.id, wid = w.id, bid = bias.id;
  Tensor xv = x.v, wv = w.v;
  r.id = g.push(out, [=](Graph& gg, const Tensor& gout) {
    std::vector<float> cols2(static_cast<size_t>(colsz));
    Tensor dw(wv.shape());
    Tensor dx(xv.shape());
    Tensor db({Co});
    for (int n = 0; n < N; ++n) {
      const float* go = gout.data() + int64_t(n) * H * W * Co;
      if (wid >= 0) {
        im2col(xv.data() + int64_t(n) * H * W * Ci, H, W, Ci, kh, kw, cols2.data());
        gemm(cols2.data(), go, dw.data(), int64_t(kh) * kw * Ci, int64_t(H) * W, Co, true, false,
             true);
      }
      if (xid >= 0) {
        gemm(go, wv.data(), cols2.data(), int64_t(H) * W, Co, int64_t(kh) * kw * Ci, false, true);
        col2im_add(cols2.data(), H, W, Ci, kh, kw, dx.data() + int64_t(n) * H * W * Ci);
      }
      if (bid >= 0)
        for (int64_t rc = 0; rc < int64_t(H) * W; ++rc)
          for (int c = 0; c < Co; ++c) db.at(c) += go[rc * Co + c];
    }
    if (xid >= 0) gg.accum_grad(xid, dx);
    if (wid >= 0) gg.accum_grad(wid, dw);
    if (bid >= 0) gg.accum_grad(bid, db);
  });
  return r;
}

Var depthwise_conv_const(Graph& g, const Var& x, const Tensor& kernel) {
  check(x.rank() == 4, "depthwise_conv_const: x [N,H,W,C]");
  check(kernel.rank() == 2, "depthwise_conv_const: kernel [k,k]");
  const int N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const int kh = kernel.dim(0), kw = kernel.dim(1);
  check(H >= kh && W >= kw, "depthwise_conv_const: window larger than image");
  const int Ho = H - kh + 1, Wo = W - kw + 1;
  Tensor out({N, Ho, Wo, C});
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j) {
        float* po = out.data() + ((int64_t(n) * Ho + i) * Wo + j) * C;
        for (int a = 0; a < kh; ++a)
          for (int b = 0; b < kw; ++b) {
            const float kv = kernel.at(int64_t(a) * kw + b);
            const float* px = x.v.data() + ((int64_t(n) * H + i + a) * W + j + b) * C;
            for (int c = 0; c < C; ++c) po[c] += kv * px[c];
          }
      }
  Var r{out, -1};
  if (!g.recording || x.id < 0) return r;
  int xid = x.id;
  std::vector<int> in_shape = x.shape();
  Tensor kern = kernel;
  r.id = g.push(out, [=](Graph& gg, const Tensor& gout) {
    Tensor dx(in_shape);
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          const float* go = gout.data() + ((int64_t(n) * Ho + i) * Wo + j) * C;
          for (int a = 0; a < kh; ++a)
            for (int b = 0; b < kw; ++b) {
              const float kv = kern.at(int64_t(a) * kw + b);
              float* pdx = dx.data() + ((int64_t(n) * H + i + a) * W + j + b) * C;
              for (int c = 0; c < C; ++c) pdx[c] += kv * go[c];
            }
        }
    gg.accum_grad(xid, dx);
  });
  return r;
}

Var pixel_shuffle(Graph& g, const Var& x, int r2) {
  check(x.rank() == 4, "pixel_shuffle: x [N,h,w,C*r*r]");
  const int N = x.dim(0), h = x.dim(1), w = x.dim(2), Cin = x.dim(3);
  check(Cin % (r2 * r2) == 0, "pixel_shuffle: channels not divisible by r^2");
  const int C = Cin / (r2 * r2);
  Tensor out({N, h * r2, w * r2, C});
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const float* px = x.v.data() + ((int64_t(n) * h + i) * w + j) * Cin;
        for (int dy = 0; dy < r2; ++dy)
          for (int dx = 0; dx < r2; ++dx) {
            float* po = out.data() +
                        ((int64_t(n) * h * r2 + i * r2 + dy) * (w * r2) + j * r2 + dx) * C;
            std::memcpy(po, px + (dy * r2 + dx) * C, size_t(C) * sizeof(float));
          }
      }
  Var rv{out, -1};
  if (!g.recording || x.id < 0) return rv;
  int xid = x.id;
  std::vector<int> in_shape = x.shape();
  rv.id = g.push(out, [=](Graph& gg, const Tensor& gout) {
    Tensor dx(in_shape);
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          float* pdx = dx.data() + ((int64_t(n) * h + i) * w + j) * Cin;
          for (int dy = 0; dy < r2; ++dy)
            for (int dx2 = 0; dx2 < r2; ++dx2) {
              const float* po = gout.data() +
                                ((int64_t(n) * h * r2 + i * r2 + dy) * (w * r2) + j * r2 + dx2) * C;
              std::memcpy(pdx + (dy * r2 + dx2) * C, po, size_t(C) * sizeof(float));
            }
        }
    gg.accum_grad(xid, dx);
  });
  return rv;
}

Var rotary(Graph& g, const Var& x, const Tensor& cos_t, const Tensor& sin_t) {
  check(x.rank() == 3, "rotary: x [V,T,C]");
  const int V = x.dim(0), T = x.dim(1), C = x.dim(2);
  check(C % 2 == 0, "rotary: channels must be even");
  const int hp = C / 2;
  tensor_check_shape(cos_t, {T, hp}, "rotary cos");
  tensor_check_shape(sin_t, {T, hp}, "rotary sin");
  Tensor out({V, T, C});
  for (int v = 0; v < V; ++v)
    for (int t = 0; t < T; ++t) {
      const float* px = x.v.data() + (int64_t(v) * T + t) * C;
      float* po = out.data() + (int64_t(v) * T + t) * C;
      const float* pc = cos_t.data() + int64_t(t) * hp;
      const float* ps = sin_t.data() + int64_t(t) * hp;
      for (int i = 0; i < hp; ++i) {
        float x0 = px[2 * i], x1 = px[2 * i + 1];
        po[2 * i] = pc[i] * x0 - ps[i] * x1;
        po[2 * i + 1] = ps[i] * x0 + pc[i] * x1;
      }
    }
  Var r{out, -1};
  if (!g.recording || x.id < 0) return r;
  int xid = x.id;
  Tensor ct = cos_t, st = sin_t;
  r.id = g.push(out, [=](Graph& gg, const Tensor& gout) {
    Tensor dx({V, T, C});
    for (int v = 0; v < V; ++v)
      for (int t = 0; t < T; ++t) {
        const float* pg = gout.data() + (int64_t(v) * T + t) * C;
        float* pdx = dx.data() + (int64_t(v) * T + t) * C;
        const float* pc = ct.data() + int64_t(t) * hp;
        const float* ps = st.data() + int64_t(t) * hp;
        for (int i = 0; i < hp; ++i) {
          float g0 = pg[2 * i], g1 = pg[2 * i + 1];
          pdx[2 * i] = pc[i] * g0 + ps[i] * g1;
          pdx[2 * i + 1] = -ps[i] * g0 + pc[i] * g1;
        }
      }
    gg.accum_grad(xid, dx);
  });
  return r;
}

namespace {

void group4_apply(const Tensor& src, const Tensor& mats, bool tr, Tensor& dst) {
  const int V = src.dim(0), T = src.dim(1), C = src.dim(2);
  const int ng = C / 4;
  for (int v = 0; v < V; ++v) {
    const float* M = mats.data() + int64_t(v) * 16;
    for (int t = 0; t < T; ++t) {
      const float* px = src.data() + (int64_t(v) * T + t) * C;
      float* po = dst.data() + (int64_t(v) * T + t) * C;
      for (int gi = 0; gi < ng; ++gi) {
        const float* xi = px + gi * 4;
        float* yo = po + gi * 4;
        for (int i = 0; i < 4; ++i) {
          float s = 0;
          for (int j = 0; j < 4; ++j) s += (tr ? M[j * 4 + i] : M[i * 4 + j]) * xi[j];
          yo[i] = s;
        }
      }
    }
  }
}

}  // namespace

Var group4_transform(Graph& g, const Var& x, const Tensor& mats, bool transpose) {
  check(x.rank() == 3, "group4_transform: x [V,T,C]");
  const int V = x.dim(0), T = x.dim(1), C = x.dim(2);
  check(C % 4 == 0, "group4_transform: channels must be divisible by 4");
  tensor_check_shape(mats, {V, 4, 4}, "group4 mats");
  Tensor out({V, T, C});
  group4_apply(x.v, mats, transpose, out);
  Var r{out, -1};
  if (!g.recording || x.id < 0) return r;
  int xid = x.id;
  Tensor ms = mats;
  // d/dx of (M x) is M^T g; of (M^T x) is M g.
  r.id = g.push(out, [xid, ms, V, T, C, transpose](Graph& gg, const Tensor& gout) {
    Tensor dx({V, T, C});
    group4_apply(gout, ms, !transpose, dx);
    gg.accum_grad(xid, dx);
  });
  return r;
}

// ----------------------------------------------------------- convenience --

Var linear(Graph& g, const Var& x, const Var& w, const Var& b) {
  return add(g, matmul(g, x, w), b);
}

Var mse_loss(Graph& g, const Var& a, const Var& b) {
  Var d = sub(g, a, b);
  return mean_all(g, mul(g, d, d));
}

Var l1_loss(Graph& g, const Var& a, const Var& b) {
  return mean_all(g, abs_(g, sub(g, a, b)));
}

}  // namespace gld::ad
