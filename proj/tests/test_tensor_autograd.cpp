#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "gld/autograd.hpp"
#include "gld/nn.hpp"
#include "gld/rng.hpp"
#include "gld/tensor.hpp"
#include "test_util.hpp"

using namespace gld;
using ad::Graph;
using ad::Var;

namespace {

// Scalarizes an op through a fixed random weighting, then compares every
// input gradient against central differences.
void check_grads(const std::function<Var(Graph&, const std::vector<Var>&)>& fn,
                 std::vector<Tensor> inputs, uint64_t seed, double tol = 5e-2,
                 double h = 1e-2) {
  Graph g;
  std::vector<Var> vars;
  for (Tensor& t : inputs) vars.push_back(g.leaf(t));
  Var out = fn(g, vars);
  Rng wrng(seed * 2654435761ull + 1);
  Tensor w = Tensor::randn(out.shape(), wrng);
  Var loss = ad::sum_all(g, ad::mul(g, out, g.constant(w)));
  g.backward(loss);

  auto loss_value = [&]() {
    Graph g2;
    g2.recording = true;
    std::vector<Var> vs;
    for (Tensor& t : inputs) vs.push_back(g2.leaf(t));
    Var o = fn(g2, vs);
    double acc = 0;
    for (int64_t i = 0; i < o.v.numel(); ++i) acc += double(o.v.at(i)) * double(w.at(i));
    return acc;
  };

  for (size_t k = 0; k < inputs.size(); ++k) {
    Tensor grad = g.leaf_grad(inputs[k]);
    REQUIRE(grad.defined());
    for (int64_t i = 0; i < inputs[k].numel(); ++i) {
      const float keep = inputs[k].at(i);
      inputs[k].at(i) = keep + float(h);
      const double up = loss_value();
      inputs[k].at(i) = keep - float(h);
      const double dn = loss_value();
      inputs[k].at(i) = keep;
      const double fd = (up - dn) / (2 * h);
      const double an = grad.at(i);
      const double err = std::fabs(fd - an) / std::max({1.0, std::fabs(fd), std::fabs(an)});
      INFO("input " << k << " elem " << i << " analytic " << an << " fd " << fd);
      CHECK(err < tol);
    }
  }
}

Tensor rand_t(std::vector<int> shape, uint64_t seed, float std = 1.0f) {
  Rng rng(seed);
  return Tensor::randn(std::move(shape), rng, std);
}

Tensor rand_pos(std::vector<int> shape, uint64_t seed, float lo = 0.5f, float hi = 2.0f) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = lo + float(rng.uniform()) * (hi - lo);
  return t;
}

}  // namespace

TEST_CASE("tensor storage semantics") {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor alias = a;
  alias.at(0) = 42.0f;
  CHECK(a.at(0) == 42.0f);

  Tensor deep = a.clone();
  deep.at(1) = -1.0f;
  CHECK(a.at(1) == 2.0f);

  Tensor view = a.reshaped({3, 2});
  view.at(5) = 9.0f;
  CHECK(a.at(5) == 9.0f);
  CHECK(view.rank() == 2);
  CHECK(view.dim(0) == 3);

  Tensor f = Tensor::full({4}, 0.25f);
  CHECK(f.at(3) == 0.25f);
  CHECK(Tensor::scalar(2.0f).numel() == 1);
  CHECK(a.dim(-1) == 3);
  CHECK(a.rows2d() == 2);
}

TEST_CASE("tensor_check_shape exact, wildcard and failure modes") {
  Tensor t({2, 5, 7});
  CHECK_NOTHROW(tensor_check_shape(t, {2, 5, 7}, "t"));
  CHECK_NOTHROW(tensor_check_shape(t, {-1, 5, 7}, "t"));
  CHECK_NOTHROW(tensor_check_shape(t, {-1, -1, -1}, "t"));
  CHECK_THROWS_AS(tensor_check_shape(t, {2, 5, 8}, "t"), Error);
  CHECK_THROWS_AS(tensor_check_shape(t, {2, 5}, "t"), Error);
  CHECK_THROWS_AS(tensor_check_shape(t, {-1, 4, 7}, "t"), Error);
  CHECK_THROWS_AS(tensor_check_shape(Tensor(), {1}, "undef"), Error);
}

TEST_CASE("rng streams are deterministic and well ranged") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(std::isfinite(c.normal()));
  }

  Rng p1(9), p2(9);
  Rng f1 = p1.fork(3), f2 = p2.fork(3);
  CHECK(f1.next_u64() == f2.next_u64());
  Rng f3 = p1.fork(4);
  CHECK(f3.next_u64() != f2.next_u64());

  CHECK(testutil::bit_equal(rand_t({3, 3}, 5), rand_t({3, 3}, 5)));
  CHECK_FALSE(testutil::bit_equal(rand_t({3, 3}, 5), rand_t({3, 3}, 6)));
}

TEST_CASE("gemm against a hand-computed product") {
  // [2x3] x [3x2]
  const float a[] = {1, 2, 3, 4, 5, 6};
  const float b[] = {7, 8, 9, 10, 11, 12};
  float c[4] = {0, 0, 0, 0};
  gemm(a, b, c, 2, 3, 2);
  CHECK(c[0] == doctest::Approx(58));
  CHECK(c[1] == doctest::Approx(64));
  CHECK(c[2] == doctest::Approx(139));
  CHECK(c[3] == doctest::Approx(154));
  gemm(a, b, c, 2, 3, 2, false, false, true);
  CHECK(c[0] == doctest::Approx(116));
}

TEST_CASE("elementwise op gradients") {
  auto unary = [](Var (*op)(Graph&, const Var&)) {
    return [op](Graph& g, const std::vector<Var>& v) { return op(g, v[0]); };
  };
  check_grads(unary(&ad::silu), {rand_t({3, 4}, 1)}, 11);
  check_grads(unary(&ad::gelu), {rand_t({3, 4}, 2)}, 12);
  check_grads(unary(&ad::sigmoid), {rand_t({3, 4}, 3)}, 13);
  check_grads(unary(&ad::softplus), {rand_t({3, 4}, 4)}, 14);
  check_grads(unary(&ad::neg), {rand_t({3, 4}, 5)}, 15);
  check_grads(unary(&ad::log_), {rand_pos({3, 4}, 6)}, 16);
  check_grads(unary(&ad::rsqrt), {rand_pos({3, 4}, 7)}, 17);
  check_grads(unary(&ad::recip), {rand_pos({3, 4}, 8)}, 18);
  // keep |x| well away from the kink
  check_grads(unary(&ad::abs_), {rand_pos({3, 4}, 9, 0.5f, 2.0f)}, 19);

  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::add(g, v[0], v[1]); },
              {rand_t({2, 3}, 21), rand_t({2, 3}, 22)}, 20);
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::sub(g, v[0], v[1]); },
              {rand_t({2, 3}, 23), rand_t({2, 3}, 24)}, 25);
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::mul(g, v[0], v[1]); },
              {rand_t({2, 3}, 26), rand_t({2, 3}, 27)}, 28);
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::scale(g, v[0], 1.7f); },
              {rand_t({2, 3}, 29)}, 30);

  // rank-1 and scalar broadcasts on the rhs
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::mul(g, v[0], v[1]); },
              {rand_t({2, 3, 4}, 31), rand_t({4}, 32)}, 33);
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::add(g, v[0], v[1]); },
              {rand_t({2, 3}, 34), rand_t({1}, 35)}, 36);
}

TEST_CASE("matmul and bmm gradients") {
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::matmul(g, v[0], v[1]); },
              {rand_t({3, 4}, 41), rand_t({4, 2}, 42)}, 40);
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::matmul(g, v[0], v[1]); },
              {rand_t({2, 3, 4}, 43), rand_t({4, 5}, 44)}, 45);
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::bmm(g, v[0], v[1]); },
              {rand_t({2, 3, 4}, 46), rand_t({2, 4, 5}, 47)}, 48);
  check_grads(
      [](Graph& g, const std::vector<Var>& v) { return ad::bmm(g, v[0], v[1], true); },
      {rand_t({2, 3, 4}, 49), rand_t({2, 5, 4}, 50)}, 51);
  check_grads([](Graph& g, const std::vector<Var>& v) {
    return ad::linear(g, v[0], v[1], v[2]);
  }, {rand_t({3, 4}, 52), rand_t({4, 2}, 53), rand_t({2}, 54)}, 55);
}

TEST_CASE("normalization and softmax gradients") {
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::rmsnorm(g, v[0], v[1]); },
              {rand_t({3, 6}, 61), rand_t({6}, 62)}, 60, 5e-2, 5e-3);
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::layernorm(g, v[0]); },
              {rand_t({3, 6}, 63)}, 64, 5e-2, 5e-3);
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::softmax(g, v[0]); },
              {rand_t({3, 6}, 65)}, 66, 5e-2, 5e-3);
}

TEST_CASE("shape op gradients") {
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::reshape(g, v[0], {6, 2}); },
              {rand_t({3, 4}, 71)}, 70);
  check_grads(
      [](Graph& g, const std::vector<Var>& v) { return ad::permute(g, v[0], {2, 0, 1}); },
      {rand_t({2, 3, 4}, 72)}, 73);
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::slice(g, v[0], 1, 1, 2); },
              {rand_t({3, 4}, 74)}, 75);
  check_grads(
      [](Graph& g, const std::vector<Var>& v) { return ad::concat(g, {v[0], v[1]}, 1); },
      {rand_t({3, 2}, 76), rand_t({3, 3}, 77)}, 78);
}

TEST_CASE("reduction and loss gradients") {
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::sum_all(g, v[0]); },
              {rand_t({3, 4}, 81)}, 80);
  check_grads([](Graph& g, const std::vector<Var>& v) { return ad::mean_all(g, v[0]); },
              {rand_t({3, 4}, 82)}, 83);
  check_grads([](Graph& g, const std::vector<Var>& v) {
    return ad::mse_loss(g, v[0], v[1]);
  }, {rand_t({3, 4}, 84), rand_t({3, 4}, 85)}, 86);
  // keep the difference away from zero where l1 is non-smooth
  check_grads([](Graph& g, const std::vector<Var>& v) {
    return ad::l1_loss(g, v[0], v[1]);
  }, {rand_pos({3, 4}, 87, 2.0f, 3.0f), rand_pos({3, 4}, 88, 0.1f, 0.9f)}, 89);

  Graph g;
  Tensor a = Tensor::from({2}, {1.0f, 3.0f});
  Tensor b = Tensor::from({2}, {0.0f, 1.0f});
  Var l = ad::mse_loss(g, g.leaf(a), g.constant(b));
  CHECK(l.v.at(0) == doctest::Approx(2.5));
}

TEST_CASE("structured op gradients") {
  check_grads([](Graph& g, const std::vector<Var>& v) {
    return ad::conv2d(g, v[0], v[1], v[2]);
  }, {rand_t({1, 5, 5, 2}, 91), rand_t({3, 3, 2, 3}, 92, 0.5f), rand_t({3}, 93)}, 90);

  Rng krng(94);
  Tensor kernel = Tensor::randn({3, 3}, krng, 0.3f);
  check_grads([kernel](Graph& g, const std::vector<Var>& v) {
    return ad::depthwise_conv_const(g, v[0], kernel);
  }, {rand_t({1, 5, 5, 2}, 95)}, 96);

  check_grads([](Graph& g, const std::vector<Var>& v) {
    return ad::pixel_shuffle(g, v[0], 2);
  }, {rand_t({1, 2, 2, 12}, 97)}, 98);

  Rng rrng(99);
  Tensor cos_t = Tensor::randn({4, 3}, rrng, 0.5f);
  Tensor sin_t = Tensor::randn({4, 3}, rrng, 0.5f);
  check_grads([cos_t, sin_t](Graph& g, const std::vector<Var>& v) {
    return ad::rotary(g, v[0], cos_t, sin_t);
  }, {rand_t({2, 4, 6}, 100)}, 101);

  Rng mrng(102);
  Tensor mats = Tensor::randn({2, 4, 4}, mrng, 0.4f);
  check_grads([mats](Graph& g, const std::vector<Var>& v) {
    return ad::group4_transform(g, v[0], mats, false);
  }, {rand_t({2, 3, 8}, 103)}, 104);
  check_grads([mats](Graph& g, const std::vector<Var>& v) {
    return ad::group4_transform(g, v[0], mats, true);
  }, {rand_t({2, 3, 8}, 105)}, 106);
}

TEST_CASE("shared leaves accumulate and detach blocks gradients") {
  Graph g;
  Tensor w = Tensor::from({2}, {1.0f, 2.0f});
  Var lw1 = g.leaf(w);
  Var lw2 = g.leaf(w);
  CHECK(lw1.id == lw2.id);
  Var loss = ad::sum_all(g, ad::add(g, lw1, lw2));
  g.backward(loss);
  Tensor grad = g.leaf_grad(w);
  REQUIRE(grad.defined());
  CHECK(grad.at(0) == doctest::Approx(2.0));
  CHECK(grad.at(1) == doctest::Approx(2.0));

  Graph g2;
  Tensor w2 = Tensor::from({2}, {1.0f, 2.0f});
  Var detached = ad::detach(g2, g2.leaf(w2));
  Var loss2 = ad::sum_all(g2, detached);
  g2.backward(loss2);
  CHECK_FALSE(g2.leaf_grad(w2).defined());
}

TEST_CASE("attention is equivariant to view order") {
  const int V = 3, T = 8, C = 16;
  Rng rng(2718);
  nn::ParamStore store;
  nn::Attention attn(store, "attn", C, 4, rng);
  Tensor x = Tensor::randn({V, T, C}, rng);

  Graph g;
  g.recording = false;
  Tensor base = attn.global(g, g.constant(x), {}).v;

  const std::vector<int> perm = {2, 0, 1};
  Tensor xp({V, T, C});
  for (int v = 0; v < V; ++v)
    std::memcpy(xp.data() + int64_t(v) * T * C, x.data() + int64_t(perm[size_t(v)]) * T * C,
                sizeof(float) * size_t(T) * size_t(C));
  Graph g2;
  g2.recording = false;
  Tensor out_p = attn.global(g2, g2.constant(xp), {}).v;

  double worst = 0;
  for (int v = 0; v < V; ++v)
    for (int64_t i = 0; i < int64_t(T) * C; ++i)
      worst = std::max(worst, double(std::fabs(out_p.at(int64_t(v) * T * C + i) -
                                               base.at(int64_t(perm[size_t(v)]) * T * C + i))));
  CHECK(worst < 1e-5);
}
