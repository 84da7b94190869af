#include <benchmark/benchmark.h>

#include "gld/autograd.hpp"
#include "gld/cameraops.hpp"
#include "gld/config.hpp"
#include "gld/geoenc.hpp"
#include "gld/mvdiff.hpp"
#include "gld/nn.hpp"

namespace {

using namespace gld;

void BM_Gemm(benchmark::State& state) {
  const int n = int(state.range(0));
  Rng rng(1);
  const Tensor a = Tensor::randn({n, n}, rng);
  const Tensor w = Tensor::randn({n, n}, rng);
  ad::Graph g;
  g.recording = false;
  for (auto _ : state) {
    ad::Var out = ad::matmul(g, g.constant(a), g.constant(w));
    benchmark::DoNotOptimize(out.v.data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * 2 * n * int64_t(n) * n);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256);

void BM_AttentionGlobal(benchmark::State& state) {
  const int T = int(state.range(0));
  const int V = 4, C = 64;
  Rng rng(2);
  nn::ParamStore params;
  nn::Attention attn(params, "attn", C, 4, rng);
  const Tensor x = Tensor::randn({V, T, C}, rng);
  ad::Graph g;
  g.recording = false;
  for (auto _ : state) {
    ad::Var out = attn.global(g, g.constant(x));
    benchmark::DoNotOptimize(out.v.data());
  }
}
BENCHMARK(BM_AttentionGlobal)->Arg(64)->Arg(256);

void BM_EncoderForward(benchmark::State& state) {
  const ExperimentConfig cfg = ExperimentConfig::smoke();
  GeoModel enc(cfg.enc, cfg.data.image_size, 3);
  Rng rng(4);
  const Tensor images =
      Tensor::randn({cfg.data.views, cfg.data.image_size, cfg.data.image_size, 3}, rng, 0.25f);
  for (auto _ : state) {
    MultiLevelFeatures f = enc.encode_frozen(images);
    benchmark::DoNotOptimize(f.levels.back().data());
  }
}
BENCHMARK(BM_EncoderForward);

void BM_DenoiserVelocity(benchmark::State& state) {
  const ExperimentConfig cfg = ExperimentConfig::smoke();
  GeoModel enc(cfg.enc, cfg.data.image_size, 3);
  DiffusionModel model(cfg.diff, cfg.enc.dim, enc.grid(), false, 5);
  Rng rng(6);
  const int V = cfg.data.views / 2, T = enc.grid() * enc.grid(), C = cfg.enc.dim;
  const Tensor feats = Tensor::randn({1, T, C}, rng);
  std::vector<CameraPose> poses;
  Rng prng(7);
  SceneGenConfig sg;
  sg.image_size = cfg.data.image_size;
  poses = make_trajectory(TrajectoryKind::kOrbit, V, prng, sg);
  const ConditionInputs cond =
      build_condition(feats, {0}, V, poses, cfg.data.image_size, enc.grid(), false);
  const Tensor z = Tensor::randn({V, T, C}, rng);
  for (auto _ : state) {
    Tensor u = model.predict_velocity(z, cond, 0.5);
    benchmark::DoNotOptimize(u.data());
  }
}
BENCHMARK(BM_DenoiserVelocity);

}  // namespace

BENCHMARK_MAIN();
