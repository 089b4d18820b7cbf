#include <benchmark/benchmark.h>

#include <filesystem>

#include "cvq/car.hpp"
#include "cvq/config.hpp"
#include "cvq/datasets.hpp"
#include "cvq/quantizer.hpp"
#include "cvq/rng.hpp"
#include "cvq/training.hpp"

using namespace cvq;

namespace {

Tensor uniform(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v));
}

// Default geometry: batch 32, 4x4 grid, 16 channels.
void BM_LookupPatch(benchmark::State& state) {
  Rng rng(1);
  const auto N = static_cast<std::size_t>(state.range(0));
  const LatentGrid z(uniform({32, 4, 4, 16}, rng));
  const Codebook cb(Axis::Patch, uniform({N, 16}, rng));
  const Tensor tokens = z.patch_view();
  for (auto _ : state) benchmark::DoNotOptimize(lookup(tokens, cb));
  state.SetItemsProcessed(state.iterations() * 512);
}
BENCHMARK(BM_LookupPatch)->Arg(64)->Arg(512)->Arg(4096);

void BM_LookupChannel(benchmark::State& state) {
  Rng rng(2);
  const auto N = static_cast<std::size_t>(state.range(0));
  const LatentGrid z(uniform({32, 4, 4, 16}, rng));
  const Codebook cb(Axis::Channel, uniform({N, 16}, rng));
  const Tensor tokens = z.channel_view();
  for (auto _ : state) benchmark::DoNotOptimize(lookup(tokens, cb));
  state.SetItemsProcessed(state.iterations() * 512);
}
BENCHMARK(BM_LookupChannel)->Arg(64)->Arg(512)->Arg(4096);

void BM_LookupFrobenius(benchmark::State& state) {
  Rng rng(3);
  const LatentGrid z(uniform({32, 4, 4, 16}, rng));
  const Codebook cb(Axis::Channel, uniform({512, 16}, rng));
  for (auto _ : state) benchmark::DoNotOptimize(lookup_frobenius(z, cb));
}
BENCHMARK(BM_LookupFrobenius);

void BM_Matmul(benchmark::State& state) {
  Rng rng(4);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = uniform({n, n}, rng), b = uniform({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_TokenizerStep(benchmark::State& state) {
  RunConfig c;
  c.corpus_count = 400;
  c.axis = state.range(0) == 0 ? "patch" : "channel";
  c.nested_dropout = state.range(0) != 0;
  const auto dir = std::filesystem::temp_directory_path() / "cvq_bench_corpus";
  if (!std::filesystem::exists(dir / "manifest.json")) generate_corpus(c.corpus(), dir);
  const Dataset data = Dataset::load(dir);
  TokenizerTrainer trainer(c, data);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step());
  state.SetLabel(c.axis);
}
BENCHMARK(BM_TokenizerStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_CarStep(benchmark::State& state) {
  const RunConfig rc;
  CarConfig cfg = rc.car();
  Rng rng(5);
  const std::size_t N = cfg.geometry.codebook_size;
  const Tensor cb = uniform({N, cfg.token_dim()}, rng);
  std::vector<TokenSequence> batch(32);
  for (auto& s : batch) {
    for (std::size_t k = 0; k < cfg.geometry.channels; ++k)
      s.indices.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(N - 1))));
  }
  CarModel m(cfg, 6);
  Adam opt(m.parameters(), rc.car_optimizer());
  for (auto _ : state) benchmark::DoNotOptimize(car_train_step(m, opt, batch, cb));
}
BENCHMARK(BM_CarStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
