#include <benchmark/benchmark.h>

#include <vector>

#include "mile/losses.hpp"
#include "mile/model.hpp"
#include "mile/ops.hpp"
#include "mile/rng.hpp"
#include "mile/trainer.hpp"

using namespace mile;

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// x [rows x dim] times W^T, the shape of every projection in the model.
void BM_Linear(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto dim = static_cast<std::size_t>(state.range(1));
  const Tensor x({rows, dim}, normals(rows * dim, 1));
  const Tensor w({dim, dim}, normals(dim * dim, 2));
  NoGradScope no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(ops::linear(x, w));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows * dim * dim));
}
BENCHMARK(BM_Linear)->Args({256, 64})->Args({512, 64})->Args({512, 176})->Args({2048, 64});

void BM_TokenLoss(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const LossSpec spec{static_cast<LossKind>(state.range(1)), 1.0};
  const auto z = normals(n, 3);
  for (auto _ : state) benchmark::DoNotOptimize(token_loss(z, 7, spec));
  state.SetLabel(std::string(to_string(spec.kind)));
}
BENCHMARK(BM_TokenLoss)
    ->ArgsProduct({{64, 512, 4096},
                   {static_cast<int>(LossKind::kCrossEntropy), static_cast<int>(LossKind::kFocal),
                    static_cast<int>(LossKind::kMiLe)}});

void BM_LossGrad(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const LossSpec spec{LossKind::kMiLe, 1.0, static_cast<FactorGrad>(state.range(1))};
  const auto z = normals(n, 4);
  for (auto _ : state) benchmark::DoNotOptimize(loss_grad(z, 7, spec));
  state.SetLabel(std::string(to_string(spec.factor_grad)));
}
BENCHMARK(BM_LossGrad)->ArgsProduct({{512, 4096}, {0, 1}});

// One forward + backward of the tiny model at batch B.
void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg;
  const auto batch = static_cast<std::size_t>(state.range(0));
  ModelParams params = init_model(cfg);
  Rng rng(5);
  std::vector<TokenId> seqs(batch * (cfg.seq_len + 1));
  for (TokenId& t : seqs) t = static_cast<TokenId>(rng.below(cfg.vocab_size));
  const LmBatch b = make_lm_batch(seqs, batch, cfg.seq_len + 1);
  const LossSpec spec{LossKind::kMiLe, 1.0};
  for (auto _ : state) {
    params.zero_grad();
    Graph graph;
    Graph::Scope scope(graph);
    const Tensor loss = batch_loss(forward(params, b.inputs), b.targets, b.mask, spec);
    graph.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch * cfg.seq_len));
}
BENCHMARK(BM_TrainStep)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
