// Copyright 2026 The DPLM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include <vector>

#include "dplm/accountant.h"
#include "dplm/data_pipeline.h"
#include "dplm/dp_optimizer.h"
#include "dplm/model.h"
#include "dplm/rng.h"

namespace dplm {
namespace {

void BM_AccountCompose(benchmark::State& state) {
  const int64_t steps = state.range(0);
  for (auto _ : state) {
    AccountReport r = Account({0.8, 0.01, steps}, 1e-9);
    benchmark::DoNotOptimize(r.epsilon);
  }
}
BENCHMARK(BM_AccountCompose)->Arg(100)->Arg(1000)->Arg(10000)
    ->Unit(benchmark::kMillisecond);

void BM_PerExampleGrads(benchmark::State& state) {
  ModelConfig cfg;
  ModelParams params = ModelParams::Random(cfg, 1);
  std::vector<std::vector<int>> docs;
  const int batch = static_cast<int>(state.range(0));
  for (int d = 0; d < batch; ++d)
    docs.push_back(std::vector<int>(cfg.seq_len - 1, (d * 19) % 256));
  auto corpus = PackCorpus(docs, cfg.seq_len);
  corpus.resize(batch);
  std::vector<int> selected(batch);
  for (int i = 0; i < batch; ++i) selected[i] = i;
  TokenBatch token_batch = MakeTokenBatch(corpus, selected, batch);
  for (auto _ : state) {
    PerExampleGrads grads = LossAndPerExampleGrads(params, token_batch);
    benchmark::DoNotOptimize(grads.mean_loss);
  }
}
BENCHMARK(BM_PerExampleGrads)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_GradientAccumulation(benchmark::State& state) {
  const size_t dim = 38144;
  const int examples = 32;
  GaussianRng data_rng(3);
  std::vector<Vector> grads(examples, Vector(dim));
  for (auto& g : grads)
    for (double& v : g) v = data_rng.Gaussian();
  DpSgdConfig cfg;
  cfg.clip_norm = 1.0;
  cfg.noise_multiplier = 1.0;
  cfg.expected_batch_size = examples;
  cfg.accumulation_steps = 4;
  for (auto _ : state) {
    GradientAccumulator acc(cfg, dim);
    GaussianRng rng(11);
    for (int k = 0; k < 4; ++k) {
      std::vector<Vector> micro(grads.begin() + k * 8,
                                grads.begin() + (k + 1) * 8);
      acc.AddMicroStep(micro, rng);
    }
    benchmark::DoNotOptimize(acc.Total());
  }
}
BENCHMARK(BM_GradientAccumulation)->Unit(benchmark::kMillisecond);

void BM_PackCorpus(benchmark::State& state) {
  std::vector<std::vector<int>> docs;
  GaussianRng rng(9);
  for (int d = 0; d < 2000; ++d) {
    docs.push_back(std::vector<int>(40 + rng.engine()() % 300, d % 256));
  }
  for (auto _ : state) {
    auto packed = PackCorpus(docs, 1024);
    benchmark::DoNotOptimize(packed.size());
  }
}
BENCHMARK(BM_PackCorpus)->Unit(benchmark::kMillisecond);

void BM_DrawBatch(benchmark::State& state) {
  SamplerConfig cfg;
  cfg.dataset_size = static_cast<int>(state.range(0));
  cfg.sampling_prob = 0.01;
  cfg.max_batch_size = DefaultMaxBatch(cfg.sampling_prob, cfg.dataset_size);
  cfg.seed = 5;
  int64_t step = 0;
  for (auto _ : state) {
    auto [sel, stats] = DrawBatch(cfg, step++);
    benchmark::DoNotOptimize(stats.realized);
  }
}
BENCHMARK(BM_DrawBatch)->Arg(10000)->Arg(1000000)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace dplm

BENCHMARK_MAIN();
