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

#ifndef DPLM_SCALING_LAWS_H_
#define DPLM_SCALING_LAWS_H_

#include <cstdint>
#include <functional>
#include <vector>

namespace dplm {

struct LrSweepPoint {
  double learning_rate = 0.0;
  double final_loss = 0.0;
};

struct QuadraticFit {
  double a = 0.0, b = 0.0, c = 0.0;  // loss ~ a u^2 + b u + c, u = log10(lr)
};

struct OptimalLr {
  double learning_rate = 0.0;
  QuadraticFit fit;
};

// Least-squares parabola in log10(lr); the vertex estimates the optimal
// learning rate. Throws on a concave fit (a <= 0) or a vertex outside
// [min lr / 10, max lr * 10].
OptimalLr FitOptimalLr(const std::vector<LrSweepPoint>& sweep);

// loss ~ E + A / T^alpha
struct PowerLawFit {
  double irreducible = 0.0;  // E
  double amplitude = 0.0;    // A
  double exponent = 0.0;     // alpha
  double residual = 0.0;     // sum of squared errors
  bool degenerate = false;   // non-decreasing losses; E = last loss, A -> 0
  double max_fitted_t = 0.0;
};

struct IterLossPoint {
  int64_t iterations = 0;
  double loss = 0.0;
};

// Nonlinear least squares over (E, A, alpha): alpha scanned on a log grid
// and refined by golden-section search, (E, A) solved in closed form per
// alpha. E is clamped at >= 0.
PowerLawFit FitPowerLaw(const std::vector<IterLossPoint>& points);

struct LossPrediction {
  double loss = 0.0;
  bool extrapolated = false;  // T beyond 10x the largest fitted iteration
};

LossPrediction PredictLoss(const PowerLawFit& fit, double iterations);

// sigma / expected_batch: the effective per-update noise scale.
double NoiseBatchRatio(double sigma, double expected_batch);

struct GridFitInput {
  double model_size = 0.0;
  double noise_batch_ratio = 0.0;
  PowerLawFit fit;
};

struct LossGrid {
  std::vector<double> model_sizes;   // strictly increasing
  std::vector<double> iterations;    // strictly increasing
  std::vector<double> ratios;        // strictly increasing
  // values[(i_m * |T| + i_t) * |r| + i_r]
  std::vector<double> values;

  double At(size_t im, size_t it, size_t ir) const {
    return values[(im * iterations.size() + it) * ratios.size() + ir];
  }
};

// Evaluates every (model_size, ratio) fit on the iteration axis. Throws an
// incomplete-grid error listing missing (model_size, ratio) pairs.
LossGrid BuildGrid(const std::vector<GridFitInput>& fits,
                   const std::vector<int64_t>& iteration_axis);

// Trilinear interpolation in (log M, log T, log ratio); exact at lattice
// points. Out-of-box queries throw.
double SemiParametricPredict(const LossGrid& grid, double model_size,
                             double iterations, double ratio);

struct CandidateConfig {
  double model_size = 0.0;
  double iterations = 0.0;
  double batch = 0.0;
  double sigma = 0.0;
  double predicted_loss = 0.0;
  double epsilon = 0.0;
  double compute = 0.0;
};

struct BudgetConstraints {
  double max_compute = 0.0;  // compute modeled as model_size * T * batch
  double max_epsilon = 0.0;
  double delta = 0.0;
};

// Maps (batch, sigma, T) to epsilon; injected so searches can use the real
// accountant or a cheap surrogate.
using EpsilonFn = std::function<double(double batch, double sigma, int64_t steps)>;

// Enumerates lattice-feasible configurations (every grid (M, T, ratio) point
// crossed with the candidate batch sizes), keeps those within both budgets,
// and returns them ranked by predicted loss. Configurations within 0.1% of
// the best loss are co-optimal and lead the list. Throws if none feasible.
std::vector<CandidateConfig> FindBestConfig(
    const LossGrid& grid, const BudgetConstraints& budget, int64_t dataset_size,
    const std::vector<double>& candidate_batches, const EpsilonFn& epsilon_fn);

}  // namespace dplm

#endif  // DPLM_SCALING_LAWS_H_
