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

#ifndef DPLM_DP_OPTIMIZER_H_
#define DPLM_DP_OPTIMIZER_H_

#include <cstdint>
#include <vector>

#include "dplm/exact_sum.h"
#include "dplm/rng.h"
#include "dplm/tensor.h"

namespace dplm {

// DP-SGD: per-example clipping to L2 norm C, Gaussian noise split evenly
// across K independent accumulation micro-steps (std sigma*C/sqrt(K) each, so
// the K partial noises sum to total std sigma*C), and normalization by the
// EXPECTED batch size B.
struct DpSgdConfig {
  double clip_norm = 1.0;            // C
  double noise_multiplier = 0.0;     // sigma
  double expected_batch_size = 1.0;  // B
  int accumulation_steps = 1;        // K
  double learning_rate = 0.1;        // eta

  void Validate() const;
};

struct NoisyUpdate {
  Vector update;  // over the canonical flat parameter vector
  int realized_examples = 0;
  int micro_steps_used = 0;
  uint64_t rng_seed_record = 0;
};

// g * min(1, C / ||g||_2); the zero vector is returned unchanged.
Vector ClipGradient(const Vector& g, double clip_norm);

// Sum of clipped per-example gradients plus one micro-step's noise share:
// per-coordinate Gaussian with std sigma*C/sqrt(K). Deterministic in rng
// state. dim is required so an empty micro-batch still yields a pure noise
// vector of the right shape.
Vector MicroStep(const std::vector<Vector>& per_example_grads,
                 const DpSgdConfig& cfg, size_t dim, GaussianRng& rng);

// params <- params - eta * (sum of the K micro sums) / B. Requires exactly K
// micro sums. Operates on flat parameter vectors.
Vector ApplyUpdate(const Vector& flat_params,
                   const std::vector<Vector>& micro_sums,
                   const DpSgdConfig& cfg);

// params <- params - eta * total / B for an already-accumulated total.
Vector ApplyTotalUpdate(const Vector& flat_params, const Vector& total,
                        const DpSgdConfig& cfg);

// The L2 sensitivity of the pre-noise summed gradient under add/zero-out of
// one example; equals the clip norm.
double SensitivityCheck(const DpSgdConfig& cfg);

// Accumulates clipped per-example gradients and per-micro-step noise across
// the K accumulation steps of one update. The running sum is kept exact
// (error-free expansions) and rounded once in Total(), so with
// noise_multiplier = 0 the result is bitwise independent of how the batch was
// partitioned into micro steps.
class GradientAccumulator {
 public:
  GradientAccumulator(const DpSgdConfig& cfg, size_t dim);

  // One micro step: clip + sum the given gradients, then add this step's
  // noise share (std sigma*C/sqrt(K)) drawn from rng.
  void AddMicroStep(const std::vector<Vector>& per_example_grads,
                    GaussianRng& rng);

  int micro_steps() const { return micro_steps_; }
  Vector Total() const;

 private:
  DpSgdConfig cfg_;
  ExactVectorSum sum_;
  int micro_steps_ = 0;
};

}  // namespace dplm

#endif  // DPLM_DP_OPTIMIZER_H_
