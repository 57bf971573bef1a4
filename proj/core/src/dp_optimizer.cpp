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

#include "dplm/dp_optimizer.h"

#include <cmath>
#include <stdexcept>

namespace dplm {

void DpSgdConfig::Validate() const {
  if (clip_norm <= 0) throw std::invalid_argument("clip_norm must be positive");
  if (noise_multiplier < 0)
    throw std::invalid_argument("noise_multiplier must be non-negative");
  if (expected_batch_size <= 0)
    throw std::invalid_argument("expected_batch_size must be positive");
  if (accumulation_steps < 1)
    throw std::invalid_argument("accumulation_steps must be >= 1");
  if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be positive");
}

Vector ClipGradient(const Vector& g, double clip_norm) {
  if (clip_norm <= 0) throw std::invalid_argument("clip_norm must be positive");
  double sq = 0.0;
  for (double v : g) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite gradient");
    sq += v * v;
  }
  double norm = std::sqrt(sq);
  if (norm <= clip_norm) return g;
  double scale = clip_norm / norm;
  Vector out(g.size());
  for (size_t i = 0; i < g.size(); ++i) out[i] = g[i] * scale;
  return out;
}

Vector MicroStep(const std::vector<Vector>& per_example_grads,
                 const DpSgdConfig& cfg, size_t dim, GaussianRng& rng) {
  cfg.Validate();
  Vector sum(dim, 0.0);
  for (const Vector& g : per_example_grads) {
    if (g.size() != dim) throw std::invalid_argument("gradient dimension mismatch");
    Vector clipped = ClipGradient(g, cfg.clip_norm);
    for (size_t i = 0; i < dim; ++i) sum[i] += clipped[i];
  }
  if (cfg.noise_multiplier > 0) {
    double std = cfg.noise_multiplier * cfg.clip_norm /
                 std::sqrt(static_cast<double>(cfg.accumulation_steps));
    for (size_t i = 0; i < dim; ++i) sum[i] += std * rng.Gaussian();
  }
  return sum;
}

Vector ApplyUpdate(const Vector& flat_params,
                   const std::vector<Vector>& micro_sums,
                   const DpSgdConfig& cfg) {
  cfg.Validate();
  if (static_cast<int>(micro_sums.size()) != cfg.accumulation_steps)
    throw std::invalid_argument("expected exactly accumulation_steps micro sums");
  Vector out = flat_params;
  double scale = cfg.learning_rate / cfg.expected_batch_size;
  for (const Vector& ms : micro_sums) {
    if (ms.size() != out.size())
      throw std::invalid_argument("micro sum dimension mismatch");
    for (size_t i = 0; i < out.size(); ++i) out[i] -= scale * ms[i];
  }
  return out;
}

Vector ApplyTotalUpdate(const Vector& flat_params, const Vector& total,
                        const DpSgdConfig& cfg) {
  cfg.Validate();
  if (total.size() != flat_params.size())
    throw std::invalid_argument("total dimension mismatch");
  Vector out = flat_params;
  double scale = cfg.learning_rate / cfg.expected_batch_size;
  for (size_t i = 0; i < out.size(); ++i) out[i] -= scale * total[i];
  return out;
}

double SensitivityCheck(const DpSgdConfig& cfg) { return cfg.clip_norm; }

GradientAccumulator::GradientAccumulator(const DpSgdConfig& cfg, size_t dim)
    : cfg_(cfg), sum_(dim) {
  cfg.Validate();
}

void GradientAccumulator::AddMicroStep(
    const std::vector<Vector>& per_example_grads, GaussianRng& rng) {
  for (const Vector& g : per_example_grads) {
    if (g.size() != sum_.dim())
      throw std::invalid_argument("gradient dimension mismatch");
    Vector clipped = ClipGradient(g, cfg_.clip_norm);
    sum_.Add(clipped);
  }
  if (cfg_.noise_multiplier > 0) {
    double std = cfg_.noise_multiplier * cfg_.clip_norm /
                 std::sqrt(static_cast<double>(cfg_.accumulation_steps));
    for (size_t i = 0; i < sum_.dim(); ++i) sum_.Add(i, std * rng.Gaussian());
  }
  ++micro_steps_;
}

Vector GradientAccumulator::Total() const {
  if (micro_steps_ != cfg_.accumulation_steps)
    throw std::invalid_argument("accumulator used with wrong micro-step count");
  return sum_.Round();
}

}  // namespace dplm
