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

#ifndef DPLM_ACCOUNTANT_H_
#define DPLM_ACCOUNTANT_H_

#include <cstdint>
#include <string>
#include <vector>

namespace dplm {

// Discretized privacy loss distribution on the uniform grid
// { (min_index + i) * grid_spacing }. Probability mass that escapes the grid
// during construction or composition is always moved upward (to a higher
// grid point or to infinity), so every guarantee derived from a Pld is a
// valid upper bound.
struct Pld {
  double grid_spacing = 1e-4;
  int64_t min_index = 0;
  std::vector<double> masses;
  double infinity_mass = 0.0;
  bool pessimistic = true;
  // Mass moved to infinity by tail truncation (informational; already
  // included in infinity_mass).
  double truncation_slack = 0.0;

  double TotalMass() const;
};

enum class Adjacency { kAdd, kRemove };

// Dominating pair for the Poisson-subsampled Gaussian mechanism with
// sensitivity 1:
//   remove: P = (1-q) N(0, s^2) + q N(1, s^2)  vs  Q = N(0, s^2)
//   add:    P = N(0, s^2)  vs  Q = (1-q) N(0, s^2) + q N(1, s^2)
// Discretized by matching the hockey-stick divergence exactly at every grid
// point (pessimistic connect-the-dots), which upper-bounds delta(epsilon)
// everywhere.
// tail_mass bounds the per-step probability discarded at each end of the
// grid; compositions over T steps should pass a value well below
// target_delta / T so the accumulated infinity mass stays negligible.
Pld SubsampledGaussianPld(double sigma, double q, Adjacency direction,
                          double grid_spacing = 1e-4, double tail_mass = 1e-15);

// Convolution of two independent privacy losses on the same grid.
Pld Convolve(const Pld& a, const Pld& b, double tail_mass = 1e-15);

// T-fold self-composition via convolution-by-squaring.
Pld Compose(const Pld& pld, int64_t steps, double tail_mass = 1e-15);

// Hockey-stick divergence: infinity_mass + sum_{l > eps} m(l) (1 - e^{eps-l}).
double DeltaAtEpsilon(const Pld& pld, double epsilon);

// Smallest eps >= 0 with delta(eps) <= delta, to absolute tolerance 1e-4;
// +inf if infinity_mass > delta.
double EpsilonAtDelta(const Pld& pld, double delta);

struct MechanismSpec {
  double noise_multiplier = 1.0;  // sigma, sensitivity-1 normalized
  double sampling_prob = 1.0;     // q
  int64_t steps = 1;              // T
};

struct PrivacyBudget {
  double epsilon = 1.0;
  double delta = 1e-10;
};

struct AccountReport {
  double epsilon = 0.0;
  double delta = 0.0;
  std::string direction;  // which adjacency direction dominated
  double grid_spacing = 0.0;
  double slack = 0.0;     // total truncation mass across both directions
};

// Composes both adjacency directions and reports the max-epsilon guarantee.
AccountReport Account(const MechanismSpec& spec, double delta,
                      double grid_spacing = 1e-4);

// Smallest sigma whose epsilon at target.delta is <= target.epsilon
// (relative tolerance 1e-3). Throws std::runtime_error if the target is
// unreachable.
double CalibrateNoise(const PrivacyBudget& target, double q, int64_t steps,
                      double grid_spacing = 1e-4);

}  // namespace dplm

#endif  // DPLM_ACCOUNTANT_H_
