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

#include "dplm/accountant.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dplm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double NormalCdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }
double NormalSf(double z) { return 0.5 * std::erfc(z * M_SQRT1_2); }

// Closed-form hockey-stick divergence delta(eps) for one step of the
// subsampled Gaussian, per adjacency direction. sigma is the sensitivity-1
// noise multiplier.
struct OneStep {
  double sigma;
  double q;
  Adjacency dir;

  // log(1-q); -inf for q == 1
  double LogOneMinusQ() const { return q < 1.0 ? std::log1p(-q) : -kInf; }

  // Inverse of the remove-direction loss: x with log(dP/dQ)(x) = c.
  // Valid for c > log(1-q).
  double InverseLossRemove(double c) const {
    return sigma * sigma * std::log((std::expm1(c) + q) / q) + 0.5;
  }

  double Delta(double eps) const {
    double s = sigma;
    if (dir == Adjacency::kRemove) {
      if (eps <= LogOneMinusQ()) return 1.0 - std::exp(eps);
      double x = InverseLossRemove(eps);
      double sf_p = (1.0 - q) * NormalSf(x / s) + q * NormalSf((x - 1.0) / s);
      double sf_q = NormalSf(x / s);
      return std::max(0.0, sf_p - std::exp(eps) * sf_q);
    }
    // add direction: loss = -log((1-q) + q e^{(2x-1)/(2s^2)}), x ~ N(0, s^2);
    // loss range is (-inf, -log(1-q)).
    if (q < 1.0 && eps >= -std::log1p(-q)) return 0.0;
    // x'(eps): e^{-eps} - (1-q) = expm1(-eps) + q
    double x = sigma * sigma * std::log((std::expm1(-eps) + q) / q) + 0.5;
    double cdf_p = NormalCdf(x / s);
    double cdf_q = (1.0 - q) * NormalCdf(x / s) + q * NormalCdf((x - 1.0) / s);
    return std::max(0.0, cdf_p - std::exp(eps) * cdf_q);
  }

  // P(loss <= c)
  double LossCdf(double c) const {
    double s = sigma;
    if (dir == Adjacency::kRemove) {
      if (c <= LogOneMinusQ()) return 0.0;
      double x = InverseLossRemove(c);
      return (1.0 - q) * NormalCdf(x / s) + q * NormalCdf((x - 1.0) / s);
    }
    if (q < 1.0 && c >= -std::log1p(-q)) return 1.0;
    double x = sigma * sigma * std::log((std::expm1(-c) + q) / q) + 0.5;
    return NormalSf(x / s);
  }
};

// FFT-based linear convolution of two nonnegative mass vectors.
std::vector<double> FftConvolve(const std::vector<double>& a,
                                const std::vector<double>& b) {
  size_t out_n = a.size() + b.size() - 1;
  size_t n = 1;
  while (n < out_n) n <<= 1;
  std::vector<double> fa(n, 0.0), fb(n, 0.0);
  std::copy(a.begin(), a.end(), fa.begin());
  std::copy(b.begin(), b.end(), fb.begin());

  size_t nc = n / 2 + 1;
  fftw_complex* ca = fftw_alloc_complex(nc);
  fftw_complex* cb = fftw_alloc_complex(nc);
  fftw_plan pa = fftw_plan_dft_r2c_1d(static_cast<int>(n), fa.data(), ca, FFTW_ESTIMATE);
  fftw_plan pb = fftw_plan_dft_r2c_1d(static_cast<int>(n), fb.data(), cb, FFTW_ESTIMATE);
  fftw_execute(pa);
  fftw_execute(pb);
  for (size_t i = 0; i < nc; ++i) {
    double re = ca[i][0] * cb[i][0] - ca[i][1] * cb[i][1];
    double im = ca[i][0] * cb[i][1] + ca[i][1] * cb[i][0];
    ca[i][0] = re;
    ca[i][1] = im;
  }
  std::vector<double> out(n, 0.0);
  fftw_plan pc = fftw_plan_dft_c2r_1d(static_cast<int>(n), ca, out.data(), FFTW_ESTIMATE);
  fftw_execute(pc);
  fftw_destroy_plan(pa);
  fftw_destroy_plan(pb);
  fftw_destroy_plan(pc);
  fftw_free(ca);
  fftw_free(cb);
  double inv = 1.0 / static_cast<double>(n);
  out.resize(out_n);
  for (double& v : out) v *= inv;
  return out;
}

// Log-MGF of the finite part of a Pld at a fixed set of exponents, for
// Chernoff support bounds of its self-compositions.
struct MgfBounds {
  std::vector<double> ts;
  std::vector<double> pos;  // lambda(t)
  std::vector<double> neg;  // lambda(-t)
};

double LogMgf(const Pld& pld, double t) {
  double dl = pld.grid_spacing;
  double peak = -kInf;
  for (size_t i = 0; i < pld.masses.size(); ++i) {
    if (pld.masses[i] <= 0) continue;
    double e = t * (pld.min_index + static_cast<int64_t>(i)) * dl;
    peak = std::max(peak, e);
  }
  if (peak == -kInf) return -kInf;
  double s = 0.0;
  for (size_t i = 0; i < pld.masses.size(); ++i) {
    if (pld.masses[i] <= 0) continue;
    double e = t * (pld.min_index + static_cast<int64_t>(i)) * dl;
    s += pld.masses[i] * std::exp(e - peak);
  }
  return peak + std::log(s);
}

MgfBounds ComputeMgfBounds(const Pld& pld) {
  MgfBounds b;
  b.ts = {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
  for (double t : b.ts) {
    b.pos.push_back(LogMgf(pld, t));
    b.neg.push_back(LogMgf(pld, -t));
  }
  return b;
}

// Chernoff window [lo, hi] in grid indices outside which a j-step
// composition holds at most `tail` mass per side.
void ChernoffWindow(const MgfBounds& b, double dl, int64_t j, double tail,
                    int64_t* lo, int64_t* hi) {
  double log_tail = std::log(tail);
  double u = kInf, l = -kInf;
  for (size_t i = 0; i < b.ts.size(); ++i) {
    if (std::isfinite(b.pos[i]))
      u = std::min(u, (j * b.pos[i] - log_tail) / (b.ts[i] * dl));
    if (std::isfinite(b.neg[i]))
      l = std::max(l, -(j * b.neg[i] - log_tail) / (b.ts[i] * dl));
  }
  *hi = std::isfinite(u) ? static_cast<int64_t>(std::ceil(u)) + 1
                         : std::numeric_limits<int64_t>::max();
  *lo = std::isfinite(l) ? static_cast<int64_t>(std::floor(l)) - 1
                         : std::numeric_limits<int64_t>::min();
}

// Restricts a Pld to [lo_idx, hi_idx]: mass below is lumped into the lowest
// kept bin (rounding losses up), mass above goes to infinity. Both moves are
// pessimistic, so the result still dominates.
void TruncateToWindow(Pld* pld, int64_t lo_idx, int64_t hi_idx) {
  int64_t first = pld->min_index;
  int64_t last = first + static_cast<int64_t>(pld->masses.size()) - 1;
  lo_idx = std::min(std::max(lo_idx, first), last);
  hi_idx = std::max(std::min(hi_idx, last), lo_idx);
  double below = 0.0, above = 0.0;
  for (int64_t k = first; k < lo_idx; ++k) below += pld->masses[k - first];
  for (int64_t k = hi_idx + 1; k <= last; ++k) above += pld->masses[k - first];
  std::vector<double> kept(pld->masses.begin() + (lo_idx - first),
                           pld->masses.begin() + (hi_idx - first) + 1);
  kept.front() += below;
  pld->masses = std::move(kept);
  pld->min_index = lo_idx;
  pld->infinity_mass += above;
  pld->truncation_slack += above;
}

}  // namespace

double Pld::TotalMass() const {
  double s = infinity_mass;
  for (double m : masses) s += m;
  return s;
}

Pld SubsampledGaussianPld(double sigma, double q, Adjacency direction,
                          double grid_spacing, double tail_mass) {
  if (sigma <= 0) throw std::invalid_argument("sigma must be positive");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("q must be in (0, 1]");
  if (grid_spacing <= 0) throw std::invalid_argument("grid_spacing must be positive");
  if (!(tail_mass > 0.0)) throw std::invalid_argument("tail_mass must be positive");

  OneStep step{sigma, q, direction};
  const double tail = tail_mass;
  const double dl = grid_spacing;

  // Upper cutoff: smallest k with delta(k*dl) <= tail.
  int64_t hi = 1;
  while (step.Delta(hi * dl) > tail) {
    hi *= 2;
    if (hi > (int64_t(1) << 40)) throw std::runtime_error("pld upper cutoff diverged");
  }
  int64_t lo_b = hi / 2;
  while (lo_b + 1 < hi) {
    int64_t mid = lo_b + (hi - lo_b) / 2;
    if (step.Delta(mid * dl) <= tail) hi = mid; else lo_b = mid;
  }
  int64_t k_hi = hi;

  // Lower cutoff: largest k with P(loss <= k*dl) <= tail.
  int64_t lo = -1;
  while (step.LossCdf(lo * dl) > tail) {
    lo *= 2;
    if (lo < -(int64_t(1) << 40)) throw std::runtime_error("pld lower cutoff diverged");
  }
  int64_t hi_b = 0;
  while (lo + 1 < hi_b) {
    int64_t mid = lo + (hi_b - lo) / 2;
    if (step.LossCdf(mid * dl) <= tail) lo = mid; else hi_b = mid;
  }
  int64_t k_lo = lo;
  if (k_hi <= k_lo) k_hi = k_lo + 1;

  // Pessimistic connect-the-dots: grid masses chosen so the discretized
  // hockey-stick divergence equals the true one at every grid point; the
  // residual divergence above the top grid point becomes infinity mass.
  size_t n = static_cast<size_t>(k_hi - k_lo + 1);
  std::vector<double> d(n + 1);
  for (size_t i = 0; i < n; ++i) d[i] = step.Delta((k_lo + static_cast<int64_t>(i)) * dl);
  d[n] = d[n - 1];  // constant extension above the top

  Pld pld;
  pld.grid_spacing = dl;
  pld.min_index = k_lo;
  pld.pessimistic = true;
  pld.infinity_mass = d[n - 1];
  pld.truncation_slack = d[n - 1];
  pld.masses.assign(n, 0.0);

  double em = std::exp(-dl);
  double denom = -std::expm1(-dl);  // 1 - e^{-dl}
  double assigned = 0.0;
  for (size_t i = 1; i < n; ++i) {
    double m = ((d[i - 1] - d[i]) - em * (d[i] - d[i + 1])) / denom;
    if (m < 0) m = 0;  // FP noise
    pld.masses[i] = m;
    assigned += m;
  }
  pld.masses[0] = std::max(0.0, 1.0 - pld.infinity_mass - assigned);
  return pld;
}

Pld Convolve(const Pld& a, const Pld& b, double tail_mass) {
  if (a.grid_spacing != b.grid_spacing)
    throw std::invalid_argument("grid spacing mismatch");
  Pld out;
  out.grid_spacing = a.grid_spacing;
  out.min_index = a.min_index + b.min_index;
  out.pessimistic = a.pessimistic && b.pessimistic;
  out.truncation_slack = a.truncation_slack + b.truncation_slack;
  out.infinity_mass = 1.0 - (1.0 - a.infinity_mass) * (1.0 - b.infinity_mass);

  std::vector<double> conv = FftConvolve(a.masses, b.masses);
  // Any finite mass the FFT lost globally is promoted to infinity mass so
  // the result stays a valid upper bound.
  double asum = 0.0, bsum = 0.0, got = 0.0;
  for (double v : a.masses) asum += v;
  for (double v : b.masses) bsum += v;
  for (double v : conv) got += v;
  double expect = asum * bsum;
  if (got < expect) {
    out.infinity_mass += expect - got;
    out.truncation_slack += expect - got;
  }

  // Tail truncation on the signed FFT output (roundoff noise cancels in the
  // running sums, so the scans reach the true mass boundary): the lower tail
  // is lumped upward into the first kept bin, the upper tail is promoted to
  // infinity mass.
  size_t lo = 0;
  double acc = 0.0;
  while (lo + 1 < conv.size() && acc + conv[lo] <= tail_mass) acc += conv[lo++];
  conv[lo] += std::max(0.0, acc);
  size_t hi = conv.size();
  acc = 0.0;
  while (hi > lo + 1 && acc + conv[hi - 1] <= tail_mass) acc += conv[--hi];
  if (acc > 0) {
    out.infinity_mass += acc;
    out.truncation_slack += acc;
  }

  out.min_index += static_cast<int64_t>(lo);
  out.masses.assign(conv.begin() + lo, conv.begin() + hi);
  // Residual negative roundoff noise is kept signed here so it can cancel in
  // later truncation sums; consumers clamp once at the end (negatives are
  // ignored by the divergence evaluation, which is the pessimistic choice).
  return out;
}

Pld Compose(const Pld& pld, int64_t steps, double tail_mass) {
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  // Chernoff bounds from the one-step MGF keep every intermediate support
  // near the width its step count justifies; without them, FFT noise defeats
  // the mass-budget truncation and supports double at every squaring.
  MgfBounds bounds = ComputeMgfBounds(pld);
  double dl = pld.grid_spacing;
  auto clamp = [&](Pld* p, int64_t j) {
    int64_t lo, hi;
    ChernoffWindow(bounds, dl, j, tail_mass, &lo, &hi);
    TruncateToWindow(p, lo, hi);
  };

  Pld base = pld;
  int64_t base_steps = 1;
  Pld result;
  int64_t result_steps = 0;
  bool have_result = false;
  int64_t t = steps;
  while (t > 0) {
    if (t & 1) {
      result = have_result ? Convolve(result, base, tail_mass) : base;
      result_steps += base_steps;
      clamp(&result, result_steps);
      have_result = true;
    }
    t >>= 1;
    if (t > 0) {
      base = Convolve(base, base, tail_mass);
      base_steps *= 2;
      clamp(&base, base_steps);
    }
  }
  // One final clamp of FFT roundoff; adding mass is the pessimistic direction.
  for (double& v : result.masses)
    if (v < 0) v = 0;
  return result;
}

double DeltaAtEpsilon(const Pld& pld, double epsilon) {
  double delta = pld.infinity_mass;
  double dl = pld.grid_spacing;
  for (size_t i = 0; i < pld.masses.size(); ++i) {
    double loss = (pld.min_index + static_cast<int64_t>(i)) * dl;
    if (loss > epsilon && pld.masses[i] > 0)
      delta += pld.masses[i] * -std::expm1(epsilon - loss);
  }
  return delta;
}

double EpsilonAtDelta(const Pld& pld, double delta) {
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("delta must be in (0, 1)");
  if (pld.infinity_mass > delta) return kInf;
  if (DeltaAtEpsilon(pld, 0.0) <= delta) return 0.0;
  double hi = (pld.min_index + static_cast<int64_t>(pld.masses.size())) *
              pld.grid_spacing;
  hi = std::max(hi, 1e-6);
  double lo = 0.0;
  while (hi - lo > 1e-4) {
    double mid = 0.5 * (lo + hi);
    if (DeltaAtEpsilon(pld, mid) <= delta) hi = mid; else lo = mid;
  }
  return hi;  // upper end of the bracket, so delta(eps) <= delta holds
}

AccountReport Account(const MechanismSpec& spec, double delta,
                      double grid_spacing) {
  if (spec.steps < 0) throw std::invalid_argument("steps must be >= 0");
  AccountReport report;
  report.delta = delta;
  report.grid_spacing = grid_spacing;
  if (spec.steps == 0) {
    report.epsilon = 0.0;
    report.direction = "none";
    return report;
  }
  double best_eps = -1.0;
  // Keep the total mass lost to per-step grid cutoffs far below the delta
  // being certified, or it would dominate the infinity mass after T steps.
  double step_tail = std::min(1e-15, 1e-3 * delta / static_cast<double>(spec.steps));
  for (Adjacency dir : {Adjacency::kRemove, Adjacency::kAdd}) {
    Pld one = SubsampledGaussianPld(spec.noise_multiplier, spec.sampling_prob,
                                    dir, grid_spacing, step_tail);
    // Mass trimmed at squaring level s is doubled by every later squaring,
    // so the per-convolution budget must also be scaled by 1/steps.
    Pld composed = Compose(one, spec.steps, step_tail);
    double eps = EpsilonAtDelta(composed, delta);
    report.slack += composed.truncation_slack;
    if (eps > best_eps) {
      best_eps = eps;
      report.direction = dir == Adjacency::kRemove ? "remove" : "add";
    }
  }
  report.epsilon = best_eps;
  return report;
}

double CalibrateNoise(const PrivacyBudget& target, double q, int64_t steps,
                      double grid_spacing) {
  if (target.epsilon <= 0) throw std::invalid_argument("target epsilon must be positive");
  MechanismSpec spec{1.0, q, steps};
  auto eps_at = [&](double sigma) {
    spec.noise_multiplier = sigma;
    return Account(spec, target.delta, grid_spacing).epsilon;
  };
  double hi = 1.0;
  int guard = 0;
  while (eps_at(hi) > target.epsilon) {
    hi *= 2.0;
    if (++guard > 40) throw std::runtime_error("calibration target unreachable");
  }
  double lo = hi / 2.0;
  while (lo > 1e-6 && eps_at(lo) <= target.epsilon) {
    hi = lo;
    lo /= 2.0;
  }
  while (hi - lo > 1e-3 * hi) {
    double mid = 0.5 * (lo + hi);
    if (eps_at(mid) <= target.epsilon) hi = mid; else lo = mid;
  }
  return hi;  // smallest sigma found whose epsilon meets the budget
}

}  // namespace dplm
