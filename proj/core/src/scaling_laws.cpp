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

#include "dplm/scaling_laws.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace dplm {

namespace {

// Closed-form (E, A) least squares for fixed alpha on regressor T^{-alpha},
// E clamped at >= 0. Returns sum of squared errors.
double SolveLinear(const std::vector<IterLossPoint>& pts, double alpha,
                   double* e_out, double* a_out) {
  size_t n = pts.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& p : pts) {
    double x = std::pow(static_cast<double>(p.iterations), -alpha);
    sx += x;
    sy += p.loss;
    sxx += x * x;
    sxy += x * p.loss;
  }
  double det = n * sxx - sx * sx;
  double e, a;
  if (std::fabs(det) < 1e-300) {
    e = sy / n;
    a = 0.0;
  } else {
    a = (n * sxy - sx * sy) / det;
    e = (sy - a * sx) / n;
  }
  if (e < 0) {  // clamp and refit A alone
    e = 0.0;
    a = sxx > 0 ? sxy / sxx : 0.0;
  }
  double sse = 0;
  for (const auto& p : pts) {
    double r = p.loss - (e + a * std::pow(static_cast<double>(p.iterations), -alpha));
    sse += r * r;
  }
  *e_out = e;
  *a_out = a;
  return sse;
}

}  // namespace

OptimalLr FitOptimalLr(const std::vector<LrSweepPoint>& sweep) {
  std::set<double> distinct;
  for (const auto& p : sweep) {
    if (p.learning_rate <= 0) throw std::invalid_argument("learning rates must be positive");
    distinct.insert(p.learning_rate);
  }
  if (distinct.size() < 3)
    throw std::invalid_argument("need at least 3 distinct learning rates");

  // Center log-lr for conditioning.
  size_t n = sweep.size();
  double mean_u = 0;
  for (const auto& p : sweep) mean_u += std::log10(p.learning_rate);
  mean_u /= n;

  double s0 = n, s1 = 0, s2 = 0, s3 = 0, s4 = 0;
  double t0 = 0, t1 = 0, t2 = 0;
  for (const auto& p : sweep) {
    double u = std::log10(p.learning_rate) - mean_u;
    double y = p.final_loss;
    s1 += u; s2 += u * u; s3 += u * u * u; s4 += u * u * u * u;
    t0 += y; t1 += u * y; t2 += u * u * y;
  }
  // Solve the 3x3 normal equations by Cramer's rule.
  double m[3][3] = {{s0, s1, s2}, {s1, s2, s3}, {s2, s3, s4}};
  double rhs[3] = {t0, t1, t2};
  auto det3 = [](double a[3][3]) {
    return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
           a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
           a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
  };
  double det = det3(m);
  if (std::fabs(det) < 1e-300) throw std::invalid_argument("degenerate lr sweep");
  double coef[3];
  for (int k = 0; k < 3; ++k) {
    double mm[3][3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) mm[i][j] = j == k ? rhs[i] : m[i][j];
    coef[k] = det3(mm) / det;
  }
  double a = coef[2], b = coef[1], c = coef[0];
  if (a <= 0) throw std::runtime_error("lr sweep has no interior minimum (concave fit)");
  double vertex_u = -b / (2 * a) + mean_u;

  double min_lr = *distinct.begin(), max_lr = *distinct.rbegin();
  if (vertex_u < std::log10(min_lr / 10.0) || vertex_u > std::log10(max_lr * 10.0))
    throw std::runtime_error("lr vertex outside the extended sweep range");

  OptimalLr out;
  out.learning_rate = std::pow(10.0, vertex_u);
  // De-center the coefficients: loss = a(u-mu)^2 + b(u-mu) + c in u = log10 lr.
  out.fit.a = a;
  out.fit.b = b - 2 * a * mean_u;
  out.fit.c = c + a * mean_u * mean_u - b * mean_u;
  return out;
}

PowerLawFit FitPowerLaw(const std::vector<IterLossPoint>& points) {
  if (points.size() < 3) throw std::invalid_argument("need at least 3 points");
  for (size_t i = 0; i < points.size(); ++i) {
    if (points[i].loss <= 0) throw std::invalid_argument("losses must be positive");
    if (i > 0 && points[i].iterations <= points[i - 1].iterations)
      throw std::invalid_argument("iterations must be strictly increasing");
  }

  PowerLawFit fit;
  fit.max_fitted_t = static_cast<double>(points.back().iterations);

  bool decreasing = false;
  for (size_t i = 1; i < points.size(); ++i)
    if (points[i].loss < points.front().loss) decreasing = true;
  if (!decreasing) {
    fit.degenerate = true;
    fit.irreducible = points.back().loss;
    fit.amplitude = 0.0;
    fit.exponent = 1.0;
    double sse = 0;
    for (const auto& p : points) {
      double r = p.loss - fit.irreducible;
      sse += r * r;
    }
    fit.residual = sse;
    return fit;
  }

  // Coarse log-spaced alpha scan, then golden-section refinement around the
  // best cell.
  const int kGrid = 240;
  const double a_lo = 1e-3, a_hi = 10.0;
  double best_alpha = a_lo, best_sse = 1e300;
  int best_i = 0;
  std::vector<double> alphas(kGrid);
  for (int i = 0; i < kGrid; ++i)
    alphas[i] = a_lo * std::pow(a_hi / a_lo, static_cast<double>(i) / (kGrid - 1));
  for (int i = 0; i < kGrid; ++i) {
    double e, a;
    double sse = SolveLinear(points, alphas[i], &e, &a);
    if (sse < best_sse) { best_sse = sse; best_alpha = alphas[i]; best_i = i; }
  }
  double lo = alphas[std::max(0, best_i - 1)];
  double hi = alphas[std::min(kGrid - 1, best_i + 1)];
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
  double e_tmp, a_tmp;
  double f1 = SolveLinear(points, x1, &e_tmp, &a_tmp);
  double f2 = SolveLinear(points, x2, &e_tmp, &a_tmp);
  for (int it = 0; it < 200 && hi - lo > 1e-12 * std::max(1.0, hi); ++it) {
    if (f1 < f2) {
      hi = x2; x2 = x1; f2 = f1;
      x1 = hi - gr * (hi - lo);
      f1 = SolveLinear(points, x1, &e_tmp, &a_tmp);
    } else {
      lo = x1; x1 = x2; f1 = f2;
      x2 = lo + gr * (hi - lo);
      f2 = SolveLinear(points, x2, &e_tmp, &a_tmp);
    }
  }
  best_alpha = 0.5 * (lo + hi);
  double e, a;
  double sse = SolveLinear(points, best_alpha, &e, &a);

  fit.exponent = best_alpha;
  fit.irreducible = e;
  fit.amplitude = a;
  fit.residual = sse;
  if (a <= 0) fit.degenerate = true;
  return fit;
}

LossPrediction PredictLoss(const PowerLawFit& fit, double iterations) {
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  LossPrediction out;
  out.loss = fit.irreducible +
             fit.amplitude * std::pow(iterations, -fit.exponent);
  out.extrapolated = iterations > 10.0 * fit.max_fitted_t;
  return out;
}

double NoiseBatchRatio(double sigma, double expected_batch) {
  if (sigma <= 0 || expected_batch <= 0)
    throw std::invalid_argument("sigma and expected_batch must be positive");
  return sigma / expected_batch;
}

LossGrid BuildGrid(const std::vector<GridFitInput>& fits,
                   const std::vector<int64_t>& iteration_axis) {
  if (fits.empty() || iteration_axis.empty())
    throw std::invalid_argument("empty grid inputs");
  LossGrid grid;
  std::set<double> ms, rs;
  for (const auto& f : fits) {
    if (f.model_size <= 0 || f.noise_batch_ratio <= 0)
      throw std::invalid_argument("model_size and noise_batch_ratio must be positive");
    ms.insert(f.model_size);
    rs.insert(f.noise_batch_ratio);
  }
  grid.model_sizes.assign(ms.begin(), ms.end());
  grid.ratios.assign(rs.begin(), rs.end());
  for (size_t i = 1; i < iteration_axis.size(); ++i)
    if (iteration_axis[i] <= iteration_axis[i - 1])
      throw std::invalid_argument("iteration axis must be strictly increasing");
  for (int64_t t : iteration_axis)
    grid.iterations.push_back(static_cast<double>(t));

  size_t nm = grid.model_sizes.size(), nt = grid.iterations.size(),
         nr = grid.ratios.size();
  grid.values.assign(nm * nt * nr, std::nan(""));

  for (const auto& f : fits) {
    size_t im = std::lower_bound(grid.model_sizes.begin(), grid.model_sizes.end(),
                                 f.model_size) - grid.model_sizes.begin();
    size_t ir = std::lower_bound(grid.ratios.begin(), grid.ratios.end(),
                                 f.noise_batch_ratio) - grid.ratios.begin();
    for (size_t it = 0; it < nt; ++it) {
      grid.values[(im * nt + it) * nr + ir] =
          PredictLoss(f.fit, grid.iterations[it]).loss;
    }
  }

  std::string gaps;
  for (size_t im = 0; im < nm; ++im)
    for (size_t ir = 0; ir < nr; ++ir)
      if (std::isnan(grid.At(im, 0, ir)))
        gaps += " (" + std::to_string(grid.model_sizes[im]) + ", " +
                std::to_string(grid.ratios[ir]) + ")";
  if (!gaps.empty())
    throw std::invalid_argument("incomplete grid; missing fits for:" + gaps);
  return grid;
}

namespace {

// Locates x in the strictly increasing axis; returns (cell index, fraction in
// log space). Throws if outside the bounding box.
std::pair<size_t, double> Locate(const std::vector<double>& axis, double x,
                                 const char* name) {
  if (x < axis.front() || x > axis.back())
    throw std::out_of_range(std::string(name) + " outside the grid bounding box");
  if (x == axis.back()) return {axis.size() - 2, 1.0};
  size_t i = std::upper_bound(axis.begin(), axis.end(), x) - axis.begin() - 1;
  double f = (std::log(x) - std::log(axis[i])) /
             (std::log(axis[i + 1]) - std::log(axis[i]));
  return {i, f};
}

}  // namespace

double SemiParametricPredict(const LossGrid& grid, double model_size,
                             double iterations, double ratio) {
  if (grid.model_sizes.size() < 2 || grid.iterations.size() < 2 ||
      grid.ratios.size() < 2)
    throw std::invalid_argument("grid needs at least 2 points per axis");
  auto [im, fm] = Locate(grid.model_sizes, model_size, "model_size");
  auto [it, ft] = Locate(grid.iterations, iterations, "iterations");
  auto [ir, fr] = Locate(grid.ratios, ratio, "ratio");
  double acc = 0.0;
  for (int dm = 0; dm < 2; ++dm)
    for (int dt = 0; dt < 2; ++dt)
      for (int dr = 0; dr < 2; ++dr) {
        double w = (dm ? fm : 1 - fm) * (dt ? ft : 1 - ft) * (dr ? fr : 1 - fr);
        acc += w * grid.At(im + dm, it + dt, ir + dr);
      }
  return acc;
}

std::vector<CandidateConfig> FindBestConfig(
    const LossGrid& grid, const BudgetConstraints& budget, int64_t dataset_size,
    const std::vector<double>& candidate_batches, const EpsilonFn& epsilon_fn) {
  if (candidate_batches.empty())
    throw std::invalid_argument("no candidate batch sizes");
  std::vector<CandidateConfig> feasible;
  for (size_t im = 0; im < grid.model_sizes.size(); ++im)
    for (size_t it = 0; it < grid.iterations.size(); ++it)
      for (size_t ir = 0; ir < grid.ratios.size(); ++ir)
        for (double batch : candidate_batches) {
          if (batch > static_cast<double>(dataset_size)) continue;
          CandidateConfig c;
          c.model_size = grid.model_sizes[im];
          c.iterations = grid.iterations[it];
          c.batch = batch;
          c.sigma = grid.ratios[ir] * batch;
          c.compute = c.model_size * c.iterations * batch;
          if (c.compute > budget.max_compute) continue;
          c.epsilon = epsilon_fn(batch, c.sigma,
                                 static_cast<int64_t>(c.iterations));
          if (c.epsilon > budget.max_epsilon) continue;
          c.predicted_loss = grid.At(im, it, ir);
          feasible.push_back(c);
        }
  if (feasible.empty())
    throw std::runtime_error("no feasible configuration within budgets");
  std::stable_sort(feasible.begin(), feasible.end(),
                   [](const CandidateConfig& a, const CandidateConfig& b) {
                     return a.predicted_loss < b.predicted_loss;
                   });
  return feasible;
}

}  // namespace dplm
