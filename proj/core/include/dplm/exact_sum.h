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

#ifndef DPLM_EXACT_SUM_H_
#define DPLM_EXACT_SUM_H_

#include <cmath>
#include <cstddef>
#include <vector>

namespace dplm {

// Error-free floating point accumulation (Shewchuk expansions, as in
// Python's math.fsum). The running sum is held exactly, so the rounded
// result is independent of how the inputs were grouped.
class ExactSum {
 public:
  void Add(double x) {
    size_t i = 0;
    for (size_t j = 0; j < partials_.size(); ++j) {
      double y = partials_[j];
      if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
      double hi = x + y;
      double lo = y - (hi - x);
      if (lo != 0.0) partials_[i++] = lo;
      x = hi;
    }
    partials_.resize(i);
    partials_.push_back(x);
  }

  // Correctly rounded value of the exact sum.
  double Round() const {
    int n = static_cast<int>(partials_.size());
    if (n == 0) return 0.0;
    int i = n - 1;
    double hi = partials_[i];
    double lo = 0.0;
    while (--i >= 0) {
      double x = hi;
      double y = partials_[i];
      hi = x + y;
      double yr = hi - x;
      lo = y - yr;
      if (lo != 0.0) break;
    }
    if (i > 0 && ((lo < 0.0 && partials_[i - 1] < 0.0) ||
                  (lo > 0.0 && partials_[i - 1] > 0.0))) {
      double y = lo * 2.0;
      double x = hi + y;
      if (y == x - hi) hi = x;
    }
    return hi;
  }

 private:
  std::vector<double> partials_;  // nonoverlapping, increasing magnitude
};

// A vector of exact accumulators.
class ExactVectorSum {
 public:
  explicit ExactVectorSum(size_t dim) : sums_(dim) {}

  size_t dim() const { return sums_.size(); }

  void Add(const std::vector<double>& v) {
    for (size_t i = 0; i < sums_.size(); ++i) sums_[i].Add(v[i]);
  }

  void Add(size_t i, double x) { sums_[i].Add(x); }

  std::vector<double> Round() const {
    std::vector<double> out(sums_.size());
    for (size_t i = 0; i < sums_.size(); ++i) out[i] = sums_[i].Round();
    return out;
  }

 private:
  std::vector<ExactSum> sums_;
};

}  // namespace dplm

#endif  // DPLM_EXACT_SUM_H_
