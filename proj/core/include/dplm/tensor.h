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

#ifndef DPLM_TENSOR_H_
#define DPLM_TENSOR_H_

#include <cassert>
#include <cstddef>
#include <vector>

namespace dplm {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. Deliberately minimal; the models here
// are small enough that plain loops at -O2 are all we need.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
  double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return data.size(); }
};

// y = M x
inline void MatVec(const Matrix& m, const double* x, double* y) {
  for (int r = 0; r < m.rows; ++r) {
    const double* mr = m.row(r);
    double acc = 0.0;
    for (int c = 0; c < m.cols; ++c) acc += mr[c] * x[c];
    y[r] = acc;
  }
}

// x += M^T y
inline void MatTVecAdd(const Matrix& m, const double* y, double* x) {
  for (int r = 0; r < m.rows; ++r) {
    const double* mr = m.row(r);
    double yr = y[r];
    for (int c = 0; c < m.cols; ++c) x[c] += mr[c] * yr;
  }
}

// G += y x^T  (outer-product accumulation into a [rows(y) x len(x)] matrix)
inline void OuterAdd(Matrix& g, const double* y, const double* x) {
  for (int r = 0; r < g.rows; ++r) {
    double* gr = g.row(r);
    double yr = y[r];
    for (int c = 0; c < g.cols; ++c) gr[c] += yr * x[c];
  }
}

}  // namespace dplm

#endif  // DPLM_TENSOR_H_
