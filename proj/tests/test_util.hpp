// Copyright 2026 The delsmm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "delsmm/diffcore/tensor.hpp"

namespace delsmm::testing {

// |a - b| relative to the larger magnitude, with an absolute floor so that
// entries that are both ~0 compare as equal.
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(const ad::Tensor& a, const ad::Tensor& b, double floor = 1e-8) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i], floor));
  return m;
}

inline ad::Tensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Tensor t(rows, cols);
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Central finite-difference gradient of a scalar function of a tensor.
inline ad::Tensor fd_gradient(const std::function<double(const ad::Tensor&)>& f,
                              const ad::Tensor& x, double step = 1e-6) {
  ad::Tensor g(x.rows(), x.cols());
  ad::Tensor xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + step;
    const double fp = f(xp);
    xp[i] = orig - step;
    const double fm = f(xp);
    xp[i] = orig;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

}  // namespace delsmm::testing
