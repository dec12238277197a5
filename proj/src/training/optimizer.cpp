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

#include "delsmm/training/optimizer.hpp"

#include <cmath>

#include "delsmm/diffcore/kernels.hpp"
#include "delsmm/errors.hpp"

namespace delsmm::train {

double lr_schedule(double xi0, long k) {
  if (k < 0) throw DomainError("lr_schedule: epoch index must be non-negative");
  return 500.0 * xi0 / (500.0 + static_cast<double>(k));
}

AdamState AdamState::zeros(std::size_t n) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  return s;
}

bool adam_step(AdamState& state, std::vector<double>& params, const std::vector<double>& grads,
               double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ContractViolation("adam_step: parameter, gradient and moment lengths differ");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) return false;
  }
  ++state.step;
  const auto t = static_cast<double>(state.step);
  const simd::AdamCoeffs c{state.beta1,
                           state.beta2,
                           state.eps,
                           lr,
                           1.0 - std::pow(state.beta1, t),
                           1.0 - std::pow(state.beta2, t)};
  simd::active_kernels().adam_update(params.data(), state.m.data(), state.v.data(), grads.data(),
                                     params.size(), c);
  return true;
}

}  // namespace delsmm::train
