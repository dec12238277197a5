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

#include <cstddef>
#include <cstdint>
#include <vector>

namespace delsmm::train {

/// ξ_k = 500 ξ₀ / (500 + k). Throws DomainError for k < 0.
double lr_schedule(double xi0, long k);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(std::size_t n);
};

/// Bias-corrected Adam update in place. Returns false and leaves both
/// arguments untouched when a gradient entry is not finite. Throws
/// ContractViolation on a length mismatch.
bool adam_step(AdamState& state, std::vector<double>& params, const std::vector<double>& grads,
               double lr);

}  // namespace delsmm::train
