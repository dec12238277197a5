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

#include <functional>

#include "delsmm/diffcore/tape.hpp"
#include "delsmm/diffcore/tensor.hpp"

namespace delsmm::ad {

/// A function recorded on a fresh tape from one variable input.
using TapeFunction = std::function<Var(Tape&, Var)>;

/// Gradient of a scalar-valued `f` at `x`; same shape as `x`.
/// Throws ContractViolation when f's output is not 1×1.
Tensor grad(const TapeFunction& f, const Tensor& x);

/// Jacobian of `f` at `x` as an (outputs × inputs) matrix, entries taken in
/// row-major order on both sides. Row i is the gradient of output entry i.
Tensor jacobian(const TapeFunction& f, const Tensor& x);

/// Mixed second derivative: the gradient with respect to `theta` of
/// ⟨∇ₓ g(θ, x), direction⟩. The inner derivative is built with Tape::jvp, so
/// it is exact; primitives without tangent rules raise
/// NonDifferentiablePrimitive.
Tensor grad2(const std::function<Var(Tape&, Var theta, Var x)>& g, const Tensor& theta,
             const Tensor& x, const Tensor& direction);

/// log det(A) through a Cholesky factorization. Throws PdFailure carrying the
/// failing pivot when A is not positive definite.
double cholesky_logdet(const Tensor& a);

}  // namespace delsmm::ad
