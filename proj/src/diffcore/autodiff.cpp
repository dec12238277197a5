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

#include "delsmm/diffcore/autodiff.hpp"

#include "delsmm/errors.hpp"

namespace delsmm::ad {

Tensor grad(const TapeFunction& f, const Tensor& x) {
  Tape tape;
  const Var in = tape.variable(x);
  const Var out = f(tape, in);
  if (out.value().size() != 1) {
    throw ContractViolation("grad: function output has shape " + shape_string(out.value()) +
                            ", expected a scalar");
  }
  return tape.backward(out)[in];
}

Tensor jacobian(const TapeFunction& f, const Tensor& x) {
  Tape tape;
  const Var in = tape.variable(x);
  const Var out = f(tape, in);
  const std::size_t m = out.value().size();
  Tensor jac(m, x.size());
  for (std::size_t i = 0; i < m; ++i) {
    // Pick output entry i with a one-hot contraction.
    Tensor pick(out.rows(), out.cols());
    pick[i] = 1.0;
    const Var component = sum(mul(out, tape.constant(std::move(pick))));
    const Tensor row = tape.backward(component)[in];
    for (std::size_t j = 0; j < x.size(); ++j) jac(i, j) = row[j];
  }
  return jac;
}

Tensor grad2(const std::function<Var(Tape&, Var, Var)>& g, const Tensor& theta, const Tensor& x,
             const Tensor& direction) {
  Tape tape;
  const Var th = tape.variable(theta);
  const Var in = tape.constant(x);
  const Var out = g(tape, th, in);
  if (out.value().size() != 1) {
    throw ContractViolation("grad2: inner function output must be scalar");
  }
  const Seed seed{in, tape.constant(direction)};
  const Var directional = tape.jvp(out, std::span<const Seed>(&seed, 1));
  return tape.backward(directional)[th];
}

double cholesky_logdet(const Tensor& a) {
  Tape tape;
  return logdet(tape.constant(a)).value().item();
}

}  // namespace delsmm::ad
