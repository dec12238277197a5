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
#include <cstdio>
#include <stdexcept>
#include <string>

namespace delsmm {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (wrong shape, non-scalar output,
/// calling force() on a conservative model, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside the mathematical domain of the operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A value became NaN or infinite.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Cholesky factorization hit a non-positive pivot.
class PdFailure : public Error {
 public:
  PdFailure(std::size_t pivot, std::size_t batch_row, const std::string& where)
      : Error(where + ": matrix not positive definite (pivot " + std::to_string(pivot) +
              ", row " + std::to_string(batch_row) + ")"),
        pivot_(pivot),
        batch_row_(batch_row) {}

  std::size_t pivot() const { return pivot_; }
  std::size_t batch_row() const { return batch_row_; }

 private:
  std::size_t pivot_;
  std::size_t batch_row_;
};

/// Forward-mode differentiation reached a primitive without a tangent rule.
class NonDifferentiablePrimitive : public Error {
 public:
  using Error::Error;
};

/// A time integrator produced a non-finite state.
class IntegrationBlowup : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// An iterative solver stopped before reaching its tolerance.
inline std::string format_residual(double r) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", r);
  return buf;
}

class NonConvergence : public NumericalError {
 public:
  NonConvergence(const std::string& what, double residual)
      : NumericalError(what + " (residual " + format_residual(residual) + ")"),
        residual_(residual) {}

  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Invalid experiment or architecture configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace delsmm
