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

#include <Eigen/Dense>

#include "delsmm/mechanics/system.hpp"

namespace delsmm::mech {

/// Three consecutive configurations sampled h apart.
struct ConfigTriple {
  VectorXd q1;
  VectorXd q2;
  VectorXd q3;
  double h = 0.0;

  /// Throws ContractViolation on a dimension mismatch, DomainError for h ≤ 0.
  void validate(std::size_t dof) const;
};

double lagrangian(const LagrangianSystem& sys, const VectorXd& q, const VectorXd& qdot);
double energy(const LagrangianSystem& sys, const VectorXd& q, const VectorXd& qdot);

/// M(q)⁻¹ [F + ∂L/∂q − (∂²L/∂q̇∂q) q̇]. Throws PdFailure if M(q) is not PD.
VectorXd acceleration(const LagrangianSystem& sys, const VectorXd& q, const VectorXd& qdot);

/// h · L((q1+q2)/2, (q2−q1)/h). Throws DomainError for h ≤ 0.
double discrete_lagrangian(const LagrangianSystem& sys, const VectorXd& q1, const VectorXd& q2,
                           double h);
/// h · F((q1+q2)/2, (q2−q1)/h). Throws DomainError for h ≤ 0.
VectorXd discrete_force(const LagrangianSystem& sys, const VectorXd& q1, const VectorXd& q2,
                        double h);

/// Slot derivatives of the midpoint discrete Lagrangian.
VectorXd d1_discrete_lagrangian(const LagrangianSystem& sys, const VectorXd& q1,
                                const VectorXd& q2, double h);
VectorXd d2_discrete_lagrangian(const LagrangianSystem& sys, const VectorXd& q1,
                                const VectorXd& q2, double h);

/// D₂L_d(q1,q2) + D₁L_d(q2,q3) + ½(F_d(q1,q2) + F_d(q2,q3)).
VectorXd del(const LagrangianSystem& sys, const ConfigTriple& triple);
/// ‖del‖².
double del_residual(const LagrangianSystem& sys, const ConfigTriple& triple);

/// ∂del/∂q3, used by the variational integrator's Newton iteration.
MatrixXd del_jacobian_q3(const LagrangianSystem& sys, const ConfigTriple& triple);

}  // namespace delsmm::mech
