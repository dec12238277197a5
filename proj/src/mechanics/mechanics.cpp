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

#include "delsmm/mechanics/mechanics.hpp"

#include <string>

#include "delsmm/errors.hpp"

namespace delsmm::mech {

namespace {

void check_step(double h, const char* where) {
  if (!(h > 0.0)) throw DomainError(std::string(where) + ": step size must be positive");
}

void check_dim(const LagrangianSystem& sys, const VectorXd& v, const char* where) {
  if (static_cast<std::size_t>(v.size()) != sys.dof()) {
    throw ContractViolation(std::string(where) + ": vector has dimension " +
                            std::to_string(v.size()) + ", system has " +
                            std::to_string(sys.dof()));
  }
}

// K(i, j) = ((∂M/∂q_j) q̇)_i
MatrixXd velocity_mass_partials(const std::vector<MatrixXd>& dm, const VectorXd& qdot) {
  MatrixXd k(qdot.size(), qdot.size());
  for (std::size_t j = 0; j < dm.size(); ++j) k.col(static_cast<Eigen::Index>(j)) = dm[j] * qdot;
  return k;
}

}  // namespace

void ConfigTriple::validate(std::size_t dof) const {
  const auto n = static_cast<Eigen::Index>(dof);
  if (q1.size() != n || q2.size() != n || q3.size() != n) {
    throw ContractViolation("ConfigTriple: configuration dimension mismatch");
  }
  check_step(h, "ConfigTriple");
}

double lagrangian(const LagrangianSystem& sys, const VectorXd& q, const VectorXd& qdot) {
  check_dim(sys, q, "lagrangian");
  check_dim(sys, qdot, "lagrangian");
  return 0.5 * qdot.dot(sys.mass(q) * qdot) - sys.potential(q);
}

double energy(const LagrangianSystem& sys, const VectorXd& q, const VectorXd& qdot) {
  check_dim(sys, q, "energy");
  check_dim(sys, qdot, "energy");
  return 0.5 * qdot.dot(sys.mass(q) * qdot) + sys.potential(q);
}

VectorXd acceleration(const LagrangianSystem& sys, const VectorXd& q, const VectorXd& qdot) {
  check_dim(sys, q, "acceleration");
  check_dim(sys, qdot, "acceleration");
  const MatrixXd m = sys.mass(q);
  const MatrixXd k = velocity_mass_partials(sys.mass_partials(q), qdot);
  VectorXd rhs = sys.lagrangian_q(q, qdot) - k * qdot;
  if (sys.has_force()) rhs += sys.force(q, qdot);
  const Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw PdFailure(0, 0, "acceleration");
  return llt.solve(rhs);
}

double discrete_lagrangian(const LagrangianSystem& sys, const VectorXd& q1, const VectorXd& q2,
                           double h) {
  check_step(h, "discrete_lagrangian");
  return h * lagrangian(sys, 0.5 * (q1 + q2), (q2 - q1) / h);
}

VectorXd discrete_force(const LagrangianSystem& sys, const VectorXd& q1, const VectorXd& q2,
                        double h) {
  check_step(h, "discrete_force");
  check_dim(sys, q1, "discrete_force");
  check_dim(sys, q2, "discrete_force");
  if (!sys.has_force()) return VectorXd::Zero(q1.size());
  return h * sys.force(0.5 * (q1 + q2), (q2 - q1) / h);
}

VectorXd d1_discrete_lagrangian(const LagrangianSystem& sys, const VectorXd& q1,
                                const VectorXd& q2, double h) {
  check_step(h, "d1_discrete_lagrangian");
  const VectorXd qm = 0.5 * (q1 + q2);
  const VectorXd v = (q2 - q1) / h;
  return 0.5 * h * sys.lagrangian_q(qm, v) - sys.mass(qm) * v;
}

VectorXd d2_discrete_lagrangian(const LagrangianSystem& sys, const VectorXd& q1,
                                const VectorXd& q2, double h) {
  check_step(h, "d2_discrete_lagrangian");
  const VectorXd qm = 0.5 * (q1 + q2);
  const VectorXd v = (q2 - q1) / h;
  return 0.5 * h * sys.lagrangian_q(qm, v) + sys.mass(qm) * v;
}

VectorXd del(const LagrangianSystem& sys, const ConfigTriple& t) {
  t.validate(sys.dof());
  VectorXd out = d2_discrete_lagrangian(sys, t.q1, t.q2, t.h) +
                 d1_discrete_lagrangian(sys, t.q2, t.q3, t.h);
  if (sys.has_force()) {
    out += 0.5 * (discrete_force(sys, t.q1, t.q2, t.h) + discrete_force(sys, t.q2, t.q3, t.h));
  }
  return out;
}

double del_residual(const LagrangianSystem& sys, const ConfigTriple& triple) {
  return del(sys, triple).squaredNorm();
}

MatrixXd del_jacobian_q3(const LagrangianSystem& sys, const ConfigTriple& t) {
  t.validate(sys.dof());
  const double h = t.h;
  const VectorXd qm = 0.5 * (t.q2 + t.q3);
  const VectorXd v = (t.q3 - t.q2) / h;
  const MatrixXd k = velocity_mass_partials(sys.mass_partials(qm), v);
  MatrixXd j = 0.25 * h * sys.lagrangian_q_hessian(qm, v) + 0.5 * k.transpose() - 0.5 * k -
               sys.mass(qm) / h;
  if (sys.has_force()) {
    j += 0.25 * h * sys.force_q_jacobian(qm, v) + 0.5 * sys.force_qdot_jacobian(qm, v);
  }
  return j;
}

}  // namespace delsmm::mech
