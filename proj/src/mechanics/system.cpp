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

#include "delsmm/mechanics/system.hpp"

#include <cmath>
#include <utility>

#include "delsmm/errors.hpp"

namespace delsmm::mech {

namespace {

template <class F>
MatrixXd central_jacobian(const F& f, const VectorXd& x, double step) {
  const auto n = x.size();
  VectorXd probe = x;
  MatrixXd jac;
  for (Eigen::Index j = 0; j < n; ++j) {
    probe(j) = x(j) + step;
    const VectorXd plus = f(probe);
    probe(j) = x(j) - step;
    const VectorXd minus = f(probe);
    probe(j) = x(j);
    if (j == 0) jac.resize(plus.size(), n);
    jac.col(j) = (plus - minus) / (2.0 * step);
  }
  return jac;
}

}  // namespace

VectorXd LagrangianSystem::force(const VectorXd& q, const VectorXd&) const {
  return VectorXd::Zero(q.size());
}

std::vector<MatrixXd> LagrangianSystem::mass_partials(const VectorXd& q) const {
  std::vector<MatrixXd> out;
  VectorXd probe = q;
  for (Eigen::Index j = 0; j < q.size(); ++j) {
    probe(j) = q(j) + fd_step_;
    const MatrixXd plus = mass(probe);
    probe(j) = q(j) - fd_step_;
    const MatrixXd minus = mass(probe);
    probe(j) = q(j);
    out.push_back((plus - minus) / (2.0 * fd_step_));
  }
  return out;
}

VectorXd LagrangianSystem::potential_gradient(const VectorXd& q) const {
  return central_jacobian(
             [&](const VectorXd& x) { return VectorXd::Constant(1, potential(x)); }, q, fd_step_)
      .row(0)
      .transpose();
}

MatrixXd LagrangianSystem::lagrangian_q_hessian(const VectorXd& q, const VectorXd& qdot) const {
  // Differences of a differenced quantity; the wider step bounds round-off.
  return central_jacobian([&](const VectorXd& x) { return lagrangian_q(x, qdot); }, q, 1e-4);
}

MatrixXd LagrangianSystem::force_q_jacobian(const VectorXd& q, const VectorXd& qdot) const {
  if (!has_force()) return MatrixXd::Zero(q.size(), q.size());
  return central_jacobian([&](const VectorXd& x) { return force(x, qdot); }, q, fd_step_);
}

MatrixXd LagrangianSystem::force_qdot_jacobian(const VectorXd& q, const VectorXd& qdot) const {
  if (!has_force()) return MatrixXd::Zero(q.size(), q.size());
  return central_jacobian([&](const VectorXd& v) { return force(q, v); }, qdot, fd_step_);
}

VectorXd LagrangianSystem::lagrangian_q(const VectorXd& q, const VectorXd& qdot) const {
  const std::vector<MatrixXd> dm = mass_partials(q);
  VectorXd out = -potential_gradient(q);
  for (std::size_t j = 0; j < dm.size(); ++j) {
    out(static_cast<Eigen::Index>(j)) += 0.5 * qdot.dot(dm[j] * qdot);
  }
  return out;
}

// ---------------------------------------------------------------------------

DoublePendulum::DoublePendulum(const DoublePendulumParams& params, bool damped)
    : p_(params), damped_(damped) {
  const double values[] = {p_.m1, p_.m2, p_.l1, p_.l2, p_.g, p_.eta1, p_.eta2};
  for (double v : values) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw DomainError("dp_system: physical parameters must be positive and finite");
    }
  }
}

MatrixXd DoublePendulum::mass(const VectorXd& q) const {
  const double i1 = p_.m1 * p_.l1 * p_.l1 / 3.0;
  const double i2 = p_.m2 * p_.l2 * p_.l2 / 3.0;
  const double a = p_.m2 * p_.l1 * p_.l2;
  const double c2 = std::cos(q(1));
  MatrixXd m(2, 2);
  m(0, 0) = i1 + i2 + p_.m2 * p_.l1 * p_.l1 + a * c2;
  m(0, 1) = i2 + 0.5 * a * c2;
  m(1, 0) = m(0, 1);
  m(1, 1) = i2;
  return m;
}

double DoublePendulum::potential(const VectorXd& q) const {
  return -0.5 * p_.m1 * p_.g * p_.l1 * std::cos(q(0)) -
         p_.m2 * p_.g * (p_.l1 * std::cos(q(0)) + 0.5 * p_.l2 * std::cos(q(0) + q(1)));
}

VectorXd DoublePendulum::force(const VectorXd& q, const VectorXd& qdot) const {
  if (!damped_) return VectorXd::Zero(q.size());
  return VectorXd{{-p_.eta1 * qdot(0), -p_.eta2 * qdot(1)}};
}

std::vector<MatrixXd> DoublePendulum::mass_partials(const VectorXd& q) const {
  const double a = p_.m2 * p_.l1 * p_.l2;
  const double s2 = std::sin(q(1));
  MatrixXd d2(2, 2);
  d2 << -a * s2, -0.5 * a * s2, -0.5 * a * s2, 0.0;
  return {MatrixXd::Zero(2, 2), d2};
}

VectorXd DoublePendulum::potential_gradient(const VectorXd& q) const {
  const double s1 = std::sin(q(0));
  const double s12 = std::sin(q(0) + q(1));
  return VectorXd{{0.5 * p_.m1 * p_.g * p_.l1 * s1 + p_.m2 * p_.g * (p_.l1 * s1 + 0.5 * p_.l2 * s12),
                   0.5 * p_.m2 * p_.g * p_.l2 * s12}};
}

MatrixXd DoublePendulum::lagrangian_q_hessian(const VectorXd& q, const VectorXd& qdot) const {
  const double c1 = std::cos(q(0));
  const double c12 = std::cos(q(0) + q(1));
  const double a = p_.m2 * p_.l1 * p_.l2;
  const double v11 = 0.5 * p_.m1 * p_.g * p_.l1 * c1 + p_.m2 * p_.g * (p_.l1 * c1 + 0.5 * p_.l2 * c12);
  const double v12 = 0.5 * p_.m2 * p_.g * p_.l2 * c12;
  const double kinetic = -0.5 * a * std::cos(q(1)) * (qdot(0) * qdot(0) + qdot(0) * qdot(1));
  MatrixXd h(2, 2);
  h << -v11, -v12, -v12, -v12 + kinetic;
  return h;
}

MatrixXd DoublePendulum::force_q_jacobian(const VectorXd&, const VectorXd&) const {
  return MatrixXd::Zero(2, 2);
}

MatrixXd DoublePendulum::force_qdot_jacobian(const VectorXd&, const VectorXd&) const {
  if (!damped_) return MatrixXd::Zero(2, 2);
  return VectorXd{{-p_.eta1, -p_.eta2}}.asDiagonal();
}

DoublePendulum dp_system(const DoublePendulumParams& params, bool damped) {
  return DoublePendulum(params, damped);
}

// ---------------------------------------------------------------------------

namespace {

ad::Tensor as_row(const VectorXd& v) {
  return ad::Tensor(1, static_cast<std::size_t>(v.size()),
                    std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace

SmmSystem::SmmSystem(nn::SmmParams params) : params_(std::move(params)) { params_.validate(); }

MatrixXd SmmSystem::mass(const VectorXd& q) const { return nn::mass_matrix(params_, q); }

double SmmSystem::potential(const VectorXd& q) const { return nn::potential(params_, q); }

VectorXd SmmSystem::force(const VectorXd& q, const VectorXd& qdot) const {
  if (params_.conservative()) return VectorXd::Zero(q.size());
  return nn::force(params_, q, qdot);
}

std::vector<MatrixXd> SmmSystem::mass_partials(const VectorXd& q) const {
  ad::Tape tape;
  const nn::BoundSmm smm = nn::bind(tape, params_, false);
  const ad::Var x = tape.variable(as_row(q));
  const ad::Var m = nn::mass_rows(smm, x);
  const auto n = q.size();
  std::vector<MatrixXd> out;
  for (Eigen::Index j = 0; j < n; ++j) {
    ad::Tensor e(1, static_cast<std::size_t>(n));
    e[static_cast<std::size_t>(j)] = 1.0;
    const ad::Seed seed{x, tape.constant(std::move(e))};
    const ad::Tensor dm = tape.jvp(m, std::span<const ad::Seed>(&seed, 1)).value();
    out.push_back(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                 Eigen::RowMajor>>(dm.data(), n, n));
  }
  return out;
}

VectorXd SmmSystem::potential_gradient(const VectorXd& q) const {
  ad::Tape tape;
  const nn::BoundSmm smm = nn::bind(tape, params_, false);
  const ad::Var x = tape.variable(as_row(q));
  const ad::Tensor g = tape.backward(nn::potential_rows(smm, x))[x];
  return Eigen::Map<const VectorXd>(g.data(), q.size());
}

}  // namespace delsmm::mech
