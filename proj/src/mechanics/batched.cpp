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

#include "delsmm/mechanics/batched.hpp"

#include <string>
#include <vector>

#include "delsmm/errors.hpp"
#include "delsmm/mechanics/mechanics.hpp"

namespace delsmm::mech {

using ad::Tensor;
using ad::Var;

namespace {

void check_batch(Var q, Var qdot, std::size_t dof, const char* where) {
  if (q.cols() != dof || qdot.cols() != dof || q.rows() != qdot.rows()) {
    throw ContractViolation(std::string(where) + ": expected two [B×" + std::to_string(dof) +
                            "] batches, got " + shape_string(q.value()) + " and " +
                            shape_string(qdot.value()));
  }
}

Tensor unit_direction(std::size_t rows, std::size_t cols, std::size_t j) {
  Tensor e(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) e(r, j) = 1.0;
  return e;
}

VectorXd row_of(const Tensor& t, std::size_t r) {
  VectorXd v(static_cast<Eigen::Index>(t.cols()));
  for (std::size_t c = 0; c < t.cols(); ++c) v(static_cast<Eigen::Index>(c)) = t(r, c);
  return v;
}

}  // namespace

Var SmmBatchDynamics::mass_rows(Var q) const { return nn::mass_rows(smm_, q); }

BatchTerms SmmBatchDynamics::terms(Var q, Var qdot, bool with_coriolis) const {
  const std::size_t n = smm_.dof;
  check_batch(q, qdot, n, "SmmBatchDynamics::terms");
  ad::Tape& tape = *tape_;
  BatchTerms t;
  t.mass = nn::mass_rows(smm_, q);
  t.momentum = ad::batch_matvec(t.mass, qdot);
  const Var lag = ad::sub(ad::scale(ad::sum_cols(ad::mul(qdot, t.momentum)), 0.5),
                          nn::potential_rows(smm_, q));
  std::vector<Var> columns;
  columns.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    const ad::Seed seed{q, tape.constant(unit_direction(q.rows(), n, j))};
    columns.push_back(tape.jvp(lag, std::span<const ad::Seed>(&seed, 1)));
  }
  t.lq = ad::concat_cols(columns);
  if (with_coriolis) {
    const ad::Seed seed{q, qdot};
    t.coriolis = tape.jvp(t.momentum, std::span<const ad::Seed>(&seed, 1));
  }
  if (!smm_.conservative()) t.force = nn::force_rows(smm_, q, qdot);
  return t;
}

Var ConstantBatchDynamics::mass_rows(Var q) const {
  const std::size_t n = sys_->dof();
  Tensor m(q.rows(), n * n);
  for (std::size_t r = 0; r < q.rows(); ++r) {
    const MatrixXd mr = sys_->mass(row_of(q.value(), r));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        m(r, i * n + j) = mr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
    }
  }
  return tape_->constant(std::move(m));
}

BatchTerms ConstantBatchDynamics::terms(Var q, Var qdot, bool with_coriolis) const {
  const std::size_t n = sys_->dof();
  check_batch(q, qdot, n, "ConstantBatchDynamics::terms");
  const std::size_t rows = q.rows();
  Tensor p(rows, n), lq(rows, n), c(rows, n), f(rows, n);
  for (std::size_t r = 0; r < rows; ++r) {
    const VectorXd qr = row_of(q.value(), r);
    const VectorXd vr = row_of(qdot.value(), r);
    const VectorXd pr = sys_->mass(qr) * vr;
    const VectorXd lr = sys_->lagrangian_q(qr, vr);
    VectorXd cr = VectorXd::Zero(vr.size());
    if (with_coriolis) {
      const std::vector<MatrixXd> dm = sys_->mass_partials(qr);
      for (std::size_t j = 0; j < n; ++j) cr += (dm[j] * vr) * vr(static_cast<Eigen::Index>(j));
    }
    const VectorXd fr = sys_->has_force() ? sys_->force(qr, vr) : VectorXd::Zero(vr.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      p(r, i) = pr(ii);
      lq(r, i) = lr(ii);
      c(r, i) = cr(ii);
      f(r, i) = fr(ii);
    }
  }
  BatchTerms t;
  t.mass = mass_rows(q);
  t.momentum = tape_->constant(std::move(p));
  t.lq = tape_->constant(std::move(lq));
  if (with_coriolis) t.coriolis = tape_->constant(std::move(c));
  if (sys_->has_force()) t.force = tape_->constant(std::move(f));
  return t;
}

// ---------------------------------------------------------------------------

Var batch_del(const BatchDynamics& dyn, Var q1, Var q2, Var q3, double h) {
  if (!(h > 0.0)) throw DomainError("batch_del: step size must be positive");
  check_batch(q1, q2, dyn.dof(), "batch_del");
  check_batch(q2, q3, dyn.dof(), "batch_del");
  const std::size_t b = q1.rows();
  // Both midpoint states of every triple go through the model in one pass.
  const Var first[] = {q1, q2};
  const Var second[] = {q2, q3};
  const Var lo = ad::concat_rows(first);
  const Var hi = ad::concat_rows(second);
  const Var qm = ad::scale(ad::add(lo, hi), 0.5);
  const Var v = ad::scale(ad::sub(hi, lo), 1.0 / h);
  const BatchTerms t = dyn.terms(qm, v, false);

  const Var lq_a = ad::slice_rows(t.lq, 0, b);
  const Var lq_b = ad::slice_rows(t.lq, b, b);
  const Var p_a = ad::slice_rows(t.momentum, 0, b);
  const Var p_b = ad::slice_rows(t.momentum, b, b);
  // D₂L_d(q1,q2) + D₁L_d(q2,q3)
  Var out = ad::add(ad::scale(ad::add(lq_a, lq_b), 0.5 * h), ad::sub(p_a, p_b));
  if (t.force.valid()) {
    const Var f_sum = ad::add(ad::slice_rows(t.force, 0, b), ad::slice_rows(t.force, b, b));
    out = ad::add(out, ad::scale(f_sum, 0.5 * h));
  }
  return out;
}

Var batch_acceleration(const BatchDynamics& dyn, Var q, Var qdot) {
  const BatchTerms t = dyn.terms(q, qdot, true);
  Var rhs = ad::sub(t.lq, t.coriolis);
  if (t.force.valid()) rhs = ad::add(rhs, t.force);
  return ad::batch_solve(t.mass, rhs);
}

}  // namespace delsmm::mech
