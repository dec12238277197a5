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

#include "delsmm/training/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "delsmm/mechanics/mechanics.hpp"

namespace delsmm::train {

using ad::Tensor;
using ad::Var;

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kDel:
      return "del";
    case Method::kAccel:
      return "accel";
    case Method::kNextState:
      return "nextstate";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  if (name == "del") return Method::kDel;
  if (name == "accel") return Method::kAccel;
  if (name == "nextstate") return Method::kNextState;
  throw ConfigError("unknown training method '" + std::string(name) +
                    "' (expected del, accel or nextstate)");
}

// ---------------------------------------------------------------------------

std::size_t sample_span(Method m) {
  switch (m) {
    case Method::kDel:
      return 3;
    case Method::kAccel:
      return 1;
    case Method::kNextState:
      return 2;
  }
  return 1;
}

std::vector<SampleRef> enumerate_samples(const std::vector<smooth::SmoothedTrajectory>& data,
                                         Method m) {
  const auto span = static_cast<Eigen::Index>(sample_span(m));
  std::vector<SampleRef> out;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const Eigen::Index rows = data[k].q.rows();
    for (Eigen::Index t = 0; t + span <= rows; ++t) {
      out.push_back({static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(t)});
    }
  }
  return out;
}

std::size_t BatchData::size() const {
  return static_cast<std::size_t>(method == Method::kDel ? q2.rows() : q.rows());
}

BatchData gather(const std::vector<smooth::SmoothedTrajectory>& data, Method m,
                 std::span<const SampleRef> samples) {
  if (data.empty()) throw ContractViolation("gather: no trajectories");
  const auto n = data.front().q.cols();
  const auto b = static_cast<Eigen::Index>(samples.size());
  const auto span = static_cast<Eigen::Index>(sample_span(m));
  BatchData out;
  out.method = m;
  out.h = data.front().h;
  for (const auto& d : data) {
    if (d.h != out.h) throw ContractViolation("gather: trajectories use different step sizes");
    if (d.q.cols() != n) throw ContractViolation("gather: trajectories differ in dimension");
  }
  auto alloc = [&](MatrixXd& x) { x.resize(b, n); };
  if (m == Method::kDel) {
    alloc(out.q1);
    alloc(out.q2);
    alloc(out.q3);
  } else {
    alloc(out.q);
    alloc(out.qdot);
    if (m == Method::kAccel) alloc(out.qddot);
    if (m == Method::kNextState) {
      alloc(out.q_next);
      alloc(out.qdot_next);
    }
  }
  for (Eigen::Index r = 0; r < b; ++r) {
    const SampleRef s = samples[static_cast<std::size_t>(r)];
    if (s.trajectory >= data.size()) throw ContractViolation("gather: trajectory index out of range");
    const smooth::SmoothedTrajectory& d = data[s.trajectory];
    const auto t = static_cast<Eigen::Index>(s.t);
    if (t + span > d.q.rows()) throw ContractViolation("gather: sample runs past its trajectory");
    switch (m) {
      case Method::kDel:
        out.q1.row(r) = d.q.row(t);
        out.q2.row(r) = d.q.row(t + 1);
        out.q3.row(r) = d.q.row(t + 2);
        break;
      case Method::kAccel:
        out.q.row(r) = d.q.row(t);
        out.qdot.row(r) = d.qdot.row(t);
        out.qddot.row(r) = d.qddot.row(t);
        break;
      case Method::kNextState:
        out.q.row(r) = d.q.row(t);
        out.qdot.row(r) = d.qdot.row(t);
        out.q_next.row(r) = d.q.row(t + 1);
        out.qdot_next.row(r) = d.qdot.row(t + 1);
        break;
    }
  }
  return out;
}

Tensor to_tensor(const MatrixXd& m) {
  Tensor t(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      t(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
    }
  }
  return t;
}

// ---------------------------------------------------------------------------

namespace {

Var constant(ad::Tape& tape, const MatrixXd& m) { return tape.constant(to_tensor(m)); }

Var shifted_mass(ad::Tape& tape, Var mass, std::size_t n, double alpha) {
  Tensor shift(1, n * n);
  for (std::size_t i = 0; i < n; ++i) shift(0, i * n + i) = -alpha;
  return ad::add(mass, tape.constant(std::move(shift)));
}

void require_finite(Var v, const char* what) {
  if (!v.value().all_finite()) throw IntegrationBlowup(std::string("rk4_tape: non-finite ") + what);
}

}  // namespace

Var barrier_term(const mech::BatchDynamics& dyn, Var q, double alpha) {
  ad::Tape& tape = dyn.tape();
  const Var m = shifted_mass(tape, dyn.mass_rows(q), dyn.dof(), alpha);
  Var logdet;
  try {
    logdet = ad::batch_logdet(m);
  } catch (const PdFailure& e) {
    throw BarrierViolation(std::string("barrier: M - alpha I not positive definite: ") + e.what());
  }
  return ad::scale(ad::sum(logdet), -1.0 / static_cast<double>(q.rows()));
}

DelLossTerms del_loss_terms(const mech::BatchDynamics& dyn, const BatchData& batch, double mu,
                            double alpha) {
  if (batch.method != Method::kDel) throw ContractViolation("del_loss: batch holds no triples");
  if (batch.size() == 0) throw ContractViolation("del_loss: empty batch");
  ad::Tape& tape = dyn.tape();
  const Var q2 = constant(tape, batch.q2);
  const Var d = mech::batch_del(dyn, constant(tape, batch.q1), q2, constant(tape, batch.q3),
                                batch.h);
  DelLossTerms out;
  out.residual = ad::scale(ad::norm_sq(d), 1.0 / static_cast<double>(batch.size()));
  out.total = out.residual;
  if (mu > 0.0) {
    out.barrier = barrier_term(dyn, q2, alpha);
    out.total = ad::add(out.residual, ad::scale(out.barrier, mu));
  }
  return out;
}

Var del_loss(const mech::BatchDynamics& dyn, const BatchData& batch, double mu, double alpha) {
  return del_loss_terms(dyn, batch, mu, alpha).total;
}

Var accel_loss(const mech::BatchDynamics& dyn, const BatchData& batch) {
  if (batch.method != Method::kAccel) {
    throw ContractViolation("accel_loss: batch holds no acceleration targets");
  }
  if (batch.size() == 0) throw ContractViolation("accel_loss: empty batch");
  ad::Tape& tape = dyn.tape();
  const Var a = mech::batch_acceleration(dyn, constant(tape, batch.q), constant(tape, batch.qdot));
  return ad::scale(ad::norm_sq(ad::sub(a, constant(tape, batch.qddot))),
                   1.0 / static_cast<double>(batch.size()));
}

std::pair<Var, Var> rk4_tape(const mech::BatchDynamics& dyn, Var q, Var qdot, double h) {
  auto accel = [&](Var x, Var xd) {
    const Var a = mech::batch_acceleration(dyn, x, xd);
    require_finite(a, "stage");
    return a;
  };
  const Var k1q = qdot;
  const Var k1v = accel(q, qdot);
  const Var k2q = ad::add(qdot, ad::scale(k1v, 0.5 * h));
  const Var k2v = accel(ad::add(q, ad::scale(k1q, 0.5 * h)), k2q);
  const Var k3q = ad::add(qdot, ad::scale(k2v, 0.5 * h));
  const Var k3v = accel(ad::add(q, ad::scale(k2q, 0.5 * h)), k3q);
  const Var k4q = ad::add(qdot, ad::scale(k3v, h));
  const Var k4v = accel(ad::add(q, ad::scale(k3q, h)), k4q);
  auto combine = [h](Var x, Var a, Var b, Var c, Var d) {
    const Var s = ad::add(ad::add(a, ad::scale(ad::add(b, c), 2.0)), d);
    return ad::add(x, ad::scale(s, h / 6.0));
  };
  const Var q_next = combine(q, k1q, k2q, k3q, k4q);
  const Var v_next = combine(qdot, k1v, k2v, k3v, k4v);
  require_finite(q_next, "state");
  require_finite(v_next, "state");
  return {q_next, v_next};
}

Var nextstate_loss(const mech::BatchDynamics& dyn, const BatchData& batch) {
  if (batch.method != Method::kNextState) {
    throw ContractViolation("nextstate_loss: batch holds no next-state targets");
  }
  if (batch.size() == 0) throw ContractViolation("nextstate_loss: empty batch");
  ad::Tape& tape = dyn.tape();
  const auto [q_next, v_next] =
      rk4_tape(dyn, constant(tape, batch.q), constant(tape, batch.qdot), batch.h);
  const Var err = ad::add(ad::norm_sq(ad::sub(q_next, constant(tape, batch.q_next))),
                          ad::norm_sq(ad::sub(v_next, constant(tape, batch.qdot_next))));
  return ad::scale(err, 1.0 / static_cast<double>(batch.size()));
}

LossValue evaluate_loss(const nn::SmmParams& params, const BatchData& batch, double mu,
                        double alpha, bool with_gradient) {
  ad::Tape tape;
  const nn::BoundSmm bound = nn::bind(tape, params, with_gradient);
  const mech::SmmBatchDynamics dyn(tape, bound);
  Var loss;
  switch (batch.method) {
    case Method::kDel:
      loss = del_loss(dyn, batch, mu, alpha);
      break;
    case Method::kAccel:
      loss = accel_loss(dyn, batch);
      break;
    case Method::kNextState:
      loss = nextstate_loss(dyn, batch);
      break;
  }
  LossValue out;
  out.value = loss.value().item();
  if (with_gradient) out.gradient = bound.flat_gradient(tape.backward(loss));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Tensor mass_values(const nn::SmmParams& params, const MatrixXd& configs) {
  ad::Tape tape;
  const nn::BoundSmm bound = nn::bind(tape, params, false);
  return nn::mass_rows(bound, constant(tape, configs)).value();
}

}  // namespace

double min_mass_eigenvalue(const nn::SmmParams& params, const MatrixXd& configs) {
  if (configs.rows() == 0) throw ContractViolation("min_mass_eigenvalue: no configurations");
  const Tensor m = mass_values(params, configs);
  const auto n = static_cast<Eigen::Index>(params.dof());
  double lowest = std::numeric_limits<double>::infinity();
  MatrixXd mr(n, n);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) mr(i, j) = m(r, static_cast<std::size_t>(i * n + j));
    }
    const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(mr, Eigen::EigenvaluesOnly);
    lowest = std::min(lowest, eig.eigenvalues()(0));
  }
  return lowest;
}

double choose_alpha(const nn::SmmParams& params0, const MatrixXd& configs, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ContractViolation("choose_alpha: fraction must lie in (0, 1)");
  }
  return fraction * min_mass_eigenvalue(params0, configs);
}

double barrier_mass_gradient_norm(const nn::SmmParams& params, const MatrixXd& configs,
                                  double alpha) {
  if (configs.rows() == 0) throw ContractViolation("barrier_mass_gradient_norm: no configurations");
  ad::Tape tape;
  const Var m = tape.variable(mass_values(params, configs));
  const Var shifted = shifted_mass(tape, m, params.dof(), alpha);
  Var logdet;
  try {
    logdet = ad::batch_logdet(shifted);
  } catch (const PdFailure& e) {
    throw BarrierViolation(std::string("barrier: M - alpha I not positive definite: ") + e.what());
  }
  const Var l2 = ad::scale(ad::sum(logdet), -1.0 / static_cast<double>(configs.rows()));
  const Tensor g = tape.backward(l2)[m];
  double s = 0.0;
  for (double x : g.values()) s += x * x;
  return std::sqrt(s);
}

MatrixXd stack_configurations(const std::vector<smooth::SmoothedTrajectory>& data) {
  Eigen::Index rows = 0;
  for (const auto& d : data) rows += d.q.rows();
  MatrixXd out(rows, data.empty() ? 0 : data.front().q.cols());
  Eigen::Index r = 0;
  for (const auto& d : data) {
    out.middleRows(r, d.q.rows()) = d.q;
    r += d.q.rows();
  }
  return out;
}

MatrixXd barrier_configurations(const std::vector<smooth::SmoothedTrajectory>& data) {
  Eigen::Index rows = 0;
  for (const auto& d : data) rows += std::max<Eigen::Index>(d.q.rows() - 2, 0);
  MatrixXd out(rows, data.empty() ? 0 : data.front().q.cols());
  Eigen::Index r = 0;
  for (const auto& d : data) {
    if (d.q.rows() < 3) continue;
    out.middleRows(r, d.q.rows() - 2) = d.q.middleRows(1, d.q.rows() - 2);
    r += d.q.rows() - 2;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_tuples(const MatrixXd& q, const MatrixXd& qdot, const MatrixXd& target) {
  if (q.rows() != qdot.rows() || q.rows() != target.rows() || q.cols() != qdot.cols() ||
      q.cols() != target.cols()) {
    throw ContractViolation("evaluate_acceleration: tuple shapes disagree");
  }
}

AccelEval finish(double sum_sq, std::size_t ok, std::size_t failures, Eigen::Index n) {
  AccelEval out;
  out.count = ok + failures;
  out.failures = failures;
  out.rmse = ok == 0 ? std::numeric_limits<double>::infinity()
                     : std::sqrt(sum_sq / static_cast<double>(ok * static_cast<std::size_t>(n)));
  return out;
}

Tensor smm_accelerations(const nn::SmmParams& params, const MatrixXd& q, const MatrixXd& qdot) {
  ad::Tape tape;
  const mech::SmmBatchDynamics dyn(tape, nn::bind(tape, params, false));
  return mech::batch_acceleration(dyn, constant(tape, q), constant(tape, qdot)).value();
}

}  // namespace

AccelEval evaluate_acceleration(const nn::SmmParams& params, const MatrixXd& q,
                                const MatrixXd& qdot, const MatrixXd& target) {
  check_tuples(q, qdot, target);
  const Eigen::Index n = q.cols();
  double sum_sq = 0.0;
  std::size_t ok = 0, failures = 0;
  auto accumulate = [&](const Tensor& a, Eigen::Index offset) {
    for (std::size_t r = 0; r < a.rows(); ++r) {
      double row = 0.0;
      for (Eigen::Index c = 0; c < n; ++c) {
        const double e = a(r, static_cast<std::size_t>(c)) -
                         target(offset + static_cast<Eigen::Index>(r), c);
        row += e * e;
      }
      if (std::isfinite(row)) {
        sum_sq += row;
        ++ok;
      } else {
        ++failures;
      }
    }
  };
  try {
    accumulate(smm_accelerations(params, q, qdot), 0);
  } catch (const PdFailure&) {
    // Locate the failing tuples one at a time.
    for (Eigen::Index r = 0; r < q.rows(); ++r) {
      try {
        accumulate(smm_accelerations(params, q.row(r), qdot.row(r)), r);
      } catch (const PdFailure&) {
        ++failures;
      }
    }
  }
  return finish(sum_sq, ok, failures, n);
}

AccelEval evaluate_acceleration(const mech::LagrangianSystem& sys, const MatrixXd& q,
                                const MatrixXd& qdot, const MatrixXd& target) {
  check_tuples(q, qdot, target);
  double sum_sq = 0.0;
  std::size_t ok = 0, failures = 0;
  for (Eigen::Index r = 0; r < q.rows(); ++r) {
    try {
      const Eigen::VectorXd a =
          mech::acceleration(sys, q.row(r).transpose(), qdot.row(r).transpose());
      const double e = (a - target.row(r).transpose()).squaredNorm();
      if (std::isfinite(e)) {
        sum_sq += e;
        ++ok;
      } else {
        ++failures;
      }
    } catch (const PdFailure&) {
      ++failures;
    }
  }
  return finish(sum_sq, ok, failures, q.cols());
}

}  // namespace delsmm::train
