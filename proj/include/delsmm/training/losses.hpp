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
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "delsmm/diffcore/tape.hpp"
#include "delsmm/errors.hpp"
#include "delsmm/mechanics/batched.hpp"
#include "delsmm/netparam/smm.hpp"
#include "delsmm/smoother/smoother.hpp"

namespace delsmm::train {

using Eigen::MatrixXd;

enum class Method { kDel, kAccel, kNextState };

std::string_view method_name(Method m);
/// Accepts "del", "accel", "nextstate". Throws ConfigError otherwise.
Method parse_method(std::string_view name);

/// M_θ(q) − αI lost positive definiteness inside the barrier term.
class BarrierViolation : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// ---------------------------------------------------------------------------
// Samples and batches

/// A training sample: rows t .. t + span − 1 of one trajectory.
struct SampleRef {
  std::uint32_t trajectory = 0;
  std::uint32_t t = 0;
};

/// Rows per sample: 3 for DEL triples, 1 for acceleration tuples, 2 for
/// next-state pairs.
std::size_t sample_span(Method m);

/// Every sample that fits inside a single trajectory, in trajectory-major
/// order.
std::vector<SampleRef> enumerate_samples(const std::vector<smooth::SmoothedTrajectory>& data,
                                         Method m);

/// Row-aligned batch tensors. Only the fields used by `method` are filled.
struct BatchData {
  Method method = Method::kDel;
  double h = 0.0;
  MatrixXd q1, q2, q3;        // DEL triples
  MatrixXd q, qdot, qddot;    // acceleration tuples and next-state sources
  MatrixXd q_next, qdot_next; // next-state targets

  std::size_t size() const;
};

/// Throws ContractViolation for a sample that runs past its trajectory or
/// trajectories with different step sizes.
BatchData gather(const std::vector<smooth::SmoothedTrajectory>& data, Method m,
                 std::span<const SampleRef> samples);

ad::Tensor to_tensor(const MatrixXd& m);

// ---------------------------------------------------------------------------
// Losses recorded on the dynamics' tape

/// −mean over rows of logdet(M(q) − αI). Throws BarrierViolation.
ad::Var barrier_term(const mech::BatchDynamics& dyn, ad::Var q, double alpha);

struct DelLossTerms {
  ad::Var residual;  // mean ‖DEL‖² over triples
  ad::Var barrier;   // −mean logdet(M(q₂) − αI); invalid when μ = 0
  ad::Var total;     // residual + μ · barrier
};

DelLossTerms del_loss_terms(const mech::BatchDynamics& dyn, const BatchData& batch, double mu,
                            double alpha);
ad::Var del_loss(const mech::BatchDynamics& dyn, const BatchData& batch, double mu, double alpha);

/// Mean over tuples of ‖a(q, q̇) − q̈‖².
ad::Var accel_loss(const mech::BatchDynamics& dyn, const BatchData& batch);

/// One classical RK4 step on the tape. Throws IntegrationBlowup.
std::pair<ad::Var, ad::Var> rk4_tape(const mech::BatchDynamics& dyn, ad::Var q, ad::Var qdot,
                                     double h);

/// Mean over tuples of ‖q′ − q̃′‖² + ‖q̇′ − q̃̇′‖² after one RK4 step.
ad::Var nextstate_loss(const mech::BatchDynamics& dyn, const BatchData& batch);

struct LossValue {
  double value = 0.0;
  std::vector<double> gradient;  // flat layout order; empty unless requested
};

/// Loss for `batch.method` at `params`. μ and α apply to the DEL method only.
LossValue evaluate_loss(const nn::SmmParams& params, const BatchData& batch, double mu,
                        double alpha, bool with_gradient);

// ---------------------------------------------------------------------------
// Mass-matrix diagnostics

/// Smallest eigenvalue of M_θ(q) over the rows of `configs`.
double min_mass_eigenvalue(const nn::SmmParams& params, const MatrixXd& configs);

/// fraction · min eigenvalue of M_θ₀ over `configs`. Throws ContractViolation
/// for an empty set or a fraction outside (0, 1).
double choose_alpha(const nn::SmmParams& params0, const MatrixXd& configs, double fraction = 0.5);

/// Frobenius norm of ∂/∂M of −mean logdet(M(q) − αI), taken with respect to
/// the mass-matrix values rather than the network parameters.
double barrier_mass_gradient_norm(const nn::SmmParams& params, const MatrixXd& configs,
                                  double alpha);

/// Stacks every row of every trajectory's configuration series.
MatrixXd stack_configurations(const std::vector<smooth::SmoothedTrajectory>& data);
/// Middle configurations of every DEL triple: rows 1 .. T−2 of each
/// trajectory.
MatrixXd barrier_configurations(const std::vector<smooth::SmoothedTrajectory>& data);

// ---------------------------------------------------------------------------
// Acceleration error

struct AccelEval {
  double rmse = 0.0;          // over successfully evaluated tuples and coordinates
  std::size_t count = 0;      // tuples attempted, failures included
  std::size_t failures = 0;   // tuples whose mass matrix could not be factored
};

AccelEval evaluate_acceleration(const nn::SmmParams& params, const MatrixXd& q,
                                const MatrixXd& qdot, const MatrixXd& target);
AccelEval evaluate_acceleration(const mech::LagrangianSystem& sys, const MatrixXd& q,
                                const MatrixXd& qdot, const MatrixXd& target);

}  // namespace delsmm::train
