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
#include <vector>

#include "delsmm/netparam/smm.hpp"

namespace delsmm::mech {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// L(q, q̇) = ½ q̇ᵀ M(q) q̇ − V(q) with generalized forces F(q, q̇).
///
/// Derivative hooks default to central differences; analytic systems
/// override them.
class LagrangianSystem {
 public:
  virtual ~LagrangianSystem() = default;

  virtual std::size_t dof() const = 0;
  virtual MatrixXd mass(const VectorXd& q) const = 0;
  virtual double potential(const VectorXd& q) const = 0;
  /// False when F ≡ 0.
  virtual bool has_force() const { return false; }
  virtual VectorXd force(const VectorXd& q, const VectorXd& qdot) const;

  /// ∂M/∂q_j for j = 0..n-1.
  virtual std::vector<MatrixXd> mass_partials(const VectorXd& q) const;
  virtual VectorXd potential_gradient(const VectorXd& q) const;
  /// ∂/∂q of ∂L/∂q at fixed q̇.
  virtual MatrixXd lagrangian_q_hessian(const VectorXd& q, const VectorXd& qdot) const;
  virtual MatrixXd force_q_jacobian(const VectorXd& q, const VectorXd& qdot) const;
  virtual MatrixXd force_qdot_jacobian(const VectorXd& q, const VectorXd& qdot) const;

  /// ∂L/∂q_j = ½ q̇ᵀ (∂M/∂q_j) q̇ − ∂V/∂q_j.
  VectorXd lagrangian_q(const VectorXd& q, const VectorXd& qdot) const;

 protected:
  double fd_step_ = 1e-6;
};

/// Table-1 double pendulum: uniform rods pinned at one end.
struct DoublePendulumParams {
  double m1 = 1.0;
  double m2 = 1.0;
  double l1 = 1.0;
  double l2 = 1.0;
  double g = 10.0;
  double eta1 = 0.5;
  double eta2 = 0.5;
};

class DoublePendulum final : public LagrangianSystem {
 public:
  /// Throws DomainError for a non-positive physical parameter.
  DoublePendulum(const DoublePendulumParams& params, bool damped);

  std::size_t dof() const override { return 2; }
  MatrixXd mass(const VectorXd& q) const override;
  double potential(const VectorXd& q) const override;
  bool has_force() const override { return damped_; }
  /// −η ∘ q̇ when damped.
  VectorXd force(const VectorXd& q, const VectorXd& qdot) const override;

  std::vector<MatrixXd> mass_partials(const VectorXd& q) const override;
  VectorXd potential_gradient(const VectorXd& q) const override;
  MatrixXd lagrangian_q_hessian(const VectorXd& q, const VectorXd& qdot) const override;
  MatrixXd force_q_jacobian(const VectorXd& q, const VectorXd& qdot) const override;
  MatrixXd force_qdot_jacobian(const VectorXd& q, const VectorXd& qdot) const override;

  const DoublePendulumParams& params() const { return p_; }
  bool damped() const { return damped_; }

 private:
  DoublePendulumParams p_;
  bool damped_;
};

DoublePendulum dp_system(const DoublePendulumParams& params, bool damped);

/// A structured mechanical model viewed through the pointwise interface.
class SmmSystem final : public LagrangianSystem {
 public:
  explicit SmmSystem(nn::SmmParams params);

  std::size_t dof() const override { return params_.dof(); }
  MatrixXd mass(const VectorXd& q) const override;
  double potential(const VectorXd& q) const override;
  bool has_force() const override { return !params_.conservative(); }
  VectorXd force(const VectorXd& q, const VectorXd& qdot) const override;

  std::vector<MatrixXd> mass_partials(const VectorXd& q) const override;
  VectorXd potential_gradient(const VectorXd& q) const override;

  const nn::SmmParams& params() const { return params_; }

 private:
  nn::SmmParams params_;
};

}  // namespace delsmm::mech
