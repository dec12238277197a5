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
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "delsmm/mechanics/system.hpp"

namespace delsmm::integ {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// q̈ as a function of (q, q̇).
using AccelFn = std::function<VectorXd(const VectorXd& q, const VectorXd& qdot)>;

/// Classical RK4 on the first-order system (q, q̇). Throws IntegrationBlowup
/// on a non-finite stage.
std::pair<VectorXd, VectorXd> rk4_step(const AccelFn& accel, const VectorXd& q,
                                       const VectorXd& qdot, double h);

struct NewtonOptions {
  double tolerance = 1e-10;  // on ‖DEL‖∞
  int max_iterations = 50;
  double stall_factor = 10.0;  // accepted multiple of tolerance once updates hit roundoff
  int max_backtracks = 30;     // step halvings per iteration
};

/// Solves DEL(q_prev, q_curr, q_next) = 0 for q_next by damped Newton from
/// 2 q_curr − q_prev. Throws NonConvergence carrying the final residual.
VectorXd variational_step(const mech::LagrangianSystem& sys, const VectorXd& q_prev,
                          const VectorXd& q_curr, double h, const NewtonOptions& opts = {});

/// Configurations sampled every h seconds, one row per step.
struct Trajectory {
  MatrixXd configs;  // T×n
  double h = 0.0;
  std::string system;
  std::uint64_t seed = 0;

  Eigen::Index length() const { return configs.rows(); }
  /// Throws ContractViolation unless T ≥ 3, h > 0 and all entries are finite.
  void validate() const;
};

/// Starts at rest, q_0 = q_1, then repeats variational_step.
Trajectory simulate(const mech::LagrangianSystem& sys, const VectorXd& q0, double h, int steps,
                    const NewtonOptions& opts = {});

/// Joint angles uniform in [−π/2, π/2).
VectorXd random_rest_configuration(std::size_t dof, std::mt19937_64& rng);

struct ObservedTrajectory {
  MatrixXd observations;  // T×n
  double sigma = 0.0;
  double h = 0.0;
  std::string system;
  std::uint64_t seed = 0;
};

/// y_t = q_t + v_t with v_t ~ N(0, σ²I). Throws DomainError for σ < 0.
ObservedTrajectory add_noise(const Trajectory& traj, double sigma, std::mt19937_64& rng);

/// Total energy at each midpoint (q_t + q_{t+1})/2 with velocity
/// (q_{t+1} − q_t)/h; T−1 values.
std::vector<double> midpoint_energies(const mech::LagrangianSystem& sys, const MatrixXd& configs,
                                      double h);

// ---------------------------------------------------------------------------
// Files

/// Comma-separated table with a header row and shortest round-trip doubles.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const MatrixXd& rows);
/// Throws Error on unreadable files, ContractViolation on ragged or
/// non-numeric rows.
std::pair<std::vector<std::string>, MatrixXd> read_csv(const std::string& path);
std::string format_double(double v);

/// `t,q1..qn` CSV at `path` plus `path + ".json"` with h, seed, system and sigma.
void save_trajectory(const std::string& path, const MatrixXd& configs, double h,
                     const std::string& system, std::uint64_t seed, double sigma);
ObservedTrajectory load_trajectory(const std::string& path);

}  // namespace delsmm::integ
