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
#include <string>
#include <vector>

#include "delsmm/errors.hpp"
#include "delsmm/integrators/integrators.hpp"

namespace delsmm::smooth {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

/// Scalar-observation triple integrator: state (position, velocity,
/// acceleration), observation = position + noise.
struct LdsModel {
  Mat3 A = Mat3::Identity();
  Eigen::RowVector3d C{1.0, 0.0, 0.0};
  Mat3 Q = Mat3::Identity();
  double R = 1.0;
  Vec3 m0 = Vec3::Zero();
  Mat3 P0 = Mat3::Identity();
};

/// exp([[0,1,0],[0,0,1],[0,0,0]] dt) in closed form.
Mat3 transition_matrix(double dt);
/// diag(1e-3, 1e-3, 1)
Mat3 default_process_covariance();

struct FilterResult {
  std::vector<Vec3> pred_means;  // x_t | y_{1:t-1}
  std::vector<Mat3> pred_covs;
  std::vector<Vec3> means;       // x_t | y_{1:t}
  std::vector<Mat3> covs;
  double log_likelihood = 0.0;
};

/// Joseph-form covariance updates. Throws NumericalError when an innovation
/// variance is not positive.
FilterResult kalman_filter(const LdsModel& model, const Eigen::VectorXd& y);

struct SmootherResult {
  std::vector<Vec3> means;   // x_t | y_{1:T}
  std::vector<Mat3> covs;
  std::vector<Mat3> cross;   // Cov(x_{t+1}, x_t | y_{1:T}), T−1 entries
};

/// Rauch–Tung–Striebel backward pass. Throws NumericalError when a predicted
/// covariance is singular.
SmootherResult rts_smooth(const LdsModel& model, const FilterResult& filtered);

/// Thrown when an EM iteration lowers the log-likelihood by more than the
/// slack.
class EmMonotonicityViolation : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct EmOptions {
  int max_iterations = 50;
  double min_gain = 1e-6;        // stop once the per-iteration gain falls below
  double monotone_slack = 1e-8;
};

struct EmFit {
  LdsModel model;
  std::vector<double> log_likelihood;  // before each M-step, then the final model
  int iterations = 0;
};

/// Fits R, m0 and P0 by EM with A and Q held fixed. Throws ContractViolation
/// for fewer than two observations or a non-positive h.
EmFit em_fit(const Eigen::VectorXd& y, double h, const Mat3& q_fixed, const EmOptions& opts = {});

/// Smoothed configuration, velocity and acceleration series, one row per
/// time step.
struct SmoothedTrajectory {
  Eigen::MatrixXd q;
  Eigen::MatrixXd qdot;
  Eigen::MatrixXd qddot;
  double h = 0.0;
  std::vector<EmFit> fits;  // one per coordinate
  std::string split;        // "train", "val", "test" or empty
};

struct SmoothOptions {
  Mat3 process_covariance = default_process_covariance();
  EmOptions em;
};

/// Independent EM + RTS per coordinate.
SmoothedTrajectory smooth_trajectory(const integ::ObservedTrajectory& obs,
                                     const SmoothOptions& opts = {});
std::vector<SmoothedTrajectory> smooth_dataset(const std::vector<integ::ObservedTrajectory>& obs,
                                               const SmoothOptions& opts = {});

/// True-state series for noise-free checks: interior rows 1 .. T−2 of the
/// trajectory, central-difference velocities and the system's accelerations
/// at those states.
SmoothedTrajectory noise_free_states(const mech::LagrangianSystem& sys,
                                     const integ::Trajectory& traj);

/// CSV `t,q1,qdot1,qddot1,...` plus `path + ".json"` with the fitted R, m0, P0,
/// EM iteration counts and log-likelihood traces.
void save_smoothed(const std::string& path, const SmoothedTrajectory& s);
SmoothedTrajectory load_smoothed(const std::string& path);

}  // namespace delsmm::smooth
