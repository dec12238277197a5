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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "delsmm/errors.hpp"
#include "delsmm/integrators/integrators.hpp"
#include "delsmm/mechanics/system.hpp"
#include "delsmm/smoother/smoother.hpp"

namespace delsmm::smooth {
namespace {

using Eigen::VectorXd;

LdsModel basic_model(double h, double r) {
  LdsModel m;
  m.A = transition_matrix(h);
  m.Q = default_process_covariance();
  m.R = r;
  m.m0 = Vec3(0.5, -1.0, 2.0);
  m.P0 = Vec3(1.0, 1.0, 10.0).asDiagonal();
  return m;
}

double rmse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return std::sqrt((a - b).array().square().mean());
}

// ---------------------------------------------------------------------------

TEST(TransitionMatrix, ClosedForm) {
  Mat3 expected;
  expected << 1, 0.05, 0.00125, 0, 1, 0.05, 0, 0, 1;
  EXPECT_LE((transition_matrix(0.05) - expected).cwiseAbs().maxCoeff(), 1e-18);
  EXPECT_EQ(transition_matrix(0.0), Mat3::Identity());
}

TEST(TransitionMatrix, MatchesSeriesExponential) {
  Mat3 gen = Mat3::Zero();
  gen(0, 1) = 1.0;
  gen(1, 2) = 1.0;
  for (double dt : {0.01, 0.05, 0.3, 1.0}) {
    Mat3 term = Mat3::Identity(), series = Mat3::Identity();
    for (int k = 1; k <= 12; ++k) {
      term = term * gen * dt / k;
      series += term;
    }
    EXPECT_LE((transition_matrix(dt) - series).cwiseAbs().maxCoeff(), 1e-14);
  }
}

// ---------------------------------------------------------------------------

TEST(KalmanFilter, HugeNoiseFollowsPrior) {
  const LdsModel m = basic_model(0.05, 1e9);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  VectorXd y(50);
  for (auto& v : y) v = n(rng);
  const FilterResult f = kalman_filter(m, y);
  Vec3 prior = m.m0;
  for (std::size_t t = 0; t < 50; ++t) {
    if (t > 0) prior = m.A * prior;
    EXPECT_LE((f.means[t] - prior).cwiseAbs().maxCoeff(), 1e-3) << t;
  }
}

TEST(KalmanFilter, SingleStepBayesUpdate) {
  const LdsModel m = basic_model(0.05, 0.2);
  const VectorXd y = VectorXd::Constant(1, 1.3);
  const FilterResult f = kalman_filter(m, y);
  const double s = m.P0(0, 0) + m.R;
  const Vec3 k = m.P0.col(0) / s;
  const Vec3 mean = m.m0 + k * (1.3 - m.m0(0));
  const Mat3 cov = m.P0 - k * m.P0.row(0);
  EXPECT_LE((f.means[0] - mean).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((f.covs[0] - cov).cwiseAbs().maxCoeff(), 1e-14);
  const double innov = 1.3 - m.m0(0);
  EXPECT_NEAR(f.log_likelihood, -0.5 * (std::log(2 * M_PI * s) + innov * innov / s), 1e-14);
}

TEST(KalmanFilter, ConstantObservationsWithTinyNoise) {
  const LdsModel m = basic_model(0.05, 1e-12);
  const VectorXd y = VectorXd::Constant(100, 0.7);
  const FilterResult f = kalman_filter(m, y);
  for (std::size_t t = 20; t < 100; ++t) EXPECT_NEAR(f.means[t](0), 0.7, 1e-6);
}

TEST(KalmanFilter, NonPositiveInnovationThrows) {
  LdsModel m = basic_model(0.05, -100.0);
  EXPECT_THROW(kalman_filter(m, VectorXd::Zero(5)), NumericalError);
}

// ---------------------------------------------------------------------------

TEST(RtsSmoother, BoundaryEqualsFiltered) {
  const LdsModel m = basic_model(0.05, 0.01);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  VectorXd y(40);
  for (auto& v : y) v = n(rng);
  const FilterResult f = kalman_filter(m, y);
  const SmootherResult s = rts_smooth(m, f);
  EXPECT_EQ(s.means.back(), f.means.back());
  EXPECT_EQ(s.covs.back(), f.covs.back());
  EXPECT_EQ(s.cross.size(), 39u);
  for (std::size_t t = 0; t < 40; ++t) {
    EXPECT_LE(s.covs[t].trace(), f.covs[t].trace() + 1e-12);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Mat3>(s.covs[t]).eigenvalues()(0), -1e-10);
    EXPECT_LE((s.covs[t] - s.covs[t].transpose()).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(RtsSmoother, RecoversConstantAcceleration) {
  const double h = 0.05, a = 3.0;
  const LdsModel m = basic_model(h, 1e-10);
  VectorXd y(200);
  for (int t = 0; t < 200; ++t) y(t) = 0.5 * a * (t * h) * (t * h);
  const SmootherResult s = rts_smooth(m, kalman_filter(m, y));
  for (std::size_t t = 50; t < 150; ++t) EXPECT_NEAR(s.means[t](2), a, 0.01 * a) << t;
}

TEST(RtsSmoother, SingularPredictionThrows) {
  LdsModel m = basic_model(0.05, 0.1);
  m.Q.setZero();
  m.P0.setZero();
  EXPECT_THROW(rts_smooth(m, kalman_filter(m, VectorXd::Zero(5))), NumericalError);
}

// ---------------------------------------------------------------------------

VectorXd sample_lds(double h, double r, int steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const Mat3 a = transition_matrix(h);
  const Mat3 lq = default_process_covariance().llt().matrixL();
  Vec3 x(0.2, 0.5, 0.0);
  VectorXd y(steps);
  for (int t = 0; t < steps; ++t) {
    if (t > 0) x = a * x + lq * Vec3(n(rng), n(rng), n(rng));
    y(t) = x(0) + std::sqrt(r) * n(rng);
  }
  return y;
}

TEST(EmFit, RecoversObservationNoise) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const VectorXd y = sample_lds(0.05, 0.01, 400, seed);
    const EmFit fit = em_fit(y, 0.05, default_process_covariance());
    EXPECT_GT(fit.model.R, 0.005) << seed;
    EXPECT_LT(fit.model.R, 0.02) << seed;
    EXPECT_LE(fit.iterations, 50);
  }
}

TEST(EmFit, LogLikelihoodMonotoneAndQUntouched) {
  const Mat3 q = default_process_covariance();
  for (std::uint64_t seed = 10; seed < 16; ++seed) {
    const VectorXd y = sample_lds(0.05, 0.04, 200, seed);
    const EmFit fit = em_fit(y, 0.05, q);
    for (std::size_t k = 1; k < fit.log_likelihood.size(); ++k) {
      EXPECT_GE(fit.log_likelihood[k], fit.log_likelihood[k - 1] - 1e-8);
    }
    EXPECT_EQ(fit.model.Q, q);
    EXPECT_EQ(fit.model.A, transition_matrix(0.05));
  }
}

TEST(EmFit, RejectsDegenerateInput) {
  EXPECT_THROW(em_fit(VectorXd::Zero(1), 0.05, default_process_covariance()), ContractViolation);
  EXPECT_THROW(em_fit(VectorXd::Zero(5), 0.0, default_process_covariance()), ContractViolation);
}

// ---------------------------------------------------------------------------

const mech::DoublePendulum kPendulum = mech::dp_system({}, false);

integ::Trajectory pendulum_run(std::uint64_t seed, double amplitude = 1.0) {
  std::mt19937_64 rng(seed);
  const Eigen::VectorXd q0 = amplitude * integ::random_rest_configuration(2, rng);
  return integ::simulate(kPendulum, q0, 0.05, 200);
}

// The fixed process covariance allows acceleration changes of about 1 rad/s²
// per step. Small swings stay inside that envelope; full swings do not and are
// covered by the acceptance suite.
constexpr double kSmallSwing = 0.2;

TEST(SmoothTrajectory, NoiselessRecoversConfigurations) {
  const integ::Trajectory traj = pendulum_run(1, kSmallSwing);
  std::mt19937_64 rng(0);
  const SmoothedTrajectory s = smooth_trajectory(integ::add_noise(traj, 0.0, rng));
  EXPECT_EQ(s.q.rows(), 200);
  EXPECT_EQ(s.qdot.rows(), 200);
  EXPECT_EQ(s.qddot.rows(), 200);
  EXPECT_LE(rmse(s.q, traj.configs), 1e-3);
}

TEST(SmoothTrajectory, DenoisesAtTenthRadian) {
  for (std::uint64_t seed : {2u, 3u, 4u}) {
    const integ::Trajectory traj = pendulum_run(seed, kSmallSwing);
    std::mt19937_64 rng(seed + 100);
    const integ::ObservedTrajectory obs = integ::add_noise(traj, 0.1, rng);
    const SmoothedTrajectory s = smooth_trajectory(obs);
    EXPECT_LT(rmse(s.q, traj.configs), rmse(obs.observations, traj.configs));
    for (const EmFit& f : s.fits) {
      for (std::size_t k = 1; k < f.log_likelihood.size(); ++k) {
        EXPECT_GE(f.log_likelihood[k], f.log_likelihood[k - 1] - 1e-8);
      }
    }
  }
}

TEST(SmoothTrajectory, ProcessCovarianceIsConfigurable) {
  const integ::Trajectory traj = pendulum_run(6);
  std::mt19937_64 rng(6);
  const integ::ObservedTrajectory obs = integ::add_noise(traj, 0.1, rng);
  SmoothOptions opts;
  opts.process_covariance = Vec3(1e-3, 1e-3, 1e3).asDiagonal();
  const SmoothedTrajectory s = smooth_trajectory(obs, opts);
  for (const EmFit& f : s.fits) EXPECT_EQ(f.model.Q, opts.process_covariance);
  EXPECT_EQ(smooth_trajectory(obs).fits[0].model.Q, default_process_covariance());
}

TEST(SmoothTrajectory, DeterministicAndFileRoundTrip) {
  const integ::Trajectory traj = pendulum_run(5);
  std::mt19937_64 rng(5);
  const integ::ObservedTrajectory obs = integ::add_noise(traj, 0.1, rng);
  const SmoothedTrajectory a = smooth_trajectory(obs);
  const SmoothedTrajectory b = smooth_trajectory(obs);
  EXPECT_EQ(a.q, b.q);
  EXPECT_EQ(a.qddot, b.qddot);

  const auto path = (std::filesystem::temp_directory_path() / "delsmm_smooth_test.csv").string();
  save_smoothed(path, a);
  const SmoothedTrajectory back = load_smoothed(path);
  EXPECT_EQ(back.q, a.q);
  EXPECT_EQ(back.qdot, a.qdot);
  EXPECT_EQ(back.qddot, a.qddot);
  EXPECT_EQ(back.h, 0.05);
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".json");
}

}  // namespace
}  // namespace delsmm::smooth
