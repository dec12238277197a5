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

#include "delsmm/smoother/smoother.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "delsmm/errors.hpp"
#include "delsmm/mechanics/mechanics.hpp"

namespace delsmm::smooth {

Mat3 transition_matrix(double dt) {
  Mat3 a;
  a << 1.0, dt, 0.5 * dt * dt, 0.0, 1.0, dt, 0.0, 0.0, 1.0;
  return a;
}

Mat3 default_process_covariance() { return Vec3(1e-3, 1e-3, 1.0).asDiagonal(); }

FilterResult kalman_filter(const LdsModel& model, const Eigen::VectorXd& y) {
  if (!y.allFinite()) throw ContractViolation("kalman_filter: non-finite observation");
  const auto steps = static_cast<std::size_t>(y.size());
  FilterResult out;
  out.pred_means.reserve(steps);
  out.pred_covs.reserve(steps);
  out.means.reserve(steps);
  out.covs.reserve(steps);
  Vec3 m = model.m0;
  Mat3 p = model.P0;
  const Eigen::RowVector3d& c = model.C;
  for (std::size_t t = 0; t < steps; ++t) {
    if (t > 0) {
      m = model.A * out.means.back();
      p = model.A * out.covs.back() * model.A.transpose() + model.Q;
      p = 0.5 * (p + p.transpose());
    }
    out.pred_means.push_back(m);
    out.pred_covs.push_back(p);
    const double innovation = y(static_cast<Eigen::Index>(t)) - c * m;
    const double s = (c * p * c.transpose())(0, 0) + model.R;
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw NumericalError("kalman_filter: non-positive innovation variance at step " +
                           std::to_string(t));
    }
    const Vec3 gain = p * c.transpose() / s;
    const Mat3 ikc = Mat3::Identity() - gain * c;
    m = m + gain * innovation;
    p = ikc * p * ikc.transpose() + model.R * gain * gain.transpose();
    out.means.push_back(m);
    out.covs.push_back(0.5 * (p + p.transpose()));
    out.log_likelihood +=
        -0.5 * (std::log(2.0 * std::numbers::pi * s) + innovation * innovation / s);
  }
  return out;
}

SmootherResult rts_smooth(const LdsModel& model, const FilterResult& f) {
  const std::size_t steps = f.means.size();
  SmootherResult out;
  out.means.resize(steps);
  out.covs.resize(steps);
  out.cross.resize(steps > 0 ? steps - 1 : 0);
  if (steps == 0) return out;
  out.means.back() = f.means.back();
  out.covs.back() = f.covs.back();
  for (std::size_t t = steps - 1; t-- > 0;) {
    const Eigen::LLT<Mat3> llt(f.pred_covs[t + 1]);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("rts_smooth: singular predicted covariance at step " +
                           std::to_string(t + 1));
    }
    // J = P_t|t Aᵀ P_{t+1|t}⁻¹
    const Mat3 j = llt.solve(model.A * f.covs[t]).transpose();
    out.means[t] = f.means[t] + j * (out.means[t + 1] - f.pred_means[t + 1]);
    const Mat3 p = f.covs[t] + j * (out.covs[t + 1] - f.pred_covs[t + 1]) * j.transpose();
    out.covs[t] = 0.5 * (p + p.transpose());
    out.cross[t] = out.covs[t + 1] * j.transpose();
  }
  return out;
}

EmFit em_fit(const Eigen::VectorXd& y, double h, const Mat3& q_fixed, const EmOptions& opts) {
  if (y.size() < 2) throw ContractViolation("em_fit: need at least two observations");
  if (!(h > 0.0)) throw ContractViolation("em_fit: step size must be positive");
  if (opts.max_iterations < 1) throw ContractViolation("em_fit: need at least one iteration");

  EmFit fit;
  LdsModel& model = fit.model;
  model.A = transition_matrix(h);
  model.Q = q_fixed;
  const Eigen::VectorXd diffs = y.tail(y.size() - 1) - y.head(y.size() - 1);
  const double mean_diff = diffs.mean();
  model.R = (diffs.array() - mean_diff).square().sum() / static_cast<double>(diffs.size());
  if (!(model.R > 0.0)) model.R = 1e-6;
  model.m0 = Vec3(y(0), (y(1) - y(0)) / h, 0.0);
  model.P0 = Vec3(1.0, 1.0, 10.0).asDiagonal();

  FilterResult filtered = kalman_filter(model, y);
  fit.log_likelihood.push_back(filtered.log_likelihood);
  const auto steps = static_cast<double>(y.size());
  for (int it = 0; it < opts.max_iterations; ++it) {
    const SmootherResult s = rts_smooth(model, filtered);
    double r = 0.0;
    for (std::size_t t = 0; t < s.means.size(); ++t) {
      const double e = y(static_cast<Eigen::Index>(t)) - model.C * s.means[t];
      r += e * e + (model.C * s.covs[t] * model.C.transpose())(0, 0);
    }
    model.R = r / steps;
    model.m0 = s.means.front();
    model.P0 = s.covs.front();

    filtered = kalman_filter(model, y);
    const double previous = fit.log_likelihood.back();
    const double current = filtered.log_likelihood;
    if (current < previous - opts.monotone_slack) {
      throw EmMonotonicityViolation("em_fit: log-likelihood decreased from " +
                                    std::to_string(previous) + " to " + std::to_string(current));
    }
    fit.log_likelihood.push_back(current);
    fit.iterations = it + 1;
    if (current - previous < opts.min_gain) break;
  }
  return fit;
}

SmoothedTrajectory smooth_trajectory(const integ::ObservedTrajectory& obs,
                                     const SmoothOptions& opts) {
  const Eigen::MatrixXd& y = obs.observations;
  SmoothedTrajectory out;
  out.h = obs.h;
  out.q.resize(y.rows(), y.cols());
  out.qdot.resize(y.rows(), y.cols());
  out.qddot.resize(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.cols(); ++i) {
    EmFit fit = em_fit(y.col(i), obs.h, opts.process_covariance, opts.em);
    const SmootherResult s = rts_smooth(fit.model, kalman_filter(fit.model, y.col(i)));
    for (Eigen::Index t = 0; t < y.rows(); ++t) {
      const Vec3& x = s.means[static_cast<std::size_t>(t)];
      out.q(t, i) = x(0);
      out.qdot(t, i) = x(1);
      out.qddot(t, i) = x(2);
    }
    out.fits.push_back(std::move(fit));
  }
  return out;
}

std::vector<SmoothedTrajectory> smooth_dataset(const std::vector<integ::ObservedTrajectory>& obs,
                                               const SmoothOptions& opts) {
  std::vector<SmoothedTrajectory> out;
  out.reserve(obs.size());
  for (const auto& o : obs) out.push_back(smooth_trajectory(o, opts));
  return out;
}

SmoothedTrajectory noise_free_states(const mech::LagrangianSystem& sys,
                                     const integ::Trajectory& traj) {
  traj.validate();
  const Eigen::Index rows = traj.configs.rows() - 2;
  const Eigen::Index n = traj.configs.cols();
  SmoothedTrajectory out;
  out.h = traj.h;
  out.q = traj.configs.middleRows(1, rows);
  out.qdot.resize(rows, n);
  out.qddot.resize(rows, n);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const Eigen::VectorXd v =
        (traj.configs.row(t + 2) - traj.configs.row(t)).transpose() / (2.0 * traj.h);
    out.qdot.row(t) = v.transpose();
    out.qddot.row(t) = mech::acceleration(sys, out.q.row(t).transpose(), v).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------

void save_smoothed(const std::string& path, const SmoothedTrajectory& s) {
  const Eigen::Index n = s.q.cols();
  std::vector<std::string> header{"t"};
  Eigen::MatrixXd table(s.q.rows(), 1 + 3 * n);
  for (Eigen::Index t = 0; t < s.q.rows(); ++t) table(t, 0) = static_cast<double>(t) * s.h;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::string k = std::to_string(i + 1);
    header.insert(header.end(), {"q" + k, "qdot" + k, "qddot" + k});
    table.col(1 + 3 * i) = s.q.col(i);
    table.col(2 + 3 * i) = s.qdot.col(i);
    table.col(3 + 3 * i) = s.qddot.col(i);
  }
  integ::write_csv(path, header, table);

  nlohmann::json coords = nlohmann::json::array();
  for (const EmFit& f : s.fits) {
    nlohmann::json p0 = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) p0.push_back({f.model.P0(r, 0), f.model.P0(r, 1), f.model.P0(r, 2)});
    coords.push_back({{"R", f.model.R},
                      {"m0", {f.model.m0(0), f.model.m0(1), f.model.m0(2)}},
                      {"P0", p0},
                      {"em_iterations", f.iterations},
                      {"log_likelihood", f.log_likelihood}});
  }
  const nlohmann::json meta{{"h", s.h}, {"split", s.split}, {"coordinates", coords}};
  std::ofstream out(path + ".json");
  if (!out) throw Error("cannot write " + path + ".json");
  out << meta.dump(1) << '\n';
}

SmoothedTrajectory load_smoothed(const std::string& path) {
  const auto [header, table] = integ::read_csv(path);
  if (header.empty() || header[0] != "t" || (header.size() - 1) % 3 != 0) {
    throw ContractViolation(path + ": expected header t,q1,qdot1,qddot1,...");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(header.size() - 1) / 3;
  SmoothedTrajectory s;
  s.q.resize(table.rows(), n);
  s.qdot.resize(table.rows(), n);
  s.qddot.resize(table.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.q.col(i) = table.col(1 + 3 * i);
    s.qdot.col(i) = table.col(2 + 3 * i);
    s.qddot.col(i) = table.col(3 + 3 * i);
  }
  std::ifstream in(path + ".json");
  if (!in) throw Error("cannot read " + path + ".json");
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(path + ".json: " + e.what());
  }
  s.h = meta.at("h").get<double>();
  s.split = meta.value("split", "");
  return s;
}

}  // namespace delsmm::smooth
