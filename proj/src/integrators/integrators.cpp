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

#include "delsmm/integrators/integrators.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "delsmm/errors.hpp"
#include "delsmm/mechanics/mechanics.hpp"

namespace delsmm::integ {

namespace {

void require_finite(const VectorXd& v, const char* stage) {
  if (!v.allFinite()) throw IntegrationBlowup(std::string("rk4_step: non-finite ") + stage);
}

}  // namespace

std::pair<VectorXd, VectorXd> rk4_step(const AccelFn& accel, const VectorXd& q,
                                       const VectorXd& qdot, double h) {
  const VectorXd k1q = qdot;
  const VectorXd k1v = accel(q, qdot);
  require_finite(k1v, "stage 1");
  const VectorXd k2q = qdot + 0.5 * h * k1v;
  const VectorXd k2v = accel(q + 0.5 * h * k1q, k2q);
  require_finite(k2v, "stage 2");
  const VectorXd k3q = qdot + 0.5 * h * k2v;
  const VectorXd k3v = accel(q + 0.5 * h * k2q, k3q);
  require_finite(k3v, "stage 3");
  const VectorXd k4q = qdot + h * k3v;
  const VectorXd k4v = accel(q + h * k3q, k4q);
  require_finite(k4v, "stage 4");
  VectorXd q_next = q + (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
  VectorXd v_next = qdot + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  require_finite(q_next, "state");
  require_finite(v_next, "state");
  return {std::move(q_next), std::move(v_next)};
}

VectorXd variational_step(const mech::LagrangianSystem& sys, const VectorXd& q_prev,
                          const VectorXd& q_curr, double h, const NewtonOptions& opts) {
  mech::ConfigTriple t{q_prev, q_curr, 2.0 * q_curr - q_prev, h};
  double residual = 0.0;
  for (int it = 0;; ++it) {
    const VectorXd r = mech::del(sys, t);
    residual = r.cwiseAbs().maxCoeff();
    if (!std::isfinite(residual)) break;
    if (residual <= opts.tolerance) return t.q3;
    if (it == opts.max_iterations) break;
    VectorXd step = mech::del_jacobian_q3(sys, t).partialPivLu().solve(r);
    // Backtrack until the residual norm decreases.
    const VectorXd base = t.q3;
    const double norm0 = r.norm();
    t.q3 = base - step;
    for (int k = 0; k < opts.max_backtracks; ++k) {
      const double norm = mech::del(sys, t).norm();
      if (std::isfinite(norm) && norm < norm0) break;
      step *= 0.5;
      t.q3 = base - step;
    }
    // Updates below roundoff cannot reduce the residual further.
    const double floor = 4.0 * std::numeric_limits<double>::epsilon() *
                         std::max(1.0, t.q3.cwiseAbs().maxCoeff());
    if (step.cwiseAbs().maxCoeff() <= floor) {
      residual = mech::del(sys, t).cwiseAbs().maxCoeff();
      if (residual <= opts.stall_factor * opts.tolerance) return t.q3;
      break;
    }
  }
  throw NonConvergence("variational_step: Newton did not converge", residual);
}

void Trajectory::validate() const {
  if (configs.rows() < 3) throw ContractViolation("Trajectory: needs at least 3 configurations");
  if (!(h > 0.0)) throw ContractViolation("Trajectory: step size must be positive");
  if (!configs.allFinite()) throw ContractViolation("Trajectory: non-finite configuration");
}

Trajectory simulate(const mech::LagrangianSystem& sys, const VectorXd& q0, double h, int steps,
                    const NewtonOptions& opts) {
  if (steps < 3) throw ContractViolation("simulate: need at least 3 steps");
  if (!(h > 0.0)) throw DomainError("simulate: step size must be positive");
  if (static_cast<std::size_t>(q0.size()) != sys.dof()) {
    throw ContractViolation("simulate: initial configuration has the wrong dimension");
  }
  Trajectory traj;
  traj.h = h;
  traj.configs.resize(steps, q0.size());
  traj.configs.row(0) = q0.transpose();
  traj.configs.row(1) = q0.transpose();
  for (int t = 2; t < steps; ++t) {
    traj.configs.row(t) = variational_step(sys, traj.configs.row(t - 2).transpose(),
                                           traj.configs.row(t - 1).transpose(), h, opts)
                              .transpose();
  }
  return traj;
}

VectorXd random_rest_configuration(std::size_t dof, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-std::numbers::pi / 2, std::numbers::pi / 2);
  VectorXd q(static_cast<Eigen::Index>(dof));
  for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = u(rng);
  return q;
}

ObservedTrajectory add_noise(const Trajectory& traj, double sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0.0)) throw DomainError("add_noise: sigma must be non-negative");
  ObservedTrajectory obs;
  obs.observations = traj.configs;
  obs.sigma = sigma;
  obs.h = traj.h;
  obs.system = traj.system;
  obs.seed = traj.seed;
  if (sigma == 0.0) return obs;
  std::normal_distribution<double> noise(0.0, sigma);
  for (Eigen::Index t = 0; t < obs.observations.rows(); ++t) {
    for (Eigen::Index i = 0; i < obs.observations.cols(); ++i) obs.observations(t, i) += noise(rng);
  }
  return obs;
}

std::vector<double> midpoint_energies(const mech::LagrangianSystem& sys, const MatrixXd& configs,
                                      double h) {
  std::vector<double> out;
  for (Eigen::Index t = 0; t + 1 < configs.rows(); ++t) {
    const VectorXd a = configs.row(t).transpose();
    const VectorXd b = configs.row(t + 1).transpose();
    out.push_back(mech::energy(sys, 0.5 * (a + b), (b - a) / h));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const MatrixXd& rows) {
  if (static_cast<Eigen::Index>(header.size()) != rows.cols()) {
    throw ContractViolation("write_csv: header width does not match the data");
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) out << (c ? "," : "") << format_double(rows(r, c));
    out << '\n';
  }
}

std::pair<std::vector<std::string>, MatrixXd> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw ContractViolation(path + ": empty CSV");
  const std::vector<std::string> header = split(line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split(line);
    if (cells.size() != header.size()) throw ContractViolation(path + ": ragged CSV row");
    std::vector<double> row;
    for (const std::string& c : cells) {
      double v = 0.0;
      const auto res = std::from_chars(c.data(), c.data() + c.size(), v);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size()) {
        throw ContractViolation(path + ": non-numeric cell '" + c + "'");
      }
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return {header, m};
}

void save_trajectory(const std::string& path, const MatrixXd& configs, double h,
                     const std::string& system, std::uint64_t seed, double sigma) {
  std::vector<std::string> header{"t"};
  for (Eigen::Index i = 0; i < configs.cols(); ++i) header.push_back("q" + std::to_string(i + 1));
  MatrixXd table(configs.rows(), configs.cols() + 1);
  for (Eigen::Index t = 0; t < configs.rows(); ++t) table(t, 0) = static_cast<double>(t) * h;
  table.rightCols(configs.cols()) = configs;
  write_csv(path, header, table);

  const nlohmann::json meta{{"h", h},
                            {"seed", seed},
                            {"system", system},
                            {"sigma", sigma},
                            {"steps", configs.rows()},
                            {"dof", configs.cols()}};
  std::ofstream out(path + ".json");
  if (!out) throw Error("cannot write " + path + ".json");
  out << meta.dump(1) << '\n';
}

ObservedTrajectory load_trajectory(const std::string& path) {
  auto [header, table] = read_csv(path);
  if (header.size() < 2 || header[0] != "t") {
    throw ContractViolation(path + ": expected header t,q1,...");
  }
  std::ifstream in(path + ".json");
  if (!in) throw Error("cannot read " + path + ".json");
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(path + ".json: " + e.what());
  }
  ObservedTrajectory obs;
  obs.observations = table.rightCols(table.cols() - 1);
  obs.h = meta.at("h").get<double>();
  obs.seed = meta.at("seed").get<std::uint64_t>();
  obs.system = meta.at("system").get<std::string>();
  obs.sigma = meta.at("sigma").get<double>();
  return obs;
}

}  // namespace delsmm::integ
