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

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "delsmm/integrators/integrators.hpp"
#include "delsmm/mechanics/system.hpp"
#include "delsmm/netparam/smm.hpp"
#include "delsmm/smoother/smoother.hpp"
#include "delsmm/training/trainer.hpp"

namespace delsmm::exp {

struct SplitSizes {
  int train = 8;
  int val = 4;
  int test = 4;

  int total() const { return train + val + test; }
};

struct ExperimentConfig {
  std::string system = "undamped";  // "undamped" or "damped"
  int n_trajectories = 16;
  SplitSizes split;
  int T = 200;  // samples per trajectory
  double h = 0.05;
  std::vector<double> sigmas{0.1};
  int seeds = 10;
  std::uint64_t base_seed = 0;  // seeds run base_seed .. base_seed + seeds − 1
  std::vector<train::Method> methods{train::Method::kDel, train::Method::kAccel,
                                     train::Method::kNextState};
  std::vector<double> xi0_grid{1e-2, 1e-3, 1e-5};
  int epochs = 500;
  std::size_t batch_size = 256;
  std::vector<std::size_t> hidden{32, 32};
  double mu = 0.01;
  double barrier_fraction = 0.5;
  int max_halvings = 10;
  smooth::Vec3 process_covariance_diag{1e-3, 1e-3, 1.0};
  bool write_records = true;  // per-cell training records and checkpoints
  std::string out_dir = "results";

  /// Throws ConfigError.
  void validate() const;
  std::uint64_t seed_at(int index) const { return base_seed + static_cast<std::uint64_t>(index); }
  bool damped() const { return system == "damped"; }
  nn::ArchConfig arch() const;
  train::TrainConfig train_config(train::Method m, double xi0, std::uint64_t seed) const;
  smooth::SmoothOptions smooth_options() const;

  /// 16 trajectories, T = 200, h = 0.05, σ = 0.1, 500 epochs, batch 256,
  /// 10 seeds, ξ₀ ∈ {1e-2, 1e-3, 1e-5}.
  static ExperimentConfig paper_protocol();
  /// 3 seeds, 4 trajectories split 2/1/1, T = 100, 100 epochs.
  static ExperimentConfig desk_scale();
};

/// Keys absent from `text` keep the values already in `base`; unknown keys
/// are rejected. Throws ConfigError.
ExperimentConfig config_from_json(const std::string& text, ExperimentConfig base = {});
std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});

// ---------------------------------------------------------------------------
// Data

/// Label per trajectory index ("train", "val" or "test") from a seeded
/// permutation. Throws ConfigError when the sizes do not sum to n.
std::vector<std::string> split_trajectories(int n, std::uint64_t seed, const SplitSizes& sizes);

/// Throws ContractViolation unless every trajectory carries `label`.
void audit_split(const std::vector<smooth::SmoothedTrajectory>& data, const std::string& label);

struct Dataset {
  std::vector<integ::Trajectory> clean;
  std::vector<integ::ObservedTrajectory> observed;
  std::vector<smooth::SmoothedTrajectory> smoothed;  // split labels set
  std::vector<std::string> labels;
};

mech::DoublePendulum make_system(const ExperimentConfig& cfg);

/// Simulate, add noise and smooth. σ = 0 yields true states with
/// central-difference velocities instead of smoothed ones. Initial
/// configurations whose discrete equations lose solvability within T steps are
/// redrawn from the same stream.
Dataset build_dataset(const ExperimentConfig& cfg, std::uint64_t seed, double sigma);

std::vector<smooth::SmoothedTrajectory> select(const Dataset& d, const std::string& label);

/// Replaces each tuple's acceleration with the system's acceleration at the
/// tuple's (q, q̇).
std::vector<smooth::SmoothedTrajectory> with_true_accelerations(
    const mech::LagrangianSystem& sys, std::vector<smooth::SmoothedTrajectory> data);

/// Test-set RMSE against the true accelerations at the smoothed states.
train::AccelEval evaluate(const nn::SmmParams& params, const mech::LagrangianSystem& sys,
                          const std::vector<smooth::SmoothedTrajectory>& test);

// ---------------------------------------------------------------------------
// Results

struct Cell {
  std::string system;
  double sigma = 0.0;
  train::Method method = train::Method::kDel;
  double xi0 = 0.0;
  std::uint64_t seed = 0;
  double val_rmse = 0.0;   // best validation RMSE; NaN on failure
  double test_rmse = 0.0;  // NaN on failure
  int best_epoch = 0;
  std::size_t test_failures = 0;
  std::string status = "ok";
  std::string reason;

  bool failed() const { return status != "ok"; }
};

struct ResultsRow {
  std::string system;
  double sigma = 0.0;
  train::Method method = train::Method::kDel;
  double xi0 = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> test_rmse;  // per seed, NaN for failed cells
  std::vector<double> val_rmse;
  double mean = 0.0;    // over finite per-seed values
  double stderr_ = 0.0; // sample std / √count; NaN below two values
  int count = 0;        // finite per-seed values
  double mean_val = 0.0;
};

struct ResultsTable {
  std::vector<ResultsRow> rows;
  std::vector<Cell> cells;

  int failed_cells() const;
};

/// Groups cells by (system, σ, method, ξ₀) in first-seen order.
ResultsTable aggregate(std::vector<Cell> cells);

/// ξ₀ with the lowest mean validation RMSE for each (system, σ, method).
std::vector<const ResultsRow*> best_by_validation(const ResultsTable& table);

double median(std::vector<double> values);

// ---------------------------------------------------------------------------
// Running

using ProgressFn = std::function<void(const Cell&)>;

/// One training run for a single cell. Failures are captured in the cell.
Cell run_cell(const ExperimentConfig& cfg, const Dataset& data, const mech::LagrangianSystem& sys,
              std::uint64_t seed, double sigma, train::Method method, double xi0,
              const std::string& record_prefix);

/// Full sweep over seeds × σ × methods × ξ₀; writes every artifact to
/// cfg.out_dir.
ResultsTable run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

/// config.json, results.csv, results.json, plot data and figures.
void write_results(const ExperimentConfig& cfg, const ResultsTable& table);
ResultsTable results_from_json(const std::string& text);

/// One CSV and one SVG per (system, σ). Returns the paths written. Throws
/// ContractViolation for an empty table.
std::vector<std::string> emit_plot_data(const ResultsTable& table, const std::string& out_dir);

std::string plot_svg(const std::vector<const ResultsRow*>& rows, const std::string& title);

}  // namespace delsmm::exp
