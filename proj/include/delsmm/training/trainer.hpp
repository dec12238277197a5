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

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "delsmm/errors.hpp"
#include "delsmm/netparam/smm.hpp"
#include "delsmm/smoother/smoother.hpp"
#include "delsmm/training/losses.hpp"

namespace delsmm::train {

struct TrainConfig {
  Method method = Method::kDel;
  double xi0 = 1e-3;
  int epochs = 500;
  std::size_t batch_size = 256;
  double mu = 0.01;
  double barrier_fraction = 0.5;
  int divergence_budget = 25;  // consecutive invalid steps
  int max_halvings = 10;       // rate halvings tried on a barrier-violating step
  std::uint64_t shuffle_seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  /// Throws ConfigError.
  void validate() const;
  /// The log-det barrier and the eigenvalue sweep are active.
  bool barrier_active() const { return method == Method::kDel && mu > 0.0; }
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;   // mean over accepted steps
  double val_rmse = 0.0;     // +inf when a validation mass matrix fails
  double min_mass_eig = 0.0; // smallest value seen by the sweeps of this epoch
  int accepted = 0;
  int retried = 0;           // accepted only after halving the rate
  int invalid = 0;
};

struct TrainRecord {
  Method method = Method::kDel;
  double xi0 = 0.0;
  double mu = 0.0;
  double alpha = 0.0;
  std::uint64_t shuffle_seed = 0;
  double initial_val_rmse = 0.0;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 selects the initial parameters
  double best_val_rmse = 0.0;
  std::string checkpoint;  // path of the saved best model, if any
  std::string status = "ok";
};

struct TrainResult {
  TrainRecord record;
  nn::SmmParams best;
  nn::SmmParams last;
};

class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, TrainRecord record)
      : NumericalError(what), record_(std::move(record)) {}
  const TrainRecord& record() const { return record_; }

 private:
  TrainRecord record_;
};

/// Validation tuples (q, q̇, q̈) stacked over all trajectories.
struct ValidationSet {
  MatrixXd q, qdot, qddot;
};
ValidationSet stack_tuples(const std::vector<smooth::SmoothedTrajectory>& data);

/// Epoch loop with shuffled batches, scheduled Adam, per-epoch validation
/// acceleration RMSE and argmin-validation selection. Throws
/// TrainingDiverged once the divergence budget is spent.
TrainResult train(const nn::SmmParams& params0,
                  const std::vector<smooth::SmoothedTrajectory>& train_set,
                  const std::vector<smooth::SmoothedTrajectory>& val_set,
                  const TrainConfig& config);

std::string record_to_json(const TrainRecord& record);
TrainRecord record_from_json(const std::string& text);

}  // namespace delsmm::train
