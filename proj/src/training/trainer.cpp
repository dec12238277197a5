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

#include "delsmm/training/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <json.hpp>

#include "delsmm/training/optimizer.hpp"

namespace delsmm::train {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

double number_from(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

double validation_rmse(const nn::SmmParams& params, const ValidationSet& val) {
  const AccelEval e = evaluate_acceleration(params, val.q, val.qdot, val.qddot);
  return e.failures > 0 ? kInf : e.rmse;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(xi0 > 0.0)) throw ConfigError("train: initial learning rate must be positive");
  if (epochs < 0) throw ConfigError("train: epochs must be non-negative");
  if (batch_size == 0) throw ConfigError("train: batch size must be positive");
  if (!(mu >= 0.0)) throw ConfigError("train: barrier weight must be non-negative");
  if (!(barrier_fraction > 0.0 && barrier_fraction < 1.0)) {
    throw ConfigError("train: barrier fraction must lie in (0, 1)");
  }
  if (divergence_budget < 1) throw ConfigError("train: divergence budget must be positive");
  if (max_halvings < 0) throw ConfigError("train: max_halvings must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0)) {
    throw ConfigError("train: invalid Adam constants");
  }
}

ValidationSet stack_tuples(const std::vector<smooth::SmoothedTrajectory>& data) {
  Eigen::Index rows = 0;
  for (const auto& d : data) rows += d.q.rows();
  const Eigen::Index n = data.empty() ? 0 : data.front().q.cols();
  ValidationSet out;
  out.q.resize(rows, n);
  out.qdot.resize(rows, n);
  out.qddot.resize(rows, n);
  Eigen::Index r = 0;
  for (const auto& d : data) {
    out.q.middleRows(r, d.q.rows()) = d.q;
    out.qdot.middleRows(r, d.q.rows()) = d.qdot;
    out.qddot.middleRows(r, d.q.rows()) = d.qddot;
    r += d.q.rows();
  }
  return out;
}

TrainResult train(const nn::SmmParams& params0,
                  const std::vector<smooth::SmoothedTrajectory>& train_set,
                  const std::vector<smooth::SmoothedTrajectory>& val_set,
                  const TrainConfig& config) {
  config.validate();
  params0.validate();
  if (train_set.empty()) throw ContractViolation("train: empty training set");
  if (val_set.empty()) throw ContractViolation("train: empty validation set");
  std::vector<SampleRef> samples = enumerate_samples(train_set, config.method);
  if (samples.empty()) throw ContractViolation("train: trajectories too short for any sample");

  // The sweep covers exactly the configurations the barrier term sees.
  const MatrixXd configs = barrier_configurations(train_set);
  const ValidationSet val = stack_tuples(val_set);
  const double mu = config.method == Method::kDel ? config.mu : 0.0;

  TrainResult result;
  TrainRecord& rec = result.record;
  rec.method = config.method;
  rec.xi0 = config.xi0;
  rec.mu = mu;
  rec.alpha = choose_alpha(params0, configs, config.barrier_fraction);
  rec.shuffle_seed = config.shuffle_seed;
  rec.initial_val_rmse = validation_rmse(params0, val);
  rec.best_val_rmse = rec.initial_val_rmse;
  result.best = params0;

  const nn::FlatParams flat0 = nn::flatten(params0);
  const nn::ParamLayout& layout = flat0.layout;
  std::vector<double> theta = flat0.values;
  AdamState adam = AdamState::zeros(theta.size());
  adam.beta1 = config.beta1;
  adam.beta2 = config.beta2;
  adam.eps = config.adam_eps;

  std::mt19937_64 rng(config.shuffle_seed);
  int consecutive_invalid = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord er;
    er.epoch = epoch;
    er.lr = lr_schedule(config.xi0, epoch - 1);
    er.min_mass_eig = kInf;
    double loss_sum = 0.0;
    std::shuffle(samples.begin(), samples.end(), rng);

    for (std::size_t begin = 0; begin < samples.size(); begin += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, samples.size() - begin);
      const BatchData batch =
          gather(train_set, config.method, std::span(samples).subspan(begin, count));

      bool accepted = false;
      LossValue lv;
      try {
        lv = evaluate_loss(nn::unflatten({layout, theta}), batch, mu, rec.alpha, true);
      } catch (const Error&) {
        lv.value = kNaN;
      }
      if (std::isfinite(lv.value)) {
        double rate = er.lr;
        for (int attempt = 0; attempt <= config.max_halvings && !accepted; ++attempt, rate *= 0.5) {
          AdamState next_state = adam;
          std::vector<double> next = theta;
          if (!adam_step(next_state, next, lv.gradient, rate)) break;
          if (config.barrier_active()) {
            const double eig = min_mass_eigenvalue(nn::unflatten({layout, next}), configs);
            if (!(eig > rec.alpha)) continue;
            er.min_mass_eig = std::min(er.min_mass_eig, eig);
          }
          adam = std::move(next_state);
          theta = std::move(next);
          accepted = true;
          if (attempt > 0) ++er.retried;
        }
      }

      if (accepted) {
        ++er.accepted;
        loss_sum += lv.value;
        consecutive_invalid = 0;
      } else {
        ++er.invalid;
        if (++consecutive_invalid >= config.divergence_budget) {
          er.train_loss = er.accepted > 0 ? loss_sum / er.accepted : kNaN;
          er.val_rmse = kNaN;
          rec.epochs.push_back(er);
          rec.status = "diverged";
          throw TrainingDiverged("train: " + std::to_string(consecutive_invalid) +
                                     " consecutive invalid steps in epoch " +
                                     std::to_string(epoch),
                                 rec);
        }
      }
    }

    const nn::SmmParams current = nn::unflatten({layout, theta});
    if (!config.barrier_active()) er.min_mass_eig = min_mass_eigenvalue(current, configs);
    er.train_loss = er.accepted > 0 ? loss_sum / er.accepted : kNaN;
    er.val_rmse = validation_rmse(current, val);
    rec.epochs.push_back(er);
    if (er.val_rmse < rec.best_val_rmse) {
      rec.best_val_rmse = er.val_rmse;
      rec.best_epoch = epoch;
      result.best = current;
    }
  }
  result.last = nn::unflatten({layout, theta});
  return result;
}

// ---------------------------------------------------------------------------

std::string record_to_json(const TrainRecord& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const EpochRecord& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", number(e.lr)},
                      {"train_loss", number(e.train_loss)},
                      {"val_rmse", number(e.val_rmse)},
                      {"min_mass_eig", number(e.min_mass_eig)},
                      {"accepted", e.accepted},
                      {"retried", e.retried},
                      {"invalid", e.invalid}});
  }
  const nlohmann::json j{{"method", std::string(method_name(r.method))},
                         {"xi0", number(r.xi0)},
                         {"mu", number(r.mu)},
                         {"alpha", number(r.alpha)},
                         {"shuffle_seed", r.shuffle_seed},
                         {"initial_val_rmse", number(r.initial_val_rmse)},
                         {"best_epoch", r.best_epoch},
                         {"best_val_rmse", number(r.best_val_rmse)},
                         {"checkpoint", r.checkpoint},
                         {"status", r.status},
                         {"epochs", epochs}};
  return j.dump(1);
}

TrainRecord record_from_json(const std::string& text) {
  TrainRecord r;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    r.method = parse_method(j.at("method").get<std::string>());
    r.xi0 = number_from(j.at("xi0"));
    r.mu = number_from(j.at("mu"));
    r.alpha = number_from(j.at("alpha"));
    r.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
    r.initial_val_rmse = number_from(j.at("initial_val_rmse"));
    r.best_epoch = j.at("best_epoch").get<int>();
    r.best_val_rmse = number_from(j.at("best_val_rmse"));
    r.checkpoint = j.at("checkpoint").get<std::string>();
    r.status = j.at("status").get<std::string>();
    for (const auto& e : j.at("epochs")) {
      EpochRecord er;
      er.epoch = e.at("epoch").get<int>();
      er.lr = number_from(e.at("lr"));
      er.train_loss = number_from(e.at("train_loss"));
      er.val_rmse = number_from(e.at("val_rmse"));
      er.min_mass_eig = number_from(e.at("min_mass_eig"));
      er.accepted = e.at("accepted").get<int>();
      er.retried = e.at("retried").get<int>();
      er.invalid = e.at("invalid").get<int>();
      r.epochs.push_back(er);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("train record: ") + e.what());
  }
  return r;
}

}  // namespace delsmm::train
