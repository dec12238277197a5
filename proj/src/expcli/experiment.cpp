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

#include "delsmm/expcli/experiment.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "delsmm/errors.hpp"
#include "delsmm/mechanics/mechanics.hpp"

namespace delsmm::exp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

json number(double v) { return std::isfinite(v) ? json(v) : json(); }
double number_from(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

std::string fmt(double v) { return integ::format_double(v); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Independent generator per (seed, stream, salt).
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint32_t stream, std::uint64_t salt = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    stream, static_cast<std::uint32_t>(salt),
                    static_cast<std::uint32_t>(salt >> 32)};
  return std::mt19937_64(seq);
}

enum Stream : std::uint32_t { kTrajectories = 1, kNoise = 2, kSplit = 3 };

template <typename T>
T get_checked(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (system != "undamped" && system != "damped") {
    throw ConfigError("config: system must be 'undamped' or 'damped'");
  }
  if (n_trajectories <= 0) throw ConfigError("config: n_trajectories must be positive");
  if (split.train <= 0 || split.val <= 0 || split.test <= 0) {
    throw ConfigError("config: every split must be non-empty");
  }
  if (split.total() != n_trajectories) {
    throw ConfigError("config: split sizes sum to " + std::to_string(split.total()) +
                      ", expected " + std::to_string(n_trajectories));
  }
  if (T < 5) throw ConfigError("config: T must be at least 5");
  if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("config: h must be positive");
  if (sigmas.empty()) throw ConfigError("config: sigma list is empty");
  for (double s : sigmas) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("config: sigma must be non-negative");
  }
  if (seeds <= 0) throw ConfigError("config: seeds must be positive");
  if (methods.empty()) throw ConfigError("config: methods list is empty");
  if (xi0_grid.empty()) throw ConfigError("config: learning-rate grid is empty");
  for (double x : xi0_grid) {
    if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError("config: learning rates must be positive");
  }
  if (hidden.empty() || std::find(hidden.begin(), hidden.end(), 0u) != hidden.end()) {
    throw ConfigError("config: hidden widths must be positive");
  }
  if (!(process_covariance_diag.array() > 0.0).all() || !process_covariance_diag.allFinite()) {
    throw ConfigError("config: process covariance diagonal must be positive");
  }
  if (out_dir.empty()) throw ConfigError("config: out_dir is empty");
  train_config(methods.front(), xi0_grid.front(), 0).validate();
}

nn::ArchConfig ExperimentConfig::arch() const {
  nn::ArchConfig a;
  a.dof = 2;
  a.hidden = hidden;
  a.conservative = !damped();
  return a;
}

train::TrainConfig ExperimentConfig::train_config(train::Method m, double xi0,
                                                  std::uint64_t seed) const {
  train::TrainConfig t;
  t.method = m;
  t.xi0 = xi0;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.mu = mu;
  t.barrier_fraction = barrier_fraction;
  t.max_halvings = max_halvings;
  t.shuffle_seed = seed;
  return t;
}

smooth::SmoothOptions ExperimentConfig::smooth_options() const {
  smooth::SmoothOptions o;
  o.process_covariance = process_covariance_diag.asDiagonal();
  return o;
}

ExperimentConfig ExperimentConfig::paper_protocol() {
  ExperimentConfig c;
  c.n_trajectories = 16;
  c.split = {8, 4, 4};
  c.T = 200;
  c.h = 0.05;
  c.sigmas = {0.1};
  c.epochs = 500;
  c.batch_size = 256;
  c.seeds = 10;
  c.xi0_grid = {1e-2, 1e-3, 1e-5};
  return c;
}

ExperimentConfig ExperimentConfig::desk_scale() {
  ExperimentConfig c;
  c.n_trajectories = 4;
  c.split = {2, 1, 1};
  c.T = 100;
  c.seeds = 3;
  c.epochs = 100;
  return c;
}

ExperimentConfig config_from_json(const std::string& text, ExperimentConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  static const std::vector<std::string> known{
      "system", "n_trajectories", "split", "T", "h", "sigma", "seeds", "base_seed", "methods",
      "xi0_grid", "epochs", "batch_size", "hidden", "mu", "barrier_fraction", "max_halvings",
      "smoother", "write_records", "out_dir"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  if (j.contains("system")) c.system = get_checked<std::string>(j, "system");
  if (j.contains("n_trajectories")) c.n_trajectories = get_checked<int>(j, "n_trajectories");
  if (j.contains("split")) {
    const json& s = j["split"];
    if (!s.is_object()) throw ConfigError("config: split must be an object");
    if (s.contains("train")) c.split.train = get_checked<int>(s, "train");
    if (s.contains("val")) c.split.val = get_checked<int>(s, "val");
    if (s.contains("test")) c.split.test = get_checked<int>(s, "test");
  }
  if (j.contains("T")) c.T = get_checked<int>(j, "T");
  if (j.contains("h")) c.h = get_checked<double>(j, "h");
  if (j.contains("sigma")) {
    c.sigmas = j["sigma"].is_array() ? get_checked<std::vector<double>>(j, "sigma")
                                     : std::vector<double>{get_checked<double>(j, "sigma")};
  }
  if (j.contains("seeds")) c.seeds = get_checked<int>(j, "seeds");
  if (j.contains("base_seed")) c.base_seed = get_checked<std::uint64_t>(j, "base_seed");
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& name : get_checked<std::vector<std::string>>(j, "methods")) {
      c.methods.push_back(train::parse_method(name));
    }
  }
  if (j.contains("xi0_grid")) c.xi0_grid = get_checked<std::vector<double>>(j, "xi0_grid");
  if (j.contains("epochs")) c.epochs = get_checked<int>(j, "epochs");
  if (j.contains("batch_size")) c.batch_size = get_checked<std::size_t>(j, "batch_size");
  if (j.contains("hidden")) c.hidden = get_checked<std::vector<std::size_t>>(j, "hidden");
  if (j.contains("mu")) c.mu = get_checked<double>(j, "mu");
  if (j.contains("barrier_fraction")) c.barrier_fraction = get_checked<double>(j, "barrier_fraction");
  if (j.contains("max_halvings")) c.max_halvings = get_checked<int>(j, "max_halvings");
  if (j.contains("smoother")) {
    const json& s = j["smoother"];
    if (!s.is_object()) throw ConfigError("config: smoother must be an object");
    if (s.contains("process_covariance_diag")) {
      const auto d = get_checked<std::vector<double>>(s, "process_covariance_diag");
      if (d.size() != 3) throw ConfigError("config: process_covariance_diag needs 3 entries");
      c.process_covariance_diag = smooth::Vec3(d[0], d[1], d[2]);
    }
  }
  if (j.contains("write_records")) c.write_records = get_checked<bool>(j, "write_records");
  if (j.contains("out_dir")) c.out_dir = get_checked<std::string>(j, "out_dir");
  c.validate();
  return c;
}

namespace {

json config_json(const ExperimentConfig& c) {
  json methods = json::array();
  for (train::Method m : c.methods) methods.push_back(std::string(train::method_name(m)));
  const smooth::Vec3& q = c.process_covariance_diag;
  return json{{"system", c.system},
              {"n_trajectories", c.n_trajectories},
              {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}},
              {"T", c.T},
              {"h", c.h},
              {"sigma", c.sigmas},
              {"seeds", c.seeds},
              {"base_seed", c.base_seed},
              {"methods", methods},
              {"xi0_grid", c.xi0_grid},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"hidden", c.hidden},
              {"mu", c.mu},
              {"barrier_fraction", c.barrier_fraction},
              {"max_halvings", c.max_halvings},
              {"smoother", {{"process_covariance_diag", {q(0), q(1), q(2)}}}},
              {"write_records", c.write_records},
              {"out_dir", c.out_dir}};
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(text, std::move(base));
}

// ---------------------------------------------------------------------------
// Data

std::vector<std::string> split_trajectories(int n, std::uint64_t seed, const SplitSizes& sizes) {
  if (n <= 0 || sizes.train < 0 || sizes.val < 0 || sizes.test < 0 || sizes.total() != n) {
    throw ConfigError("split_trajectories: sizes do not sum to " + std::to_string(n));
  }
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng = stream_rng(seed, kSplit);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::string> labels(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] =
        k < sizes.train ? "train" : (k < sizes.train + sizes.val ? "val" : "test");
  }
  return labels;
}

void audit_split(const std::vector<smooth::SmoothedTrajectory>& data, const std::string& label) {
  for (const auto& d : data) {
    if (d.split != label) {
      throw ContractViolation("split audit: expected '" + label + "' data, found '" + d.split + "'");
    }
  }
}

mech::DoublePendulum make_system(const ExperimentConfig& cfg) {
  return mech::dp_system({}, cfg.damped());
}

namespace {

// Draws rest configurations from the stream until the discrete equations stay
// solvable for the whole horizon; a failed draw consumes its stream values.
integ::Trajectory simulate_solvable(const mech::LagrangianSystem& sys, const ExperimentConfig& cfg,
                                    std::mt19937_64& rng) {
  constexpr int kMaxDraws = 100;
  for (int draw = 0;; ++draw) {
    try {
      return integ::simulate(sys, integ::random_rest_configuration(2, rng), cfg.h, cfg.T);
    } catch (const NonConvergence&) {
      if (draw + 1 == kMaxDraws) throw;
    }
  }
}

}  // namespace

Dataset build_dataset(const ExperimentConfig& cfg, std::uint64_t seed, double sigma) {
  cfg.validate();
  const mech::DoublePendulum sys = make_system(cfg);
  Dataset d;
  d.labels = split_trajectories(cfg.n_trajectories, seed, cfg.split);
  std::mt19937_64 traj_rng = stream_rng(seed, kTrajectories);
  std::mt19937_64 noise_rng = stream_rng(seed, kNoise, std::bit_cast<std::uint64_t>(sigma));
  const smooth::SmoothOptions opts = cfg.smooth_options();
  for (int i = 0; i < cfg.n_trajectories; ++i) {
    integ::Trajectory traj = simulate_solvable(sys, cfg, traj_rng);
    traj.system = cfg.system;
    traj.seed = seed;
    integ::ObservedTrajectory obs = integ::add_noise(traj, sigma, noise_rng);
    smooth::SmoothedTrajectory s =
        sigma == 0.0 ? smooth::noise_free_states(sys, traj) : smooth::smooth_trajectory(obs, opts);
    s.split = d.labels[static_cast<std::size_t>(i)];
    d.clean.push_back(std::move(traj));
    d.observed.push_back(std::move(obs));
    d.smoothed.push_back(std::move(s));
  }
  return d;
}

std::vector<smooth::SmoothedTrajectory> select(const Dataset& d, const std::string& label) {
  std::vector<smooth::SmoothedTrajectory> out;
  for (const auto& s : d.smoothed) {
    if (s.split == label) out.push_back(s);
  }
  return out;
}

std::vector<smooth::SmoothedTrajectory> with_true_accelerations(
    const mech::LagrangianSystem& sys, std::vector<smooth::SmoothedTrajectory> data) {
  for (auto& d : data) {
    for (Eigen::Index t = 0; t < d.q.rows(); ++t) {
      d.qddot.row(t) =
          mech::acceleration(sys, d.q.row(t).transpose(), d.qdot.row(t).transpose()).transpose();
    }
  }
  return data;
}

train::AccelEval evaluate(const nn::SmmParams& params, const mech::LagrangianSystem& sys,
                          const std::vector<smooth::SmoothedTrajectory>& test) {
  audit_split(test, "test");
  const train::ValidationSet v = train::stack_tuples(with_true_accelerations(sys, test));
  return train::evaluate_acceleration(params, v.q, v.qdot, v.qddot);
}

// ---------------------------------------------------------------------------
// Results

int ResultsTable::failed_cells() const {
  return static_cast<int>(std::count_if(cells.begin(), cells.end(),
                                        [](const Cell& c) { return c.failed(); }));
}

namespace {

std::pair<double, double> mean_stderr(const std::vector<double>& values, int& count) {
  std::vector<double> ok;
  for (double v : values) {
    if (std::isfinite(v)) ok.push_back(v);
  }
  count = static_cast<int>(ok.size());
  if (ok.empty()) return {kNaN, kNaN};
  const double mean = std::accumulate(ok.begin(), ok.end(), 0.0) / static_cast<double>(ok.size());
  if (ok.size() < 2) return {mean, kNaN};
  double ss = 0.0;
  for (double v : ok) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(ok.size() - 1));
  return {mean, sd / std::sqrt(static_cast<double>(ok.size()))};
}

}  // namespace

ResultsTable aggregate(std::vector<Cell> cells) {
  ResultsTable table;
  using Key = std::tuple<std::string, double, int, double>;
  std::map<Key, std::size_t> index;
  for (const Cell& c : cells) {
    const Key key{c.system, c.sigma, static_cast<int>(c.method), c.xi0};
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, table.rows.size()).first;
      ResultsRow r;
      r.system = c.system;
      r.sigma = c.sigma;
      r.method = c.method;
      r.xi0 = c.xi0;
      table.rows.push_back(r);
    }
    ResultsRow& r = table.rows[it->second];
    r.seeds.push_back(c.seed);
    r.test_rmse.push_back(c.failed() ? kNaN : c.test_rmse);
    r.val_rmse.push_back(c.val_rmse);
  }
  for (ResultsRow& r : table.rows) {
    std::tie(r.mean, r.stderr_) = mean_stderr(r.test_rmse, r.count);
    int val_count = 0;
    r.mean_val = mean_stderr(r.val_rmse, val_count).first;
  }
  table.cells = std::move(cells);
  return table;
}

std::vector<const ResultsRow*> best_by_validation(const ResultsTable& table) {
  std::vector<const ResultsRow*> best;
  for (const ResultsRow& r : table.rows) {
    auto same_group = [&](const ResultsRow* b) {
      return b->system == r.system && b->sigma == r.sigma && b->method == r.method;
    };
    auto it = std::find_if(best.begin(), best.end(), same_group);
    if (it == best.end()) {
      best.push_back(&r);
    } else if (std::isfinite(r.mean_val) &&
               (!std::isfinite((*it)->mean_val) || r.mean_val < (*it)->mean_val)) {
      *it = &r;
    }
  }
  return best;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractViolation("median: empty input");
  // A failed cell ranks as the worst outcome.
  for (double& v : values) {
    if (std::isnan(v)) v = std::numeric_limits<double>::infinity();
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// ---------------------------------------------------------------------------
// Running

Cell run_cell(const ExperimentConfig& cfg, const Dataset& data, const mech::LagrangianSystem& sys,
              std::uint64_t seed, double sigma, train::Method method, double xi0,
              const std::string& record_prefix) {
  Cell cell;
  cell.system = cfg.system;
  cell.sigma = sigma;
  cell.method = method;
  cell.xi0 = xi0;
  cell.seed = seed;
  cell.val_rmse = kNaN;
  cell.test_rmse = kNaN;

  const auto train_set = select(data, "train");
  const auto val_set = select(data, "val");
  const auto test_set = select(data, "test");
  audit_split(train_set, "train");
  audit_split(val_set, "val");

  const nn::SmmParams params0 = nn::init_params(seed, cfg.arch());
  train::TrainRecord record;
  nn::SmmParams best;
  try {
    train::TrainResult result = train::train(params0, train_set, val_set,
                                             cfg.train_config(method, xi0, seed));
    record = std::move(result.record);
    best = std::move(result.best);
  } catch (const train::TrainingDiverged& e) {
    record = e.record();
    cell.status = "diverged";
    cell.reason = e.what();
  } catch (const Error& e) {
    record.status = "error";
    cell.status = "error";
    cell.reason = e.what();
  }

  if (!cell.failed()) {
    cell.val_rmse = record.best_val_rmse;
    cell.best_epoch = record.best_epoch;
    const train::AccelEval eval = evaluate(best, sys, test_set);
    cell.test_failures = eval.failures;
    if (eval.failures > 0) {
      cell.status = "test_pd_failure";
      cell.reason = std::to_string(eval.failures) + " of " +
                    std::to_string(eval.count) +
                    " test tuples failed to factor the mass matrix";
    } else {
      cell.test_rmse = eval.rmse;
    }
  }

  if (!record_prefix.empty()) {
    const fs::path prefix(record_prefix);
    if (!cell.failed() || cell.status == "test_pd_failure") {
      const fs::path ck = prefix.string() + ".checkpoint.json";
      nn::save_checkpoint(ck.string(), best, seed);
      record.checkpoint = ck.filename().string();
    }
    write_text(prefix.string() + ".record.json", train::record_to_json(record) + "\n");
  }
  return cell;
}

ResultsTable run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  if (cfg.write_records) fs::create_directories(out / "records");
  write_text(out / "config.json", config_to_json(cfg));

  const mech::DoublePendulum sys = make_system(cfg);
  std::vector<Cell> cells;
  for (int i = 0; i < cfg.seeds; ++i) {
    const std::uint64_t seed = cfg.seed_at(i);
    for (double sigma : cfg.sigmas) {
      Dataset data;
      std::string data_error;
      try {
        data = build_dataset(cfg, seed, sigma);
      } catch (const Error& e) {
        data_error = e.what();
      }
      for (train::Method m : cfg.methods) {
        for (double xi0 : cfg.xi0_grid) {
          if (!data_error.empty()) {
            Cell cell;
            cell.system = cfg.system;
            cell.sigma = sigma;
            cell.method = m;
            cell.xi0 = xi0;
            cell.seed = seed;
            cell.val_rmse = kNaN;
            cell.test_rmse = kNaN;
            cell.status = "data_error";
            cell.reason = data_error;
            cells.push_back(cell);
            if (progress) progress(cells.back());
            continue;
          }
          std::string prefix;
          if (cfg.write_records) {
            prefix = (out / "records" /
                      (cfg.system + "_sigma" + fmt(sigma) + "_seed" + std::to_string(seed) + "_" +
                       std::string(train::method_name(m)) + "_xi" + fmt(xi0)))
                         .string();
          }
          cells.push_back(run_cell(cfg, data, sys, seed, sigma, m, xi0, prefix));
          if (progress) progress(cells.back());
        }
      }
    }
  }
  ResultsTable table = aggregate(std::move(cells));
  write_results(cfg, table);
  return table;
}

// ---------------------------------------------------------------------------
// Output

namespace {

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + fmt(v[i]);
  return s;
}

std::string join(const std::vector<std::uint64_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
  return s;
}

json cell_json(const Cell& c) {
  return json{{"system", c.system},
              {"sigma", c.sigma},
              {"method", std::string(train::method_name(c.method))},
              {"xi0", c.xi0},
              {"seed", c.seed},
              {"val_rmse", number(c.val_rmse)},
              {"test_rmse", number(c.test_rmse)},
              {"best_epoch", c.best_epoch},
              {"test_failures", c.test_failures},
              {"status", c.status},
              {"reason", c.reason}};
}

json row_json(const ResultsRow& r) {
  json test = json::array(), val = json::array();
  for (double v : r.test_rmse) test.push_back(number(v));
  for (double v : r.val_rmse) val.push_back(number(v));
  return json{{"system", r.system},
              {"sigma", r.sigma},
              {"method", std::string(train::method_name(r.method))},
              {"xi0", r.xi0},
              {"seeds", r.seeds},
              {"count", r.count},
              {"mean_test_rmse", number(r.mean)},
              {"stderr", number(r.stderr_)},
              {"mean_val_rmse", number(r.mean_val)},
              {"per_seed_test_rmse", test},
              {"per_seed_val_rmse", val}};
}

}  // namespace

void write_results(const ExperimentConfig& cfg, const ResultsTable& table) {
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  write_text(out / "config.json", config_to_json(cfg));

  std::ostringstream csv;
  csv << "system,sigma,method,xi0,count,mean_test_rmse,stderr,mean_val_rmse,seeds,"
         "per_seed_test_rmse\n";
  for (const ResultsRow& r : table.rows) {
    csv << r.system << ',' << fmt(r.sigma) << ',' << train::method_name(r.method) << ','
        << fmt(r.xi0) << ',' << r.count << ',' << fmt(r.mean) << ',' << fmt(r.stderr_) << ','
        << fmt(r.mean_val) << ',' << join(r.seeds) << ',' << join(r.test_rmse) << '\n';
  }
  write_text(out / "results.csv", csv.str());

  json rows = json::array(), cells = json::array();
  for (const ResultsRow& r : table.rows) rows.push_back(row_json(r));
  for (const Cell& c : table.cells) cells.push_back(cell_json(c));
  const json j{{"config", config_json(cfg)},
               {"failed_cells", table.failed_cells()},
               {"rows", rows},
               {"cells", cells}};
  write_text(out / "results.json", j.dump(1) + "\n");

  if (!table.rows.empty()) emit_plot_data(table, cfg.out_dir);
}

ResultsTable results_from_json(const std::string& text) {
  std::vector<Cell> cells;
  try {
    const json j = json::parse(text);
    for (const json& c : j.at("cells")) {
      Cell cell;
      cell.system = c.at("system").get<std::string>();
      cell.sigma = c.at("sigma").get<double>();
      cell.method = train::parse_method(c.at("method").get<std::string>());
      cell.xi0 = c.at("xi0").get<double>();
      cell.seed = c.at("seed").get<std::uint64_t>();
      cell.val_rmse = number_from(c.at("val_rmse"));
      cell.test_rmse = number_from(c.at("test_rmse"));
      cell.best_epoch = c.at("best_epoch").get<int>();
      cell.test_failures = c.at("test_failures").get<std::size_t>();
      cell.status = c.at("status").get<std::string>();
      cell.reason = c.at("reason").get<std::string>();
      cells.push_back(std::move(cell));
    }
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("results: ") + e.what());
  }
  return aggregate(std::move(cells));
}

std::vector<std::string> emit_plot_data(const ResultsTable& table, const std::string& out_dir) {
  if (table.rows.empty()) throw ContractViolation("emit_plot_data: no data");
  fs::create_directories(out_dir);
  std::vector<std::pair<std::string, double>> groups;
  for (const ResultsRow& r : table.rows) {
    const std::pair<std::string, double> g{r.system, r.sigma};
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }
  std::vector<std::string> written;
  for (const auto& [system, sigma] : groups) {
    std::vector<const ResultsRow*> rows;
    std::ostringstream csv;
    csv << "method,xi0,mean,stderr\n";
    for (const ResultsRow& r : table.rows) {
      if (r.system != system || r.sigma != sigma) continue;
      rows.push_back(&r);
      csv << train::method_name(r.method) << ',' << fmt(r.xi0) << ',' << fmt(r.mean) << ','
          << fmt(r.stderr_) << '\n';
    }
    const std::string stem = system + "_" + fmt(sigma);
    const fs::path csv_path = fs::path(out_dir) / ("plotdata_" + stem + ".csv");
    const fs::path svg_path = fs::path(out_dir) / ("figure_" + stem + ".svg");
    write_text(csv_path, csv.str());
    write_text(svg_path,
               plot_svg(rows, "Test acceleration RMSE, " + system + ", sigma = " + fmt(sigma)));
    written.push_back(csv_path.string());
    written.push_back(svg_path.string());
  }
  return written;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

const char* method_color(train::Method m) {
  switch (m) {
    case train::Method::kDel: return "#1f77b4";
    case train::Method::kAccel: return "#ff7f0e";
    case train::Method::kNextState: return "#2ca02c";
  }
  return "#7f7f7f";
}

}  // namespace

std::string plot_svg(const std::vector<const ResultsRow*>& rows, const std::string& title) {
  std::vector<double> xis;
  std::vector<train::Method> methods;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const ResultsRow* r : rows) {
    if (std::find(xis.begin(), xis.end(), r->xi0) == xis.end()) xis.push_back(r->xi0);
    if (std::find(methods.begin(), methods.end(), r->method) == methods.end()) {
      methods.push_back(r->method);
    }
    if (std::isfinite(r->mean) && r->mean > 0.0) {
      const double e = std::isfinite(r->stderr_) ? r->stderr_ : 0.0;
      lo = std::min(lo, r->mean - e > 0.0 ? r->mean - e : r->mean);
      hi = std::max(hi, r->mean + e);
    }
  }
  if (!(lo <= hi)) lo = 0.1, hi = 1.0;
  // Log axis over whole decades.
  const double dlo = std::floor(std::log10(lo));
  const double dhi = std::max(dlo + 1.0, std::ceil(std::log10(hi)));

  const double width = 720, height = 420, left = 70, right = 150, top = 40, bottom = 60;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  auto y_of = [&](double v) {
    return top + plot_h * (1.0 - (std::log10(v) - dlo) / (dhi - dlo));
  };
  const double group_w = plot_w / static_cast<double>(std::max<std::size_t>(xis.size(), 1));
  const double bar_w = 0.8 * group_w / static_cast<double>(std::max<std::size_t>(methods.size(), 1));

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << px(width) << "\" height=\""
    << px(height) << "\" viewBox=\"0 0 " << px(width) << ' ' << px(height) << "\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << px(width) << "\" height=\"" << px(height)
    << "\" fill=\"white\"/>\n"
    << "<text x=\"" << px(width / 2) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
    << " font-size=\"15\">" << xml_escape(title) << "</text>\n";
  for (double d = dlo; d <= dhi; d += 1.0) {
    const double y = y_of(std::pow(10.0, d));
    s << "<line x1=\"" << px(left) << "\" y1=\"" << px(y) << "\" x2=\"" << px(left + plot_w)
      << "\" y2=\"" << px(y) << "\" stroke=\"#dddddd\"/>\n"
      << "<text x=\"" << px(left - 6) << "\" y=\"" << px(y + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">1e"
      << static_cast<int>(d) << "</text>\n";
  }
  s << "<line x1=\"" << px(left) << "\" y1=\"" << px(top) << "\" x2=\"" << px(left) << "\" y2=\""
    << px(top + plot_h) << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << px(left) << "\" y1=\"" << px(top + plot_h) << "\" x2=\""
    << px(left + plot_w) << "\" y2=\"" << px(top + plot_h) << "\" stroke=\"black\"/>\n";

  for (std::size_t g = 0; g < xis.size(); ++g) {
    const double gx = left + group_w * static_cast<double>(g);
    s << "<text x=\"" << px(gx + group_w / 2) << "\" y=\"" << px(top + plot_h + 20)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">xi0 = "
      << fmt(xis[g]) << "</text>\n";
    for (std::size_t k = 0; k < methods.size(); ++k) {
      const auto it = std::find_if(rows.begin(), rows.end(), [&](const ResultsRow* r) {
        return r->xi0 == xis[g] && r->method == methods[k];
      });
      if (it == rows.end()) continue;
      const ResultsRow& r = **it;
      const double x = gx + 0.1 * group_w + bar_w * static_cast<double>(k);
      if (!std::isfinite(r.mean) || r.mean <= 0.0) {
        s << "<text x=\"" << px(x + bar_w / 2) << "\" y=\"" << px(top + plot_h - 6)
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">n/a</text>\n";
        continue;
      }
      const double y = y_of(r.mean);
      s << "<rect x=\"" << px(x) << "\" y=\"" << px(y) << "\" width=\"" << px(bar_w * 0.9)
        << "\" height=\"" << px(top + plot_h - y) << "\" fill=\"" << method_color(r.method)
        << "\"/>\n";
      if (std::isfinite(r.stderr_) && r.stderr_ > 0.0) {
        const double cx = x + bar_w * 0.45;
        const double y_hi = y_of(r.mean + r.stderr_);
        const double y_lo = r.mean - r.stderr_ > std::pow(10.0, dlo) ? y_of(r.mean - r.stderr_)
                                                                      : top + plot_h;
        s << "<line x1=\"" << px(cx) << "\" y1=\"" << px(y_hi) << "\" x2=\"" << px(cx)
          << "\" y2=\"" << px(y_lo) << "\" stroke=\"black\"/>\n"
          << "<line x1=\"" << px(cx - 4) << "\" y1=\"" << px(y_hi) << "\" x2=\"" << px(cx + 4)
          << "\" y2=\"" << px(y_hi) << "\" stroke=\"black\"/>\n"
          << "<line x1=\"" << px(cx - 4) << "\" y1=\"" << px(y_lo) << "\" x2=\"" << px(cx + 4)
          << "\" y2=\"" << px(y_lo) << "\" stroke=\"black\"/>\n";
      }
    }
  }
  for (std::size_t k = 0; k < methods.size(); ++k) {
    const double y = top + 20.0 * static_cast<double>(k);
    s << "<rect x=\"" << px(width - right + 16) << "\" y=\"" << px(y) << "\" width=\"12\" height=\"12\""
      << " fill=\"" << method_color(methods[k]) << "\"/>\n"
      << "<text x=\"" << px(width - right + 34) << "\" y=\"" << px(y + 10)
      << "\" font-family=\"sans-serif\" font-size=\"12\">" << train::method_name(methods[k])
      << "</text>\n";
  }
  s << "<text x=\"16\" y=\"" << px(top + plot_h / 2) << "\" transform=\"rotate(-90 16 "
    << px(top + plot_h / 2) << ")\" text-anchor=\"middle\" font-family=\"sans-serif\""
    << " font-size=\"12\">acceleration RMSE</text>\n"
    << "</svg>\n";
  return s.str();
}

}  // namespace delsmm::exp
