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

// Command-line front end: generate, smooth, train, evaluate, experiment, plot.
// Exit codes: 0 success, 1 runtime error, 2 configuration error, 3 failed cell.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "delsmm/errors.hpp"
#include "delsmm/expcli/experiment.hpp"

namespace {

namespace fs = std::filesystem;
using delsmm::ConfigError;
using delsmm::Error;
using nlohmann::json;
namespace exp = delsmm::exp;
namespace train = delsmm::train;
namespace smooth = delsmm::smooth;
namespace integ = delsmm::integ;

constexpr int kConfigError = 2;
constexpr int kFailedCell = 3;

struct Common {
  std::string config_path;
  bool paper_protocol = false;
  bool desk_scale = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::string system;
  std::vector<double> sigmas;
  int epochs = -1;
  int seeds = -1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "experiment config JSON")->check(CLI::ExistingFile);
  cmd->add_flag("--paper-protocol", c.paper_protocol,
                "16 trajectories, T=200, h=0.05, sigma=0.1, 500 epochs, batch 256, 10 seeds");
  cmd->add_flag("--desk-scale", c.desk_scale, "3 seeds, 4 trajectories, T=100, 100 epochs");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&c](const std::uint64_t& s) { c.seed = s, c.seed_set = true; }, "base seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--system", c.system, "undamped or damped");
  cmd->add_option("--sigma", c.sigmas, "observation noise level(s)");
  cmd->add_option("--epochs", c.epochs, "training epochs");
  cmd->add_option("--seeds", c.seeds, "number of seeds");
}

exp::ExperimentConfig resolve(const Common& c) {
  exp::ExperimentConfig cfg;
  if (c.desk_scale) cfg = exp::ExperimentConfig::desk_scale();
  if (!c.config_path.empty()) cfg = exp::load_config(c.config_path, cfg);
  if (c.paper_protocol) {
    const exp::ExperimentConfig p = exp::ExperimentConfig::paper_protocol();
    cfg.n_trajectories = p.n_trajectories;
    cfg.split = p.split;
    cfg.T = p.T;
    cfg.h = p.h;
    cfg.sigmas = p.sigmas;
    cfg.epochs = p.epochs;
    cfg.batch_size = p.batch_size;
    cfg.seeds = p.seeds;
    cfg.xi0_grid = p.xi0_grid;
  }
  if (c.seed_set) cfg.base_seed = c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (!c.system.empty()) cfg.system = c.system;
  if (!c.sigmas.empty()) cfg.sigmas = c.sigmas;
  if (c.epochs >= 0) cfg.epochs = c.epochs;
  if (c.seeds >= 0) cfg.seeds = c.seeds;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string pad(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 2 ? 2 - s.size() : 0, '0') + s;
}

// ---------------------------------------------------------------------------

// Clean and noisy trajectories plus a manifest with split labels.
int cmd_generate(const Common& c) {
  const exp::ExperimentConfig cfg = resolve(c);
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  write_text(out / "config.json", exp::config_to_json(cfg));
  for (double sigma : cfg.sigmas) {
    const fs::path dir = out / ("sigma_" + integ::format_double(sigma));
    fs::create_directories(dir);
    const exp::Dataset d = exp::build_dataset(cfg, cfg.base_seed, sigma);
    json entries = json::array();
    for (std::size_t i = 0; i < d.clean.size(); ++i) {
      const std::string clean = "clean_" + pad(i) + ".csv";
      const std::string observed = "observed_" + pad(i) + ".csv";
      integ::save_trajectory((dir / clean).string(), d.clean[i].configs, cfg.h, cfg.system,
                             cfg.base_seed, 0.0);
      integ::save_trajectory((dir / observed).string(), d.observed[i].observations, cfg.h,
                             cfg.system, cfg.base_seed, sigma);
      entries.push_back({{"index", i}, {"split", d.labels[i]}, {"clean", clean},
                         {"observed", observed}});
    }
    const json manifest{{"system", cfg.system}, {"h", cfg.h},          {"sigma", sigma},
                        {"seed", cfg.base_seed}, {"trajectories", entries}};
    write_text(dir / "dataset.json", manifest.dump(2) + "\n");
    write_text(dir / "config.json", exp::config_to_json(cfg));
    std::cout << "wrote " << d.clean.size() << " trajectories to " << dir.string() << "\n";
  }
  return 0;
}

// Smooths every observed trajectory listed in a dataset manifest.
int cmd_smooth(const Common& c, const std::string& data_dir) {
  const exp::ExperimentConfig cfg = resolve(c);
  const fs::path in(data_dir);
  const json manifest = read_json(in / "dataset.json");
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  const smooth::SmoothOptions opts = cfg.smooth_options();
  json entries = json::array();
  for (const json& e : manifest.at("trajectories")) {
    const integ::ObservedTrajectory obs =
        integ::load_trajectory((in / e.at("observed").get<std::string>()).string());
    smooth::SmoothedTrajectory s;
    if (obs.sigma == 0.0) {
      integ::Trajectory traj;
      traj.configs = obs.observations;
      traj.h = obs.h;
      s = smooth::noise_free_states(exp::make_system(cfg), traj);
    } else {
      s = smooth::smooth_trajectory(obs, opts);
    }
    s.split = e.at("split").get<std::string>();
    const std::string name = "smoothed_" + pad(e.at("index").get<std::size_t>()) + ".csv";
    smooth::save_smoothed((out / name).string(), s);
    entries.push_back({{"index", e.at("index")}, {"split", s.split}, {"smoothed", name}});
  }
  json smoothed = manifest;
  smoothed["trajectories"] = entries;
  write_text(out / "dataset.json", smoothed.dump(2) + "\n");
  write_text(out / "config.json", exp::config_to_json(cfg));
  std::cout << "smoothed " << entries.size() << " trajectories into " << out.string() << "\n";
  return 0;
}

exp::Dataset load_smoothed_dataset(const fs::path& dir) {
  const json manifest = read_json(dir / "dataset.json");
  exp::Dataset d;
  for (const json& e : manifest.at("trajectories")) {
    if (!e.contains("smoothed")) throw ConfigError(dir.string() + " holds no smoothed data");
    smooth::SmoothedTrajectory s =
        smooth::load_smoothed((dir / e.at("smoothed").get<std::string>()).string());
    s.split = e.at("split").get<std::string>();
    d.labels.push_back(s.split);
    d.smoothed.push_back(std::move(s));
  }
  return d;
}

int cmd_train(const Common& c, const std::string& data_dir, const std::string& method,
              double xi0) {
  const exp::ExperimentConfig cfg = resolve(c);
  const exp::Dataset d = load_smoothed_dataset(data_dir);
  const train::Method m = train::parse_method(method);
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  write_text(out / "config.json", exp::config_to_json(cfg));
  const auto sys = exp::make_system(cfg);
  const double sigma = read_json(fs::path(data_dir) / "dataset.json").at("sigma").get<double>();
  const exp::Cell cell = exp::run_cell(cfg, d, sys, cfg.base_seed, sigma, m, xi0,
                                       (out / "model").string());
  std::cout << train::method_name(m) << " xi0=" << integ::format_double(xi0)
            << " status=" << cell.status << " best_epoch=" << cell.best_epoch
            << " val_rmse=" << integ::format_double(cell.val_rmse)
            << " test_rmse=" << integ::format_double(cell.test_rmse) << "\n";
  if (cell.failed()) {
    std::cerr << "cell failed: " << cell.reason << "\n";
    return kFailedCell;
  }
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& data_dir, const std::string& checkpoint) {
  const exp::ExperimentConfig cfg = resolve(c);
  const exp::Dataset d = load_smoothed_dataset(data_dir);
  const delsmm::nn::Checkpoint ck = delsmm::nn::load_checkpoint(checkpoint);
  const train::AccelEval e = exp::evaluate(ck.params, exp::make_system(cfg), exp::select(d, "test"));
  const json j{{"checkpoint", fs::path(checkpoint).filename().string()},
               {"test_rmse", std::isfinite(e.rmse) ? json(e.rmse) : json()},
               {"count", e.count},
               {"failures", e.failures}};
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  write_text(out / "evaluation.json", j.dump(2) + "\n");
  write_text(out / "config.json", exp::config_to_json(cfg));
  std::cout << "test_rmse=" << integ::format_double(e.rmse) << " count=" << e.count
            << " failures=" << e.failures << "\n";
  return e.failures > 0 ? kFailedCell : 0;
}

int cmd_experiment(const Common& c, bool quiet) {
  const exp::ExperimentConfig cfg = resolve(c);
  const exp::ResultsTable table = exp::run_experiment(cfg, [quiet](const exp::Cell& cell) {
    if (quiet) return;
    std::cout << "seed " << cell.seed << " sigma " << integ::format_double(cell.sigma) << " "
              << train::method_name(cell.method) << " xi0 " << integ::format_double(cell.xi0)
              << ": " << cell.status << " test_rmse " << integ::format_double(cell.test_rmse)
              << "\n"
              << std::flush;
  });
  for (const exp::ResultsRow& r : table.rows) {
    std::cout << r.system << " sigma=" << integ::format_double(r.sigma) << " "
              << train::method_name(r.method) << " xi0=" << integ::format_double(r.xi0)
              << " mean=" << integ::format_double(r.mean)
              << " stderr=" << integ::format_double(r.stderr_) << " (" << r.count << "/"
              << r.seeds.size() << " seeds)\n";
  }
  if (table.failed_cells() > 0) {
    for (const exp::Cell& cell : table.cells) {
      if (cell.failed()) {
        std::cerr << "failed cell seed " << cell.seed << " " << train::method_name(cell.method)
                  << " xi0 " << integ::format_double(cell.xi0) << ": " << cell.reason << "\n";
      }
    }
    return kFailedCell;
  }
  return 0;
}

int cmd_plot(const std::string& results, const std::string& out) {
  std::ifstream in(results);
  if (!in) throw ConfigError("cannot read " + results);
  std::stringstream ss;
  ss << in.rdbuf();
  const exp::ResultsTable table = exp::results_from_json(ss.str());
  const std::string dir = out.empty() ? fs::path(results).parent_path().string() : out;
  const std::string target = dir.empty() ? "." : dir;
  for (const std::string& p : exp::emit_plot_data(table, target)) std::cout << "wrote " << p << "\n";
  const json j = json::parse(ss.str());
  if (j.contains("config")) write_text(fs::path(target) / "config.json", j["config"].dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured mechanical model identification from configuration time series"};
  app.require_subcommand(1);

  Common common;
  std::string data_dir, method = "del", checkpoint, results;
  double xi0 = 1e-3;
  bool quiet = false;

  CLI::App* gen = app.add_subcommand("generate", "simulate trajectories and add noise");
  add_common(gen, common);

  CLI::App* smo = app.add_subcommand("smooth", "EM-fit and RTS-smooth a generated dataset");
  add_common(smo, common);
  smo->add_option("--data", data_dir, "directory with dataset.json")->required();

  CLI::App* tr = app.add_subcommand("train", "train one method at one learning rate");
  add_common(tr, common);
  tr->add_option("--data", data_dir, "smoothed dataset directory")->required();
  tr->add_option("--method", method, "del, accel or nextstate");
  tr->add_option("--xi0", xi0, "initial learning rate");

  CLI::App* ev = app.add_subcommand("evaluate", "test acceleration RMSE of a checkpoint");
  add_common(ev, common);
  ev->add_option("--data", data_dir, "smoothed dataset directory")->required();
  ev->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required()->check(CLI::ExistingFile);

  CLI::App* ex = app.add_subcommand("experiment", "full sweep over seeds, methods and rates");
  add_common(ex, common);
  ex->add_flag("--quiet", quiet, "suppress per-cell progress");

  CLI::App* pl = app.add_subcommand("plot", "plot data and figures from results.json");
  pl->add_option("--results", results, "results.json")->required()->check(CLI::ExistingFile);
  pl->add_option("--out", common.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*gen) return cmd_generate(common);
    if (*smo) return cmd_smooth(common, data_dir);
    if (*tr) return cmd_train(common, data_dir, method, xi0);
    if (*ev) return cmd_evaluate(common, data_dir, checkpoint);
    if (*ex) return cmd_experiment(common, quiet);
    if (*pl) return cmd_plot(results, common.out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
