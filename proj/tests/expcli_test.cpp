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

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "delsmm/errors.hpp"
#include "delsmm/expcli/experiment.hpp"
#include "delsmm/mechanics/mechanics.hpp"
#include "test_util.hpp"

namespace delsmm::exp {
namespace {

namespace fs = std::filesystem;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("delsmm_expcli_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.n_trajectories = 4;
  c.split = {2, 1, 1};
  c.T = 40;
  c.seeds = 2;
  c.epochs = 3;
  c.xi0_grid = {1e-2, 1e-3};
  c.hidden = {8, 8};
  c.out_dir = out.string();
  return c;
}

Cell make_cell(train::Method m, double xi0, std::uint64_t seed, double test, double val) {
  Cell c;
  c.system = "undamped";
  c.sigma = 0.1;
  c.method = m;
  c.xi0 = xi0;
  c.seed = seed;
  c.test_rmse = test;
  c.val_rmse = val;
  if (std::isnan(test)) {
    c.status = "diverged";
    c.reason = "budget";
  }
  return c;
}

// ---------------------------------------------------------------------------

TEST(Split, DeterministicPartition) {
  const SplitSizes sizes{8, 4, 4};
  const auto a = split_trajectories(16, 7, sizes);
  EXPECT_EQ(a, split_trajectories(16, 7, sizes));
  int train = 0, val = 0, test = 0;
  for (const std::string& l : a) {
    train += l == "train";
    val += l == "val";
    test += l == "test";
  }
  EXPECT_EQ(train, 8);
  EXPECT_EQ(val, 4);
  EXPECT_EQ(test, 4);
}

TEST(Split, SeedsGiveDistinctAssignments) {
  std::set<std::vector<std::string>> seen;
  for (std::uint64_t s = 0; s < 10; ++s) seen.insert(split_trajectories(16, s, {8, 4, 4}));
  EXPECT_GE(seen.size(), 9u);
}

TEST(Split, SizeMismatchIsAConfigError) {
  EXPECT_THROW(split_trajectories(15, 0, {8, 4, 4}), ConfigError);
  EXPECT_THROW(split_trajectories(0, 0, {0, 0, 0}), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(Config, PaperProtocolValues) {
  const ExperimentConfig c = ExperimentConfig::paper_protocol();
  EXPECT_EQ(c.n_trajectories, 16);
  EXPECT_EQ(c.split.train, 8);
  EXPECT_EQ(c.split.val, 4);
  EXPECT_EQ(c.split.test, 4);
  EXPECT_EQ(c.T, 200);
  EXPECT_EQ(c.h, 0.05);
  EXPECT_EQ(c.sigmas, std::vector<double>{0.1});
  EXPECT_EQ(c.epochs, 500);
  EXPECT_EQ(c.batch_size, 256u);
  EXPECT_EQ(c.seeds, 10);
  EXPECT_EQ(c.xi0_grid, (std::vector<double>{1e-2, 1e-3, 1e-5}));
  EXPECT_EQ(c.process_covariance_diag, smooth::Vec3(1e-3, 1e-3, 1.0));
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonRoundTripAndPartialOverride) {
  ExperimentConfig c = tiny_config("out");
  c.system = "damped";
  c.sigmas = {0.05, 0.4};
  c.methods = {train::Method::kNextState, train::Method::kDel};
  c.process_covariance_diag = {1e-3, 1e-3, 1000.0};
  const std::string text = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(text)), text);

  const ExperimentConfig o = config_from_json(R"({"epochs": 7, "sigma": 0.2})", c);
  EXPECT_EQ(o.epochs, 7);
  EXPECT_EQ(o.sigmas, std::vector<double>{0.2});
  EXPECT_EQ(o.system, "damped");
  EXPECT_FALSE(o.arch().conservative);
  EXPECT_TRUE(ExperimentConfig{}.arch().conservative);
}

TEST(Config, RejectsInvalidInput) {
  EXPECT_THROW(config_from_json(R"({"epoch": 3})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"n_trajectories": 10})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"system": "triple"})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"methods": ["sgd"]})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"T": "long"})"), ConfigError);
  EXPECT_THROW(config_from_json("[1, 2]"), ConfigError);
  EXPECT_THROW(config_from_json("{"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"smoother": {"process_covariance_diag": [1, 2]}})"),
               ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(Dataset, LabelsAndShapes) {
  const ExperimentConfig c = tiny_config("unused");
  const Dataset d = build_dataset(c, 3, 0.1);
  ASSERT_EQ(d.smoothed.size(), 4u);
  EXPECT_EQ(d.labels, split_trajectories(4, 3, c.split));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(d.smoothed[i].split, d.labels[i]);
    EXPECT_EQ(d.clean[i].configs.rows(), c.T);
    EXPECT_EQ(d.smoothed[i].q.rows(), c.T);
  }
  EXPECT_EQ(select(d, "train").size(), 2u);
  EXPECT_NO_THROW(audit_split(select(d, "test"), "test"));
  EXPECT_THROW(audit_split(d.smoothed, "test"), ContractViolation);

  // Bitwise reproducible per seed.
  const Dataset again = build_dataset(c, 3, 0.1);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(again.smoothed[i].q, d.smoothed[i].q);
}

TEST(Dataset, RedrawsStartsWithoutDiscreteSolution) {
  // Seed 0 of the full protocol draws a start whose discrete equations have no
  // root after ~150 steps.
  ExperimentConfig c = ExperimentConfig::paper_protocol();
  const mech::DoublePendulum sys = make_system(c);
  for (std::uint64_t seed : {0u, 2u}) {
    const Dataset d = build_dataset(c, seed, 0.0);
    ASSERT_EQ(d.clean.size(), 16u);
    for (const auto& traj : d.clean) {
      ASSERT_EQ(traj.length(), 200);
      for (Eigen::Index t = 1; t + 1 < traj.length(); ++t) {
        const mech::ConfigTriple triple{traj.configs.row(t - 1).transpose(),
                                        traj.configs.row(t).transpose(),
                                        traj.configs.row(t + 1).transpose(), traj.h};
        ASSERT_LE(mech::del(sys, triple).cwiseAbs().maxCoeff(), 1e-9);
      }
    }
  }
}

TEST(Dataset, NoiseFreeUsesTrueStates) {
  const ExperimentConfig c = tiny_config("unused");
  const Dataset d = build_dataset(c, 1, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(d.smoothed[i].q, d.clean[i].configs.middleRows(1, c.T - 2));
  }
}

TEST(Evaluate, GroundTruthIsExactAndOrderFree) {
  const ExperimentConfig c = tiny_config("unused");
  const mech::DoublePendulum sys = make_system(c);
  const Dataset d = build_dataset(c, 2, 0.1);
  const auto test = with_true_accelerations(sys, select(d, "test"));
  const train::ValidationSet v = train::stack_tuples(test);
  EXPECT_EQ(train::evaluate_acceleration(sys, v.q, v.qdot, v.qddot).rmse, 0.0);

  const nn::SmmParams p = nn::init_params(5, c.arch());
  std::vector<smooth::SmoothedTrajectory> two = select(d, "train");
  for (auto& t : two) t.split = "test";
  const double forward = evaluate(p, sys, two).rmse;
  std::swap(two[0], two[1]);
  EXPECT_LE(testing::rel_err(evaluate(p, sys, two).rmse, forward), 1e-12);
  EXPECT_THROW(evaluate(p, sys, select(d, "val")), ContractViolation);
}

TEST(Evaluate, DegenerateModelIsFlagged) {
  const ExperimentConfig c = tiny_config("unused");
  const mech::DoublePendulum sys = make_system(c);
  const Dataset d = build_dataset(c, 2, 0.1);
  nn::SmmParams p = nn::init_params(5, c.arch());
  p.log_scales.mass = -1e4;  // M ≡ 0: the constant-Lagrangian limit
  const train::AccelEval e = evaluate(p, sys, select(d, "test"));
  EXPECT_EQ(e.failures, static_cast<std::size_t>(c.T));
  EXPECT_EQ(e.count, static_cast<std::size_t>(c.T));
  EXPECT_TRUE(std::isinf(e.rmse));
}

// ---------------------------------------------------------------------------

TEST(Aggregate, StandardErrorMatchesIndependentRecomputation) {
  const std::vector<double> vals{0.7, 1.3, 0.9, 2.2};
  std::vector<Cell> cells;
  for (std::size_t s = 0; s < vals.size(); ++s) {
    cells.push_back(make_cell(train::Method::kDel, 1e-3, s, vals[s], vals[s] + 1));
  }
  const ResultsTable t = aggregate(cells);
  ASSERT_EQ(t.rows.size(), 1u);
  const ResultsRow& r = t.rows[0];
  // Two-pass oracle with an explicit (n − 1) denominator.
  double sum = 0.0;
  for (double v : vals) sum += v;
  const double mean = sum / 4.0;
  double ss = 0.0;
  for (double v : vals) ss += (v - mean) * (v - mean);
  EXPECT_NEAR(r.mean, 1.275, 1e-15);
  EXPECT_NEAR(r.stderr_, std::sqrt(ss / 3.0) / 2.0, 1e-15);
  EXPECT_EQ(r.test_rmse, vals);
  EXPECT_EQ(r.count, 4);
  EXPECT_NEAR(r.mean_val, 2.275, 1e-15);
}

TEST(Aggregate, FailedCellsAreExcludedAndCounted) {
  const ResultsTable t = aggregate({make_cell(train::Method::kAccel, 1e-2, 0, 1.0, 1.0),
                                    make_cell(train::Method::kAccel, 1e-2, 1, kNaN, kNaN),
                                    make_cell(train::Method::kAccel, 1e-2, 2, 3.0, 2.0)});
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0].count, 2);
  EXPECT_EQ(t.rows[0].mean, 2.0);
  EXPECT_EQ(t.failed_cells(), 1);
  EXPECT_EQ(median(t.rows[0].test_rmse), 3.0);
}

TEST(Aggregate, BestLearningRateByValidationOnly) {
  const ResultsTable t = aggregate({make_cell(train::Method::kDel, 1e-2, 0, 9.0, 1.0),
                                    make_cell(train::Method::kDel, 1e-3, 0, 1.0, 2.0),
                                    make_cell(train::Method::kAccel, 1e-2, 0, 5.0, kNaN),
                                    make_cell(train::Method::kAccel, 1e-3, 0, 6.0, 3.0)});
  const auto best = best_by_validation(t);
  ASSERT_EQ(best.size(), 2u);
  EXPECT_EQ(best[0]->xi0, 1e-2);  // lower validation error despite the worse test error
  EXPECT_EQ(best[1]->xi0, 1e-3);
}

TEST(Aggregate, Median) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_THROW(median({}), ContractViolation);
}

// ---------------------------------------------------------------------------

TEST(PlotData, SingleCellGivesSingleRowAndValidSvg) {
  const fs::path out = scratch("plot");
  const ResultsTable t = aggregate({make_cell(train::Method::kDel, 1e-3, 0, 0.5, 0.4)});
  const auto files = emit_plot_data(t, out.string());
  ASSERT_EQ(files.size(), 2u);
  const std::string csv = slurp(out / "plotdata_undamped_0.1.csv");
  EXPECT_EQ(csv, "method,xi0,mean,stderr\ndel,0.001,0.5,nan\n");

  boost::property_tree::ptree tree;
  std::ifstream svg(out / "figure_undamped_0.1.svg");
  ASSERT_NO_THROW(boost::property_tree::read_xml(svg, tree));
  EXPECT_EQ(tree.get<std::string>("svg.<xmlattr>.xmlns"), "http://www.w3.org/2000/svg");
  EXPECT_THROW(emit_plot_data(ResultsTable{}, out.string()), ContractViolation);
}

TEST(PlotData, MultiRowSvgParses) {
  std::vector<Cell> cells;
  for (train::Method m : {train::Method::kDel, train::Method::kAccel, train::Method::kNextState}) {
    for (double xi : {1e-2, 1e-3, 1e-5}) {
      for (std::uint64_t s = 0; s < 3; ++s) {
        cells.push_back(make_cell(m, xi, s, xi == 1e-5 && s == 0 ? kNaN : 0.3 + 0.1 * s + xi, 1));
      }
    }
  }
  const std::string svg = plot_svg(best_by_validation(aggregate(cells)), "a < b & c");
  std::istringstream in(svg);
  boost::property_tree::ptree tree;
  EXPECT_NO_THROW(boost::property_tree::read_xml(in, tree));
}

// ---------------------------------------------------------------------------

TEST(Experiment, TinyRunWritesArtifactsAndIsBitwiseReproducible) {
  const fs::path out = scratch("run");
  const ExperimentConfig c = tiny_config(out);
  const ResultsTable t = run_experiment(c);
  EXPECT_EQ(t.cells.size(), 2u * 3u * 2u);
  EXPECT_EQ(t.rows.size(), 3u * 2u);
  for (const char* f : {"config.json", "results.csv", "results.json", "plotdata_undamped_0.1.csv",
                        "figure_undamped_0.1.svg"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_TRUE(fs::exists(out / "records" / "undamped_sigma0.1_seed1_nextstate_xi0.001.record.json"));
  EXPECT_EQ(config_to_json(load_config((out / "config.json").string())), config_to_json(c));

  // The parsed table regenerates the same aggregates.
  const ResultsTable parsed = results_from_json(slurp(out / "results.json"));
  ASSERT_EQ(parsed.rows.size(), t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    EXPECT_EQ(parsed.rows[i].test_rmse, t.rows[i].test_rmse);
  }

  const std::string csv = slurp(out / "results.csv");
  const std::string json = slurp(out / "results.json");
  run_experiment(c);
  EXPECT_EQ(slurp(out / "results.csv"), csv);
  EXPECT_EQ(slurp(out / "results.json"), json);
}

TEST(Experiment, DivergedCellIsReportedAndSweepContinues) {
  const fs::path out = scratch("diverge");
  ExperimentConfig c = tiny_config(out);
  c.seeds = 1;
  c.xi0_grid = {1e3, 1e-3};
  c.methods = {train::Method::kAccel};
  c.batch_size = 8;
  c.epochs = 30;
  const ResultsTable t = run_experiment(c);
  ASSERT_EQ(t.cells.size(), 2u);
  EXPECT_TRUE(t.cells[0].failed());
  EXPECT_FALSE(t.cells[0].reason.empty());
  EXPECT_TRUE(std::isnan(t.cells[0].test_rmse));
  EXPECT_FALSE(t.cells[1].failed());
  EXPECT_EQ(t.failed_cells(), 1);
}

TEST(Experiment, DeskScaleCompletesWithFullTable) {
  const fs::path out = scratch("desk");
  ExperimentConfig c = ExperimentConfig::desk_scale();
  c.out_dir = out.string();
  c.write_records = false;
  const ResultsTable t = run_experiment(c);
  EXPECT_EQ(t.rows.size(), 9u);
  EXPECT_EQ(t.failed_cells(), 0);
  for (const ResultsRow& r : t.rows) {
    EXPECT_EQ(r.count, 3);
    EXPECT_TRUE(std::isfinite(r.mean));
    EXPECT_TRUE(std::isfinite(r.stderr_));
  }
}

}  // namespace
}  // namespace delsmm::exp
