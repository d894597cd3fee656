#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include <rampnet/harness.hpp>

using namespace rampnet;
namespace fs = std::filesystem;

namespace {

/// The paper network with a ten-minute control window.
ExperimentConfig short_experiment() {
  auto cfg = paper_experiment();
  cfg.network.burn_in_s = 600.0;
  cfg.network.horizon_duration_s = 600.0;
  return cfg;
}

/// Eight-state model pulling each occupancy toward 15 % and rising with its rate.
SparseModel pull_model() {
  SparseModel model;
  model.library = build_library(8, 8);
  model.coefficients = Eigen::MatrixXd::Zero(8, static_cast<Eigen::Index>(model.library.size()));
  for (Eigen::Index k = 0; k < 8; ++k) {
    model.coefficients(k, 0) = 1.5;
    model.coefficients(k, 1 + k) = -0.2;
    model.coefficients(k, 9 + k) = 0.001;
  }
  model.normalized_coefficients = model.coefficients;
  model.column_scale = Eigen::VectorXd::Ones(model.coefficients.cols());
  model.target_scale = Eigen::VectorXd::Ones(8);
  return model;
}

ModelSet pull_models() {
  ModelSet m;
  m.sindyc = pull_model();
  m.dmdc = pull_model();
  m.dmdc->method = "dmdc";
  return m;
}

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("rampnet_test_" + name);
  fs::remove_all(p);
  return p;
}

class ThreadsEnv {
 public:
  explicit ThreadsEnv(const char* value) {
    if (const char* old = std::getenv("RAMPNET_THREADS")) saved_ = old;
    if (value)
      setenv("RAMPNET_THREADS", value, 1);
    else
      unsetenv("RAMPNET_THREADS");
  }
  ~ThreadsEnv() {
    if (saved_)
      setenv("RAMPNET_THREADS", saved_->c_str(), 1);
    else
      unsetenv("RAMPNET_THREADS");
  }

 private:
  std::optional<std::string> saved_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Arguments

TEST(Seeds, ListsAndRanges) {
  EXPECT_EQ(parse_seed_list("1-4"), (std::vector<std::uint64_t>{1, 2, 3, 4}));
  EXPECT_EQ(parse_seed_list("7"), (std::vector<std::uint64_t>{7}));
  EXPECT_EQ(parse_seed_list("1-3,10"), (std::vector<std::uint64_t>{1, 2, 3, 10}));
  EXPECT_EQ(parse_seed_list("5,2"), (std::vector<std::uint64_t>{5, 2}));
}

TEST(Seeds, BadInputIsAUsageError) {
  for (const char* bad : {"", ",", "a", "3-1", "1-", "-2", "1.5", "2-x"}) EXPECT_THROW(parse_seed_list(bad), UsageError) << bad;
}

TEST(Threads, EnvironmentCapsWorkers) {
  {
    ThreadsEnv env("3");
    EXPECT_EQ(worker_threads(), 3u);
  }
  {
    ThreadsEnv env("0");
    EXPECT_THROW(worker_threads(), UsageError);
  }
  {
    ThreadsEnv env("two");
    EXPECT_THROW(worker_threads(), UsageError);
  }
  ThreadsEnv env(nullptr);
  EXPECT_GE(worker_threads(), 1u);
}

TEST(Threads, ParallelForVisitsEverySlotOnce) {
  for (std::size_t threads : {1u, 2u, 5u}) {
    std::vector<int> hits(37, 0);
    parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
    EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  }
}

TEST(Threads, ParallelForRethrows) {
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                 if (i == 4) throw std::runtime_error("boom");
               }),
               std::runtime_error);
}

// ---------------------------------------------------------------------------
// Configuration

TEST(Experiment, ShippedConfigMatchesBuiltIn) {
  const auto cfg = load_experiment(std::string(RAMPNET_SOURCE_DIR) + "/configs/paper_network.json");
  EXPECT_EQ(to_json(cfg), to_json(paper_experiment()));
  EXPECT_EQ(config_hash(cfg), config_hash(paper_experiment()));
}

TEST(Experiment, HashIsStableAndSensitive) {
  const auto a = paper_experiment();
  EXPECT_EQ(config_hash(a), config_hash(paper_experiment()));
  EXPECT_EQ(config_hash(a).size(), 16u);
  auto b = a;
  b.mpc.horizon = 5;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Experiment, JsonRoundTrip) {
  auto cfg = short_experiment();
  cfg.mpc.solver.step_rule = StepRule::backtracking;
  cfg.sysid.stls.threshold = 1e-3;
  cfg.eval_seeds = {9, 8};
  EXPECT_EQ(to_json(experiment_from_json(to_json(cfg))), to_json(cfg));
}

TEST(Experiment, InvalidSectionsAreRejected) {
  auto j = to_json(paper_experiment());
  j["sysid"]["polynomial_order"] = 0;
  EXPECT_ANY_THROW(experiment_from_json(j));
  j = to_json(paper_experiment());
  j["experiment"]["collect_controller"] = "sindyc-mpc";
  EXPECT_ANY_THROW(experiment_from_json(j));
  j = to_json(paper_experiment());
  j["mpc"]["horizon"] = 0;
  EXPECT_ANY_THROW(experiment_from_json(j));
}

// ---------------------------------------------------------------------------
// Collection

TEST(Collect, WritesOneLogPerSeed) {
  const auto dir = fresh_dir("collect");
  const auto paths = collect(short_experiment(), "alinea", {3, 1}, dir.string());
  ASSERT_EQ(paths.size(), 2u);
  EXPECT_EQ(fs::path(paths[0]).filename(), "alinea_seed3.csv");
  const auto logs = load_logs(dir.string());
  ASSERT_EQ(logs.size(), 2u);
  EXPECT_EQ(logs[0].seed, 1u);  // file-name order
  EXPECT_EQ(logs[1].seed, 3u);
  EXPECT_EQ(logs[0].rows(), 20u);
}

TEST(Collect, RejectsBadRequests) {
  const auto cfg = short_experiment();
  EXPECT_THROW(collect_episodes(cfg, "alinea", {}), UsageError);
  EXPECT_THROW(collect_episodes(cfg, "sindyc-mpc", {1}), UsageError);
  EXPECT_THROW(load_logs(fresh_dir("missing").string()), UsageError);
  const auto empty = fresh_dir("empty");
  fs::create_directories(empty);
  EXPECT_THROW(load_logs(empty.string()), UsageError);
}

TEST(Collect, TooFewLogsToFitIsReported) {
  auto cfg = short_experiment();
  const auto logs = collect_episodes(cfg, "alinea", {1});
  EXPECT_THROW(fit_models(logs, cfg.sysid), SysIdError);
}

// ---------------------------------------------------------------------------
// Runs

TEST(Run, MissingModelFailsBeforeAnyEpisode) {
  try {
    run_scenarios(short_experiment(), {}, {1}, {"none", "sindyc-mpc"});
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("sindyc-mpc"), std::string::npos);
  }
  EXPECT_THROW(make_controller("fuzzy", short_experiment()), UsageError);
}

TEST(Run, ModelOfTheWrongSizeIsRejected) {
  ModelSet m;
  SparseModel small;
  small.library = build_library(2, 2);
  small.coefficients = Eigen::MatrixXd::Zero(2, 15);
  m.sindyc = small;
  EXPECT_THROW(make_controller("sindyc-mpc", short_experiment(), m), UsageError);
}

TEST(Run, TablesHaveTheExpectedShape) {
  const auto cfg = short_experiment();
  const auto run = run_scenarios(cfg, pull_models(), {1, 2});
  ASSERT_EQ(run.results.size(), 5u);
  const auto dev = deviation_table(cfg.network, run.results);
  const auto flow = flow_improvement_table(cfg.network, run.results);
  const auto green = green_table(cfg.network, run.results);
  for (const auto* t : {&dev, &flow, &green}) {
    EXPECT_EQ(t->row_labels.size(), 9u);
    EXPECT_EQ(t->row_labels.back(), "Average");
    EXPECT_EQ(t->columns, scenario_names());
  }
  for (std::size_t r = 0; r < 9; ++r) EXPECT_EQ(flow.values[r][0], 0.0);
  for (std::size_t c = 0; c < 5; ++c) {
    EXPECT_EQ(flow.values[0][c], run.results[c].flow_vph[0] - run.results[0].flow_vph[0]);
    for (std::size_t r = 0; r < 9; ++r) {
      EXPECT_GE(green.values[r][c], 100.0 * 2.0 / 18.0 - 1e-9);
      EXPECT_LE(green.values[r][c], 100.0);
      EXPECT_GE(dev.values[r][c], 0.0);
    }
  }
  for (std::size_t r = 0; r < 8; ++r) EXPECT_EQ(green.values[r][0], 100.0);  // no control: always green
}

TEST(Run, ResultsDoNotDependOnThreadCount) {
  const auto cfg = short_experiment();
  const std::vector<std::string> scn{"alinea", "sindyc-mpc"};
  RunOutput a, b;
  {
    ThreadsEnv env("1");
    a = run_scenarios(cfg, pull_models(), {4, 5}, scn);
  }
  {
    ThreadsEnv env("4");
    b = run_scenarios(cfg, pull_models(), {4, 5}, scn);
  }
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t e = 0; e < 2; ++e) EXPECT_TRUE(bit_identical(a.episodes[s][e], b.episodes[s][e]));
  EXPECT_EQ(a.results[1].deviation_pct, b.results[1].deviation_pct);
}

TEST(Run, FlowTableNeedsTheBaseline) {
  const auto cfg = short_experiment();
  const auto run = run_scenarios(cfg, {}, {1}, {"alinea"});
  EXPECT_THROW(flow_improvement_table(cfg.network, run.results), UsageError);
}

// ---------------------------------------------------------------------------
// Report

TEST(Report, WritesTablesSeriesAndSummary) {
  const auto cfg = short_experiment();
  const auto run = run_scenarios(cfg, pull_models(), {1, 2});
  const auto dir = fresh_dir("report");
  const auto files = report(cfg, run.results, run.episodes, dir.string());
  EXPECT_EQ(files.tables.size(), 3u);
  EXPECT_EQ(files.series.size(), 5u);
  for (const auto& p : files.tables) EXPECT_TRUE(fs::exists(p));
  std::ifstream in(files.summary);
  const auto summary = nlohmann::json::parse(in);
  EXPECT_EQ(summary["config_hash"], config_hash(cfg));
  EXPECT_EQ(summary["seeds"], (std::vector<std::uint64_t>{1, 2}));
  EXPECT_EQ(summary["scenarios"].size(), 5u);

  std::ifstream series(dir / "series_alinea.csv");
  std::string header;
  std::getline(series, header);
  EXPECT_EQ(header, "scenario,sensor,step,time_s,occupancy_pct,flow_vph,occupancy_ma_pct,flow_ma_vph,rate_vph");
  std::size_t lines = 0;
  for (std::string l; std::getline(series, l);) ++lines;
  EXPECT_EQ(lines, 8u * 20u);
}

TEST(Report, SavedRunRebuildsIdenticalTables) {
  const auto cfg = short_experiment();
  const auto run = run_scenarios(cfg, pull_models(), {1}, {"none", "alinea", "dmd-mpc"});
  const auto dir = fresh_dir("saved_run");
  save_run(run, dir.string());
  EXPECT_TRUE(fs::exists(dir / "episodes" / "dmd-mpc_seed1_solver.json"));
  const auto back = load_run(dir.string());
  ASSERT_EQ(back.results.size(), 3u);
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_EQ(back.results[s].scenario, run.results[s].scenario);
    EXPECT_EQ(back.results[s].deviation_pct, run.results[s].deviation_pct);
    EXPECT_EQ(back.results[s].flow_vph, run.results[s].flow_vph);
    EXPECT_EQ(back.results[s].green_pct, run.results[s].green_pct);
    EXPECT_EQ(back.results[s].seeds, run.results[s].seeds);
  }
}

TEST(Report, EmptyResultsAreAUsageError) {
  EXPECT_THROW(report(short_experiment(), {}, {}, fresh_dir("nothing").string()), UsageError);
  EXPECT_THROW(load_run(fresh_dir("no_manifest").string()), UsageError);
}

TEST(Report, UnwritableDirectoryIsAConfigError) {
  const auto cfg = short_experiment();
  const auto run = run_scenarios(cfg, {}, {1}, {"none"});
  const auto blocker = fresh_dir("blocker");
  std::ofstream(blocker) << "a file, not a directory";
  EXPECT_THROW(report(cfg, run.results, run.episodes, (blocker / "sub").string()), ConfigError);
}

TEST(Series, TrailingMovingAverage) {
  EXPECT_EQ(moving_average({1, 2, 3, 4, 5}, 2), (std::vector<double>{1, 1.5, 2.5, 3.5, 4.5}));
  EXPECT_EQ(moving_average({4, 8}, 5), (std::vector<double>{4, 6}));
  EXPECT_EQ(moving_average({3, 1, 2}, 1), (std::vector<double>{3, 1, 2}));
}
