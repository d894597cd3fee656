// rampnet: collect data, fit models, run the five-scenario comparison.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <rampnet/rampnet.hpp>

namespace fs = std::filesystem;
using namespace rampnet;

namespace {

ExperimentConfig load(const std::string& path) { return path.empty() ? paper_experiment() : load_experiment(path); }

std::vector<std::uint64_t> seeds_or(const CLI::Option* opt, const std::string& text, const std::vector<std::uint64_t>& fallback) {
  return opt->count() > 0 ? parse_seed_list(text) : fallback;
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<int> parse_horizons(const std::string& text) {
  std::vector<int> out;
  for (auto s : parse_seed_list(text)) {
    if (s < 1 || s > 1000) throw UsageError("horizon " + std::to_string(s) + " out of range");
    out.push_back(static_cast<int>(s));
  }
  return out;
}

ModelSet load_models(const std::string& dir, const std::vector<std::string>& scenarios) {
  ModelSet models;
  auto need = [&](const char* name) { return std::find(scenarios.begin(), scenarios.end(), name) != scenarios.end(); };
  auto path = [&](const char* file) {
    const auto p = fs::path(dir) / file;
    if (!fs::exists(p)) throw UsageError("missing model file '" + p.string() + "'; run `rampnet fit` first");
    return p.string();
  };
  if (need("sindyc-mpc")) models.sindyc = load_model(path("sindyc.json"));
  if (need("dmd-mpc")) models.dmdc = load_model(path("dmdc.json"));
  return models;
}

void print_table(const std::string& title, const Table& t) {
  std::cout << title << '\n' << std::setw(12) << t.key;
  for (const auto& c : t.columns) std::cout << std::setw(12) << c;
  std::cout << '\n' << std::fixed << std::setprecision(2);
  for (std::size_t r = 0; r < t.values.size(); ++r) {
    std::cout << std::setw(12) << t.row_labels[r];
    for (double v : t.values[r]) std::cout << std::setw(12) << v;
    std::cout << '\n';
  }
  std::cout.unsetf(std::ios::floatfield);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rampnet: coordinated ramp metering with data-driven MPC"};
  app.require_subcommand(1);

  std::string config, seeds, logs, runs = "results";
  std::string collect_out = "logs", fit_out = "models", run_out = "results", sweep_out = "results", report_out;
  std::string collect_ctrl = "alinea", run_ctrl, sweep_ctrl = "sindyc-mpc";
  std::string run_models = "models", sweep_models = "models", run_horizon, sweep_horizon = "3-7";
  int order = 2;
  double threshold = 2e-4, lambda = 0.05;

  auto* collect_cmd = app.add_subcommand("collect", "Simulate episodes under local feedback control and write one CSV per seed");
  collect_cmd->add_option("--config", config, "Scenario config (JSON); default: built-in paper network");
  collect_cmd->add_option("--controller", collect_ctrl, "alinea or pi-alinea")->capture_default_str();
  auto* collect_seeds = collect_cmd->add_option("--seeds", seeds, "Seeds, e.g. 1-4 or 1,2,3; default: experiment.train_seeds");
  collect_cmd->add_option("--out", collect_out, "Output directory")->capture_default_str();

  auto* fit_cmd = app.add_subcommand("fit", "Fit the SINDYc and DMDc models from logged episodes");
  fit_cmd->add_option("--config", config, "Scenario config (JSON)");
  fit_cmd->add_option("--logs", logs, "Directory of episode CSVs")->required();
  auto* order_opt = fit_cmd->add_option("--order", order, "Polynomial library order");
  auto* thr_opt = fit_cmd->add_option("--threshold", threshold, "STLS threshold, normalized units");
  auto* lam_opt = fit_cmd->add_option("--lambda", lambda, "Ridge lambda inside each STLS solve");
  fit_cmd->add_option("--out", fit_out, "Output directory for sindyc.json and dmdc.json")->capture_default_str();

  auto* run_cmd = app.add_subcommand("run", "Run the control scenarios on identical seeds and write the report");
  run_cmd->add_option("--config", config, "Scenario config (JSON)");
  run_cmd->add_option("--models", run_models, "Directory holding sindyc.json and dmdc.json")->capture_default_str();
  run_cmd->add_option("--controller", run_ctrl, "Comma-separated subset of none,alinea,pi-alinea,dmd-mpc,sindyc-mpc");
  auto* run_seeds = run_cmd->add_option("--seeds", seeds, "Evaluation seeds; default: experiment.eval_seeds");
  run_cmd->add_option("--horizon", run_horizon, "MPC prediction horizon override");
  run_cmd->add_option("--out", run_out, "Output directory")->capture_default_str();

  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep the MPC prediction horizon");
  sweep_cmd->add_option("--config", config, "Scenario config (JSON)");
  sweep_cmd->add_option("--models", sweep_models, "Directory holding the models")->capture_default_str();
  sweep_cmd->add_option("--controller", sweep_ctrl, "sindyc-mpc or dmd-mpc")->capture_default_str();
  sweep_cmd->add_option("--horizon", sweep_horizon, "Horizons, e.g. 3-7")->capture_default_str();
  auto* sweep_seeds = sweep_cmd->add_option("--seeds", seeds, "Evaluation seeds; default: experiment.eval_seeds");
  sweep_cmd->add_option("--out", sweep_out, "Output directory")->capture_default_str();

  auto* report_cmd = app.add_subcommand("report", "Rebuild tables and series from a finished run");
  report_cmd->add_option("--config", config, "Scenario config used for the run");
  report_cmd->add_option("--runs", runs, "Directory written by `rampnet run`")->capture_default_str();
  report_cmd->add_option("--out", report_out, "Output directory; default: the run directory");

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = load(config);

    if (*collect_cmd) {
      const auto paths = collect(cfg, collect_ctrl, seeds_or(collect_seeds, seeds, cfg.train_seeds), collect_out);
      for (const auto& p : paths) std::cout << p << '\n';
      return 0;
    }

    if (*fit_cmd) {
      if (*order_opt) cfg.sysid.library.polynomial_order = order;
      if (*thr_opt) cfg.sysid.stls.threshold = threshold;
      if (*lam_opt) cfg.sysid.stls.ridge = lambda;
      if (cfg.sysid.library.polynomial_order < 1) throw UsageError("--order must be >= 1");
      const auto episodes = load_logs(logs);
      const auto fitted = fit_models(episodes, cfg.sysid);
      fs::create_directories(fit_out);
      save_model(fitted.sindyc, (fs::path(fit_out) / "sindyc.json").string());
      save_model(fitted.dmdc, (fs::path(fit_out) / "dmdc.json").string());
      std::cout << "sindyc: " << fitted.sindyc.active_terms() << " nonzero coefficients over " << fitted.sindyc.term_count()
                << " terms x " << fitted.sindyc.state_dim() << " states\n";
      for (const auto& d : fitted.sindyc.diagnostics) std::cout << "  " << d << '\n';
      for (const auto& d : fitted.dmdc.diagnostics) std::cout << "dmdc: " << d << '\n';
      return 0;
    }

    if (*run_cmd) {
      if (!run_horizon.empty()) cfg.mpc.horizon = parse_horizons(run_horizon).front();
      const auto scenarios = run_ctrl.empty() ? scenario_names() : split(run_ctrl);
      const auto models = load_models(run_models, scenarios);
      const auto run = run_scenarios(cfg, models, seeds_or(run_seeds, seeds, cfg.eval_seeds), scenarios);
      save_run(run, run_out);
      report(cfg, run.results, run.episodes, run_out);
      print_table("Mean |occupancy - desired| (%)", deviation_table(cfg.network, run.results));
      if (std::any_of(run.results.begin(), run.results.end(), [](const auto& r) { return r.scenario == "none"; }))
        print_table("Flow improvement over no control (veh/h)", flow_improvement_table(cfg.network, run.results));
      print_table("Green percentage (%)", green_table(cfg.network, run.results));
      return 0;
    }

    if (*sweep_cmd) {
      if (sweep_ctrl != "sindyc-mpc" && sweep_ctrl != "dmd-mpc") throw UsageError("sweep needs sindyc-mpc or dmd-mpc");
      const auto models = load_models(sweep_models, {sweep_ctrl});
      const auto& model = sweep_ctrl == "sindyc-mpc" ? *models.sindyc : *models.dmdc;
      const auto horizons = parse_horizons(sweep_horizon);
      const auto eval = seeds_or(sweep_seeds, seeds, cfg.eval_seeds);
      const auto mc = cfg.mpc.expand(cfg.network.state_dim(), cfg.network.input_dim());
      const auto rows = horizon_sweep(model, cfg.network, mc, horizons, eval);
      fs::create_directories(sweep_out);
      std::ofstream f(fs::path(sweep_out) / "sweep.csv");
      if (!f) throw ConfigError("cannot write sweep.csv in '" + sweep_out + "'");
      f << "horizon,mean_flow_vph,mean_abs_deviation_pct,mean_solve_ms,max_solve_ms\n";
      f.precision(10);
      std::cout << "horizon  flow_vph  deviation_pct  mean_ms  max_ms\n";
      for (const auto& r : rows) {
        f << r.horizon << ',' << r.mean_flow_vph << ',' << r.mean_abs_deviation_pct << ',' << r.mean_solve_ms << ',' << r.max_solve_ms
          << '\n';
        std::cout << std::setw(7) << r.horizon << std::fixed << std::setprecision(1) << std::setw(10) << r.mean_flow_vph
                  << std::setprecision(3) << std::setw(15) << r.mean_abs_deviation_pct << std::setw(9) << r.mean_solve_ms
                  << std::setw(8) << r.max_solve_ms << '\n';
      }
      return 0;
    }

    if (*report_cmd) {
      const auto run = load_run(runs, cfg.mpc.desired_occupancy_pct);
      const auto files = report(cfg, run.results, run.episodes, report_out.empty() ? runs : report_out);
      for (const auto& p : files.tables) std::cout << p << '\n';
      for (const auto& p : files.series) std::cout << p << '\n';
      std::cout << files.summary << '\n';
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "rampnet: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "rampnet: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
