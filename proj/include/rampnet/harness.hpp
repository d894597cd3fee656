#pragma once

/// @file harness.hpp
/// @brief Experiment orchestration: data collection, scenario runs, tables.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "feedback.hpp"
#include "mpc.hpp"
#include "network.hpp"
#include "plant.hpp"
#include "sysid.hpp"

namespace rampnet {

/// Bad command-line or API usage (empty seed list, unknown controller, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"none", "alinea", "pi-alinea", "dmd-mpc", "sindyc-mpc"};
  return names;
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct MpcSettings {
  int horizon = 4;
  double q = 1.0;
  double p = 1.0;
  double r = 0.0;
  double desired_occupancy_pct = 15.0;
  double x_min_pct = 0.0;
  double x_max_pct = 80.0;
  double u_min_vph = kMinRateVph;
  double u_max_vph = kMaxRateVph;
  MpcSolverOptions solver;

  MpcConfig expand(std::size_t n, std::size_t m) const {
    auto c = MpcConfig::uniform(n, m, q, p, r);
    c.horizon = horizon;
    c.desired_occupancy_pct = desired_occupancy_pct;
    c.x_min_pct = x_min_pct;
    c.x_max_pct = x_max_pct;
    c.u_min_vph = u_min_vph;
    c.u_max_vph = u_max_vph;
    c.solver = solver;
    return c;
  }
};

struct ExperimentConfig {
  NetworkConfig network;
  AlineaParams alinea;
  PiAlineaParams pi_alinea;
  MpcSettings mpc;
  SindyOptions sysid;
  std::string collect_controller = "alinea";
  std::vector<std::uint64_t> train_seeds{1, 2, 3, 4};
  std::vector<std::uint64_t> eval_seeds{101, 102, 103};
  int series_window = 5;  ///< moving-average window of the plotted series, control steps
};

inline std::string to_string(StepRule r) { return r == StepRule::backtracking ? "backtracking" : "barzilai_borwein"; }

inline StepRule step_rule_from_string(const std::string& s) {
  if (s == "backtracking") return StepRule::backtracking;
  if (s == "barzilai_borwein") return StepRule::barzilai_borwein;
  throw ConfigError("unknown step_rule '" + s + "'");
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json j;
  j["network"] = to_json(c.network);
  j["alinea"] = {{"gain_vph_per_pct", c.alinea.gain_vph_per_pct}, {"desired_occupancy_pct", c.alinea.desired_occupancy_pct}};
  j["pi_alinea"] = {{"proportional_gain_vph_per_pct", c.pi_alinea.proportional_gain_vph_per_pct},
                    {"integral_gain_vph_per_pct", c.pi_alinea.integral_gain_vph_per_pct},
                    {"desired_occupancy_pct", c.pi_alinea.desired_occupancy_pct}};
  j["mpc"] = {{"horizon", c.mpc.horizon},
              {"q", c.mpc.q},
              {"p", c.mpc.p},
              {"r", c.mpc.r},
              {"desired_occupancy_pct", c.mpc.desired_occupancy_pct},
              {"x_min_pct", c.mpc.x_min_pct},
              {"x_max_pct", c.mpc.x_max_pct},
              {"u_min_vph", c.mpc.u_min_vph},
              {"u_max_vph", c.mpc.u_max_vph},
              {"solver",
               {{"max_iters", c.mpc.solver.max_iters},
                {"step_rule", to_string(c.mpc.solver.step_rule)},
                {"state_penalty_weight", c.mpc.solver.state_penalty_weight},
                {"tolerance", c.mpc.solver.tolerance}}}};
  j["sysid"] = {{"polynomial_order", c.sysid.library.polynomial_order},
                {"include_constant", c.sysid.library.include_constant},
                {"ridge_lambda", c.sysid.stls.ridge},
                {"threshold", c.sysid.stls.threshold},
                {"max_iterations", c.sysid.stls.max_iterations},
                {"unbias_rows_per_term", c.sysid.stls.unbias_rows_per_term},
                {"normalize", c.sysid.normalize},
                {"smoothing_window", c.sysid.smoothing_window}};
  j["experiment"] = {{"collect_controller", c.collect_controller},
                     {"train_seeds", c.train_seeds},
                     {"eval_seeds", c.eval_seeds},
                     {"series_window", c.series_window}};
  return j;
}

/// A scenario document holds the network under "network" plus optional
/// controller, identification and experiment sections; missing sections keep
/// their defaults. A bare network document is accepted too.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.network = network_from_json(j.contains("network") ? j.at("network") : j);
  try {
    if (j.contains("alinea")) {
      const auto& a = j.at("alinea");
      c.alinea.gain_vph_per_pct = a.value("gain_vph_per_pct", c.alinea.gain_vph_per_pct);
      c.alinea.desired_occupancy_pct = a.value("desired_occupancy_pct", c.alinea.desired_occupancy_pct);
    }
    if (j.contains("pi_alinea")) {
      const auto& a = j.at("pi_alinea");
      auto& p = c.pi_alinea;
      p.proportional_gain_vph_per_pct = a.value("proportional_gain_vph_per_pct", p.proportional_gain_vph_per_pct);
      p.integral_gain_vph_per_pct = a.value("integral_gain_vph_per_pct", p.integral_gain_vph_per_pct);
      p.desired_occupancy_pct = a.value("desired_occupancy_pct", p.desired_occupancy_pct);
    }
    if (j.contains("mpc")) {
      const auto& a = j.at("mpc");
      auto& m = c.mpc;
      m.horizon = a.value("horizon", m.horizon);
      m.q = a.value("q", m.q);
      m.p = a.value("p", m.p);
      m.r = a.value("r", m.r);
      m.desired_occupancy_pct = a.value("desired_occupancy_pct", m.desired_occupancy_pct);
      m.x_min_pct = a.value("x_min_pct", m.x_min_pct);
      m.x_max_pct = a.value("x_max_pct", m.x_max_pct);
      m.u_min_vph = a.value("u_min_vph", m.u_min_vph);
      m.u_max_vph = a.value("u_max_vph", m.u_max_vph);
      if (a.contains("solver")) {
        const auto& s = a.at("solver");
        m.solver.max_iters = s.value("max_iters", m.solver.max_iters);
        m.solver.step_rule = step_rule_from_string(s.value("step_rule", to_string(m.solver.step_rule)));
        m.solver.state_penalty_weight = s.value("state_penalty_weight", m.solver.state_penalty_weight);
        m.solver.tolerance = s.value("tolerance", m.solver.tolerance);
      }
    }
    if (j.contains("sysid")) {
      const auto& a = j.at("sysid");
      auto& s = c.sysid;
      s.library.polynomial_order = a.value("polynomial_order", s.library.polynomial_order);
      s.library.include_constant = a.value("include_constant", s.library.include_constant);
      s.stls.ridge = a.value("ridge_lambda", s.stls.ridge);
      s.stls.threshold = a.value("threshold", s.stls.threshold);
      s.stls.max_iterations = a.value("max_iterations", s.stls.max_iterations);
      s.stls.unbias_rows_per_term = a.value("unbias_rows_per_term", s.stls.unbias_rows_per_term);
      s.normalize = a.value("normalize", s.normalize);
      s.smoothing_window = a.value("smoothing_window", s.smoothing_window);
    }
    if (j.contains("experiment")) {
      const auto& a = j.at("experiment");
      c.collect_controller = a.value("collect_controller", c.collect_controller);
      c.train_seeds = a.value("train_seeds", c.train_seeds);
      c.eval_seeds = a.value("eval_seeds", c.eval_seeds);
      c.series_window = a.value("series_window", c.series_window);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed scenario config: ") + e.what());
  }
  if (c.sysid.library.polynomial_order < 1) throw ValidationError("sysid.polynomial_order must be >= 1");
  if (c.sysid.stls.threshold < 0.0 || c.sysid.stls.ridge < 0.0) throw ValidationError("sysid threshold and ridge must be >= 0");
  if (c.series_window < 1) throw ValidationError("experiment.series_window must be >= 1");
  if (c.collect_controller != "alinea" && c.collect_controller != "pi-alinea")
    throw ValidationError("experiment.collect_controller must be alinea or pi-alinea");
  c.mpc.expand(c.network.state_dim(), c.network.input_dim()).validate(c.network.state_dim(), c.network.input_dim());
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path) { return experiment_from_json(read_json_file(path)); }

inline ExperimentConfig paper_experiment() {
  ExperimentConfig c;
  c.network = build_paper_network();
  return c;
}

/// 64-bit FNV-1a over the canonical JSON form of the configuration.
inline std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

/// "1,2,3", "1-4" or a mix ("1-3,10").
inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  auto num = [&](const std::string& s) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty() || s[0] == '-') throw UsageError("bad seed '" + s + "' in '" + text + "'");
    return static_cast<std::uint64_t>(v);
  };
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) {
      out.push_back(num(item));
      continue;
    }
    const auto a = num(item.substr(0, dash));
    const auto b = num(item.substr(dash + 1));
    if (b < a) throw UsageError("descending seed range '" + item + "'");
    for (auto s = a; s <= b; ++s) out.push_back(s);
  }
  if (out.empty()) throw UsageError("seed list is empty");
  return out;
}

/// Worker count: RAMPNET_THREADS if set (>= 1), else the hardware concurrency.
inline std::size_t worker_threads() {
  if (const char* env = std::getenv("RAMPNET_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw UsageError(std::string("RAMPNET_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs job(i) for i in [0, count) on up to `threads` workers. Each job writes
/// only its own slot, so results do not depend on scheduling.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& job) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Controllers and data collection

struct ModelSet {
  std::optional<SparseModel> sindyc;
  std::optional<SparseModel> dmdc;
};

inline std::unique_ptr<RampController> make_controller(const std::string& name, const ExperimentConfig& cfg,
                                                       const ModelSet& models = {}) {
  const std::size_t n = cfg.network.state_dim();
  const std::size_t m = cfg.network.input_dim();
  if (name == "none") return std::make_unique<FixedRateController>(m, kMaxRateVph, "none");
  if (name == "alinea") return std::make_unique<AlineaController>(m, cfg.alinea);
  if (name == "pi-alinea") return std::make_unique<PiAlineaController>(m, cfg.pi_alinea);
  if (name == "dmd-mpc" || name == "sindyc-mpc") {
    const auto& model = name == "dmd-mpc" ? models.dmdc : models.sindyc;
    if (!model) throw UsageError("controller '" + name + "' needs a fitted model");
    if (model->state_dim() != n || model->input_dim() != m)
      throw UsageError("model for '" + name + "' has " + std::to_string(model->state_dim()) + " states and " +
                       std::to_string(model->input_dim()) + " inputs; the network has " + std::to_string(n) + " and " +
                       std::to_string(m));
    return std::make_unique<MpcController>(*model, cfg.mpc.expand(n, m), name);
  }
  throw UsageError("unknown controller '" + name + "' (expected none, alinea, pi-alinea, dmd-mpc or sindyc-mpc)");
}

inline std::vector<EpisodeRecord> collect_episodes(const ExperimentConfig& cfg, const std::string& controller,
                                                   const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw UsageError("collect needs at least one seed");
  if (controller != "alinea" && controller != "pi-alinea")
    throw UsageError("collect runs under local feedback control; use alinea or pi-alinea, not '" + controller + "'");
  std::vector<EpisodeRecord> out(seeds.size());
  parallel_for(seeds.size(), worker_threads(), [&](std::size_t i) {
    auto ctrl = make_controller(controller, cfg);
    out[i] = run_episode(cfg.network, *ctrl, seeds[i]);
  });
  return out;
}

inline std::string log_file_name(const std::string& controller, std::uint64_t seed) {
  return controller + "_seed" + std::to_string(seed) + ".csv";
}

/// Writes one CSV per seed into out_dir and returns the paths in seed order.
inline std::vector<std::string> collect(const ExperimentConfig& cfg, const std::string& controller,
                                        const std::vector<std::uint64_t>& seeds, const std::string& out_dir) {
  const auto episodes = collect_episodes(cfg, controller, seeds);
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> paths;
  for (const auto& e : episodes) {
    const auto path = (std::filesystem::path(out_dir) / log_file_name(controller, e.seed)).string();
    write_episode_csv(e, path);
    paths.push_back(path);
  }
  return paths;
}

/// Seed encoded in a "<controller>_seed<k>.csv" name, if any.
inline std::optional<std::uint64_t> seed_from_file_name(const std::string& name) {
  const auto at = name.rfind("_seed");
  if (at == std::string::npos) return std::nullopt;
  const auto digits = name.substr(at + 5, name.find('.', at) - at - 5);
  if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; }))
    return std::nullopt;
  return std::stoull(digits);
}

/// Every *.csv in a directory, in file-name order.
inline std::vector<EpisodeRecord> load_logs(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw UsageError("log directory '" + dir + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError("no .csv logs in '" + dir + "'");
  std::vector<EpisodeRecord> out;
  for (const auto& f : files) {
    out.push_back(read_episode_csv(f.string()));
    out.back().seed = seed_from_file_name(f.filename().string()).value_or(0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario runs

struct ScenarioResult {
  std::string scenario;
  std::vector<double> deviation_pct;  ///< per sensor, mean |x - o_hat| over steps and seeds
  std::vector<double> flow_vph;       ///< per sensor
  std::vector<double> green_pct;      ///< per metered ramp
  std::vector<std::uint64_t> seeds;
  double runtime_s = 0.0;

  double mean_deviation() const { return mean(deviation_pct); }
  double mean_flow() const { return mean(flow_vph); }
  double mean_green() const { return mean(green_pct); }

  static double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }
};

inline ScenarioResult summarize(const std::string& scenario, const std::vector<EpisodeRecord>& episodes,
                                double desired_occupancy_pct = 15.0) {
  if (episodes.empty()) throw UsageError("no episodes for scenario '" + scenario + "'");
  ScenarioResult r;
  r.scenario = scenario;
  const auto n = static_cast<std::size_t>(episodes.front().occupancy.cols());
  const auto m = static_cast<std::size_t>(episodes.front().rates.cols());
  r.deviation_pct.assign(n, 0.0);
  r.flow_vph.assign(n, 0.0);
  r.green_pct.assign(m, 0.0);
  const double e = static_cast<double>(episodes.size());
  for (const auto& ep : episodes) {
    if (static_cast<std::size_t>(ep.occupancy.cols()) != n || static_cast<std::size_t>(ep.rates.cols()) != m)
      throw UsageError("episodes of scenario '" + scenario + "' disagree on sensor or ramp counts");
    r.seeds.push_back(ep.seed);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      r.deviation_pct[i] += (ep.occupancy.col(c).array() - desired_occupancy_pct).abs().mean() / e;
      r.flow_vph[i] += ep.flow.col(c).mean() / e;
    }
    const auto g = green_percentage(ep.rates);
    for (std::size_t k = 0; k < m; ++k) r.green_pct[k] += g[k] / e;
  }
  return r;
}

struct RunOutput {
  std::vector<ScenarioResult> results;                  ///< in scenario order
  std::vector<std::vector<EpisodeRecord>> episodes;     ///< [scenario][seed]
  std::vector<std::vector<nlohmann::json>> mpc_logs;    ///< solver diagnostics, empty for non-MPC scenarios
};

/// Runs every scenario on the same seeds. Models needed by the requested MPC
/// scenarios are checked before any episode starts.
inline RunOutput run_scenarios(const ExperimentConfig& cfg, const ModelSet& models, const std::vector<std::uint64_t>& seeds,
                               std::vector<std::string> scenarios = scenario_names()) {
  if (seeds.empty()) throw UsageError("run needs at least one seed");
  if (scenarios.empty()) throw UsageError("no scenarios requested");
  for (const auto& s : scenarios) (void)make_controller(s, cfg, models);

  const std::size_t S = scenarios.size();
  const std::size_t E = seeds.size();
  RunOutput out;
  out.episodes.assign(S, std::vector<EpisodeRecord>(E));
  out.mpc_logs.assign(S, std::vector<nlohmann::json>(E));
  std::vector<double> seconds(S * E, 0.0);
  parallel_for(S * E, worker_threads(), [&](std::size_t job) {
    const std::size_t s = job / E;
    const std::size_t e = job % E;
    const auto start = std::chrono::steady_clock::now();
    auto ctrl = make_controller(scenarios[s], cfg, models);
    out.episodes[s][e] = run_episode(cfg.network, *ctrl, seeds[e]);
    if (auto* mpc = dynamic_cast<MpcController*>(ctrl.get())) out.mpc_logs[s][e] = mpc->diagnostics_json();
    seconds[job] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });
  for (std::size_t s = 0; s < S; ++s) {
    auto r = summarize(scenarios[s], out.episodes[s], cfg.mpc.desired_occupancy_pct);
    for (std::size_t e = 0; e < E; ++e) r.runtime_s += seconds[s * E + e];
    out.results.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tables

struct Table {
  std::string key;  ///< first-column header
  std::vector<std::string> columns;
  std::vector<std::string> row_labels;
  std::vector<std::vector<double>> values;  ///< [row][column]

  void write_csv(std::ostream& os) const {
    os << key;
    for (const auto& c : columns) os << ',' << c;
    os << '\n';
    os.precision(10);
    for (std::size_t r = 0; r < values.size(); ++r) {
      os << row_labels[r];
      for (double v : values[r]) os << ',' << v;
      os << '\n';
    }
  }
};

namespace detail {

inline Table per_item_table(const std::string& key, const std::vector<std::string>& labels, const std::vector<ScenarioResult>& results,
                            const std::function<std::vector<double>(const ScenarioResult&)>& pick) {
  if (results.empty()) throw UsageError("no scenario results");
  Table t;
  t.key = key;
  t.row_labels = labels;
  t.row_labels.push_back("Average");
  t.values.assign(labels.size() + 1, std::vector<double>(results.size(), 0.0));
  for (std::size_t c = 0; c < results.size(); ++c) {
    t.columns.push_back(results[c].scenario);
    const auto v = pick(results[c]);
    if (v.size() != labels.size()) throw UsageError("scenario '" + results[c].scenario + "' does not match the network size");
    for (std::size_t r = 0; r < v.size(); ++r) t.values[r][c] = v[r];
    t.values[labels.size()][c] = ScenarioResult::mean(v);
  }
  return t;
}

inline const ScenarioResult& find_scenario(const std::vector<ScenarioResult>& results, const std::string& name) {
  for (const auto& r : results)
    if (r.scenario == name) return r;
  throw UsageError("scenario '" + name + "' is missing from the results");
}

}  // namespace detail

inline std::vector<std::string> sensor_labels(const NetworkConfig& net) {
  std::vector<std::string> out;
  for (const auto& s : net.sensors) out.push_back(s.id);
  return out;
}

inline std::vector<std::string> metered_ramp_labels(const NetworkConfig& net) {
  std::vector<std::string> out;
  for (const auto& r : net.ramps)
    if (r.metered) out.push_back(r.id);
  return out;
}

/// Mean |x - o_hat| per sensor, one column per scenario, plus the average row.
inline Table deviation_table(const NetworkConfig& net, const std::vector<ScenarioResult>& results) {
  return detail::per_item_table("sensor", sensor_labels(net), results, [](const ScenarioResult& r) { return r.deviation_pct; });
}

/// Scenario flow minus no-control flow, per sensor.
inline Table flow_improvement_table(const NetworkConfig& net, const std::vector<ScenarioResult>& results) {
  const auto& base = detail::find_scenario(results, "none");
  return detail::per_item_table("sensor", sensor_labels(net), results, [&](const ScenarioResult& r) {
    std::vector<double> d(r.flow_vph.size());
    if (base.flow_vph.size() != d.size()) throw UsageError("scenario sizes differ");
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = r.flow_vph[i] - base.flow_vph[i];
    return d;
  });
}

/// Green percentage for every metered ramp.
inline Table green_table(const NetworkConfig& net, const std::vector<ScenarioResult>& results) {
  return detail::per_item_table("ramp", metered_ramp_labels(net), results, [](const ScenarioResult& r) { return r.green_pct; });
}

// ---------------------------------------------------------------------------
// Report

/// Trailing moving average; the first window-1 entries average what exists.
inline std::vector<double> moving_average(const std::vector<double>& v, int window) {
  std::vector<double> out(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    s += v[i];
    if (i >= static_cast<std::size_t>(window)) s -= v[i - static_cast<std::size_t>(window)];
    out[i] = s / static_cast<double>(std::min<std::size_t>(i + 1, static_cast<std::size_t>(window)));
  }
  return out;
}

/// Long format: one row per (sensor, step) with seed-averaged occupancy and
/// flow, their moving averages, and the seed-averaged rate of the ramp that
/// shares the sensor's index. The raw pair doubles as occupancy-vs-flow
/// scatter data.
inline void write_series_csv(const NetworkConfig& net, const std::string& scenario, const std::vector<EpisodeRecord>& episodes,
                             int window, std::ostream& os) {
  if (episodes.empty()) throw UsageError("no episodes for scenario '" + scenario + "'");
  const auto& first = episodes.front();
  const Eigen::Index rows = first.occupancy.rows();
  const Eigen::Index n = first.occupancy.cols();
  const Eigen::Index m = first.rates.cols();
  Eigen::MatrixXd occ = Eigen::MatrixXd::Zero(rows, n), flow = occ, rate = Eigen::MatrixXd::Zero(rows, m);
  for (const auto& e : episodes) {
    if (e.occupancy.rows() != rows) throw UsageError("episodes of scenario '" + scenario + "' differ in length");
    occ += e.occupancy;
    flow += e.flow;
    rate += e.rates;
  }
  const double k = static_cast<double>(episodes.size());
  occ /= k;
  flow /= k;
  rate /= k;
  const auto labels = sensor_labels(net);
  os << "scenario,sensor,step,time_s,occupancy_pct,flow_vph,occupancy_ma_pct,flow_ma_vph,rate_vph\n";
  os.precision(10);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> o(occ.col(i).data(), occ.col(i).data() + rows);
    std::vector<double> f(flow.col(i).data(), flow.col(i).data() + rows);
    const auto oma = moving_average(o, window);
    const auto fma = moving_average(f, window);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto ur = static_cast<std::size_t>(r);
      os << scenario << ',' << labels.at(static_cast<std::size_t>(i)) << ',' << r << ',' << first.time_s[ur] << ',' << o[ur] << ','
         << f[ur] << ',' << oma[ur] << ',' << fma[ur] << ',';
      if (i < m) os << rate(r, i);
      os << '\n';
    }
  }
}

struct ReportFiles {
  std::vector<std::string> tables;
  std::vector<std::string> series;
  std::string summary;
};

/// Writes the three tables, one series file per scenario and summary.json.
inline ReportFiles report(const ExperimentConfig& cfg, const std::vector<ScenarioResult>& results,
                          const std::vector<std::vector<EpisodeRecord>>& episodes, const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (results.empty()) throw UsageError("report needs at least one scenario result");
  if (episodes.size() != results.size()) throw UsageError("report needs the episodes of every scenario");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw ConfigError("cannot create output directory '" + out_dir + "'");

  auto open = [](const fs::path& p) {
    std::ofstream f(p);
    if (!f) throw ConfigError("cannot write '" + p.string() + "'");
    return f;
  };

  ReportFiles files;
  const std::vector<std::pair<std::string, Table>> tables{
      {"deviation_table.csv", deviation_table(cfg.network, results)},
      {"flow_improvement_table.csv", flow_improvement_table(cfg.network, results)},
      {"green_percentage_table.csv", green_table(cfg.network, results)},
  };
  for (const auto& [name, t] : tables) {
    const auto p = fs::path(out_dir) / name;
    auto f = open(p);
    t.write_csv(f);
    files.tables.push_back(p.string());
  }
  for (std::size_t s = 0; s < results.size(); ++s) {
    const auto p = fs::path(out_dir) / ("series_" + results[s].scenario + ".csv");
    auto f = open(p);
    write_series_csv(cfg.network, results[s].scenario, episodes[s], cfg.series_window, f);
    files.series.push_back(p.string());
  }

  nlohmann::json summary;
  summary["format"] = "rampnet.summary";
  summary["version"] = 1;
  summary["config_hash"] = config_hash(cfg);
  summary["seeds"] = results.front().seeds;
  summary["desired_occupancy_pct"] = cfg.mpc.desired_occupancy_pct;
  summary["series_window"] = cfg.series_window;
  summary["scenarios"] = nlohmann::json::array();
  for (const auto& r : results)
    summary["scenarios"].push_back({{"name", r.scenario},
                                    {"seeds", r.seeds},
                                    {"mean_deviation_pct", r.mean_deviation()},
                                    {"mean_flow_vph", r.mean_flow()},
                                    {"mean_green_pct", r.mean_green()},
                                    {"deviation_pct", r.deviation_pct},
                                    {"flow_vph", r.flow_vph},
                                    {"green_pct", r.green_pct},
                                    {"runtime_s", r.runtime_s}});
  const auto p = fs::path(out_dir) / "summary.json";
  auto f = open(p);
  f << summary.dump(2) << '\n';
  files.summary = p.string();
  return files;
}

// ---------------------------------------------------------------------------
// Episode archive written by `run` and read back by `report`

inline void save_run(const RunOutput& run, const std::string& dir) {
  namespace fs = std::filesystem;
  const auto ep_dir = fs::path(dir) / "episodes";
  fs::create_directories(ep_dir);
  nlohmann::json manifest;
  manifest["format"] = "rampnet.run";
  manifest["version"] = 1;
  manifest["scenarios"] = nlohmann::json::array();
  for (std::size_t s = 0; s < run.results.size(); ++s) {
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t e = 0; e < run.episodes[s].size(); ++e) {
      const auto& ep = run.episodes[s][e];
      const auto name = log_file_name(run.results[s].scenario, ep.seed);
      write_episode_csv(ep, (ep_dir / name).string());
      files.push_back(name);
      if (!run.mpc_logs[s][e].is_null()) {
        std::ofstream lf(ep_dir / (run.results[s].scenario + "_seed" + std::to_string(ep.seed) + "_solver.json"));
        lf << run.mpc_logs[s][e].dump(1) << '\n';
      }
    }
    manifest["scenarios"].push_back({{"name", run.results[s].scenario}, {"runtime_s", run.results[s].runtime_s}, {"files", files}});
  }
  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw ConfigError("cannot write the run manifest in '" + dir + "'");
  mf << manifest.dump(2) << '\n';
}

inline RunOutput load_run(const std::string& dir, double desired_occupancy_pct = 15.0) {
  namespace fs = std::filesystem;
  const auto manifest_path = fs::path(dir) / "manifest.json";
  if (!fs::exists(manifest_path)) throw UsageError("no run manifest in '" + dir + "'; run `rampnet run` first");
  const auto manifest = read_json_file(manifest_path.string());
  RunOutput run;
  try {
    for (const auto& s : manifest.at("scenarios")) {
      std::vector<EpisodeRecord> eps;
      for (const auto& f : s.at("files")) {
        const auto name = f.get<std::string>();
        auto ep = read_episode_csv((fs::path(dir) / "episodes" / name).string());
        ep.seed = seed_from_file_name(name).value_or(0);
        eps.push_back(std::move(ep));
      }
      auto r = summarize(s.at("name").get<std::string>(), eps, desired_occupancy_pct);
      r.runtime_s = s.value("runtime_s", 0.0);
      run.results.push_back(std::move(r));
      run.episodes.push_back(std::move(eps));
      run.mpc_logs.emplace_back(run.episodes.back().size());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run manifest: ") + e.what());
  }
  if (run.results.empty()) throw UsageError("run manifest in '" + dir + "' lists no scenarios");
  return run;
}

// ---------------------------------------------------------------------------
// Fitting

struct FittedModels {
  SparseModel sindyc;
  SparseModel dmdc;
};

inline FittedModels fit_models(const std::vector<EpisodeRecord>& logs, const SindyOptions& opt) {
  if (logs.empty()) throw UsageError("fit needs at least one log");
  const auto log = make_log(logs);
  FittedModels out{discover_sindyc(log, opt), discover_dmdc(log, opt.stls.ridge)};
  std::vector<std::uint64_t> seeds;
  for (const auto& e : logs) seeds.push_back(e.seed);
  out.sindyc.provenance["seeds"] = seeds;
  out.dmdc.provenance["seeds"] = seeds;
  return out;
}

}  // namespace rampnet
