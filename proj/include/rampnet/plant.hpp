#pragma once

/// @file plant.hpp
/// @brief Seeded cell-transmission simulator used as ground truth.
///
/// Mainline cells follow a triangular fundamental diagram. Each simulation
/// step computes sending and receiving capacities, splits diverging flow by
/// fixed turn ratios (first-in-first-out), shares scarce receiving capacity
/// between merging streams in proportion to their capacity, and moves
/// vehicles. Ramp queues discharge only while their meter shows green, one
/// vehicle per green.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "controller.hpp"
#include "metering.hpp"
#include "network.hpp"

namespace rampnet {

using Rng = std::mt19937_64;

/// Poisson arrival count with mean demand * t_s / 3600.
inline long sample_arrivals(double demand_vph, double step_s, Rng& rng) {
  if (demand_vph < 0.0) throw ContractViolation("negative demand");
  const double mean = demand_vph * step_s / 3600.0;
  if (mean <= 0.0) return 0;
  return std::poisson_distribution<long>(mean)(rng);
}

// ---------------------------------------------------------------------------
// Meter signal

struct SignalPhase {
  bool green = true;
  double remaining_s = kGreenDurationS;
  /// Rate adopted at the start of the running cycle; it fixes this cycle's red.
  double cycle_rate_vph = kInitialRateVph;

  bool operator==(const SignalPhase&) const = default;
};

struct SignalAdvance {
  SignalPhase phase;
  double green_s = 0.0;
};

/// Advances a meter by `dt_s`. `rate_vph` is the commanded rate; it is adopted
/// only when a new cycle starts.
inline SignalAdvance signal_advance(SignalPhase phase, double rate_vph, double dt_s) {
  constexpr double eps = 1e-9;
  double left = dt_s;
  double green = 0.0;
  while (left > eps) {
    const double span = std::min(left, phase.remaining_s);
    if (phase.green) green += span;
    phase.remaining_s -= span;
    left -= span;
    if (phase.remaining_s > eps) continue;
    const double red = phase.green ? rate_to_red_duration(phase.cycle_rate_vph) : 0.0;
    if (phase.green && red > eps) {
      phase.green = false;
      phase.remaining_s = red;
    } else {
      phase.green = true;
      phase.remaining_s = kGreenDurationS;
      phase.cycle_rate_vph = rate_vph;
    }
  }
  return {phase, green};
}

// ---------------------------------------------------------------------------
// Sensor aggregation

/// Running aggregate of one detector over one control step.
struct SensorWindow {
  double occupancy_sum = 0.0;
  double density_sum = 0.0;
  double vehicles_passed = 0.0;
  std::size_t steps = 0;

  void add(double density_per_lane, double outflow_veh, const CellParams& cell) {
    occupancy_sum += std::min(100.0, density_per_lane * cell.effective_vehicle_length_m / 1000.0 * 100.0);
    density_sum += density_per_lane;
    vehicles_passed += outflow_veh;
    ++steps;
  }
  void reset() { *this = SensorWindow{}; }
};

inline SensorReading read_sensor(const SensorWindow& w, const CellParams& cell, double window_s) {
  if (w.steps == 0) throw ContractViolation("sensor window is empty");
  SensorReading r;
  r.occupancy_pct = w.occupancy_sum / static_cast<double>(w.steps);
  r.flow_vph = w.vehicles_passed * 3600.0 / window_s;
  const double density = w.density_sum / static_cast<double>(w.steps);
  r.speed_kmh = density * cell.lanes > 1e-9 ? std::min(cell.free_flow_speed_kmh, r.flow_vph / (density * cell.lanes))
                                            : cell.free_flow_speed_kmh;
  return r;
}

// ---------------------------------------------------------------------------
// Plant

struct PlantState {
  std::vector<double> cell_density;  ///< veh/km/lane, flattened over highways
  std::vector<double> ramp_queue;    ///< veh
  std::vector<double> origin_queue;  ///< veh waiting to enter each highway
  std::vector<SignalPhase> signal;   ///< one per ramp (unused for unmetered ramps)
  double sim_time_s = 0.0;

  bool operator==(const PlantState&) const = default;
};

/// What happened during one step, in vehicles.
struct StepFlows {
  double entered = 0.0;  ///< arrivals accepted into origin buffers and ramp queues
  double exited = 0.0;   ///< vehicles leaving through highway ends and off-ramps
  double dropped = 0.0;  ///< ramp arrivals rejected by a full queue
  std::vector<double> cell_outflow;
  std::vector<double> ramp_discharge;
  std::vector<double> green_s;
  std::vector<double> ramp_dropped;
};

class Plant {
 public:
  explicit Plant(NetworkConfig cfg) : cfg_(std::move(cfg)) {
    validate(cfg_);
    build_topology();
  }

  const NetworkConfig& config() const { return cfg_; }
  std::size_t cell_count() const { return cells_.size(); }
  std::size_t global_index(CellRef ref) const { return offset_.at(ref.highway) + ref.cell; }
  const CellParams& cell(std::size_t g) const { return cells_[g]; }

  PlantState initial_state() const {
    PlantState s;
    s.cell_density.assign(cells_.size(), 0.0);
    s.ramp_queue.assign(cfg_.ramps.size(), 0.0);
    s.origin_queue.assign(cfg_.highways.size(), 0.0);
    s.signal.assign(cfg_.ramps.size(), SignalPhase{});
    return s;
  }

  double vehicles_in_network(const PlantState& s) const {
    double v = 0.0;
    for (std::size_t i = 0; i < cells_.size(); ++i) v += s.cell_density[i] * cells_[i].lanes * cells_[i].length_km;
    for (double q : s.ramp_queue) v += q;
    for (double q : s.origin_queue) v += q;
    return v;
  }

  /// Advances one simulation step. `rates` holds one commanded rate per
  /// metered ramp, in ramp order; values are clamped into [200, 1800].
  StepFlows step(PlantState& s, std::span<const double> rates, Rng& rng) const {
    const double dt = cfg_.sim_step_s;
    const double to_veh = dt / 3600.0;
    const std::size_t nc = cells_.size();
    StepFlows out;
    out.cell_outflow.assign(nc, 0.0);
    out.ramp_discharge.assign(cfg_.ramps.size(), 0.0);
    out.green_s.assign(cfg_.ramps.size(), 0.0);
    out.ramp_dropped.assign(cfg_.ramps.size(), 0.0);

    // Arrivals. Sampling order is fixed so every controller sees the same
    // demand realization for a given seed.
    for (std::size_t h = 0; h < cfg_.highways.size(); ++h) {
      const auto a = static_cast<double>(sample_arrivals(cfg_.highways[h].mainline_demand_vph, dt, rng));
      s.origin_queue[h] += a;
      out.entered += a;
    }
    for (std::size_t r = 0; r < cfg_.ramps.size(); ++r) {
      const auto a = static_cast<double>(sample_arrivals(cfg_.ramps[r].demand_vph, dt, rng));
      const double room = std::max(0.0, cfg_.ramps[r].queue_capacity_veh - s.ramp_queue[r]);
      const double accepted = std::min(a, std::floor(room + 1e-9));
      s.ramp_queue[r] += accepted;
      out.entered += accepted;
      out.dropped += a - accepted;
      out.ramp_dropped[r] = a - accepted;
    }

    // Meter signals.
    std::size_t k = 0;
    for (std::size_t r = 0; r < cfg_.ramps.size(); ++r) {
      if (!cfg_.ramps[r].metered) continue;
      const double rate = k < rates.size() ? clamp_rate(rates[k]) : kMaxRateVph;
      ++k;
      auto adv = signal_advance(s.signal[r], rate, dt);
      s.signal[r] = adv.phase;
      out.green_s[r] = adv.green_s;
    }

    // Sending (veh/h).
    std::vector<double> send(nc);
    for (std::size_t i = 0; i < nc; ++i) send[i] = sending(i, s.cell_density[i]);
    std::vector<double> origin_send(cfg_.highways.size());
    for (std::size_t h = 0; h < cfg_.highways.size(); ++h)
      origin_send[h] = std::min(s.origin_queue[h] / to_veh, capacity(offset_[h]));
    std::vector<double> ramp_send(cfg_.ramps.size());
    for (std::size_t r = 0; r < cfg_.ramps.size(); ++r) {
      const double cap_veh = cfg_.ramps[r].metered ? out.green_s[r] / kGreenDurationS : kUnmeteredRampVph * to_veh;
      ramp_send[r] = std::min(s.ramp_queue[r], cap_veh) / to_veh;
    }

    // Demands per receiving cell, then capacity-proportional allocation.
    std::vector<std::vector<Inflow>> inflow(nc);
    for (std::size_t h = 0; h < cfg_.highways.size(); ++h)
      inflow[offset_[h]].push_back({SourceKind::origin, h, origin_send[h], capacity(offset_[h]), 0.0});
    for (std::size_t r = 0; r < cfg_.ramps.size(); ++r)
      inflow[ramp_cell_[r]].push_back({SourceKind::ramp, r, ramp_send[r], kUnmeteredRampVph, 0.0});
    for (std::size_t i = 0; i < nc; ++i)
      for (const auto& d : routes_[i])
        if (d.target != kSink)
          inflow[d.target].push_back({SourceKind::cell, i, send[i] * d.share, capacity(i) * d.share, 0.0});

    for (std::size_t c = 0; c < nc; ++c) allocate(inflow[c], receiving(c, s.cell_density[c]));

    // FIFO: a diverging cell moves no more than its most constrained branch allows.
    std::vector<double> cell_total(nc);
    for (std::size_t i = 0; i < nc; ++i) cell_total[i] = send[i];
    for (std::size_t c = 0; c < nc; ++c)
      for (const auto& in : inflow[c])
        if (in.kind == SourceKind::cell) {
          const double share = share_to(in.index, c);
          cell_total[in.index] = std::min(cell_total[in.index], in.allocated / share);
        }

    std::vector<double> delta(nc, 0.0);
    for (std::size_t c = 0; c < nc; ++c) {
      for (const auto& in : inflow[c]) {
        double veh = 0.0;
        switch (in.kind) {
          case SourceKind::origin:
            veh = std::min(in.allocated * to_veh, s.origin_queue[in.index]);
            s.origin_queue[in.index] -= veh;
            break;
          case SourceKind::ramp:
            veh = std::min(in.allocated * to_veh, s.ramp_queue[in.index]);
            s.ramp_queue[in.index] -= veh;
            out.ramp_discharge[in.index] += veh;
            break;
          case SourceKind::cell:
            veh = cell_total[in.index] * share_to(in.index, c) * to_veh;
            delta[in.index] -= veh;
            out.cell_outflow[in.index] += veh;
            break;
        }
        delta[c] += veh;
      }
    }
    for (std::size_t i = 0; i < nc; ++i)
      for (const auto& d : routes_[i])
        if (d.target == kSink) {
          const double veh = cell_total[i] * d.share * to_veh;
          delta[i] -= veh;
          out.cell_outflow[i] += veh;
          out.exited += veh;
        }

    for (std::size_t i = 0; i < nc; ++i) {
      const double vol = cells_[i].lanes * cells_[i].length_km;
      double rho = s.cell_density[i] + delta[i] / vol;
      // Only floating-point residue can push a density past its box.
      rho = std::clamp(rho, 0.0, cells_[i].jam_density_per_lane_vpkm);
      s.cell_density[i] = rho;
    }
    s.sim_time_s += dt;
    return out;
  }

 private:
  static constexpr std::size_t kSink = std::numeric_limits<std::size_t>::max();
  static constexpr double kUnmeteredRampVph = 2000.0;

  enum class SourceKind { origin, ramp, cell };
  struct Inflow {
    SourceKind kind;
    std::size_t index;
    double demand;    ///< veh/h
    double priority;  ///< capacity-proportional merge weight
    double allocated;
  };
  struct Route {
    std::size_t target;
    double share;
  };

  double capacity(std::size_t i) const { return cells_[i].capacity_per_lane_vph * cells_[i].lanes; }

  double sending(std::size_t i, double rho) const {
    const auto& c = cells_[i];
    double cap = c.capacity_per_lane_vph;
    if (rho > c.critical_density() + 1e-9) cap *= 1.0 - cfg_.capacity_drop;
    return std::min(c.free_flow_speed_kmh * rho, cap) * c.lanes;
  }

  double receiving(std::size_t i, double rho) const {
    const auto& c = cells_[i];
    return std::max(0.0, std::min(c.capacity_per_lane_vph, c.congestion_wave_speed_kmh() * (c.jam_density_per_lane_vpkm - rho))) *
           c.lanes;
  }

  double share_to(std::size_t from, std::size_t to) const {
    double s = 0.0;
    for (const auto& d : routes_[from])
      if (d.target == to) s += d.share;
    return s;
  }

  /// Splits `supply` among competing inflows in proportion to priority,
  /// handing unused shares on to streams that still want more.
  static void allocate(std::vector<Inflow>& in, double supply) {
    double total = 0.0;
    for (auto& f : in) total += f.demand;
    if (total <= supply) {
      for (auto& f : in) f.allocated = f.demand;
      return;
    }
    std::vector<bool> open(in.size(), true);
    double left = supply;
    for (;;) {
      double weight = 0.0;
      for (std::size_t i = 0; i < in.size(); ++i)
        if (open[i]) weight += in[i].priority;
      if (weight <= 0.0) break;
      bool changed = false;
      for (std::size_t i = 0; i < in.size(); ++i) {
        if (!open[i]) continue;
        if (in[i].demand <= left * in[i].priority / weight) {
          in[i].allocated = in[i].demand;
          left -= in[i].demand;
          open[i] = false;
          changed = true;
        }
      }
      if (!changed) {
        for (std::size_t i = 0; i < in.size(); ++i)
          if (open[i]) in[i].allocated = left * in[i].priority / weight;
        break;
      }
    }
  }

  void build_topology() {
    for (const auto& hw : cfg_.highways) {
      offset_.push_back(cells_.size());
      cells_.insert(cells_.end(), hw.cells.begin(), hw.cells.end());
    }
    routes_.assign(cells_.size(), {});
    for (std::size_t h = 0; h < cfg_.highways.size(); ++h) {
      const std::size_t n = cfg_.highways[h].cells.size();
      for (std::size_t c = 0; c < n; ++c) {
        const std::size_t g = offset_[h] + c;
        double main = 1.0;
        for (const auto& j : cfg_.junctions) {
          if (j.from != CellRef{h, c}) continue;
          routes_[g].push_back({j.to ? global_index(*j.to) : kSink, j.turn_ratio});
          main -= j.turn_ratio;
        }
        routes_[g].push_back({c + 1 < n ? g + 1 : kSink, main});
      }
    }
    for (const auto& r : cfg_.ramps) ramp_cell_.push_back(global_index(r.merge_cell));
    for (const auto& s : cfg_.sensors) sensor_cell_.push_back(global_index(s.cell));
  }

  NetworkConfig cfg_;
  std::vector<CellParams> cells_;
  std::vector<std::size_t> offset_;
  std::vector<std::vector<Route>> routes_;
  std::vector<std::size_t> ramp_cell_;
  std::vector<std::size_t> sensor_cell_;

 public:
  const std::vector<std::size_t>& sensor_cells() const { return sensor_cell_; }
};

// ---------------------------------------------------------------------------
// Episodes

/// Sensor readings and applied rates over the control window. Row k holds the
/// readings averaged over the control step ending at time_s[k] and the rates
/// decided at that instant (applied over the following control step).
struct EpisodeRecord {
  std::vector<double> time_s;
  Eigen::MatrixXd occupancy;  ///< rows x n, %
  Eigen::MatrixXd flow;       ///< rows x n, veh/h
  Eigen::MatrixXd speed;      ///< rows x n, km/h
  Eigen::MatrixXd rates;      ///< rows x m, veh/h
  std::vector<double> green_seconds;     ///< per metered ramp, over the control window
  std::vector<double> dropped_vehicles;  ///< per metered ramp, over the control window
  std::vector<double> mean_queue_veh;    ///< per metered ramp, over the control window
  std::uint64_t seed = 0;
  std::size_t clamped_rate_events = 0;
  std::string controller;

  std::size_t rows() const { return time_s.size(); }
};

inline bool bit_identical(const EpisodeRecord& a, const EpisodeRecord& b) {
  return a.time_s == b.time_s && a.occupancy == b.occupancy && a.flow == b.flow && a.speed == b.speed &&
         a.rates == b.rates && a.green_seconds == b.green_seconds && a.dropped_vehicles == b.dropped_vehicles &&
         a.mean_queue_veh == b.mean_queue_veh && a.seed == b.seed;
}

/// Runs burn-in (controller active, nothing recorded) followed by the control
/// window. Out-of-range controller output is clamped and counted.
inline EpisodeRecord run_episode(const NetworkConfig& cfg, RampController& controller, std::uint64_t seed) {
  const Plant plant(cfg);
  Rng rng(seed);
  PlantState state = plant.initial_state();

  const std::size_t n = cfg.state_dim();
  const std::size_t m = cfg.input_dim();
  const std::size_t per_control = cfg.steps_per_control();
  const std::size_t total = cfg.total_sim_steps();
  const std::size_t burn_steps = static_cast<std::size_t>(std::llround(cfg.burn_in_s / cfg.sim_step_s));
  const std::size_t rows = cfg.recorded_control_steps();

  std::vector<std::size_t> metered;
  for (std::size_t r = 0; r < cfg.ramps.size(); ++r)
    if (cfg.ramps[r].metered) metered.push_back(r);

  EpisodeRecord rec;
  rec.seed = seed;
  rec.controller = controller.name();
  rec.occupancy.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
  rec.flow.resizeLike(rec.occupancy);
  rec.speed.resizeLike(rec.occupancy);
  rec.rates.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(m));
  rec.green_seconds.assign(m, 0.0);
  rec.dropped_vehicles.assign(m, 0.0);
  rec.mean_queue_veh.assign(m, 0.0);

  auto sanitize = [&](std::vector<double> r) {
    if (r.size() != m) throw ContractViolation("controller returned " + std::to_string(r.size()) + " rates, expected " + std::to_string(m));
    for (auto& v : r) {
      const double c = std::isfinite(v) ? clamp_rate(v) : kInitialRateVph;
      if (c != v) ++rec.clamped_rate_events;
      v = c;
    }
    return r;
  };

  std::vector<double> rates = sanitize(controller.initial_rates(m));
  std::vector<SensorWindow> windows(n);
  std::vector<SensorReading> readings(n);
  std::size_t row = 0;

  for (std::size_t t = 1; t <= total; ++t) {
    const auto flows = plant.step(state, rates, rng);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t g = plant.sensor_cells()[i];
      windows[i].add(state.cell_density[g], flows.cell_outflow[g], plant.cell(g));
    }
    if (t > burn_steps) {
      for (std::size_t k = 0; k < m; ++k) {
        rec.green_seconds[k] += flows.green_s[metered[k]];
        rec.mean_queue_veh[k] += state.ramp_queue[metered[k]];
        rec.dropped_vehicles[k] += flows.ramp_dropped[metered[k]];
      }
    }
    if (t % per_control != 0) continue;

    for (std::size_t i = 0; i < n; ++i) {
      readings[i] = read_sensor(windows[i], plant.cell(plant.sensor_cells()[i]), cfg.control_step_s);
      windows[i].reset();
    }
    const bool recording = t >= burn_steps && row < rows;
    rates = sanitize(controller.decide(readings));
    if (recording) {
      rec.time_s.push_back(static_cast<double>(t) * cfg.sim_step_s);
      for (std::size_t i = 0; i < n; ++i) {
        rec.occupancy(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(i)) = readings[i].occupancy_pct;
        rec.flow(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(i)) = readings[i].flow_vph;
        rec.speed(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(i)) = readings[i].speed_kmh;
      }
      for (std::size_t k = 0; k < m; ++k) rec.rates(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(k)) = rates[k];
      ++row;
    }
  }
  const double window_steps = static_cast<double>(total - burn_steps);
  for (auto& q : rec.mean_queue_veh) q /= window_steps;
  return rec;
}

// ---------------------------------------------------------------------------
// CSV

inline void write_episode_csv(const EpisodeRecord& rec, std::ostream& os) {
  const auto n = rec.occupancy.cols();
  const auto m = rec.rates.cols();
  os << "time_s";
  for (const char* p : {"occ_", "flow_", "speed_"})
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << p << (i + 1);
  for (Eigen::Index k = 0; k < m; ++k) os << ",rate_" << (k + 1);
  os << '\n';
  os.precision(17);
  for (std::size_t r = 0; r < rec.rows(); ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    os << rec.time_s[r];
    for (const auto* mat : {&rec.occupancy, &rec.flow, &rec.speed})
      for (Eigen::Index i = 0; i < n; ++i) os << ',' << (*mat)(ri, i);
    for (Eigen::Index k = 0; k < m; ++k) os << ',' << rec.rates(ri, k);
    os << '\n';
  }
}

inline void write_episode_csv(const EpisodeRecord& rec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  write_episode_csv(rec, out);
}

inline EpisodeRecord read_episode_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty episode file '" + path + "'");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  auto count = [&](const std::string& prefix) {
    return static_cast<Eigen::Index>(std::count_if(header.begin(), header.end(),
                                                   [&](const std::string& h) { return h.rfind(prefix, 0) == 0; }));
  };
  const Eigen::Index n = count("occ_");
  const Eigen::Index m = count("rate_");
  if (header.empty() || header[0] != "time_s" || count("flow_") != n || count("speed_") != n ||
      static_cast<Eigen::Index>(header.size()) != 1 + 3 * n + m)
    throw ConfigError("unexpected episode CSV header in '" + path + "'");

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError("non-numeric value '" + cell + "' in '" + path + "'");
      }
    }
    if (vals.size() != header.size()) throw ConfigError("ragged row in '" + path + "'");
    rows.push_back(std::move(vals));
  }
  EpisodeRecord rec;
  const auto d = static_cast<Eigen::Index>(rows.size());
  rec.occupancy.resize(d, n);
  rec.flow.resize(d, n);
  rec.speed.resize(d, n);
  rec.rates.resize(d, m);
  for (Eigen::Index r = 0; r < d; ++r) {
    const auto& v = rows[static_cast<std::size_t>(r)];
    rec.time_s.push_back(v[0]);
    for (Eigen::Index i = 0; i < n; ++i) {
      rec.occupancy(r, i) = v[static_cast<std::size_t>(1 + i)];
      rec.flow(r, i) = v[static_cast<std::size_t>(1 + n + i)];
      rec.speed(r, i) = v[static_cast<std::size_t>(1 + 2 * n + i)];
    }
    for (Eigen::Index k = 0; k < m; ++k) rec.rates(r, k) = v[static_cast<std::size_t>(1 + 3 * n + k)];
  }
  return rec;
}

}  // namespace rampnet
