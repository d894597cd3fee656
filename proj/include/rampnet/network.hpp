#pragma once

/// @file network.hpp
/// @brief Highway network description: cell chains, metered on-ramps,
/// loop detectors, junctions and the timing constants of an experiment.
///
/// A NetworkConfig is plain data. It is validated once (validate()) and then
/// treated as immutable; every other module reads it through const references.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace rampnet {

/// Raised when a configuration file cannot be read or parsed.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a configuration parses but violates an invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a caller breaks a documented precondition.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct CellParams {
  double length_km = 0.5;
  int lanes = 3;
  double free_flow_speed_kmh = 100.0;
  double capacity_per_lane_vph = 2000.0;
  double jam_density_per_lane_vpkm = 1000.0 / 7.5;
  double effective_vehicle_length_m = 7.5;

  double critical_density() const { return capacity_per_lane_vph / free_flow_speed_kmh; }
  double congestion_wave_speed_kmh() const {
    return capacity_per_lane_vph / (jam_density_per_lane_vpkm - critical_density());
  }

  bool operator==(const CellParams&) const = default;
};

/// Cell address: highway index into NetworkConfig::highways, cell index within
/// that highway's chain.
struct CellRef {
  std::size_t highway = 0;
  std::size_t cell = 0;

  bool operator==(const CellRef&) const = default;
  auto operator<=>(const CellRef&) const = default;
};

struct Highway {
  std::string name;
  std::vector<CellParams> cells;
  double mainline_demand_vph = 0.0;

  bool operator==(const Highway&) const = default;
};

struct RampSpec {
  std::string id;
  CellRef merge_cell;
  double demand_vph = 0.0;
  double queue_capacity_veh = 100.0;
  bool metered = true;

  bool operator==(const RampSpec&) const = default;
};

struct SensorSpec {
  std::string id;
  CellRef cell;

  bool operator==(const SensorSpec&) const = default;
};

/// Fixed turn-ratio diverge. A share of the flow leaving `from` is routed to
/// `to` (merging there with the other inflows) or leaves the network when
/// `to` is empty (an off-ramp).
struct Junction {
  CellRef from;
  std::optional<CellRef> to;
  double turn_ratio = 0.0;

  bool operator==(const Junction&) const = default;
};

struct NetworkConfig {
  std::vector<Highway> highways;
  std::vector<RampSpec> ramps;
  std::vector<SensorSpec> sensors;
  std::vector<Junction> junctions;

  double sim_step_s = 1.0;
  double control_step_s = 30.0;
  double burn_in_s = 1800.0;
  double horizon_duration_s = 3600.0;
  std::uint64_t rng_seed = 1;

  /// Fractional loss of discharge capacity when a cell is congested.
  double capacity_drop = 0.0;

  std::size_t steps_per_control() const {
    return static_cast<std::size_t>(std::llround(control_step_s / sim_step_s));
  }
  std::size_t total_sim_steps() const {
    return static_cast<std::size_t>(std::llround((burn_in_s + horizon_duration_s) / sim_step_s));
  }
  std::size_t recorded_control_steps() const {
    return static_cast<std::size_t>(std::llround(horizon_duration_s / control_step_s));
  }
  std::size_t state_dim() const { return sensors.size(); }
  std::size_t input_dim() const {
    std::size_t m = 0;
    for (const auto& r : ramps) m += r.metered ? 1 : 0;
    return m;
  }
  std::size_t cell_count() const {
    std::size_t c = 0;
    for (const auto& h : highways) c += h.cells.size();
    return c;
  }
  const CellParams& cell(CellRef ref) const { return highways.at(ref.highway).cells.at(ref.cell); }
  std::size_t highway_index(const std::string& name) const {
    for (std::size_t i = 0; i < highways.size(); ++i)
      if (highways[i].name == name) return i;
    throw ValidationError("unknown highway '" + name + "'");
  }

  bool operator==(const NetworkConfig&) const = default;
};

namespace detail {

inline bool integer_multiple(double a, double b) {
  if (b <= 0.0) return false;
  const double q = a / b;
  return q >= 1.0 - 1e-9 && std::abs(q - std::round(q)) < 1e-9;
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

inline std::string where(const NetworkConfig& cfg, CellRef ref) {
  std::ostringstream os;
  if (ref.highway < cfg.highways.size())
    os << cfg.highways[ref.highway].name;
  else
    os << "highway#" << ref.highway;
  os << "[" << ref.cell << "]";
  return os.str();
}

inline bool cell_exists(const NetworkConfig& cfg, CellRef ref) {
  return ref.highway < cfg.highways.size() && ref.cell < cfg.highways[ref.highway].cells.size();
}

}  // namespace detail

/// Checks every structural and physical invariant; throws ValidationError
/// naming the first violation found.
inline void validate(const NetworkConfig& cfg) {
  using detail::require;
  require(!cfg.highways.empty(), "network has no highways");
  for (const auto& hw : cfg.highways) {
    require(!hw.name.empty(), "highway without a name");
    require(!hw.cells.empty(), "highway '" + hw.name + "' has no cells");
    require(hw.mainline_demand_vph >= 0.0, "highway '" + hw.name + "' has negative mainline demand");
    for (std::size_t i = 0; i < hw.cells.size(); ++i) {
      const auto& c = hw.cells[i];
      const std::string tag = hw.name + "[" + std::to_string(i) + "]";
      require(c.length_km > 0.0, "cell " + tag + ": length must be > 0");
      require(c.lanes >= 1, "cell " + tag + ": lanes must be >= 1");
      require(c.free_flow_speed_kmh > 0.0, "cell " + tag + ": free-flow speed must be > 0");
      require(c.capacity_per_lane_vph > 0.0, "cell " + tag + ": capacity must be > 0");
      require(c.effective_vehicle_length_m > 0.0, "cell " + tag + ": effective vehicle length must be > 0");
      require(c.capacity_per_lane_vph < c.free_flow_speed_kmh * c.jam_density_per_lane_vpkm,
              "cell " + tag + ": capacity must be below free-flow speed x jam density (triangular FD)");
      const double max_speed = std::max(c.free_flow_speed_kmh, c.congestion_wave_speed_kmh());
      require(max_speed * cfg.sim_step_s / 3600.0 <= c.length_km + 1e-12,
              "cell " + tag + ": CFL condition violated (cell shorter than one simulation step of travel)");
    }
  }
  for (std::size_t i = 0; i < cfg.highways.size(); ++i)
    for (std::size_t j = i + 1; j < cfg.highways.size(); ++j)
      require(cfg.highways[i].name != cfg.highways[j].name, "duplicate highway name '" + cfg.highways[i].name + "'");

  require(cfg.sim_step_s > 0.0, "sim_step_s must be > 0");
  require(detail::integer_multiple(cfg.control_step_s, cfg.sim_step_s),
          "control_step_s must be an integer multiple of sim_step_s");
  require(cfg.burn_in_s >= 0.0 && (cfg.burn_in_s == 0.0 || detail::integer_multiple(cfg.burn_in_s, cfg.control_step_s)),
          "burn_in_s must be a non-negative multiple of control_step_s");
  require(detail::integer_multiple(cfg.horizon_duration_s, cfg.control_step_s),
          "horizon_duration_s must be a positive multiple of control_step_s");
  require(cfg.capacity_drop >= 0.0 && cfg.capacity_drop < 1.0, "capacity_drop must lie in [0, 1)");

  for (std::size_t i = 0; i < cfg.ramps.size(); ++i) {
    const auto& r = cfg.ramps[i];
    require(!r.id.empty(), "ramp without an id");
    require(detail::cell_exists(cfg, r.merge_cell),
            "ramp '" + r.id + "' references missing cell " + detail::where(cfg, r.merge_cell));
    require(r.demand_vph >= 0.0, "ramp '" + r.id + "' has negative demand");
    require(r.queue_capacity_veh > 0.0, "ramp '" + r.id + "' needs a positive queue capacity");
    for (std::size_t j = i + 1; j < cfg.ramps.size(); ++j)
      require(cfg.ramps[j].id != r.id, "duplicate ramp id '" + r.id + "'");
  }
  for (std::size_t i = 0; i < cfg.sensors.size(); ++i) {
    const auto& s = cfg.sensors[i];
    require(!s.id.empty(), "sensor without an id");
    require(detail::cell_exists(cfg, s.cell),
            "sensor '" + s.id + "' references missing cell " + detail::where(cfg, s.cell));
    for (std::size_t j = i + 1; j < cfg.sensors.size(); ++j)
      require(cfg.sensors[j].id != s.id, "duplicate sensor id '" + s.id + "'");
  }
  // Sensor i watches the merge cell of metered ramp i.
  std::size_t k = 0;
  for (const auto& r : cfg.ramps) {
    if (!r.metered) continue;
    std::size_t hits = 0;
    for (const auto& s : cfg.sensors) hits += (s.cell == r.merge_cell) ? 1 : 0;
    require(hits == 1, "metered ramp '" + r.id + "' must have exactly one downstream sensor (found " +
                           std::to_string(hits) + ")");
    require(k < cfg.sensors.size() && cfg.sensors[k].cell == r.merge_cell,
            "sensor order must follow metered-ramp order (ramp '" + r.id + "')");
    ++k;
  }
  require(cfg.sensors.size() == cfg.input_dim(),
          "sensor count (" + std::to_string(cfg.sensors.size()) + ") must equal metered-ramp count (" +
              std::to_string(cfg.input_dim()) + ")");

  for (const auto& j : cfg.junctions) {
    require(detail::cell_exists(cfg, j.from), "junction references missing cell " + detail::where(cfg, j.from));
    require(j.turn_ratio > 0.0 && j.turn_ratio < 1.0, "junction turn ratio must lie in (0, 1)");
    if (j.to) {
      require(detail::cell_exists(cfg, *j.to), "junction references missing cell " + detail::where(cfg, *j.to));
      require(j.to->highway != j.from.highway, "junction must connect two different highways");
    }
  }
  std::map<CellRef, double> split;
  for (const auto& j : cfg.junctions) split[j.from] += j.turn_ratio;
  for (const auto& [ref, total] : split)
    require(total < 1.0, "turn ratios leaving " + detail::where(cfg, ref) + " must sum below 1");

  // Connectors may only point "forward" in highway order so that no routing
  // loop can trap vehicles.
  for (const auto& j : cfg.junctions)
    if (j.to) require(j.to->highway > j.from.highway, "junctions must connect to a later highway (no routing cycles)");
}

// ---------------------------------------------------------------------------
// Structured-text (JSON) serialization. Keys carry their units.

inline nlohmann::json to_json(const NetworkConfig& cfg) {
  using nlohmann::json;
  auto ref = [&](CellRef r) { return json{{"highway", cfg.highways.at(r.highway).name}, {"cell", r.cell}}; };
  json j;
  j["timing"] = {{"sim_step_s", cfg.sim_step_s},
                 {"control_step_s", cfg.control_step_s},
                 {"burn_in_s", cfg.burn_in_s},
                 {"horizon_duration_s", cfg.horizon_duration_s}};
  j["rng_seed"] = cfg.rng_seed;
  j["capacity_drop_fraction"] = cfg.capacity_drop;
  j["highways"] = json::array();
  for (const auto& hw : cfg.highways) {
    json cells = json::array();
    for (const auto& c : hw.cells)
      cells.push_back({{"length_km", c.length_km},
                       {"lanes", c.lanes},
                       {"free_flow_speed_kmh", c.free_flow_speed_kmh},
                       {"capacity_per_lane_vph", c.capacity_per_lane_vph},
                       {"jam_density_per_lane_vpkm", c.jam_density_per_lane_vpkm},
                       {"effective_vehicle_length_m", c.effective_vehicle_length_m}});
    j["highways"].push_back({{"name", hw.name}, {"mainline_demand_vph", hw.mainline_demand_vph}, {"cells", cells}});
  }
  j["ramps"] = json::array();
  for (const auto& r : cfg.ramps)
    j["ramps"].push_back({{"id", r.id},
                          {"merge_cell", ref(r.merge_cell)},
                          {"demand_vph", r.demand_vph},
                          {"queue_capacity_veh", r.queue_capacity_veh},
                          {"metered", r.metered}});
  j["sensors"] = json::array();
  for (const auto& s : cfg.sensors) j["sensors"].push_back({{"id", s.id}, {"cell", ref(s.cell)}});
  j["junctions"] = json::array();
  for (const auto& jn : cfg.junctions) {
    json e{{"from", ref(jn.from)}, {"turn_ratio", jn.turn_ratio}};
    e["to"] = jn.to ? ref(*jn.to) : json(nullptr);
    j["junctions"].push_back(e);
  }
  return j;
}

namespace detail {

/// Cells may be listed one by one or as {"count": k, ...params} runs.
inline std::vector<CellParams> parse_cells(const nlohmann::json& arr) {
  std::vector<CellParams> out;
  for (const auto& c : arr) {
    CellParams p;
    p.length_km = c.value("length_km", p.length_km);
    p.lanes = c.value("lanes", p.lanes);
    p.free_flow_speed_kmh = c.value("free_flow_speed_kmh", p.free_flow_speed_kmh);
    p.capacity_per_lane_vph = c.value("capacity_per_lane_vph", p.capacity_per_lane_vph);
    p.jam_density_per_lane_vpkm = c.value("jam_density_per_lane_vpkm", p.jam_density_per_lane_vpkm);
    p.effective_vehicle_length_m = c.value("effective_vehicle_length_m", p.effective_vehicle_length_m);
    const int count = c.value("count", 1);
    if (count < 1) throw ValidationError("cell run with count < 1");
    out.insert(out.end(), static_cast<std::size_t>(count), p);
  }
  return out;
}

}  // namespace detail

inline NetworkConfig network_from_json(const nlohmann::json& j) {
  NetworkConfig cfg;
  try {
    if (j.contains("timing")) {
      const auto& t = j.at("timing");
      cfg.sim_step_s = t.value("sim_step_s", cfg.sim_step_s);
      cfg.control_step_s = t.value("control_step_s", cfg.control_step_s);
      cfg.burn_in_s = t.value("burn_in_s", cfg.burn_in_s);
      cfg.horizon_duration_s = t.value("horizon_duration_s", cfg.horizon_duration_s);
    }
    cfg.rng_seed = j.value("rng_seed", cfg.rng_seed);
    cfg.capacity_drop = j.value("capacity_drop_fraction", cfg.capacity_drop);
    for (const auto& h : j.at("highways")) {
      Highway hw;
      hw.name = h.at("name").get<std::string>();
      hw.mainline_demand_vph = h.value("mainline_demand_vph", 0.0);
      hw.cells = detail::parse_cells(h.at("cells"));
      cfg.highways.push_back(std::move(hw));
    }
    auto ref = [&](const nlohmann::json& r) {
      return CellRef{cfg.highway_index(r.at("highway").get<std::string>()), r.at("cell").get<std::size_t>()};
    };
    for (const auto& r : j.value("ramps", nlohmann::json::array())) {
      RampSpec rs;
      rs.id = r.at("id").get<std::string>();
      rs.merge_cell = ref(r.at("merge_cell"));
      rs.demand_vph = r.value("demand_vph", 0.0);
      rs.queue_capacity_veh = r.value("queue_capacity_veh", rs.queue_capacity_veh);
      rs.metered = r.value("metered", true);
      cfg.ramps.push_back(std::move(rs));
    }
    for (const auto& s : j.value("sensors", nlohmann::json::array()))
      cfg.sensors.push_back({s.at("id").get<std::string>(), ref(s.at("cell"))});
    for (const auto& jn : j.value("junctions", nlohmann::json::array())) {
      Junction x;
      x.from = ref(jn.at("from"));
      if (jn.contains("to") && !jn.at("to").is_null()) x.to = ref(jn.at("to"));
      x.turn_ratio = jn.at("turn_ratio").get<double>();
      cfg.junctions.push_back(x);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed network config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("parse error in '" + path + "': " + e.what());
  }
}

/// Loads and validates a network config. A file may either be a bare network
/// document or a scenario document with the network under "network".
inline NetworkConfig load_config(const std::string& path) {
  const auto j = read_json_file(path);
  return network_from_json(j.contains("network") ? j.at("network") : j);
}

inline void save_config(const NetworkConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << to_json(cfg).dump(2) << '\n';
}

/// Three-highway, eight-meter network loaded with the evaluation demands.
///
/// Segment geometry is not published for the original site; every highway is
/// cut into 0.5 km cells and on-ramps sit at least two cells apart.
/// Connectors route a fixed share of CA-134E onto CA-2S and of CA-2S onto
/// I-5N, so congestion on one corridor can reach another.
inline NetworkConfig build_paper_network() {
  NetworkConfig cfg;
  cfg.sim_step_s = 1.0;
  cfg.control_step_s = 30.0;
  cfg.burn_in_s = 1800.0;
  cfg.horizon_duration_s = 3600.0;
  cfg.rng_seed = 2024;
  cfg.capacity_drop = 0.10;

  const CellParams three_lane{};
  cfg.highways = {
      {"CA-134E", std::vector<CellParams>(14, three_lane), 3250.0},
      {"CA-2S", std::vector<CellParams>(14, three_lane), 3400.0},
      {"I-5N", std::vector<CellParams>(12, three_lane), 4200.0},
  };
  const std::size_t e134 = 0, s2 = 1, n5 = 2;

  auto ramp = [](std::string id, std::size_t hw, std::size_t cell) {
    return RampSpec{std::move(id), CellRef{hw, cell}, 2000.0, 120.0, true};
  };
  cfg.ramps = {
      ramp("134E-OR1", e134, 3), ramp("134E-OR2", e134, 6), ramp("134E-OR3", e134, 9),
      ramp("5N-OR1", n5, 4),     ramp("5N-OR2", n5, 8),     ramp("2S-OR1", s2, 3),
      ramp("2S-OR2", s2, 6),     ramp("2S-OR3", s2, 9),
  };
  // Each merge area ends in a weaving section with reduced capacity, two
  // cells past the merge, so congestion starts just downstream of the detector.
  for (const auto& r : cfg.ramps) {
    auto& weave = cfg.highways[r.merge_cell.highway].cells[r.merge_cell.cell + 2];
    weave.capacity_per_lane_vph = 1700.0;
  }
  for (const auto& r : cfg.ramps) {
    std::string id = r.id;
    id.replace(id.find("OR"), 2, "S");
    cfg.sensors.push_back({id, r.merge_cell});
  }

  cfg.junctions = {
      // Off-ramps just upstream of each on-ramp.
      {{e134, 2}, std::nullopt, 0.10}, {{e134, 5}, std::nullopt, 0.10}, {{e134, 8}, std::nullopt, 0.10},
      {{s2, 2}, std::nullopt, 0.10},   {{s2, 5}, std::nullopt, 0.10},   {{s2, 8}, std::nullopt, 0.10},
      {{n5, 3}, std::nullopt, 0.10},   {{n5, 7}, std::nullopt, 0.10},
      // Freeway-to-freeway connectors.
      {{e134, 11}, CellRef{s2, 1}, 0.15},
      {{s2, 11}, CellRef{n5, 1}, 0.15},
  };
  validate(cfg);
  return cfg;
}

}  // namespace rampnet
