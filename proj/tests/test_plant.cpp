#include <sstream>

#include <gtest/gtest.h>

#include <rampnet/feedback.hpp>
#include <rampnet/plant.hpp>

using namespace rampnet;

namespace {

NetworkConfig quiet_network() {
  auto cfg = build_paper_network();
  for (auto& h : cfg.highways) h.mainline_demand_vph = 0.0;
  for (auto& r : cfg.ramps) r.demand_vph = 0.0;
  return cfg;
}

/// Two-cell single-lane highway with one metered ramp on the first cell.
NetworkConfig tiny_network() {
  NetworkConfig cfg;
  CellParams c;
  c.lanes = 1;
  cfg.highways = {{"A", {c, c}, 0.0}};
  cfg.ramps = {{"R", {0, 0}, 0.0, 50.0, true}};
  cfg.sensors = {{"S", {0, 0}}};
  cfg.burn_in_s = 0.0;
  cfg.horizon_duration_s = 60.0;
  validate(cfg);
  return cfg;
}

PlantState random_state(const Plant& plant, Rng& rng) {
  auto s = plant.initial_state();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < s.cell_density.size(); ++i)
    s.cell_density[i] = u(rng) * plant.cell(i).jam_density_per_lane_vpkm;
  for (std::size_t r = 0; r < s.ramp_queue.size(); ++r)
    s.ramp_queue[r] = std::floor(u(rng) * plant.config().ramps[r].queue_capacity_veh);
  for (auto& q : s.origin_queue) q = std::floor(u(rng) * 20.0);
  for (auto& sig : s.signal) {
    sig.green = u(rng) < 0.5;
    sig.cycle_rate_vph = 200.0 + 1600.0 * u(rng);
    sig.remaining_s = sig.green ? kGreenDurationS * (0.1 + 0.9 * u(rng)) : 0.5 + 10.0 * u(rng);
  }
  return s;
}

std::vector<double> random_rates(std::size_t m, Rng& rng) {
  std::uniform_real_distribution<double> u(kMinRateVph, kMaxRateVph);
  std::vector<double> r(m);
  for (auto& v : r) v = u(rng);
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Arrivals

TEST(Arrivals, MeanMatchesRate) {
  Rng rng(11);
  const int draws = 200000;
  double sum = 0.0;
  for (int i = 0; i < draws; ++i) sum += static_cast<double>(sample_arrivals(3600.0, 1.0, rng));
  EXPECT_NEAR(sum / draws, 1.0, 0.01);
}

TEST(Arrivals, ZeroDemandNeverArrives) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_arrivals(0.0, 1.0, rng), 0);
}

TEST(Arrivals, SeededSequenceRepeats) {
  Rng a(42), b(42);
  for (int i = 0; i < 500; ++i) EXPECT_EQ(sample_arrivals(2000.0, 1.0, a), sample_arrivals(2000.0, 1.0, b));
}

TEST(Arrivals, NegativeDemandIsAContractViolation) {
  Rng rng(1);
  EXPECT_THROW(sample_arrivals(-1.0, 1.0, rng), ContractViolation);
}

// ---------------------------------------------------------------------------
// Signal

namespace {
/// Green seconds over `seconds` of 1 s steps at a fixed commanded rate,
/// starting at the top of a cycle already running at that rate.
double green_over(double rate, int seconds) {
  SignalPhase p;
  p.cycle_rate_vph = rate;
  double g = 0.0;
  for (int t = 0; t < seconds; ++t) {
    const auto a = signal_advance(p, rate, 1.0);
    p = a.phase;
    g += a.green_s;
  }
  return g;
}
}  // namespace

TEST(Signal, MaxRateIsAlwaysGreen) { EXPECT_DOUBLE_EQ(green_over(1800.0, 360), 360.0); }

TEST(Signal, MinRateCycleIsEighteenSeconds) { EXPECT_DOUBLE_EQ(green_over(200.0, 180), 20.0); }

TEST(Signal, Rate600HasFourSecondRed) { EXPECT_DOUBLE_EQ(green_over(600.0, 60), 20.0); }

TEST(Signal, NewRateWaitsForCycleBoundary) {
  SignalPhase p;
  p.cycle_rate_vph = 200.0;  // this cycle: 2 s green, 16 s red
  double g = 0.0;
  for (int t = 0; t < 18; ++t) {
    const auto a = signal_advance(p, 1800.0, 1.0);
    p = a.phase;
    g += a.green_s;
  }
  EXPECT_DOUBLE_EQ(g, 2.0);
  EXPECT_TRUE(p.green);
  EXPECT_EQ(p.cycle_rate_vph, 1800.0);
  EXPECT_DOUBLE_EQ(green_over(1800.0, 10), 10.0);
}

// ---------------------------------------------------------------------------
// Sensor

TEST(Sensor, JamDensityReadsFullOccupancy) {
  const CellParams c;
  SensorWindow w;
  for (int i = 0; i < 30; ++i) w.add(c.jam_density_per_lane_vpkm, 0.0, c);
  EXPECT_NEAR(read_sensor(w, c, 30.0).occupancy_pct, 100.0, 1e-12);
}

TEST(Sensor, EmptyRoadReadsZeroAndFreeFlowSpeed) {
  const CellParams c;
  SensorWindow w;
  for (int i = 0; i < 30; ++i) w.add(0.0, 0.0, c);
  const auto r = read_sensor(w, c, 30.0);
  EXPECT_EQ(r.occupancy_pct, 0.0);
  EXPECT_EQ(r.flow_vph, 0.0);
  EXPECT_EQ(r.speed_kmh, c.free_flow_speed_kmh);
}

TEST(Sensor, CriticalDensityReadsFifteenPercent) {
  const CellParams c;
  SensorWindow w;
  for (int i = 0; i < 30; ++i) w.add(20.0, 0.5, c);
  const auto r = read_sensor(w, c, 30.0);
  EXPECT_NEAR(r.occupancy_pct, 15.0, 1e-12);
  EXPECT_NEAR(r.flow_vph, 15.0 * 3600.0 / 30.0, 1e-9);
}

TEST(Sensor, EmptyWindowIsAContractViolation) {
  EXPECT_THROW(read_sensor(SensorWindow{}, CellParams{}, 30.0), ContractViolation);
}

// ---------------------------------------------------------------------------
// Step

TEST(Step, EmptyNetworkWithoutDemandStaysEmpty) {
  const Plant plant(quiet_network());
  Rng rng(1);
  auto s = plant.initial_state();
  const std::vector<double> rates(8, 1000.0);
  for (int t = 0; t < 100; ++t) plant.step(s, rates, rng);
  EXPECT_EQ(s.cell_density, plant.initial_state().cell_density);
  EXPECT_EQ(s.ramp_queue, plant.initial_state().ramp_queue);
}

TEST(Step, BlockedCellDoesNotDischarge) {
  const Plant plant(tiny_network());
  Rng rng(1);
  auto s = plant.initial_state();
  const double jam = plant.cell(0).jam_density_per_lane_vpkm;
  s.cell_density = {jam, jam};
  const std::vector<double> rates{1800.0};
  const auto f = plant.step(s, rates, rng);
  EXPECT_EQ(f.cell_outflow[0], 0.0);
}

TEST(Step, VehiclesAreConserved) {
  const Plant plant(build_paper_network());
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    auto s = random_state(plant, rng);
    const double before = plant.vehicles_in_network(s);
    const auto f = plant.step(s, random_rates(8, rng), rng);
    const double after = plant.vehicles_in_network(s);
    EXPECT_NEAR(after - before, f.entered - f.exited, 1e-9 * std::max(1.0, before)) << "trial " << trial;
  }
}

TEST(Step, DensityStaysInsideItsBox) {
  const Plant plant(build_paper_network());
  Rng rng(5);
  auto s = random_state(plant, rng);
  for (int t = 0; t < 3000; ++t) {
    plant.step(s, random_rates(8, rng), rng);
    for (std::size_t i = 0; i < s.cell_density.size(); ++i) {
      ASSERT_GE(s.cell_density[i], 0.0);
      ASSERT_LE(s.cell_density[i], plant.cell(i).jam_density_per_lane_vpkm);
    }
    for (double q : s.ramp_queue) ASSERT_GE(q, 0.0);
  }
}

TEST(Step, DischargeNeverExceedsOneVehiclePerGreen) {
  const Plant plant(build_paper_network());
  Rng rng(9);
  auto s = plant.initial_state();
  const auto rates = random_rates(8, rng);
  std::vector<double> discharged(8, 0.0), green(8, 0.0);
  for (int t = 0; t < 3600; ++t) {
    const auto f = plant.step(s, rates, rng);
    for (std::size_t r = 0; r < 8; ++r) {
      EXPECT_LE(f.ramp_discharge[r], f.green_s[r] / kGreenDurationS + 1e-12);
      discharged[r] += f.ramp_discharge[r];
      green[r] += f.green_s[r];
    }
  }
  for (std::size_t r = 0; r < 8; ++r) EXPECT_LE(discharged[r], green[r] / kGreenDurationS + 1e-9);
}

TEST(Step, FullQueueDropsArrivals) {
  auto cfg = tiny_network();
  cfg.ramps[0].demand_vph = 3600.0;
  cfg.ramps[0].queue_capacity_veh = 3.0;
  const Plant plant(cfg);
  Rng rng(4);
  auto s = plant.initial_state();
  double dropped = 0.0;
  for (int t = 0; t < 600; ++t) {
    const auto f = plant.step(s, std::vector<double>{200.0}, rng);
    dropped += f.dropped;
    ASSERT_LE(s.ramp_queue[0], 3.0);
  }
  EXPECT_GT(dropped, 0.0);
}

// ---------------------------------------------------------------------------
// Episodes

TEST(Episode, RecordsOneRowPerControlStep) {
  FixedRateController ctrl(8);
  const auto rec = run_episode(build_paper_network(), ctrl, 1);
  EXPECT_EQ(rec.rows(), 120u);
  EXPECT_EQ(rec.occupancy.rows(), 120);
  EXPECT_EQ(rec.occupancy.cols(), 8);
  EXPECT_EQ(rec.rates.cols(), 8);
  EXPECT_DOUBLE_EQ(rec.time_s.front(), 1800.0);
  EXPECT_DOUBLE_EQ(rec.time_s.back(), 5370.0);
  EXPECT_EQ(rec.seed, 1u);
}

TEST(Episode, SameSeedIsBitIdentical) {
  const auto cfg = build_paper_network();
  AlineaController a(8, {}), b(8, {});
  const auto ra = run_episode(cfg, a, 77);
  const auto rb = run_episode(cfg, b, 77);
  EXPECT_TRUE(bit_identical(ra, rb));
  AlineaController c(8, {});
  EXPECT_FALSE(bit_identical(ra, run_episode(cfg, c, 78)));
}

TEST(Episode, ReadingsStayInRange) {
  AlineaController ctrl(8, {});
  const auto rec = run_episode(build_paper_network(), ctrl, 3);
  EXPECT_GE(rec.occupancy.minCoeff(), 0.0);
  EXPECT_LE(rec.occupancy.maxCoeff(), 100.0);
  EXPECT_GE(rec.flow.minCoeff(), 0.0);
  EXPECT_GE(rec.rates.minCoeff(), kMinRateVph);
  EXPECT_LE(rec.rates.maxCoeff(), kMaxRateVph);
}

TEST(Episode, UnmeteredCongestionGrowsOverTheWindow) {
  FixedRateController ctrl(8, kMaxRateVph);
  const auto rec = run_episode(build_paper_network(), ctrl, 5);
  const Eigen::VectorXd early = rec.occupancy.topRows(20).colwise().mean();
  const Eigen::VectorXd late = rec.occupancy.bottomRows(20).colwise().mean();
  EXPECT_GT(late.mean(), early.mean());
  int rising = 0;
  for (Eigen::Index i = 0; i < early.size(); ++i) rising += late[i] > early[i] + 1.0;
  EXPECT_GE(rising, 4);
}

TEST(Episode, RestrictiveMeteringLowersMainlineOccupancy) {
  const auto cfg = build_paper_network();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    FixedRateController low(8, kMinRateVph, "min"), high(8, kMaxRateVph, "max");
    const double o_low = run_episode(cfg, low, seed).occupancy.mean();
    const double o_high = run_episode(cfg, high, seed).occupancy.mean();
    EXPECT_LT(o_low, o_high) << "seed " << seed;
  }
}

TEST(Episode, OutOfRangeRatesAreClampedAndCounted) {
  CallbackController wild("wild", [](std::span<const SensorReading> r) { return std::vector<double>(r.size(), 5000.0); });
  const auto rec = run_episode(build_paper_network(), wild, 1);
  EXPECT_GT(rec.clamped_rate_events, 0u);
  EXPECT_EQ(rec.rates.maxCoeff(), kMaxRateVph);
}

TEST(Episode, WrongRateCountIsAContractViolation) {
  CallbackController bad("bad", [](std::span<const SensorReading>) { return std::vector<double>(3, 1000.0); });
  EXPECT_THROW(run_episode(build_paper_network(), bad, 1), ContractViolation);
}

TEST(EpisodeCsv, HeaderAndValuesSurviveAWriteRead) {
  AlineaController ctrl(8, {});
  const auto rec = run_episode(build_paper_network(), ctrl, 8);
  const auto path = (std::filesystem::temp_directory_path() / "rampnet_test_episode.csv").string();
  write_episode_csv(rec, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.substr(0, 20), "time_s,occ_1,occ_2,o");
  EXPECT_NE(header.find(",flow_1,"), std::string::npos);
  EXPECT_NE(header.find(",speed_8,rate_1,"), std::string::npos);
  const auto back = read_episode_csv(path);
  EXPECT_EQ(back.time_s, rec.time_s);
  EXPECT_EQ(back.occupancy, rec.occupancy);
  EXPECT_EQ(back.flow, rec.flow);
  EXPECT_EQ(back.speed, rec.speed);
  EXPECT_EQ(back.rates, rec.rates);
}

TEST(EpisodeCsv, BadHeaderIsRejected) {
  const auto path = (std::filesystem::temp_directory_path() / "rampnet_test_bad.csv").string();
  std::ofstream(path) << "t,occ_1\n1,2\n";
  EXPECT_THROW(read_episode_csv(path), ConfigError);
}
