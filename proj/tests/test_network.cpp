#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include <rampnet/network.hpp>

using namespace rampnet;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("rampnet_test_" + name)).string();
}

std::string write_temp(const std::string& name, const std::string& text) {
  const auto p = temp_path(name);
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(PaperNetwork, TopologyAndDemands) {
  const auto cfg = build_paper_network();
  ASSERT_EQ(cfg.highways.size(), 3u);
  EXPECT_EQ(cfg.highways[0].name, "CA-134E");
  EXPECT_EQ(cfg.highways[1].name, "CA-2S");
  EXPECT_EQ(cfg.highways[2].name, "I-5N");
  EXPECT_EQ(cfg.highways[0].mainline_demand_vph, 3250.0);
  EXPECT_EQ(cfg.highways[1].mainline_demand_vph, 3400.0);
  EXPECT_EQ(cfg.highways[2].mainline_demand_vph, 4200.0);
  ASSERT_EQ(cfg.ramps.size(), 8u);
  for (const auto& r : cfg.ramps) {
    EXPECT_EQ(r.demand_vph, 2000.0) << r.id;
    EXPECT_TRUE(r.metered);
  }
  std::size_t on_134 = 0, on_2s = 0, on_5n = 0;
  for (const auto& r : cfg.ramps) {
    on_134 += r.merge_cell.highway == 0;
    on_2s += r.merge_cell.highway == 1;
    on_5n += r.merge_cell.highway == 2;
  }
  EXPECT_EQ(on_134, 3u);
  EXPECT_EQ(on_2s, 3u);
  EXPECT_EQ(on_5n, 2u);
  EXPECT_EQ(cfg.state_dim(), 8u);
  EXPECT_EQ(cfg.input_dim(), 8u);
}

TEST(PaperNetwork, Timing) {
  const auto cfg = build_paper_network();
  EXPECT_EQ(cfg.burn_in_s, 1800.0);
  EXPECT_EQ(cfg.horizon_duration_s, 3600.0);
  EXPECT_EQ(cfg.total_sim_steps(), 5400u);
  EXPECT_EQ(cfg.steps_per_control(), 30u);
  EXPECT_EQ(cfg.recorded_control_steps(), 120u);
}

TEST(PaperNetwork, OneSensorPerMeteredRamp) {
  const auto cfg = build_paper_network();
  for (const auto& r : cfg.ramps) {
    int hits = 0;
    for (const auto& s : cfg.sensors) hits += s.cell == r.merge_cell;
    EXPECT_EQ(hits, 1) << r.id;
  }
}

TEST(PaperNetwork, RampsAtLeastTwoCellsApart) {
  const auto cfg = build_paper_network();
  for (std::size_t a = 0; a < cfg.ramps.size(); ++a)
    for (std::size_t b = a + 1; b < cfg.ramps.size(); ++b) {
      const auto& x = cfg.ramps[a].merge_cell;
      const auto& y = cfg.ramps[b].merge_cell;
      if (x.highway != y.highway) continue;
      EXPECT_GE(x.cell > y.cell ? x.cell - y.cell : y.cell - x.cell, 2u);
    }
}

TEST(Config, ShippedFileMatchesBuiltInNetwork) {
  const auto cfg = load_config(std::string(RAMPNET_SOURCE_DIR) + "/configs/paper_network.json");
  EXPECT_EQ(to_json(cfg), to_json(build_paper_network()));
  EXPECT_EQ(cfg.highways.size(), 3u);
  EXPECT_EQ(cfg.ramps.size(), 8u);
  EXPECT_EQ(cfg.sensors.size(), 8u);
}

TEST(Config, SaveThenLoadGivesEqualNetwork) {
  const auto cfg = build_paper_network();
  const auto p = temp_path("roundtrip.json");
  save_config(cfg, p);
  EXPECT_EQ(to_json(load_config(p)), to_json(cfg));
}

TEST(Config, ControlStepMultipleOfSimStep) {
  auto j = to_json(build_paper_network());
  j["timing"]["control_step_s"] = 30;
  j["timing"]["sim_step_s"] = 1;
  EXPECT_EQ(network_from_json(j).steps_per_control(), 30u);

  j["timing"]["control_step_s"] = 25;
  j["timing"]["sim_step_s"] = 10;
  EXPECT_THROW(network_from_json(j), ValidationError);
}

TEST(Config, DanglingRampReferenceIsRejected) {
  auto j = to_json(build_paper_network());
  j["ramps"][0]["merge_cell"]["cell"] = 99;
  try {
    network_from_json(j);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("134E-OR1"), std::string::npos) << e.what();
  }
}

TEST(Config, UnknownHighwayIsRejected) {
  auto j = to_json(build_paper_network());
  j["sensors"][0]["cell"]["highway"] = "US-101";
  EXPECT_ANY_THROW(network_from_json(j));
}

TEST(Config, InfeasibleFundamentalDiagramIsRejected) {
  auto cfg = build_paper_network();
  cfg.highways[0].cells[0].capacity_per_lane_vph = 20000.0;
  EXPECT_THROW(validate(cfg), ValidationError);
}

TEST(Config, NonPositiveGeometryIsRejected) {
  for (int which = 0; which < 3; ++which) {
    auto cfg = build_paper_network();
    auto& c = cfg.highways[1].cells[2];
    if (which == 0) c.length_km = 0.0;
    if (which == 1) c.lanes = 0;
    if (which == 2) c.free_flow_speed_kmh = -5.0;
    EXPECT_THROW(validate(cfg), ValidationError) << which;
  }
}

TEST(Config, NegativeRampDemandIsRejected) {
  auto cfg = build_paper_network();
  cfg.ramps[3].demand_vph = -1.0;
  EXPECT_THROW(validate(cfg), ValidationError);
}

TEST(Config, MissingSensorForMeteredRampIsRejected) {
  auto cfg = build_paper_network();
  cfg.sensors.pop_back();
  EXPECT_THROW(validate(cfg), ValidationError);
}

TEST(Config, MalformedFileIsAParseError) {
  const auto p = write_temp("broken.json", "{ \"highways\": [ ");
  EXPECT_THROW(load_config(p), ConfigError);
}

TEST(Config, MissingFileIsAConfigError) { EXPECT_THROW(load_config(temp_path("does_not_exist.json")), ConfigError); }

TEST(Config, CellRunsExpand) {
  const auto j = nlohmann::json::parse(R"({
    "highways": [{"name": "A", "mainline_demand_vph": 1000,
                  "cells": [{"count": 3, "lanes": 2}, {"lanes": 1}]}],
    "ramps": [{"id": "R", "merge_cell": {"highway": "A", "cell": 1}, "demand_vph": 300}],
    "sensors": [{"id": "S", "cell": {"highway": "A", "cell": 1}}]
  })");
  const auto cfg = network_from_json(j);
  ASSERT_EQ(cfg.highways[0].cells.size(), 4u);
  EXPECT_EQ(cfg.highways[0].cells[2].lanes, 2);
  EXPECT_EQ(cfg.highways[0].cells[3].lanes, 1);
}
