#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metering.hpp"

namespace rampnet {

/// Loop-detector measurement aggregated over one control step.
struct SensorReading {
  double occupancy_pct = 0.0;
  double flow_vph = 0.0;
  double speed_kmh = 0.0;

  bool operator==(const SensorReading&) const = default;
};

/// A ramp-metering policy. decide() is called once per control step with one
/// reading per sensor and returns one rate per metered ramp; the rates hold
/// until the next call.
class RampController {
 public:
  virtual ~RampController() = default;
  virtual std::string name() const = 0;
  virtual std::vector<double> initial_rates(std::size_t m) const {
    return std::vector<double>(m, kInitialRateVph);
  }
  virtual std::vector<double> decide(std::span<const SensorReading> readings) = 0;
};

/// Wraps a plain callback as a controller.
class CallbackController final : public RampController {
 public:
  using Callback = std::function<std::vector<double>(std::span<const SensorReading>)>;

  CallbackController(std::string name, Callback fn) : name_(std::move(name)), fn_(std::move(fn)) {}
  std::string name() const override { return name_; }
  std::vector<double> decide(std::span<const SensorReading> readings) override { return fn_(readings); }

 private:
  std::string name_;
  Callback fn_;
};

/// Meters pinned at one rate (u_max reproduces the unmetered baseline).
class FixedRateController final : public RampController {
 public:
  explicit FixedRateController(std::size_t m, double rate_vph = kMaxRateVph, std::string name = "none")
      : rates_(m, rate_vph), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  std::vector<double> initial_rates(std::size_t) const override { return rates_; }
  std::vector<double> decide(std::span<const SensorReading>) override { return rates_; }

 private:
  std::vector<double> rates_;
  std::string name_;
};

}  // namespace rampnet
