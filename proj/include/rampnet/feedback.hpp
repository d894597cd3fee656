#pragma once

/// @file feedback.hpp
/// @brief Local feedback ramp metering (ALINEA and PI-ALINEA).

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "controller.hpp"
#include "metering.hpp"

namespace rampnet {

struct AlineaParams {
  double gain_vph_per_pct = 70.0;  ///< K_R
  double desired_occupancy_pct = 15.0;
  double rate_min_vph = kMinRateVph;
  double rate_max_vph = kMaxRateVph;
};

struct PiAlineaParams {
  double proportional_gain_vph_per_pct = 40.0;  ///< K_P
  double integral_gain_vph_per_pct = 70.0;      ///< K_I
  double desired_occupancy_pct = 15.0;
  double rate_min_vph = kMinRateVph;
  double rate_max_vph = kMaxRateVph;
};

struct AlineaState {
  double prev_rate_vph = kInitialRateVph;
};

struct PiAlineaState {
  double prev_rate_vph = kInitialRateVph;
  std::optional<double> prev_occupancy_pct;  ///< empty before the first measurement
};

namespace detail {
inline void require_occupancy(double o) {
  if (!(o >= 0.0 && o <= 100.0)) throw ContractViolation("occupancy " + std::to_string(o) + "% outside [0, 100]");
}
}  // namespace detail

/// r(k) = clamp(r(k-1) + K_R (o_hat - o_out(k))).
inline double alinea_update(AlineaState& state, const AlineaParams& p, double occupancy_pct) {
  detail::require_occupancy(occupancy_pct);
  const double raw = state.prev_rate_vph + p.gain_vph_per_pct * (p.desired_occupancy_pct - occupancy_pct);
  state.prev_rate_vph = clamp_rate(raw, p.rate_min_vph, p.rate_max_vph);
  return state.prev_rate_vph;
}

/// r(k) = clamp(r(k-1) - K_P (o(k) - o(k-1)) + K_I (o_hat - o(k))).
/// The first call has no o(k-1); the proportional term is zero there.
inline double pi_alinea_update(PiAlineaState& state, const PiAlineaParams& p, double occupancy_pct) {
  detail::require_occupancy(occupancy_pct);
  const double prev_occ = state.prev_occupancy_pct.value_or(occupancy_pct);
  const double raw = state.prev_rate_vph - p.proportional_gain_vph_per_pct * (occupancy_pct - prev_occ) +
                     p.integral_gain_vph_per_pct * (p.desired_occupancy_pct - occupancy_pct);
  state.prev_rate_vph = clamp_rate(raw, p.rate_min_vph, p.rate_max_vph);
  state.prev_occupancy_pct = occupancy_pct;
  return state.prev_rate_vph;
}

/// Mean green share (%) per ramp over an episode's applied rates (rows are
/// equal-length control steps, columns are ramps).
inline std::vector<double> green_percentage(const Eigen::MatrixXd& rates) {
  std::vector<double> out(static_cast<std::size_t>(rates.cols()), 0.0);
  if (rates.rows() == 0) return out;
  for (Eigen::Index k = 0; k < rates.cols(); ++k) {
    double sum = 0.0;
    for (Eigen::Index r = 0; r < rates.rows(); ++r) sum += green_fraction(rates(r, k));
    out[static_cast<std::size_t>(k)] = 100.0 * sum / static_cast<double>(rates.rows());
  }
  return out;
}

/// One ALINEA loop per metered ramp; ramp k reads sensor k.
class AlineaController final : public RampController {
 public:
  AlineaController(std::size_t m, AlineaParams params) : params_(params), state_(m) {}
  std::string name() const override { return "alinea"; }
  std::vector<double> decide(std::span<const SensorReading> readings) override {
    std::vector<double> rates(state_.size());
    for (std::size_t k = 0; k < state_.size(); ++k)
      rates[k] = alinea_update(state_[k], params_, readings[k].occupancy_pct);
    return rates;
  }

 private:
  AlineaParams params_;
  std::vector<AlineaState> state_;
};

class PiAlineaController final : public RampController {
 public:
  PiAlineaController(std::size_t m, PiAlineaParams params) : params_(params), state_(m) {}
  std::string name() const override { return "pi-alinea"; }
  std::vector<double> decide(std::span<const SensorReading> readings) override {
    std::vector<double> rates(state_.size());
    for (std::size_t k = 0; k < state_.size(); ++k)
      rates[k] = pi_alinea_update(state_[k], params_, readings[k].occupancy_pct);
    return rates;
  }

 private:
  PiAlineaParams params_;
  std::vector<PiAlineaState> state_;
};

}  // namespace rampnet
