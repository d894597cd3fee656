#pragma once

/// @file metering.hpp
/// @brief Ramp-meter signal timing: one vehicle per fixed green, red length
/// derived from the commanded metering rate.

#include <algorithm>
#include <string>

#include "network.hpp"

namespace rampnet {

inline constexpr double kMinRateVph = 200.0;
inline constexpr double kMaxRateVph = 1800.0;
inline constexpr double kGreenDurationS = 2.0;
inline constexpr double kInitialRateVph = 1000.0;

inline double clamp_rate(double rate_vph, double lo = kMinRateVph, double hi = kMaxRateVph) {
  return std::clamp(rate_vph, lo, hi);
}

/// Red duration M_R = (3600 - r M_G) / r for r in [200, 1800] veh/h.
inline double rate_to_red_duration(double rate_vph) {
  if (!(rate_vph >= kMinRateVph && rate_vph <= kMaxRateVph))
    throw ContractViolation("metering rate " + std::to_string(rate_vph) + " veh/h outside [200, 1800]");
  return std::max(0.0, (3600.0 - rate_vph * kGreenDurationS) / rate_vph);
}

/// Fraction of a metering cycle spent green, M_G / (M_G + M_R).
inline double green_fraction(double rate_vph) {
  return kGreenDurationS / (kGreenDurationS + rate_to_red_duration(rate_vph));
}

}  // namespace rampnet
