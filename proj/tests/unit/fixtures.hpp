#pragma once

// Reference operating points, expressed in the library's angular units.

#include <algorithm>
#include <cmath>

#include "optocool/physics.hpp"
#include "optocool/units.hpp"

namespace fixtures {

using namespace optocool;

inline double khz(double v) { return hz_to_rad(v * 1e3); }

inline CavitySpec cavity(double detuning_khz) {
  CavitySpec c;
  c.kappa = khz(204.0);
  c.detuning = khz(detuning_khz);
  c.cavity_length = 0.048;
  c.laser_frequency = speed_of_light / 1064e-9;
  c.input_transmission_ppm = 330.0;
  return c;
}

inline MechMode mode01() { return MechMode::from_q(khz(256.0), 1.18e7, 300.0, "(0,1)"); }
inline MechMode mode02() { return MechMode::from_q(khz(593.0), 0.92e7, 300.0, "(0,2)"); }

inline double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(a), std::abs(b));
}

}  // namespace fixtures
