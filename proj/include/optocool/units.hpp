#pragma once

#include <numbers>

namespace optocool {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

// CODATA 2018 exact values.
inline constexpr double planck = 6.62607015e-34;          // J s
inline constexpr double hbar = planck / two_pi;            // J s
inline constexpr double boltzmann = 1.380649e-23;          // J/K
inline constexpr double speed_of_light = 299792458.0;      // m/s

// Interfaces speak ordinary frequency; everything inside is angular.
constexpr double hz_to_rad(double hz) { return two_pi * hz; }
constexpr double rad_to_hz(double rad_per_s) { return rad_per_s / two_pi; }

}  // namespace optocool
