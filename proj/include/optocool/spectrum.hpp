#pragma once

// Detected quadrature spectra: detection transfer functions, the
// noise-inclusive lineshape of a cooled mode, phenomenological background,
// and chi-squared periodogram synthesis.

#include <complex>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "optocool/physics.hpp"
#include "optocool/units.hpp"

namespace optocool {

enum class SpectrumUnits {
  raw_volts2,        // uncalibrated analyser output
  hz2_per_hz,        // frequency-noise calibrated
  normalized_model,  // (rad/s)^2 / Hz, peak area g0^2 (2 n + 1)
};

std::string_view to_string(SpectrumUnits units);
SpectrumUnits units_from_string(std::string_view name);

/// Factor that takes hz2_per_hz values to normalized_model values.
inline constexpr double kNormalizedPerHz2 = two_pi * two_pi;

struct FrequencyGrid {
  double f_start = 0.0;  // Hz
  double f_step = 1.0;   // Hz
  std::size_t count = 0;

  double frequency(std::size_t i) const { return f_start + static_cast<double>(i) * f_step; }
  double f_stop() const { return frequency(count == 0 ? 0 : count - 1); }
  /// Nearest bin, clamped to the grid.
  std::size_t index_of(double f_hz) const;
  void validate() const;

  static FrequencyGrid spanning(double f_start, double f_stop, double f_step);
};

/// One-sided PSD on a uniform grid.
struct Spectrum {
  FrequencyGrid grid;
  std::vector<double> values;
  SpectrumUnits units = SpectrumUnits::normalized_model;
  int n_averages = 1;
  std::map<std::string, std::string> metadata;

  std::size_t size() const { return values.size(); }
  double frequency(std::size_t i) const { return grid.frequency(i); }

  /// Throws on a broken invariant; negative bins allowed only when asked.
  void validate(bool allow_negative = false) const;

  /// Rescales a calibrated spectrum between hz2_per_hz and normalized_model.
  Spectrum converted_to(SpectrumUnits target) const;

  /// Appends to metadata["warnings"], "; "-separated.
  void add_warning(const std::string& text);
};

struct DetectionConfig {
  double theta_lo = 0.0;
  double probe_detuning = 0.0;
  double probe_kappa = 0.0;

  /// Pound-Drever-Hall: resonant probe, phase quadrature.
  static DetectionConfig pdh(double kappa);
  void validate() const;
};

struct LineshapeCoeffs {
  double a0 = 0.0;  // level at the window centre
  double a1 = 0.0;  // slope per rad/s about the window centre
  double a2 = 0.0;  // Lorentzian weight
  double a3 = 0.0;  // dispersive weight
  double omega_eff = 0.0;
  double gamma_eff = 0.0;
};

/// Low-frequency tail c0 + c_t f^-p plus a Lorentzian beat note, in the
/// units of the spectrum it describes.
struct BackgroundModel {
  double tail_offset = 0.0;
  double tail_amplitude = 0.0;
  double tail_exponent = 2.0;
  double beat_center = 0.0;  // Hz
  double beat_width = 1.0;   // Hz, full width at half maximum
  double beat_amplitude = 0.0;

  double operator()(double f_hz) const;
  void validate() const;
};

/// Coherent phase modulation used for absolute scale. power is the
/// integrated line power in Hz^2 as it appears in a calibrated spectrum.
struct CalibrationTone {
  double frequency = 0.0;  // Hz
  double power = 0.0;      // Hz^2
};

complex detection_filter_c(double omega, const DetectionConfig& detection);
complex amplitude_leak_d(double omega, const DetectionConfig& detection);

double lorentzian_shape(double omega, double omega_eff, double gamma_eff);
double dispersive_shape(double omega, double omega_eff, double gamma_eff);

/// Fit function on the one-sided scale:
/// a0 + a1 (w - w_c) + |C|^2 (a2 2L + a3 2D).
double lineshape_value(double omega, double omega_center, double filter2,
                       const LineshapeCoeffs& c);

struct OutputOptions {
  SpectrumUnits units = SpectrumUnits::normalized_model;
  double vacuum_level = 0.0;  // the free constant c, in hz2_per_hz
  std::optional<BackgroundModel> background;  // hz2_per_hz
  std::optional<CalibrationTone> tone;
};

/// Physics inputs for one mode's peak, precomputed from physics_core.
struct PeakSource {
  double g0 = 0.0;
  double theta = 0.0;
  OccupancyBudget budget;
};

PeakSource peak_source(const MechMode& mode, const CavitySpec& cavity,
                       const DriveField& drive, const LaserNoise& noise);

/// Lorentzian and dispersive weights (a2, a3) implied by a budget.
LineshapeCoeffs model_coefficients(const PeakSource& source);

/// Noiseless one-sided output spectrum summed over the given peaks.
Spectrum output_psd(const FrequencyGrid& grid,
                    const std::vector<PeakSource>& peaks,
                    const DetectionConfig& detection,
                    const OutputOptions& options = {});

Spectrum output_psd(const FrequencyGrid& grid, const MechMode& mode,
                    const CavitySpec& cavity, const DriveField& drive,
                    const LaserNoise& noise, const DetectionConfig& detection,
                    const OutputOptions& options = {});

/// Adds a tone as a single-bin line of the given integrated power.
void add_calibration_tone(Spectrum& spectrum, const CalibrationTone& tone);

Spectrum evaluate_background(const BackgroundModel& model,
                             const FrequencyGrid& grid);

/// Each bin scaled by chi^2_{2M}/(2M) with M = n_averages.
Spectrum synthesize_measured_spectrum(const Spectrum& model, int n_averages,
                                      std::mt19937_64& rng);
Spectrum synthesize_measured_spectrum(const Spectrum& model, int n_averages,
                                      std::uint64_t seed);

}  // namespace optocool
