#pragma once

// Files and unit plumbing: spectrum CSV, tone calibration, experiment
// configuration and fit reports (JSON, unit-suffixed field names), and the
// laser-noise unit conversions.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "optocool/fit.hpp"
#include "optocool/physics.hpp"
#include "optocool/spectrum.hpp"

namespace optocool {

// ---- spectrum files ----------------------------------------------------

/// CSV with `# key=value` header lines (units, n_averages, f_start, f_step,
/// plus any metadata) and rows `frequency_hz,psd`. A file with no header
/// lines at all is read as raw_volts2 with a warning.
Spectrum read_spectrum(const std::filesystem::path& path);
Spectrum parse_spectrum(const std::string& text);

void write_spectrum(const Spectrum& spectrum, const std::filesystem::path& path);
std::string format_spectrum(const Spectrum& spectrum);

/// Writes to a sibling temporary and renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

// ---- calibration and conversions ---------------------------------------

struct ToneCalibration {
  Spectrum spectrum;  // hz2_per_hz
  double scale = 1.0;  // hz2_per_hz per input unit
  double integrated_power = 0.0;  // tone power found, input units * Hz
};

/// Rescales so the tone line integrates to `tone_power` (Hz^2). The tone bin
/// must stand at least 10x above the local median.
ToneCalibration calibrate_with_tone_detail(const Spectrum& spectrum,
                                          double tone_frequency_hz, double tone_power_hz2);
Spectrum calibrate_with_tone(const Spectrum& spectrum, double tone_frequency_hz,
                             double tone_power_hz2);

/// S_phiphi = S_nunu / (omega / 2 pi)^2, omega angular.
double convert_frequency_noise(double s_nu_nu, double omega);
double frequency_noise_from_phase(double s_phi_phi, double omega);

/// S_LL = (L / nu_L)^2 S_nunu; needs cavity_length and laser_frequency.
double convert_snn_sll(double s_nu_nu, const CavitySpec& cavity);
double convert_sll_snn(double s_ll, const CavitySpec& cavity);

// ---- configuration -----------------------------------------------------

struct ModeConfig {
  MechMode mode;
  double g0 = 0.0;  // rad/s; 0 when unknown
};

/// Laser noise as configured. Phase noise may be given as frequency noise,
/// which maps to a different S_phiphi at each mechanical frequency.
struct NoiseConfig {
  std::optional<double> s_phi_phi;  // rad^2/Hz
  std::optional<double> s_nu_nu;    // Hz^2/Hz
  double s_eps_eps = 0.0;           // 1/Hz

  LaserNoise at(double omega_m) const;
};

/// Spectrum acquisition and the synthetic-campaign plan.
struct AcquisitionConfig {
  int n_averages = 100;
  double span_low = 0.0;   // Hz; 0 picks a default around the mode
  double span_high = 0.0;
  double bins_per_gamma = 20.0;
  double vacuum_level = 2e-2;  // hz2_per_hz
  std::optional<BackgroundModel> background;  // hz2_per_hz
  std::optional<double> raw_scale;  // synth writes raw_volts2 = scale * hz2_per_hz
  // Optical damping grid, as multiples of the noise-limited optimum.
  double gamma_ratio_low = 0.25;
  double gamma_ratio_high = 4.0;
  int points = 12;
  std::vector<double> gamma_opt;  // rad/s; overrides the ratio grid
};

struct ExperimentConfig {
  CavitySpec cavity;
  std::vector<ModeConfig> modes;
  DetectionConfig detection;
  std::optional<NoiseConfig> noise;
  std::optional<CalibrationTone> calibration_tone;
  AcquisitionConfig acquisition;

  void validate() const;
  /// By label, or the first mode for an empty label.
  const ModeConfig& mode(const std::string& label = {}) const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig read_config(const std::filesystem::path& path);

// ---- reports -----------------------------------------------------------

struct Provenance {
  std::vector<std::string> input_files;
  std::optional<std::uint64_t> seed;
  std::string tool_version;
};

struct PeakRecord {
  std::string source;  // spectrum file or label
  std::string mode;
  PeakFitResult fit;
  std::optional<BackgroundFit> background;
};

struct CoolingRecord {
  std::vector<CoolingPoint> points;
  CoolingCurveResult curve;
  Measured dispersive_slope;
  NoiseDiscrimination discrimination;
  NoiseExtraction extraction;
  double theta = 0.0;
  Measured t_eff;    // K, at n_min
  Measured q_eff;    // Omega_m / Gamma_min
};

struct FitReport {
  std::vector<PeakRecord> peaks;
  std::optional<CoolingRecord> cooling;
  Provenance provenance;
  std::vector<std::string> warnings;
};

nlohmann::json report_to_json(const FitReport& report);
FitReport report_from_json(const nlohmann::json& j);
void write_report(const FitReport& report, const std::filesystem::path& path);
FitReport read_report(const std::filesystem::path& path);

std::string_view tool_version();

}  // namespace optocool
