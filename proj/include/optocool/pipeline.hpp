#pragma once

// End-to-end chains used by the command-line tool: synthetic campaigns with
// a truth manifest, per-spectrum analysis, the cooling-curve extraction, and
// closed-form prediction sweeps.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "optocool/fit.hpp"
#include "optocool/io.hpp"

namespace optocool {

// ---- synthesis ---------------------------------------------------------

struct CampaignPoint {
  double gamma_opt = 0.0;  // rad/s
  OccupancyBudget budget;
  LineshapeCoeffs coeffs;  // a2, a3 on the normalized scale
  double a_eff = 0.0;      // g0^2 (2 n_eff + 1)
  Spectrum spectrum;
};

struct Campaign {
  std::string mode;
  double g0 = 0.0;
  double theta = 0.0;
  LaserNoise noise;
  MinimumOccupancy minimum;
  std::uint64_t seed = 0;
  std::vector<CampaignPoint> points;
};

/// Optical damping grid: explicit list, or geometric multiples of the
/// noise-limited optimum.
std::vector<double> damping_grid(const ExperimentConfig& config, const ModeConfig& mode);

/// One calibrated (or raw, if configured) periodogram per drive point, tone
/// and background included. Throws InstabilityError naming the point.
Campaign synthesize_campaign(const ExperimentConfig& config, const std::string& mode_label,
                             std::uint64_t seed);

/// Truth parameters; `files` are the spectrum names in point order.
nlohmann::json truth_manifest(const Campaign& campaign, const std::vector<std::string>& files);

// ---- single spectrum ---------------------------------------------------

struct AnalysisOptions {
  std::string mode;                   // config label; empty = first mode
  std::optional<double> window_hz;    // fit half-width; default 10 Gamma
  bool subtract_background = true;
  int background_passes = 2;
};

struct SpectrumAnalysis {
  PeakRecord record;
  Spectrum calibrated;  // hz2_per_hz, before background removal
  Spectrum corrected;   // after background removal
};

SpectrumAnalysis analyze_spectrum(const Spectrum& spectrum, const ExperimentConfig& config,
                                  const AnalysisOptions& options = {});

/// Plot columns over the fit window: frequency_hz, data, fit,
/// lorentzian_fit, residual (hz2_per_hz, background removed).
std::string peak_plot_csv(const SpectrumAnalysis& analysis, const DetectionConfig& detection);

// ---- cooling curve -----------------------------------------------------

CoolingRecord analyze_cooling(const std::vector<PeakRecord>& peaks, const ExperimentConfig& config,
                              const std::string& mode_label = {});

/// Measured points as n_eff + 1/2 = a_eff / (2 g0^2) against Gamma_eff/2pi.
std::string cooling_points_csv(const CoolingRecord& cooling);
/// Dense model curve with its b1/Gamma branch.
std::string cooling_curve_csv(const CoolingRecord& cooling);
std::string cooling_gnuplot(const std::string& points_file, const std::string& curve_file);

// ---- prediction --------------------------------------------------------

enum class SweepKind { detuning, damping, q_factor };

struct SweepSpec {
  SweepKind kind = SweepKind::detuning;
  double from = 0.0;  // Hz for detuning and damping; bare number for Q
  double to = 0.0;
  int points = 11;
  bool geometric = false;
};

SweepKind sweep_kind_from_string(const std::string& name);

struct PredictRow {
  double x = 0.0;          // swept value, in the spec's units
  double detuning = 0.0;   // rad/s
  double q_factor = 0.0;
  double gamma_opt = 0.0;  // rad/s; the optimum unless damping is swept
  double n_ba = 0.0;
  double n_exc = 0.0;
  double n_eff = 0.0;
  double n_min = 0.0;
  double gamma_min = 0.0;
  double theta = 0.0;
  double a_factor = 0.0;
  std::string flag;  // empty, "unstable", "undefined: ...", "non-monotonic"
};

std::vector<PredictRow> predict(const ExperimentConfig& config, const std::string& mode_label,
                                const SweepSpec& sweep);
std::string predict_csv(const std::vector<PredictRow>& rows, SweepKind kind);

}  // namespace optocool
