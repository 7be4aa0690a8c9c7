#pragma once

// Inverse analysis of measured spectra: background removal, peak lineshape
// fits, the area-versus-width cooling curve, and extraction of coupling,
// minimum occupancy and laser noise.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "optocool/nlls.hpp"
#include "optocool/physics.hpp"
#include "optocool/spectrum.hpp"

namespace optocool {

struct Measured {
  double value = 0.0;
  double sigma = 0.0;
};

struct FitWindow {
  double f_low = 0.0;  // Hz
  double f_high = 0.0;

  bool contains(double f) const { return f >= f_low && f <= f_high; }
  static FitWindow around(double center_hz, double half_width_hz) {
    return {center_hz - half_width_hz, center_hz + half_width_hz};
  }
};

/// Inverse variances S^2/M with S a centred 10-bin moving average.
std::vector<double> bin_weights(const Spectrum& reference);

/// Flags bins that differ from the mean of their two neighbours by more than
/// `n_sigma` standard deviations of that difference, sigma from `weights`.
std::vector<bool> outlier_mask(std::span<const double> values,
                               std::span<const double> weights,
                               double n_sigma = 5.0);

// ---- background --------------------------------------------------------

enum class BeatNote { auto_detect, always, never };

struct BackgroundFitOptions {
  BeatNote beat = BeatNote::auto_detect;
  bool reject_outliers = true;
  // Bin variances come from this spectrum when given (same grid), e.g. the
  // measured spectrum when fitting what is left after removing a peak.
  std::optional<Spectrum> noise_reference;
};

struct BackgroundFit {
  BackgroundModel model;  // in the units of the fitted spectrum
  BackgroundModel sigma;  // one-sigma per field
  SpectrumUnits units = SpectrumUnits::hz2_per_hz;
  bool has_beat = false;
  double reduced_chi2 = 0.0;
  std::size_t bins_used = 0;
};

BackgroundFit fit_background(const Spectrum& spectrum,
                             std::span<const FitWindow> exclusions,
                             const BackgroundFitOptions& options = {});

/// Bin-wise difference; negative bins are kept and counted in metadata.
Spectrum subtract_background(const Spectrum& spectrum, const Spectrum& background);
Spectrum subtract_background(const Spectrum& spectrum, const BackgroundFit& background);

// ---- peak --------------------------------------------------------------

enum PeakParam : int { kA0 = 0, kA1, kA2, kA3, kOmegaEff, kGammaEff, kPeakParams };

using PeakCovariance = Eigen::Matrix<double, kPeakParams, kPeakParams>;

/// Moment-style starting point; throws NoPeakError when the window maximum
/// is below three times its median.
LineshapeCoeffs peak_initial_guess(const Spectrum& spectrum, const FitWindow& window,
                                   const DetectionConfig& detection);

struct PeakFitOptions {
  std::optional<double> theta;                // enables a_eff
  // Spectrum the bin variances are estimated from, on the same grid; use the
  // pre-subtraction spectrum when fitting background-subtracted data.
  std::optional<Spectrum> noise_reference;
  bool reject_outliers = true;
  bool select_model = true;  // Lorentzian-only when |a3| < sigma(a3)
  FitOptions solver;
};

struct PeakFitResult {
  LineshapeCoeffs coeffs;  // joint Lorentzian + dispersive fit
  PeakCovariance covariance = PeakCovariance::Zero();
  double chi2 = 0.0;
  double reduced_chi2 = 0.0;

  LineshapeCoeffs lorentzian;  // a3 fixed at 0
  PeakCovariance lorentzian_covariance = PeakCovariance::Zero();
  double lorentzian_chi2 = 0.0;
  double lorentzian_reduced_chi2 = 0.0;

  bool lorentzian_selected = false;
  std::optional<double> theta;
  std::optional<Measured> a_eff;
  double cov_a_eff_gamma = 0.0;  // for effective-variance cooling fits

  FitWindow window;
  double omega_center = 0.0;
  std::size_t bins_used = 0;
  std::size_t outliers_removed = 0;

  /// Coefficients and covariance of the reported (selected) model.
  const LineshapeCoeffs& selected() const { return lorentzian_selected ? lorentzian : coeffs; }
  const PeakCovariance& selected_covariance() const {
    return lorentzian_selected ? lorentzian_covariance : covariance;
  }
  double sigma(PeakParam p) const;
};

/// Fits a0 + a1 (w - w_c) + |C|^2 (a2 2L + a3 2D) over the window. The
/// spectrum must be calibrated; hz2_per_hz input is rescaled to the
/// normalized scale so a_eff comes out as g0^2 (2 n_eff + 1).
PeakFitResult fit_peak(const Spectrum& spectrum, const FitWindow& window,
                       const DetectionConfig& detection,
                       const std::optional<LineshapeCoeffs>& init = std::nullopt,
                       const PeakFitOptions& options = {});

/// a2 + a3 / tan(theta) with linear error propagation; covariance ordered
/// (a2, a3).
Measured effective_area(double a2, double a3, double theta,
                        const Eigen::Matrix2d& covariance);

// ---- cooling curve -----------------------------------------------------

struct CoolingPoint {
  double gamma_eff = 0.0;
  double a_eff = 0.0;
  double sigma_a_eff = 0.0;
  double sigma_gamma = 0.0;
  double cov_a_gamma = 0.0;
  // Dispersive weight of the joint fit, for noise discrimination.
  double a3 = 0.0;
  double sigma_a3 = 0.0;
};

CoolingPoint cooling_point(const PeakFitResult& fit);

struct CoolingCurveResult {
  double b1 = 0.0;
  double b2 = 0.0;
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();
  double chi2 = 0.0;
  double reduced_chi2 = 0.0;
  int dof = 0;
  Measured g0;
  Measured n_min;
  Measured gamma_min;
  std::vector<std::string> warnings;

  double model(double gamma_eff) const { return b1 / gamma_eff + b2 * gamma_eff; }
};

/// Weighted fit of a_eff = b1/Gamma + b2 Gamma with derived g0, n_min and
/// Gamma_min. Throws FitError when b1 or b2 comes out non-positive.
CoolingCurveResult fit_cooling_curve(std::span<const CoolingPoint> points,
                                     const MechMode& mode);

/// Weighted slope of a3 against Gamma_eff through the origin.
Measured fit_dispersive_slope(std::span<const CoolingPoint> points);

// ---- noise source ------------------------------------------------------

enum class NoiseDominance { phase, amplitude, mixed, indeterminate };

std::string_view to_string(NoiseDominance d);
NoiseDominance dominance_from_string(std::string_view name);

struct NoiseDiscrimination {
  NoiseDominance dominance = NoiseDominance::indeterminate;
  double inverse_sin_2theta = 0.0;
  Measured ratio;           // b2 Gamma_eff / a3
  Measured phase_fraction;  // share of b2 explained by phase noise
};

NoiseDiscrimination discriminate_noise(const Measured& b2,
                                       const Measured& a3_over_gamma_slope,
                                       double theta);

struct NoiseExtraction {
  NoiseDominance dominance = NoiseDominance::indeterminate;
  Measured s_eff;  // S_phiphi / cos^2 + A^2 S_epseps
  Measured s_phi_phi;
  Measured s_eps_eps;
  Measured s_nu_nu;
  bool phase_is_upper_limit = false;
  bool amplitude_is_upper_limit = false;

  LaserNoise noise() const { return {s_phi_phi.value, s_eps_eps.value}; }
};

NoiseExtraction extract_noise_psd(const CoolingCurveResult& result,
                                  const MechMode& mode, const CavitySpec& cavity,
                                  const NoiseDiscrimination& discrimination);

}  // namespace optocool
