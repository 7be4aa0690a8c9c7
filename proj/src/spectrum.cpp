#include "optocool/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "optocool/errors.hpp"

namespace optocool {

std::string_view to_string(SpectrumUnits units) {
  switch (units) {
    case SpectrumUnits::raw_volts2: return "raw_volts2";
    case SpectrumUnits::hz2_per_hz: return "hz2_per_hz";
    case SpectrumUnits::normalized_model: return "normalized_model";
  }
  return "unknown";
}

SpectrumUnits units_from_string(std::string_view name) {
  if (name == "raw_volts2" || name == "raw") return SpectrumUnits::raw_volts2;
  if (name == "hz2_per_hz") return SpectrumUnits::hz2_per_hz;
  if (name == "normalized_model") return SpectrumUnits::normalized_model;
  throw UnitMismatchError("unknown spectrum units '" + std::string(name) + "'");
}

std::size_t FrequencyGrid::index_of(double f_hz) const {
  if (count == 0) throw DomainError("empty frequency grid");
  const double x = std::round((f_hz - f_start) / f_step);
  if (x <= 0.0) return 0;
  if (x >= static_cast<double>(count - 1)) return count - 1;
  return static_cast<std::size_t>(x);
}

void FrequencyGrid::validate() const {
  if (!std::isfinite(f_start) || !std::isfinite(f_step))
    throw DomainError("grid bounds must be finite");
  if (!(f_step > 0.0)) throw DomainError("f_step must be positive");
}

FrequencyGrid FrequencyGrid::spanning(double f_start, double f_stop, double f_step) {
  if (!(f_step > 0.0) || !(f_stop >= f_start))
    throw DomainError("invalid grid span");
  const auto n = static_cast<std::size_t>(std::floor((f_stop - f_start) / f_step + 1e-9)) + 1;
  return {f_start, f_step, n};
}

void Spectrum::validate(bool allow_negative) const {
  grid.validate();
  if (values.size() != grid.count)
    throw DomainError("spectrum values do not match grid size");
  if (n_averages < 1) throw DomainError("n_averages must be >= 1");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]))
      throw DomainError("non-finite spectrum value at bin " + std::to_string(i));
    if (!allow_negative && values[i] < 0.0)
      throw DomainError("negative spectrum value at bin " + std::to_string(i));
  }
}

Spectrum Spectrum::converted_to(SpectrumUnits target) const {
  if (target == units) return *this;
  if (units == SpectrumUnits::raw_volts2 || target == SpectrumUnits::raw_volts2)
    throw UnitMismatchError("raw spectra need a calibration tone before conversion");
  Spectrum out = *this;
  const double factor = target == SpectrumUnits::normalized_model ? kNormalizedPerHz2
                                                                    : 1.0 / kNormalizedPerHz2;
  for (double& v : out.values) v *= factor;
  out.units = target;
  return out;
}

void Spectrum::add_warning(const std::string& text) {
  auto& w = metadata["warnings"];
  if (!w.empty()) w += "; ";
  w += text;
}

DetectionConfig DetectionConfig::pdh(double kappa) {
  return {std::numbers::pi / 2.0, 0.0, kappa};
}

void DetectionConfig::validate() const {
  if (!(probe_kappa > 0.0)) throw DomainError("probe_kappa must be positive");
}

double BackgroundModel::operator()(double f_hz) const {
  const double hw = 0.5 * beat_width;
  const double x = f_hz - beat_center;
  return tail_offset + tail_amplitude * std::pow(f_hz, -tail_exponent) +
         beat_amplitude * hw * hw / (x * x + hw * hw);
}

void BackgroundModel::validate() const {
  if (!(tail_exponent > 0.0)) throw DomainError("tail_exponent must be positive");
  if (!(beat_width > 0.0)) throw DomainError("beat_width must be positive");
}

namespace {

complex probe_chi(double omega, const DetectionConfig& d) {
  return 1.0 / complex(d.probe_kappa / 2.0, -(omega + d.probe_detuning));
}

}  // namespace

complex detection_filter_c(double omega, const DetectionConfig& d) {
  const complex lo = std::polar(1.0, -d.theta_lo);
  const complex a = probe_chi(omega, d) * probe_chi(0.0, d) * lo;
  const complex b = std::conj(probe_chi(-omega, d)) * std::conj(probe_chi(0.0, d)) * std::conj(lo);
  return complex(0.0, d.probe_kappa * d.probe_kappa / 8.0) * (a - b);
}

complex amplitude_leak_d(double omega, const DetectionConfig& d) {
  const double hk = d.probe_kappa / 2.0;
  const complex lo = std::polar(1.0, -d.theta_lo);
  const complex a = (1.0 - hk * probe_chi(omega, d) - hk * probe_chi(0.0, d)) * lo;
  const complex b = (1.0 - hk * std::conj(probe_chi(-omega, d)) -
                     hk * std::conj(probe_chi(0.0, d))) * std::conj(lo);
  return a + b;
}

namespace {

double chi_eff_norm(double omega, double omega_eff, double gamma_eff) {
  const double x = omega - omega_eff;
  return 1.0 / (x * x + 0.25 * gamma_eff * gamma_eff);
}

}  // namespace

double lorentzian_shape(double omega, double omega_eff, double gamma_eff) {
  if (!(gamma_eff > 0.0)) throw DomainError("gamma_eff must be positive");
  return 0.5 * gamma_eff * (chi_eff_norm(omega, omega_eff, gamma_eff) +
                            chi_eff_norm(-omega, omega_eff, gamma_eff));
}

double dispersive_shape(double omega, double omega_eff, double gamma_eff) {
  if (!(gamma_eff > 0.0)) throw DomainError("gamma_eff must be positive");
  return (omega - omega_eff) * chi_eff_norm(omega, omega_eff, gamma_eff) +
         (-omega - omega_eff) * chi_eff_norm(-omega, omega_eff, gamma_eff);
}

double lineshape_value(double omega, double omega_center, double filter2,
                       const LineshapeCoeffs& c) {
  // One-sided: both shapes carry the factor 2 of the symmetrized spectrum.
  const double peak = c.a2 * lorentzian_shape(omega, c.omega_eff, c.gamma_eff) +
                      c.a3 * dispersive_shape(omega, c.omega_eff, c.gamma_eff);
  return c.a0 + c.a1 * (omega - omega_center) + filter2 * 2.0 * peak;
}

PeakSource peak_source(const MechMode& mode, const CavitySpec& cavity,
                       const DriveField& drive, const LaserNoise& noise) {
  PeakSource s;
  s.g0 = drive.g0;
  s.budget = effective_occupancy(mode, cavity, drive, noise);
  // theta only matters through n_exc_phase; it is undefined at zero damping.
  s.theta = s.budget.gamma_opt != 0.0 ? sideband_angle(cavity, mode.omega_m()) : 0.0;
  return s;
}

LineshapeCoeffs model_coefficients(const PeakSource& s) {
  const double g2 = s.g0 * s.g0;
  const double n_phase = s.budget.n_exc_phase;
  LineshapeCoeffs c;
  c.a2 = g2 * (2.0 * s.budget.n_eff + 1.0) -
         4.0 * g2 * n_phase * std::cos(s.theta) * std::cos(s.theta);
  c.a3 = 4.0 * g2 * n_phase * std::cos(s.theta) * std::sin(s.theta);
  c.omega_eff = s.budget.omega_eff;
  c.gamma_eff = s.budget.gamma_eff;
  return c;
}

namespace {

void append_warning(Spectrum& s, const std::string& text) { s.add_warning(text); }

double to_units(double hz2_value, SpectrumUnits units) {
  return units == SpectrumUnits::normalized_model ? hz2_value * kNormalizedPerHz2
                                                  : hz2_value;
}

}  // namespace

Spectrum output_psd(const FrequencyGrid& grid, const std::vector<PeakSource>& peaks,
                    const DetectionConfig& detection, const OutputOptions& options) {
  grid.validate();
  detection.validate();
  if (options.units == SpectrumUnits::raw_volts2)
    throw UnitMismatchError("model spectra are produced in calibrated units");
  if (options.background) options.background->validate();

  Spectrum out;
  out.grid = grid;
  out.units = options.units;
  out.values.assign(grid.count, 0.0);

  std::vector<LineshapeCoeffs> coeffs;
  for (const auto& p : peaks) {
    coeffs.push_back(model_coefficients(p));
    const double gamma_hz = rad_to_hz(p.budget.gamma_eff);
    if (gamma_hz < 10.0 * grid.f_step)
      append_warning(out, "fewer than 10 bins per gamma_eff");
  }

  const double unit_scale = options.units == SpectrumUnits::normalized_model
                                ? 1.0
                                : 1.0 / kNormalizedPerHz2;
  for (std::size_t i = 0; i < grid.count; ++i) {
    const double f = grid.frequency(i);
    const double omega = hz_to_rad(f);
    const double filter2 = std::norm(detection_filter_c(omega, detection));
    double v = 0.0;
    for (const auto& c : coeffs) v += lineshape_value(omega, 0.0, filter2, c);
    v *= unit_scale;
    v += to_units(options.vacuum_level, options.units);
    if (options.background) v += to_units((*options.background)(f), options.units);
    out.values[i] = v;
  }
  const auto negative = std::count_if(out.values.begin(), out.values.end(),
                                      [](double v) { return v < 0.0; });
  if (negative > 0)
    append_warning(out, std::to_string(negative) +
                            " bins negative: dispersive dip exceeds the constant level");
  if (options.tone) add_calibration_tone(out, *options.tone);
  return out;
}

Spectrum output_psd(const FrequencyGrid& grid, const MechMode& mode,
                    const CavitySpec& cavity, const DriveField& drive,
                    const LaserNoise& noise, const DetectionConfig& detection,
                    const OutputOptions& options) {
  const PeakSource src = peak_source(mode, cavity, drive, noise);
  Spectrum out = output_psd(grid, std::vector<PeakSource>{src}, detection, options);
  const double ge = src.budget.gamma_eff;
  if (ge > 0.1 * cavity.kappa || ge > 0.1 * mode.omega_m())
    append_warning(out, "weak-coupling approximation violated (gamma_eff not << kappa, omega_m)");
  return out;
}

void add_calibration_tone(Spectrum& spectrum, const CalibrationTone& tone) {
  if (spectrum.units == SpectrumUnits::raw_volts2)
    throw UnitMismatchError("tone power is defined in calibrated units");
  if (tone.frequency < spectrum.grid.f_start || tone.frequency > spectrum.grid.f_stop())
    throw DomainError("calibration tone outside the spectrum grid");
  const std::size_t i = spectrum.grid.index_of(tone.frequency);
  spectrum.values[i] += to_units(tone.power, spectrum.units) / spectrum.grid.f_step;
}

Spectrum evaluate_background(const BackgroundModel& model, const FrequencyGrid& grid) {
  model.validate();
  grid.validate();
  if (grid.f_start <= 0.0) throw DomainError("background needs positive frequencies");
  Spectrum out;
  out.grid = grid;
  out.units = SpectrumUnits::hz2_per_hz;
  out.values.resize(grid.count);
  for (std::size_t i = 0; i < grid.count; ++i) out.values[i] = model(grid.frequency(i));
  return out;
}

Spectrum synthesize_measured_spectrum(const Spectrum& model, int n_averages,
                                      std::mt19937_64& rng) {
  if (n_averages < 1) throw DomainError("n_averages must be >= 1");
  model.validate();
  // chi^2_{2M} / 2M is Gamma(shape M, scale 1/M)
  std::gamma_distribution<double> scatter(static_cast<double>(n_averages),
                                          1.0 / static_cast<double>(n_averages));
  Spectrum out = model;
  for (double& v : out.values) v *= scatter(rng);
  out.n_averages = n_averages;
  return out;
}

Spectrum synthesize_measured_spectrum(const Spectrum& model, int n_averages,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Spectrum out = synthesize_measured_spectrum(model, n_averages, rng);
  out.metadata["seed"] = std::to_string(seed);
  return out;
}

}  // namespace optocool
