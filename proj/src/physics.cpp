#include "optocool/physics.hpp"

#include <cmath>
#include <limits>

#include "optocool/errors.hpp"
#include "optocool/units.hpp"

namespace optocool {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw DomainError(std::string(what) + " must be finite");
}

// Relative floor below which the sideband asymmetry counts as zero.
constexpr double kDegenerate = 1e-13;

bool asymmetry_vanishes(const CavitySpec& cavity, double omega_m, double part) {
  return std::abs(part) <= kDegenerate * std::abs(chi_c(omega_m, cavity));
}

}  // namespace

void CavitySpec::validate() const {
  require_finite(kappa, "kappa");
  require_finite(detuning, "detuning");
  if (kappa <= 0.0) throw DomainError("kappa must be positive");
  if (cavity_length && !(*cavity_length > 0.0))
    throw DomainError("cavity_length must be positive");
  if (laser_frequency && !(*laser_frequency > 0.0))
    throw DomainError("laser_frequency must be positive");
}

MechMode::MechMode(double omega_m, double gamma_m, double temperature,
                   std::string label)
    : omega_m_(omega_m),
      gamma_m_(gamma_m),
      temperature_(temperature),
      label_(std::move(label)) {
  require_finite(omega_m, "omega_m");
  require_finite(gamma_m, "gamma_m");
  require_finite(temperature, "temperature");
  if (omega_m <= 0.0) throw DomainError("omega_m must be positive");
  if (gamma_m <= 0.0) throw DomainError("gamma_m must be positive");
  if (temperature < 0.0) throw DomainError("temperature must be >= 0");
}

MechMode MechMode::from_q(double omega_m, double q_factor, double temperature,
                          std::string label) {
  require_finite(q_factor, "q_factor");
  if (q_factor <= 0.0) throw DomainError("q_factor must be positive");
  return MechMode(omega_m, omega_m / q_factor, temperature, std::move(label));
}

MechMode MechMode::with_q(double q_factor) const {
  return from_q(omega_m_, q_factor, temperature_, label_);
}

void LaserNoise::validate() const {
  require_finite(s_phi_phi, "s_phi_phi");
  require_finite(s_eps_eps, "s_eps_eps");
  if (s_phi_phi < 0.0 || s_eps_eps < 0.0)
    throw DomainError("noise PSDs must be >= 0");
}

double thermal_occupation(const MechMode& mode) {
  return boltzmann * mode.temperature() / (hbar * mode.omega_m());
}

complex chi_m(double omega, const MechMode& mode) {
  return 1.0 / complex(mode.gamma_m() / 2.0, -(omega - mode.omega_m()));
}

complex chi_c(double omega, const CavitySpec& cavity) {
  if (!(cavity.kappa > 0.0)) throw DomainError("kappa must be positive");
  return 1.0 / complex(cavity.kappa / 2.0, -(omega + cavity.detuning));
}

complex intracavity_mean_field(const CavitySpec& cavity, double photon_flux) {
  require_finite(photon_flux, "photon flux");
  if (photon_flux < 0.0) throw DomainError("photon flux must be >= 0");
  return std::sqrt(cavity.kappa) * chi_c(0.0, cavity) * std::sqrt(photon_flux);
}

complex sideband_asymmetry(const CavitySpec& cavity, double omega_m) {
  return chi_c(omega_m, cavity) - std::conj(chi_c(-omega_m, cavity));
}

double photon_flux_for_damping(const CavitySpec& cavity, const MechMode& mode,
                               double g0, double gamma_opt) {
  require_finite(gamma_opt, "gamma_opt");
  if (gamma_opt == 0.0) return 0.0;
  if (g0 <= 0.0) throw DomainError("g0 must be positive");
  const double re = sideband_asymmetry(cavity, mode.omega_m()).real();
  const double cavity_gain = cavity.kappa * std::norm(chi_c(0.0, cavity));
  const double flux = gamma_opt / (2.0 * g0 * g0 * cavity_gain * re);
  if (!(flux > 0.0) || !std::isfinite(flux))
    throw DomainError("requested optical damping has the wrong sign for this detuning");
  return flux;
}

double photon_flux(const CavitySpec& cavity, const MechMode& mode,
                   const DriveField& drive) {
  if (const auto* f = std::get_if<PhotonFlux>(&drive.strength)) {
    require_finite(f->per_second, "photon flux");
    if (f->per_second < 0.0) throw DomainError("photon flux must be >= 0");
    return f->per_second;
  }
  return photon_flux_for_damping(cavity, mode, drive.g0,
                                 std::get<OpticalDamping>(drive.strength).rate);
}

double photon_flux_from_power(double power_w, double laser_frequency_hz) {
  if (power_w < 0.0) throw DomainError("power must be >= 0");
  if (!(laser_frequency_hz > 0.0)) throw DomainError("laser frequency must be positive");
  return power_w / (planck * laser_frequency_hz);
}

double optical_damping(const CavitySpec& cavity, const MechMode& mode,
                       const DriveField& drive) {
  if (const auto* d = std::get_if<OpticalDamping>(&drive.strength)) return d->rate;
  const double alpha2 = std::norm(intracavity_mean_field(
      cavity, std::get<PhotonFlux>(drive.strength).per_second));
  return 2.0 * drive.g0 * drive.g0 * alpha2 *
         sideband_asymmetry(cavity, mode.omega_m()).real();
}

double spring_shift(const CavitySpec& cavity, const MechMode& mode,
                    const DriveField& drive) {
  const double alpha2 =
      std::norm(intracavity_mean_field(cavity, photon_flux(cavity, mode, drive)));
  return mode.omega_m() + drive.g0 * drive.g0 * alpha2 *
                              sideband_asymmetry(cavity, mode.omega_m()).imag();
}

double sideband_angle(const CavitySpec& cavity, double omega_m) {
  const complex d = sideband_asymmetry(cavity, omega_m);
  if (asymmetry_vanishes(cavity, omega_m, std::abs(d)))
    throw DomainError("angle undefined at zero damping");
  return std::atan2(d.imag(), d.real());
}

double amplitude_factor(const CavitySpec& cavity, double omega_m) {
  const complex d = sideband_asymmetry(cavity, omega_m);
  if (asymmetry_vanishes(cavity, omega_m, d.real()))
    throw DomainError("factor undefined at zero damping");
  const complex c0 = chi_c(0.0, cavity);
  const complex sum = std::conj(c0) * chi_c(omega_m, cavity) +
                      c0 * std::conj(chi_c(-omega_m, cavity));
  return std::abs(sum) / (omega_m * std::norm(c0) * d.real());
}

double backaction_occupancy(const CavitySpec& cavity, double omega_m) {
  if (!(cavity.detuning < 0.0))
    throw DomainError("backaction occupancy undefined/negative for non-cooling detuning");
  const double hk2 = 0.25 * cavity.kappa * cavity.kappa;
  const double lower = hk2 + std::pow(cavity.detuning + omega_m, 2);
  // (Delta - Omega_m)^2 - (Delta + Omega_m)^2 taken exactly
  return lower / (-4.0 * cavity.detuning * omega_m);
}

ExcessOccupancy excess_occupancy_parts(double gamma_opt, double g0,
                                       double omega_m, double theta,
                                       double a_factor,
                                       const LaserNoise& noise) {
  noise.validate();
  if (!(gamma_opt > 0.0)) throw DomainError("gamma_opt must be positive");
  const double cos_t = std::cos(theta);
  if (std::abs(cos_t) < 1e-15) throw DomainError("phase-noise divergence at cos(theta)=0");
  const double scale = gamma_opt * omega_m * omega_m / (4.0 * g0 * g0);
  return {scale * noise.s_phi_phi / (cos_t * cos_t),
          scale * a_factor * a_factor * noise.s_eps_eps};
}

double excess_occupancy(double gamma_opt, double g0, double omega_m,
                        double theta, double a_factor, const LaserNoise& noise) {
  return excess_occupancy_parts(gamma_opt, g0, omega_m, theta, a_factor, noise)
      .total();
}

OccupancyBudget effective_occupancy(const MechMode& mode,
                                    const CavitySpec& cavity,
                                    const DriveField& drive,
                                    const LaserNoise& noise) {
  cavity.validate();
  noise.validate();
  OccupancyBudget b;
  b.n_th = thermal_occupation(mode);
  b.photon_flux = photon_flux(cavity, mode, drive);
  const DriveField by_flux{drive.g0, PhotonFlux{b.photon_flux}};
  b.gamma_opt = optical_damping(cavity, mode, by_flux);
  b.omega_eff = spring_shift(cavity, mode, by_flux);
  b.gamma_eff = mode.gamma_m() + b.gamma_opt;
  if (!(b.gamma_eff > 0.0))
    throw InstabilityError("mechanical instability: gamma_eff <= 0", b.gamma_eff);

  if (b.gamma_opt != 0.0) {
    b.n_ba = backaction_occupancy(cavity, mode.omega_m());
    const auto exc = excess_occupancy_parts(
        b.gamma_opt, drive.g0, mode.omega_m(),
        sideband_angle(cavity, mode.omega_m()),
        amplitude_factor(cavity, mode.omega_m()), noise);
    b.n_exc_phase = exc.phase;
    b.n_exc_amplitude = exc.amplitude;
    b.n_exc = exc.total();
  } else if (cavity.detuning < 0.0) {
    b.n_ba = backaction_occupancy(cavity, mode.omega_m());
  }
  b.n_eff = (mode.gamma_m() / b.gamma_eff) * b.n_th +
            (b.gamma_opt / b.gamma_eff) * (b.n_ba + b.n_exc);
  return b;
}

namespace {

double weighted_noise(const CavitySpec& cavity, double omega_m,
                      const LaserNoise& noise) {
  noise.validate();
  const double theta = sideband_angle(cavity, omega_m);
  const double cos_t = std::cos(theta);
  if (std::abs(cos_t) < 1e-15) throw DomainError("phase-noise divergence at cos(theta)=0");
  const double a = amplitude_factor(cavity, omega_m);
  return noise.s_phi_phi / (cos_t * cos_t) + a * a * noise.s_eps_eps;
}

}  // namespace

MinimumOccupancy min_occupancy(const MechMode& mode, const CavitySpec& cavity,
                               double g0, const LaserNoise& noise) {
  if (!(g0 > 0.0)) throw DomainError("g0 must be positive");
  const double s = weighted_noise(cavity, mode.omega_m(), noise);
  if (!(s > 0.0))
    throw DomainError("no finite optimum; occupancy limited by n_ba only");
  const double root = std::sqrt(mode.gamma_m() * thermal_occupation(mode));
  return {mode.omega_m() * root / g0 * std::sqrt(s),
          2.0 * g0 * root / mode.omega_m() / std::sqrt(s)};
}

double recast_occupancy(const MinimumOccupancy& minimum, double gamma_opt,
                        double n_ba) {
  const double x = gamma_opt / minimum.gamma_min;
  return 0.5 * minimum.n_min * (x + 1.0 / x) + n_ba;
}

RequiredQuality required_quality_factor(double target_n_min,
                                        const MechMode& mode,
                                        const CavitySpec& cavity, double g0,
                                        const LaserNoise& noise) {
  if (!(target_n_min > 0.0)) throw DomainError("target occupancy must be positive");
  const double current = min_occupancy(mode, cavity, g0, noise).n_min;
  if (target_n_min >= current) return {mode.q_factor(), true};
  const double ratio = current / target_n_min;
  return {mode.q_factor() * ratio * ratio, false};
}

double effective_temperature(double occupancy, double omega) {
  return occupancy * hbar * omega / boltzmann;
}

}  // namespace optocool
