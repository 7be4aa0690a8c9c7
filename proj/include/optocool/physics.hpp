#pragma once

// Closed-form optomechanics of a single mechanical mode coupled to a driven
// cavity in the weak-coupling, rotating-wave regime. All rates are angular
// (rad/s); conversion from Hz happens at the I/O boundary.

#include <complex>
#include <optional>
#include <string>
#include <variant>

namespace optocool {

using complex = std::complex<double>;

struct CavitySpec {
  double kappa = 0.0;     // energy decay rate
  double detuning = 0.0;  // laser minus cavity, negative is red
  std::optional<double> cavity_length;          // m
  std::optional<double> laser_frequency;        // Hz
  std::optional<double> input_transmission_ppm;

  void validate() const;
};

class MechMode {
 public:
  MechMode() = default;
  MechMode(double omega_m, double gamma_m, double temperature,
           std::string label = {});
  static MechMode from_q(double omega_m, double q_factor, double temperature,
                         std::string label = {});

  double omega_m() const { return omega_m_; }
  double gamma_m() const { return gamma_m_; }
  double q_factor() const { return omega_m_ / gamma_m_; }
  double temperature() const { return temperature_; }
  const std::string& label() const { return label_; }

  MechMode with_q(double q_factor) const;

 private:
  double omega_m_ = 1.0;
  double gamma_m_ = 1.0;
  double temperature_ = 0.0;
  std::string label_;
};

struct PhotonFlux {
  double per_second = 0.0;  // |alpha_0|^2
};

struct OpticalDamping {
  double rate = 0.0;  // Gamma_opt, rad/s
};

// Drive strength is given either as input photon flux or directly as the
// optical damping it produces; the other quantity is derived in closed form.
struct DriveField {
  double g0 = 0.0;
  std::variant<PhotonFlux, OpticalDamping> strength;
};

// One-sided, white near the mechanical frequency.
struct LaserNoise {
  double s_phi_phi = 0.0;  // rad^2/Hz
  double s_eps_eps = 0.0;  // 1/Hz

  void validate() const;
};

struct OccupancyBudget {
  double n_th = 0.0;
  double n_ba = 0.0;
  double n_exc = 0.0;
  double n_exc_phase = 0.0;
  double n_exc_amplitude = 0.0;
  double n_eff = 0.0;
  double gamma_opt = 0.0;
  double gamma_eff = 0.0;
  double omega_eff = 0.0;
  double photon_flux = 0.0;
};

struct ExcessOccupancy {
  double phase = 0.0;
  double amplitude = 0.0;
  double total() const { return phase + amplitude; }
};

struct MinimumOccupancy {
  double n_min = 0.0;
  double gamma_min = 0.0;
};

struct RequiredQuality {
  double q_factor = 0.0;
  bool no_op = false;  // target already met at the current Q
};

/// Bath occupation k_B T / (hbar Omega_m).
double thermal_occupation(const MechMode& mode);

complex chi_m(double omega, const MechMode& mode);
complex chi_c(double omega, const CavitySpec& cavity);

/// alpha = sqrt(kappa) chi_c(0) sqrt(flux). Throws DomainError on negative flux.
complex intracavity_mean_field(const CavitySpec& cavity, double photon_flux);

/// chi_c(Omega_m) - conj(chi_c(-Omega_m)): the Stokes/anti-Stokes asymmetry
/// that sets both damping (real part) and spring (imaginary part).
complex sideband_asymmetry(const CavitySpec& cavity, double omega_m);

double photon_flux(const CavitySpec& cavity, const MechMode& mode,
                   const DriveField& drive);

/// Flux that produces the requested optical damping. Throws DomainError when
/// the detuning cannot produce damping of that sign.
double photon_flux_for_damping(const CavitySpec& cavity, const MechMode& mode,
                               double g0, double gamma_opt);

/// Photon flux |alpha_0|^2 = P / (h nu_L).
double photon_flux_from_power(double power_w, double laser_frequency_hz);

double optical_damping(const CavitySpec& cavity, const MechMode& mode,
                       const DriveField& drive);

/// Spring-shifted resonance Omega_eff.
double spring_shift(const CavitySpec& cavity, const MechMode& mode,
                    const DriveField& drive);

/// theta = arg of the sideband asymmetry, in (-pi, pi].
double sideband_angle(const CavitySpec& cavity, double omega_m);

/// Amplitude-noise transduction factor A; A -> 1 deep in the resolved
/// sideband regime at Delta = -Omega_m.
double amplitude_factor(const CavitySpec& cavity, double omega_m);

/// Quantum backaction floor. Only defined for red detuning.
double backaction_occupancy(const CavitySpec& cavity, double omega_m);

ExcessOccupancy excess_occupancy_parts(double gamma_opt, double g0,
                                       double omega_m, double theta,
                                       double a_factor,
                                       const LaserNoise& noise);

double excess_occupancy(double gamma_opt, double g0, double omega_m,
                        double theta, double a_factor, const LaserNoise& noise);

/// Full steady-state budget. Throws InstabilityError when Gamma_eff <= 0.
OccupancyBudget effective_occupancy(const MechMode& mode,
                                    const CavitySpec& cavity,
                                    const DriveField& drive,
                                    const LaserNoise& noise);

/// Noise-limited optimum over drive power, ignoring backaction.
MinimumOccupancy min_occupancy(const MechMode& mode, const CavitySpec& cavity,
                               double g0, const LaserNoise& noise);

/// 0.5 n_min (x + 1/x) + n_ba with x = Gamma_opt / Gamma_min.
double recast_occupancy(const MinimumOccupancy& minimum, double gamma_opt,
                        double n_ba);

RequiredQuality required_quality_factor(double target_n_min,
                                        const MechMode& mode,
                                        const CavitySpec& cavity, double g0,
                                        const LaserNoise& noise);

/// T_eff = n hbar Omega / k_B.
double effective_temperature(double occupancy, double omega);

}  // namespace optocool
