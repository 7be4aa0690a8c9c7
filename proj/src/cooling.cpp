#include <algorithm>
#include <cmath>

#include "optocool/errors.hpp"
#include "optocool/fit.hpp"

namespace optocool {

namespace {

// Relative error of sqrt(b1/b2) (and of sqrt(b2/b1)).
double half_log_ratio_sigma(double b1, double b2, const Eigen::Matrix2d& c) {
  const double v = c(0, 0) / (b1 * b1) + c(1, 1) / (b2 * b2) - 2.0 * c(0, 1) / (b1 * b2);
  return 0.5 * std::sqrt(std::max(v, 0.0));
}

}  // namespace

CoolingCurveResult fit_cooling_curve(std::span<const CoolingPoint> points, const MechMode& mode) {
  if (points.size() < 2) throw DomainError("cooling-curve fit needs at least two points");
  for (const auto& p : points) {
    if (!(p.gamma_eff > 0.0)) throw DomainError("gamma_eff must be positive");
    if (!(p.sigma_a_eff > 0.0)) throw DomainError("a_eff uncertainty must be positive");
  }

  // a = b1 u + b2 v, u = 1/Gamma, v = Gamma. The variance of each residual
  // includes the width error through the model slope (effective variance),
  // iterated to a fixed point.
  CoolingCurveResult r;
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  Eigen::Matrix2d normal;
  for (int pass = 0; pass < 6; ++pass) {
    normal.setZero();
    Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
    for (const auto& p : points) {
      double var = p.sigma_a_eff * p.sigma_a_eff;
      if (pass > 0) {
        const double slope = -b(0) / (p.gamma_eff * p.gamma_eff) + b(1);
        var += slope * slope * p.sigma_gamma * p.sigma_gamma - 2.0 * slope * p.cov_a_gamma;
        var = std::max(var, 0.25 * p.sigma_a_eff * p.sigma_a_eff);
      }
      const Eigen::Vector2d x(1.0 / p.gamma_eff, p.gamma_eff);
      normal += x * x.transpose() / var;
      rhs += x * p.a_eff / var;
    }
    // Columns differ by Gamma^2 in scale; solve in scaled form.
    const Eigen::Vector2d d = normal.diagonal().cwiseSqrt();
    const Eigen::Matrix2d scaled = d.cwiseInverse().asDiagonal() * normal * d.cwiseInverse().asDiagonal();
    if (std::abs(scaled.determinant()) < 1e-14)
      throw FitError("degenerate parameterization: widths do not separate b1 from b2");
    b = d.cwiseInverse().asDiagonal() * scaled.inverse() * d.cwiseInverse().asDiagonal() * rhs;
    r.covariance = d.cwiseInverse().asDiagonal() * scaled.inverse() * d.cwiseInverse().asDiagonal();
    r.chi2 = 0.0;
    for (const auto& p : points) {
      double var = p.sigma_a_eff * p.sigma_a_eff;
      if (pass > 0) {
        const double slope = -b(0) / (p.gamma_eff * p.gamma_eff) + b(1);
        var += slope * slope * p.sigma_gamma * p.sigma_gamma - 2.0 * slope * p.cov_a_gamma;
        var = std::max(var, 0.25 * p.sigma_a_eff * p.sigma_a_eff);
      }
      const double res = p.a_eff - (b(0) / p.gamma_eff + b(1) * p.gamma_eff);
      r.chi2 += res * res / var;
    }
  }
  r.b1 = b(0);
  r.b2 = b(1);
  r.dof = static_cast<int>(points.size()) - 2;
  r.reduced_chi2 = r.dof > 0 ? r.chi2 / r.dof : 0.0;

  if (!(r.b1 > 0.0) || !(r.b2 > 0.0))
    throw FitError("dataset inconsistent with model: non-positive b1 or b2",
                   std::vector<double>{r.b1, r.b2});

  const double n_th = thermal_occupation(mode);
  const double gm = mode.gamma_m();
  const double rel_b1 = std::sqrt(r.covariance(0, 0)) / r.b1;
  r.g0 = {std::sqrt(r.b1 / (2.0 * gm * n_th)), 0.0};
  r.g0.sigma = 0.5 * rel_b1 * r.g0.value;
  const double rel = half_log_ratio_sigma(r.b1, r.b2, r.covariance);
  r.gamma_min = {std::sqrt(r.b1 / r.b2), 0.0};
  r.gamma_min.sigma = rel * r.gamma_min.value;
  r.n_min = {2.0 * gm * n_th * std::sqrt(r.b2 / r.b1), 0.0};
  r.n_min.sigma = rel * r.n_min.value;

  for (const auto& p : points)
    if (p.gamma_eff < 10.0 * gm)
      r.warnings.push_back("point at gamma_eff=" + std::to_string(p.gamma_eff) +
                           " rad/s is below 10 gamma_m; gamma_opt ~ gamma_eff assumption weak");
  return r;
}

Measured fit_dispersive_slope(std::span<const CoolingPoint> points) {
  double sxx = 0.0, sxy = 0.0;
  for (const auto& p : points) {
    if (!(p.sigma_a3 > 0.0)) continue;
    const double w = 1.0 / (p.sigma_a3 * p.sigma_a3);
    sxx += w * p.gamma_eff * p.gamma_eff;
    sxy += w * p.gamma_eff * p.a3;
  }
  if (!(sxx > 0.0)) throw DomainError("no points with a dispersive-weight uncertainty");
  return {sxy / sxx, 1.0 / std::sqrt(sxx)};
}

std::string_view to_string(NoiseDominance d) {
  switch (d) {
    case NoiseDominance::phase: return "phase-dominated";
    case NoiseDominance::amplitude: return "amplitude-dominated";
    case NoiseDominance::mixed: return "mixed";
    case NoiseDominance::indeterminate: return "indeterminate";
  }
  return "indeterminate";
}

NoiseDominance dominance_from_string(std::string_view name) {
  if (name == "phase-dominated" || name == "phase") return NoiseDominance::phase;
  if (name == "amplitude-dominated" || name == "amplitude") return NoiseDominance::amplitude;
  if (name == "mixed") return NoiseDominance::mixed;
  if (name == "indeterminate") return NoiseDominance::indeterminate;
  throw DomainError("unknown noise dominance '" + std::string(name) + "'");
}

NoiseDiscrimination discriminate_noise(const Measured& b2, const Measured& slope, double theta) {
  constexpr double kCompatible = 3.0;   // sigmas
  constexpr double kMinSin2 = 0.05;     // dispersive term unresolvable below
  constexpr double kMaxFractionSigma = 0.5;

  NoiseDiscrimination out;
  const double s2 = std::sin(2.0 * theta);
  out.inverse_sin_2theta = std::abs(s2) > 0.0 ? 1.0 / s2 : INFINITY;
  if (slope.value != 0.0) {
    out.ratio.value = b2.value / slope.value;
    out.ratio.sigma = std::abs(out.ratio.value) *
                      std::hypot(b2.sigma / b2.value, slope.sigma / slope.value);
  } else {
    out.ratio = {INFINITY, INFINITY};
  }
  if (std::abs(s2) < kMinSin2 || !(b2.value > 0.0)) return out;

  const double f = slope.value / (b2.value * s2);
  const double sf = std::hypot(slope.sigma / (b2.value * s2),
                               slope.value * b2.sigma / (b2.value * b2.value * s2));
  out.phase_fraction = {f, sf};
  if (sf > kMaxFractionSigma) return out;

  if (std::abs(f - 1.0) <= kCompatible * sf || f > 1.0)
    out.dominance = NoiseDominance::phase;
  else if (f < 0.5)
    out.dominance = NoiseDominance::amplitude;
  else
    out.dominance = NoiseDominance::mixed;
  return out;
}

NoiseExtraction extract_noise_psd(const CoolingCurveResult& result, const MechMode& mode,
                                  const CavitySpec& cavity, const NoiseDiscrimination& disc) {
  const double wm = mode.omega_m();
  const double theta = sideband_angle(cavity, wm);
  const double cos2 = std::cos(theta) * std::cos(theta);
  const double a = amplitude_factor(cavity, wm);
  const double a2 = a * a;
  const double fm = rad_to_hz(wm);

  NoiseExtraction out;
  out.dominance = disc.dominance;
  // Inverting n_min with g0 from b1 collapses to S_eff = 2 b2 / Omega_m^2.
  out.s_eff = {2.0 * result.b2 / (wm * wm), 2.0 * std::sqrt(result.covariance(1, 1)) / (wm * wm)};

  const auto part = [&](double fraction, double sigma_fraction, double factor) {
    const double v = fraction * out.s_eff.value * factor;
    const double s = factor * std::hypot(fraction * out.s_eff.sigma, sigma_fraction * out.s_eff.value);
    return Measured{v, s};
  };
  const auto limit = [&](double fraction, double factor) {
    return Measured{std::clamp(fraction, 0.0, 1.0) * out.s_eff.value * factor, 0.0};
  };
  const double f = disc.phase_fraction.value;
  const double sf = disc.phase_fraction.sigma;

  switch (disc.dominance) {
    case NoiseDominance::phase:
      out.s_phi_phi = part(1.0, 0.0, cos2);
      out.s_eps_eps = limit(1.0 - f + 2.0 * sf, 1.0 / a2);
      out.amplitude_is_upper_limit = true;
      break;
    case NoiseDominance::amplitude:
      out.s_eps_eps = part(1.0, 0.0, 1.0 / a2);
      out.s_phi_phi = limit(f + 2.0 * sf, cos2);
      out.phase_is_upper_limit = true;
      break;
    case NoiseDominance::mixed:
      out.s_phi_phi = part(f, sf, cos2);
      out.s_eps_eps = part(1.0 - f, sf, 1.0 / a2);
      break;
    case NoiseDominance::indeterminate:
      out.s_phi_phi = limit(1.0, cos2);
      out.s_eps_eps = limit(1.0, 1.0 / a2);
      out.phase_is_upper_limit = true;
      out.amplitude_is_upper_limit = true;
      break;
  }
  out.s_nu_nu = {fm * fm * out.s_phi_phi.value, fm * fm * out.s_phi_phi.sigma};
  return out;
}

}  // namespace optocool
