#include <algorithm>
#include <cmath>

#include "optocool/errors.hpp"
#include "optocool/fit.hpp"

namespace optocool {

double PeakFitResult::sigma(PeakParam p) const {
  return std::sqrt(std::max(0.0, selected_covariance()(p, p)));
}

namespace {

Spectrum calibrated(const Spectrum& s) {
  if (s.units == SpectrumUnits::raw_volts2)
    throw UnitMismatchError("peak fits need a calibrated spectrum (hz2_per_hz or normalized_model)");
  return s.converted_to(SpectrumUnits::normalized_model);
}

std::vector<std::size_t> window_bins(const Spectrum& s, const FitWindow& window) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double f = s.frequency(i);
    if (f > 0.0 && window.contains(f)) idx.push_back(i);
  }
  return idx;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

LineshapeCoeffs peak_initial_guess(const Spectrum& spectrum, const FitWindow& window,
                                   const DetectionConfig& detection) {
  const Spectrum s = calibrated(spectrum);
  const auto idx = window_bins(s, window);
  if (idx.size() < 5) throw NoPeakError("no peak in window: too few bins");

  std::vector<double> y;
  y.reserve(idx.size());
  for (auto i : idx) y.push_back(s.values[i]);

  std::size_t top = 0;  // leftmost on ties
  for (std::size_t k = 1; k < y.size(); ++k)
    if (y[k] > y[top]) top = k;
  const double med = median(y);
  if (!(y[top] >= 3.0 * med) || y[top] <= 0.0) throw NoPeakError("no peak in window");

  const std::size_t edge = std::max<std::size_t>(2, y.size() / 10);
  std::vector<double> edges(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(edge));
  edges.insert(edges.end(), y.end() - static_cast<std::ptrdiff_t>(edge), y.end());

  LineshapeCoeffs c;
  c.a0 = median(edges);
  const double height = y[top] - c.a0;
  std::size_t left = top, right = top;
  while (left > 0 && y[left] - c.a0 > 0.5 * height) --left;
  while (right + 1 < y.size() && y[right] - c.a0 > 0.5 * height) ++right;
  const double fwhm_hz = std::max(static_cast<double>(right - left) - 1.0, 1.0) * s.grid.f_step;

  c.omega_eff = hz_to_rad(s.frequency(idx[top]));
  c.gamma_eff = hz_to_rad(fwhm_hz);
  const double filter2 = std::norm(detection_filter_c(c.omega_eff, detection));
  // Peak of 2 |C|^2 a2 L is 4 |C|^2 a2 / Gamma.
  c.a2 = height * c.gamma_eff / (4.0 * filter2);
  c.a1 = 0.0;
  c.a3 = 0.0;
  return c;
}

Measured effective_area(double a2, double a3, double theta, const Eigen::Matrix2d& cov) {
  const double t = std::tan(theta);
  if (a3 == 0.0 && cov(1, 1) == 0.0) return {a2, std::sqrt(std::max(cov(0, 0), 0.0))};
  if (std::abs(t) < 1e-15 || !std::isfinite(t))
    throw DomainError("a_eff undefined: tan(theta) = 0 with nonzero dispersive weight");
  const double value = a2 + a3 / t;
  const double var = cov(0, 0) + cov(1, 1) / (t * t) + 2.0 * cov(0, 1) / t;
  return {value, std::sqrt(std::max(var, 0.0))};
}

namespace {

struct WindowData {
  std::vector<double> omega;
  std::vector<double> filter2;
  std::vector<double> y;
  std::vector<double> w;
  double omega_center = 0.0;
};

LineshapeCoeffs to_coeffs(std::span<const double> p) {
  return {p[kA0], p[kA1], p[kA2], p[kA3], p[kOmegaEff], p[kGammaEff]};
}

PeakCovariance to_peak_cov(const Eigen::MatrixXd& m) {
  PeakCovariance c = m;
  return c;
}

}  // namespace

namespace {

// Weighted linear least squares for (a0, a1, a2, a3) at fixed (Omega, Gamma);
// a3 is held at zero when `dispersive` is false.
Eigen::Vector4d linear_coeffs(const WindowData& d, double omega_eff, double gamma_eff,
                              bool dispersive) {
  const Eigen::Index k = dispersive ? 4 : 3;
  Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd basis(k);
  for (std::size_t i = 0; i < d.y.size(); ++i) {
    basis(0) = 1.0;
    basis(1) = d.omega[i] - d.omega_center;
    basis(2) = 2.0 * d.filter2[i] * lorentzian_shape(d.omega[i], omega_eff, gamma_eff);
    if (dispersive) basis(3) = 2.0 * d.filter2[i] * dispersive_shape(d.omega[i], omega_eff, gamma_eff);
    normal += d.w[i] * basis * basis.transpose();
    rhs += d.w[i] * d.y[i] * basis;
  }
  // Column scaling keeps the solve well conditioned across unit systems.
  const Eigen::VectorXd sc = normal.diagonal().cwiseSqrt().cwiseMax(1e-300);
  const Eigen::MatrixXd ns = sc.cwiseInverse().asDiagonal() * normal * sc.cwiseInverse().asDiagonal();
  const Eigen::VectorXd x = sc.cwiseInverse().cwiseProduct(ns.ldlt().solve(sc.cwiseInverse().cwiseProduct(rhs)));
  Eigen::Vector4d out = Eigen::Vector4d::Zero();
  out.head(k) = x;
  return out;
}

// Variable projection over the two nonlinear parameters, then a full fit from
// there for the covariance. The projection removes the curved a2-Gamma-Omega
// valley that otherwise makes misspecified fits crawl.
FitResult fit_shape(const WindowData& d, const LineshapeCoeffs& start, bool dispersive,
                    const std::vector<double>& lower, const std::vector<double>& upper,
                    double level, double span, const FitOptions& solver) {
  FitProblem vp;
  vp.data = d.y;
  vp.weights = d.w;
  vp.initial = {start.omega_eff, start.gamma_eff};
  vp.lower = {lower[kOmegaEff], lower[kGammaEff]};
  vp.upper = {upper[kOmegaEff], upper[kGammaEff]};
  vp.scales = {std::abs(start.omega_eff), start.gamma_eff};
  vp.model = [&d, dispersive](std::span<const double> p, std::span<double> out) {
    const Eigen::Vector4d a = linear_coeffs(d, p[0], p[1], dispersive);
    const LineshapeCoeffs c{a(0), a(1), a(2), a(3), p[0], p[1]};
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = lineshape_value(d.omega[i], d.omega_center, d.filter2[i], c);
  };
  const FitResult reduced = nlls_fit(vp, solver);
  const Eigen::Vector4d a = linear_coeffs(d, reduced.params[0], reduced.params[1], dispersive);

  FitProblem fp;
  fp.data = d.y;
  fp.weights = d.w;
  fp.initial = {a(0), a(1), a(2), a(3), reduced.params[0], reduced.params[1]};
  const double area = std::max(std::abs(a(2)), std::abs(a(3)));
  fp.scales = {level, level / span, area, area, std::abs(reduced.params[0]), reduced.params[1]};
  fp.lower = lower;
  fp.upper = upper;
  if (!dispersive) fp.fixed = {false, false, false, true, false, false};
  fp.model = [&d](std::span<const double> p, std::span<double> out) {
    const LineshapeCoeffs c = to_coeffs(p);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = lineshape_value(d.omega[i], d.omega_center, d.filter2[i], c);
  };
  return nlls_fit(fp, solver);
}

}  // namespace

PeakFitResult fit_peak(const Spectrum& spectrum, const FitWindow& window,
                       const DetectionConfig& detection,
                       const std::optional<LineshapeCoeffs>& init,
                       const PeakFitOptions& options) {
  detection.validate();
  const Spectrum s = calibrated(spectrum);
  s.validate(/*allow_negative=*/true);
  const auto idx = window_bins(s, window);

  std::vector<double> weights;
  if (options.noise_reference) {
    const Spectrum ref = calibrated(*options.noise_reference);
    if (ref.size() != s.size()) throw DomainError("noise reference grid differs from spectrum");
    weights = bin_weights(ref);
  } else {
    weights = bin_weights(s);
  }

  std::vector<double> wy, ww;
  for (auto i : idx) {
    wy.push_back(s.values[i]);
    ww.push_back(weights[i]);
  }
  std::vector<bool> outliers(idx.size(), false);
  if (options.reject_outliers) outliers = outlier_mask(wy, ww);

  WindowData d;
  d.omega_center = hz_to_rad(0.5 * (window.f_low + window.f_high));
  std::size_t removed = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (outliers[k]) {
      ++removed;
      continue;
    }
    const double omega = hz_to_rad(s.frequency(idx[k]));
    d.omega.push_back(omega);
    d.filter2.push_back(std::norm(detection_filter_c(omega, detection)));
    d.y.push_back(wy[k]);
    d.w.push_back(ww[k]);
  }
  if (d.y.size() < 2 * kPeakParams) throw FitError("too few bins in peak window");

  const LineshapeCoeffs start = init ? *init : peak_initial_guess(s, window, detection);
  if (!(start.gamma_eff > 0.0)) throw DomainError("initial gamma_eff must be positive");

  const double level = std::max(std::abs(start.a0), 1.0 / std::sqrt(d.w[d.w.size() / 2]));
  const double span = hz_to_rad(window.f_high - window.f_low);
  const std::vector<double> lower = {-INFINITY, -INFINITY, -INFINITY, -INFINITY,
                                     hz_to_rad(window.f_low), hz_to_rad(0.1 * s.grid.f_step)};
  const std::vector<double> upper = {INFINITY, INFINITY, INFINITY, INFINITY,
                                     hz_to_rad(window.f_high), 2.0 * span};

  PeakFitResult r;
  r.window = window;
  r.omega_center = d.omega_center;
  r.bins_used = d.y.size();
  r.outliers_removed = removed;
  r.theta = options.theta;

  const FitResult joint = fit_shape(d, start, true, lower, upper, level, span, options.solver);
  r.coeffs = to_coeffs(joint.params);
  r.covariance = to_peak_cov(joint.covariance);
  r.chi2 = joint.chi2;
  r.reduced_chi2 = joint.reduced_chi2;

  const FitResult lor = fit_shape(d, r.coeffs, false, lower, upper, level, span, options.solver);
  r.lorentzian = to_coeffs(lor.params);
  r.lorentzian_covariance = to_peak_cov(lor.covariance);
  r.lorentzian_chi2 = lor.chi2;
  r.lorentzian_reduced_chi2 = lor.reduced_chi2;

  const double sigma_a3 = std::sqrt(std::max(r.covariance(kA3, kA3), 0.0));
  r.lorentzian_selected = options.select_model && std::abs(r.coeffs.a3) < sigma_a3;

  if (options.theta) {
    if (r.lorentzian_selected) {
      r.a_eff = Measured{r.lorentzian.a2, std::sqrt(std::max(r.lorentzian_covariance(kA2, kA2), 0.0))};
      r.cov_a_eff_gamma = r.lorentzian_covariance(kA2, kGammaEff);
    } else {
      Eigen::Matrix2d c;
      c << r.covariance(kA2, kA2), r.covariance(kA2, kA3), r.covariance(kA3, kA2),
          r.covariance(kA3, kA3);
      r.a_eff = effective_area(r.coeffs.a2, r.coeffs.a3, *options.theta, c);
      const double t = std::tan(*options.theta);
      r.cov_a_eff_gamma = r.covariance(kA2, kGammaEff) + r.covariance(kA3, kGammaEff) / t;
    }
  }
  return r;
}

CoolingPoint cooling_point(const PeakFitResult& fit) {
  if (!fit.a_eff) throw DomainError("peak fit has no a_eff (theta not supplied)");
  CoolingPoint p;
  p.gamma_eff = fit.selected().gamma_eff;
  p.sigma_gamma = fit.sigma(kGammaEff);
  p.a_eff = fit.a_eff->value;
  p.sigma_a_eff = fit.a_eff->sigma;
  p.cov_a_gamma = fit.cov_a_eff_gamma;
  p.a3 = fit.coeffs.a3;
  p.sigma_a3 = std::sqrt(std::max(fit.covariance(kA3, kA3), 0.0));
  return p;
}

}  // namespace optocool
