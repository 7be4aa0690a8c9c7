#include <algorithm>
#include <cmath>

#include "optocool/errors.hpp"
#include "optocool/fit.hpp"

namespace optocool {

namespace {
void require_same_grid(const Spectrum& a, const Spectrum& b);
}

std::vector<double> bin_weights(const Spectrum& reference) {
  const std::size_t n = reference.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + reference.values[i];
  const double m = reference.n_averages;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= 5 ? i - 5 : 0;
    const std::size_t hi = std::min(n, i + 5);
    const double level = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
    if (!(level > 0.0))
      throw DomainError("noise reference must be positive to estimate bin variances");
    w[i] = m / (level * level);
  }
  return w;
}

std::vector<bool> outlier_mask(std::span<const double> values,
                               std::span<const double> weights, double n_sigma) {
  const std::size_t n = values.size();
  std::vector<bool> out(n, false);
  if (n < 3) return out;
  for (std::size_t i = 0; i < n; ++i) {
    double ref = 0.0;
    double spread = 0.0;  // variance of (x_i - ref) in units of sigma_i^2
    if (i == 0) {
      ref = values[1];
      spread = 2.0;
    } else if (i == n - 1) {
      ref = values[n - 2];
      spread = 2.0;
    } else {
      ref = 0.5 * (values[i - 1] + values[i + 1]);
      spread = 1.5;
    }
    const double sigma = std::sqrt(spread / weights[i]);
    out[i] = std::abs(values[i] - ref) > n_sigma * sigma;
  }
  return out;
}

namespace {

enum BgParam : int { kOffset = 0, kTailRef, kExponent, kBeatCenter, kBeatWidth, kBeatAmp, kBgParams };

struct Retained {
  std::vector<double> f;
  std::vector<double> y;
  std::vector<double> w;
};

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  const auto k = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

double eval(std::span<const double> q, double f, double f_ref) {
  const double hw = 0.5 * q[kBeatWidth];
  const double x = f - q[kBeatCenter];
  return q[kOffset] + q[kTailRef] * std::pow(f / f_ref, -q[kExponent]) +
         q[kBeatAmp] * hw * hw / (x * x + hw * hw);
}

FitResult run(const Retained& data, double f_ref, const std::vector<double>& init,
              const std::vector<bool>& fixed, const std::vector<double>& lower,
              const std::vector<double>& upper, const std::vector<double>& scales) {
  FitProblem fp;
  fp.data = data.y;
  fp.weights = data.w;
  fp.initial = init;
  fp.fixed = fixed;
  fp.lower = lower;
  fp.upper = upper;
  fp.scales = scales;
  fp.model = [&data, f_ref](std::span<const double> q, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = eval(q, data.f[i], f_ref);
  };
  return nlls_fit(fp);
}

// Tail-only fit, relaxing to fixed exponent and then a flat level when the
// data cannot constrain the power law.
FitResult fit_tail(const Retained& data, double f_ref, std::vector<double> init,
                   const std::vector<double>& lower, const std::vector<double>& upper,
                   const std::vector<double>& scales) {
  std::vector<bool> fixed = {false, false, false, true, true, true};
  try {
    return run(data, f_ref, init, fixed, lower, upper, scales);
  } catch (const FitError&) {
  }
  fixed[kExponent] = true;
  try {
    return run(data, f_ref, init, fixed, lower, upper, scales);
  } catch (const FitError&) {
  }
  fixed[kTailRef] = true;
  init[kTailRef] = 0.0;
  return run(data, f_ref, init, fixed, lower, upper, scales);
}

}  // namespace

BackgroundFit fit_background(const Spectrum& spectrum, std::span<const FitWindow> exclusions,
                             const BackgroundFitOptions& options) {
  spectrum.validate(/*allow_negative=*/true);
  if (options.noise_reference) {
    require_same_grid(spectrum, *options.noise_reference);
    if (options.noise_reference->units != spectrum.units)
      throw UnitMismatchError("noise reference units differ from the spectrum");
  }
  const auto weights = bin_weights(options.noise_reference ? *options.noise_reference : spectrum);
  std::vector<bool> outliers(spectrum.size(), false);
  if (options.reject_outliers) outliers = outlier_mask(spectrum.values, weights);

  Retained data;
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    const double f = spectrum.frequency(i);
    if (f <= 0.0 || outliers[i]) continue;
    if (std::any_of(exclusions.begin(), exclusions.end(),
                    [f](const FitWindow& w) { return w.contains(f); }))
      continue;
    data.f.push_back(f);
    data.y.push_back(spectrum.values[i]);
    data.w.push_back(weights[i]);
  }
  const std::size_t n = data.f.size();
  if (n < 24) throw FitError("insufficient retained bins for background fit");

  const double f_lo = data.f.front();
  const double f_hi = data.f.back();
  const double f_ref = std::sqrt(f_lo * f_hi);

  std::vector<double> upper_half(data.y.begin() + static_cast<std::ptrdiff_t>(n / 2), data.y.end());
  const double level = quantile(upper_half, 0.2);
  std::vector<double> near_ref;
  for (std::size_t i = 0; i < n; ++i)
    if (std::abs(std::log(data.f[i] / f_ref)) < 0.05) near_ref.push_back(data.y[i]);
  if (near_ref.empty()) near_ref.push_back(data.y[n / 2]);
  const double tail_ref = std::max(quantile(near_ref, 0.5) - level, 1e-3 * std::abs(level));

  const double scale = std::max(std::abs(level), quantile(data.y, 0.5));
  const double df = spectrum.grid.f_step;
  std::vector<double> init = {level, tail_ref, 2.0, 0.5 * (f_lo + f_hi), 10.0 * df, 0.0};
  const std::vector<double> lower = {-INFINITY, 0.0, 0.01, spectrum.grid.f_start, 0.5 * df, 0.0};
  const std::vector<double> upper = {INFINITY, INFINITY, 10.0, spectrum.grid.f_stop(),
                                     spectrum.grid.f_stop() - spectrum.grid.f_start, INFINITY};
  std::vector<double> scales = {scale, scale, 1.0, f_hi, 10.0 * df, scale};

  FitResult fit = fit_tail(data, f_ref, init, lower, upper, scales);
  bool has_beat = false;

  if (options.beat != BeatNote::never) {
    // Matched-filter search of the tail residual for a beat note.
    constexpr std::size_t k = 25;
    std::vector<double> resid(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
      resid[i] = data.y[i] - eval(fit.params, data.f[i], f_ref);
      z[i] = resid[i] * std::sqrt(data.w[i]);
    }
    double best = -INFINITY;
    std::size_t at = 0;
    double run_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      run_sum += z[i];
      if (i >= k) run_sum -= z[i - k];
      if (i + 1 >= k && run_sum / std::sqrt(double(k)) > best) {
        best = run_sum / std::sqrt(double(k));
        at = i + 1 - k / 2 - 1;
      }
    }
    if (options.beat == BeatNote::always || best > 8.0) {
      std::vector<double> b = fit.params;
      const std::size_t lo = at >= 2 ? at - 2 : 0;
      const std::size_t hi = std::min(n - 1, at + 2);
      double amp = 0.0;
      for (std::size_t i = lo; i <= hi; ++i) amp += resid[i];
      amp /= static_cast<double>(hi - lo + 1);
      // Half-maximum crossing of a lightly smoothed residual.
      auto smooth = [&](std::size_t i) {
        const std::size_t a = i >= 2 ? i - 2 : 0;
        const std::size_t c = std::min(n - 1, i + 2);
        double s = 0.0;
        for (std::size_t j = a; j <= c; ++j) s += resid[j];
        return s / static_cast<double>(c - a + 1);
      };
      std::size_t left = at, right = at;
      while (left > 0 && smooth(left) > 0.5 * amp) --left;
      while (right + 1 < n && smooth(right) > 0.5 * amp) ++right;
      b[kBeatCenter] = data.f[at];
      b[kBeatWidth] = std::max(data.f[right] - data.f[left], 2.0 * df);
      b[kBeatAmp] = std::max(amp, 0.0);
      scales[kBeatCenter] = data.f[at];
      scales[kBeatWidth] = b[kBeatWidth];
      std::vector<bool> fixed = {false, fit.covariance(kTailRef, kTailRef) == 0.0 && fit.params[kTailRef] == 0.0,
                                 fit.covariance(kExponent, kExponent) == 0.0,
                                 false, false, false};
      fit = run(data, f_ref, b, fixed, lower, upper, scales);
      has_beat = true;
    }
  }

  const auto& q = fit.params;
  BackgroundFit out;
  out.units = spectrum.units;
  out.has_beat = has_beat;
  out.reduced_chi2 = fit.reduced_chi2;
  out.bins_used = n;
  out.model.tail_offset = q[kOffset];
  out.model.tail_exponent = q[kExponent];
  out.model.tail_amplitude = q[kTailRef] * std::pow(f_ref, q[kExponent]);
  out.model.beat_center = has_beat ? q[kBeatCenter] : 0.0;
  out.model.beat_width = has_beat ? q[kBeatWidth] : 1.0;
  out.model.beat_amplitude = has_beat ? q[kBeatAmp] : 0.0;

  const auto& c = fit.covariance;
  out.sigma.tail_offset = fit.sigma(kOffset);
  out.sigma.tail_exponent = fit.sigma(kExponent);
  {
    const double d_ref = std::pow(f_ref, q[kExponent]);
    const double d_exp = out.model.tail_amplitude * std::log(f_ref);
    const double var = d_ref * d_ref * c(kTailRef, kTailRef) + d_exp * d_exp * c(kExponent, kExponent) +
                       2.0 * d_ref * d_exp * c(kTailRef, kExponent);
    out.sigma.tail_amplitude = std::sqrt(std::max(var, 0.0));
  }
  out.sigma.beat_center = fit.sigma(kBeatCenter);
  out.sigma.beat_width = fit.sigma(kBeatWidth);
  out.sigma.beat_amplitude = fit.sigma(kBeatAmp);
  return out;
}

namespace {

void require_same_grid(const Spectrum& a, const Spectrum& b) {
  const auto close = [](double x, double y) {
    return std::abs(x - y) <= 1e-12 * std::max({std::abs(x), std::abs(y), 1.0});
  };
  if (a.size() != b.size() || !close(a.grid.f_start, b.grid.f_start) ||
      !close(a.grid.f_step, b.grid.f_step))
    throw DomainError("spectrum grids do not match");
}

}  // namespace

Spectrum subtract_background(const Spectrum& spectrum, const Spectrum& background) {
  require_same_grid(spectrum, background);
  if (spectrum.units != background.units)
    throw UnitMismatchError("background units " + std::string(to_string(background.units)) +
                            " differ from spectrum units " +
                            std::string(to_string(spectrum.units)));
  Spectrum out = spectrum;
  std::size_t negative = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values[i] -= background.values[i];
    if (out.values[i] < 0.0) ++negative;
  }
  out.metadata["background_subtracted"] = "true";
  out.metadata["negative_bins"] = std::to_string(negative);
  return out;
}

Spectrum subtract_background(const Spectrum& spectrum, const BackgroundFit& background) {
  Spectrum model = spectrum;
  model.units = background.units;
  for (std::size_t i = 0; i < model.size(); ++i)
    model.values[i] = background.model(spectrum.frequency(i));
  return subtract_background(spectrum, model);
}

}  // namespace optocool
