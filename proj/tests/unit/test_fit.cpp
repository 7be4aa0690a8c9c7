#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "optocool/errors.hpp"
#include "optocool/fit.hpp"

using namespace optocool;
using fixtures::khz;
using fixtures::rel_diff;

namespace {

FitProblem lorentz_problem(const std::vector<double>& x, const std::vector<double>& y,
                           const std::vector<double>& w, std::vector<double> init) {
  FitProblem fp;
  fp.data = y;
  fp.weights = w;
  fp.initial = std::move(init);
  fp.model = [x](std::span<const double> p, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double d = x[i] - p[1];
      out[i] = p[3] + p[0] * p[2] * p[2] / (d * d + p[2] * p[2]);
    }
  };
  return fp;
}

struct ReferencePeak {
  PeakSource source;
  Spectrum model;  // hz2_per_hz, noiseless
  FitWindow window;
  DetectionConfig detection = DetectionConfig::pdh(khz(204));
};

ReferencePeak reference_peak(double gamma_eff_khz, const LaserNoise& noise, double vacuum = 2e-2) {
  const auto m = fixtures::mode01();
  const DriveField drive{hz_to_rad(2.1), OpticalDamping{khz(gamma_eff_khz) - m.gamma_m()}};
  ReferencePeak p;
  p.source = peak_source(m, fixtures::cavity(-480), drive, noise);
  const double we = rad_to_hz(p.source.budget.omega_eff);
  const double ge = gamma_eff_khz * 1e3;
  p.window = FitWindow::around(we, 10.0 * ge);
  const auto grid = FrequencyGrid::spanning(we - 12.0 * ge, we + 12.0 * ge, ge / 20.0);
  OutputOptions opt;
  opt.units = SpectrumUnits::hz2_per_hz;
  opt.vacuum_level = vacuum;
  p.model = output_psd(grid, {p.source}, p.detection, opt);
  return p;
}

}  // namespace

TEST_CASE("nlls: exact data at the truth") {
  std::vector<double> x, y, w;
  for (int i = 0; i < 200; ++i) {
    x.push_back(i * 0.1);
    const double d = x.back() - 10.0;
    y.push_back(0.5 + 3.0 * 4.0 / (d * d + 4.0));
    w.push_back(1.0);
  }
  const auto r = nlls_fit(lorentz_problem(x, y, w, {3.0, 10.0, 2.0, 0.5}));
  CHECK(r.params[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(r.reduced_chi2 < 1e-20);
  const auto r2 = nlls_fit(lorentz_problem(x, y, w, {2.0, 9.5, 1.0, 0.0}));
  CHECK(r2.params[1] == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(r2.params[2] == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("nlls: linear model matches weighted normal equations") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  std::vector<double> x, y, w;
  for (int i = 0; i < 50; ++i) {
    x.push_back(i);
    w.push_back(1.0 + (i % 7));
    y.push_back(2.0 * i - 3.0 + z(rng) / std::sqrt(w.back()));
  }
  FitProblem fp;
  fp.data = y;
  fp.weights = w;
  fp.initial = {1.0, 0.0};
  fp.model = [&x](std::span<const double> p, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[0] * x[i] + p[1];
  };
  const auto r = nlls_fit(fp);
  double s = 0, sx = 0, sxx = 0, sy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += w[i]; sx += w[i] * x[i]; sxx += w[i] * x[i] * x[i];
    sy += w[i] * y[i]; sxy += w[i] * x[i] * y[i];
  }
  const double det = s * sxx - sx * sx;
  const double a = (s * sxy - sx * sy) / det, b = (sxx * sy - sx * sxy) / det;
  CHECK(r.params[0] == doctest::Approx(a).epsilon(1e-10));
  CHECK(r.params[1] == doctest::Approx(b).epsilon(1e-10));
  const double chi2 = r.chi2;
  CHECK(r.covariance(0, 0) == doctest::Approx(s / det * chi2 / 48.0).epsilon(1e-6));
  CHECK(r.covariance(1, 1) == doctest::Approx(sxx / det * chi2 / 48.0).epsilon(1e-6));
}

TEST_CASE("nlls: argmin invariant under rescaling data and weights") {
  std::mt19937_64 rng(2);
  std::gamma_distribution<double> g(100.0, 0.01);
  std::vector<double> x, y, w;
  for (int i = 0; i < 300; ++i) {
    x.push_back(i * 0.1);
    const double d = x.back() - 15.0;
    y.push_back((0.5 + 3.0 * 4.0 / (d * d + 4.0)) * g(rng));
    w.push_back(100.0 / (y.back() * y.back()));
  }
  const auto r1 = nlls_fit(lorentz_problem(x, y, w, {2.0, 14.5, 1.5, 0.4}));
  auto y2 = y;
  auto w2 = w;
  for (auto& v : y2) v *= 1e6;
  for (auto& v : w2) v *= 1e-12;
  const auto r2 = nlls_fit(lorentz_problem(x, y2, w2, {2e6, 14.5, 1.5, 0.4e6}));
  CHECK(r2.params[0] / 1e6 == doctest::Approx(r1.params[0]).epsilon(1e-7));
  CHECK(r2.params[1] == doctest::Approx(r1.params[1]).epsilon(1e-9));
  CHECK(r2.params[2] == doctest::Approx(r1.params[2]).epsilon(1e-7));
}

TEST_CASE("nlls: errors") {
  std::vector<double> x = {0, 1, 2, 3}, y = {1, 2, 3, 4}, w = {1, 1, 1, 1};
  FitProblem fp;
  fp.data = y;
  fp.weights = w;
  fp.initial = {1.0, 1.0};
  // Two parameters entering only as a product: singular.
  fp.model = [&x](std::span<const double> p, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[0] * p[1] * x[i];
  };
  CHECK_THROWS_WITH_AS(nlls_fit(fp), doctest::Contains("degenerate parameterization"), FitError);

  fp.initial = {1.0, 1.0, 1.0};
  CHECK_THROWS_AS(nlls_fit(fp), DomainError);  // fewer than 2 points per parameter

  FitProblem slow = lorentz_problem({0, 1, 2, 3, 4, 5, 6, 7, 8, 9},
                                    {1, 2, 5, 9, 5, 2, 1, 1, 1, 1}, std::vector<double>(10, 1.0),
                                    {1.0, 1.0, 1.0, 0.0});
  FitOptions one;
  one.max_iterations = 1;
  try {
    nlls_fit(slow, one);
    FAIL("expected non-convergence");
  } catch (const FitError& e) {
    CHECK(e.best_params().size() == 4);
  }
  fp.initial = {1.0, NAN};
  CHECK_THROWS_AS(nlls_fit(fp), DomainError);
}

TEST_CASE("nlls: Monte-Carlo coverage and pulls on a noisy Lorentzian") {
  constexpr int kTrials = 500;
  constexpr int kM = 100;
  std::vector<double> x, truth_y;
  const std::vector<double> truth = {3.0, 15.0, 1.0, 0.5};
  for (int i = 0; i < 300; ++i) {
    x.push_back(i * 0.1);
    const double d = x.back() - truth[1];
    truth_y.push_back(truth[3] + truth[0] * truth[2] * truth[2] / (d * d + truth[2] * truth[2]));
  }
  std::mt19937_64 rng(2024);
  std::gamma_distribution<double> g(kM, 1.0 / kM);
  int inside = 0, total = 0;
  std::vector<double> sum(4, 0.0), sum2(4, 0.0);
  for (int t = 0; t < kTrials; ++t) {
    std::vector<double> y(x.size()), w(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      y[i] = truth_y[i] * g(rng);
      w[i] = kM / (truth_y[i] * truth_y[i]);
    }
    const auto r = nlls_fit(lorentz_problem(x, y, w, {2.5, 14.8, 1.2, 0.45}));
    for (int k = 0; k < 4; ++k) {
      const double z = (r.params[k] - truth[k]) / r.sigma(k);
      inside += std::abs(z) < 3.0;
      ++total;
      sum[k] += z;
      sum2[k] += z * z;
    }
  }
  CHECK(double(inside) / total >= 0.99);
  for (int k = 0; k < 4; ++k) {
    const double mean = sum[k] / kTrials;
    const double sd = std::sqrt(sum2[k] / kTrials - mean * mean);
    CHECK(std::abs(mean) < 0.1);
    CHECK(sd >= 0.85);
    CHECK(sd <= 1.15);
  }
}

TEST_CASE("effective area") {
  Eigen::Matrix2d c;
  c << 0.04, 0.0, 0.0, 0.0;
  CHECK(effective_area(1.5, 0.0, 0.3, c).value == 1.5);
  CHECK(effective_area(1.5, 0.0, 0.3, c).sigma == doctest::Approx(0.2));
  c << 0.01, 0.002, 0.002, 0.09;
  const auto r = effective_area(1.0, 1.0, std::numbers::pi / 4, c);
  CHECK(r.value == doctest::Approx(2.0));
  CHECK(r.sigma == doctest::Approx(std::sqrt(0.01 + 0.09 + 2 * 0.002)));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 1.4);
  for (int i = 0; i < 100; ++i) {
    const double a2 = u(rng), a3 = u(rng) - 0.7, th = u(rng);
    CHECK(effective_area(a2, a3, th, c).value == doctest::Approx(a2 + a3 * std::cos(th) / std::sin(th)));
  }
  CHECK_THROWS_AS(effective_area(1.0, 1.0, 0.0, c), DomainError);
}

TEST_CASE("peak initial guess") {
  const auto p = reference_peak(2.7, {});
  const auto s = p.model;
  const auto guess = peak_initial_guess(s, p.window, p.detection);
  CHECK(std::abs(rad_to_hz(guess.omega_eff - p.source.budget.omega_eff)) <= s.grid.f_step);
  CHECK(guess.gamma_eff == doctest::Approx(p.source.budget.gamma_eff).epsilon(0.2));
  CHECK(guess.a3 == 0.0);

  Spectrum flat = s;
  std::fill(flat.values.begin(), flat.values.end(), 1.0);
  CHECK_THROWS_WITH_AS(peak_initial_guess(flat, p.window, p.detection),
                       doctest::Contains("no peak in window"), NoPeakError);

  // Two peaks: the taller wins.
  Spectrum two = flat;
  two.values[100] = 50.0;
  two.values[300] = 80.0;
  const auto g2 = peak_initial_guess(two, FitWindow{s.frequency(50), s.frequency(400)}, p.detection);
  CHECK(rad_to_hz(g2.omega_eff) == doctest::Approx(s.frequency(300)));
  two.values[100] = 80.0;
  const auto g3 = peak_initial_guess(two, FitWindow{s.frequency(50), s.frequency(400)}, p.detection);
  CHECK(rad_to_hz(g3.omega_eff) == doctest::Approx(s.frequency(100)));

  Spectrum raw = s;
  raw.units = SpectrumUnits::raw_volts2;
  CHECK_THROWS_AS(peak_initial_guess(raw, p.window, p.detection), UnitMismatchError);
}

TEST_CASE("thermometry identity on noiseless spectra") {
  const LaserNoise noise{2.2e-2 / (256e3 * 256e3), 0.0};
  for (double ge : {1.2, 2.7, 9.0}) {
    const auto p = reference_peak(ge, noise);
    PeakFitOptions opt;
    opt.theta = p.source.theta;
    opt.select_model = false;
    opt.reject_outliers = false;
    const auto r = fit_peak(p.model, p.window, p.detection, std::nullopt, opt);
    const double truth = p.source.g0 * p.source.g0 * (2.0 * p.source.budget.n_eff + 1.0);
    INFO("gamma_eff/2pi = " << ge << " kHz");
    CHECK(rel_diff(r.a_eff->value, truth) < 1e-4);
    CHECK(rel_diff(r.coeffs.gamma_eff, p.source.budget.gamma_eff) < 1e-5);
    CHECK(rel_diff(r.coeffs.omega_eff, p.source.budget.omega_eff) < 1e-8);
  }
}

TEST_CASE("peak fit with chi-squared noise") {
  const LaserNoise noise{2.2e-2 / (256e3 * 256e3), 0.0};
  SUBCASE("low power: dispersive weight consistent with zero") {
    const auto p = reference_peak(1.2, LaserNoise{});
    int ok = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto s = synthesize_measured_spectrum(p.model, 200, seed);
      PeakFitOptions opt;
      opt.theta = p.source.theta;
      const auto r = fit_peak(s, p.window, p.detection, std::nullopt, opt);
      ok += std::abs(r.coeffs.a3) < 2.0 * std::sqrt(r.covariance(kA3, kA3));
    }
    CHECK(ok >= 17);
  }
  SUBCASE("high power: the dispersive term is needed") {
    const auto p = reference_peak(9.0, noise);
    double dchi = 0.0;
    const int trials = 40;
    for (int seed = 0; seed < trials; ++seed) {
      const auto s = synthesize_measured_spectrum(p.model, 200, std::uint64_t(100 + seed));
      PeakFitOptions opt;
      opt.theta = p.source.theta;
      const auto r = fit_peak(s, p.window, p.detection, std::nullopt, opt);
      CHECK_FALSE(r.lorentzian_selected);
      dchi += r.lorentzian_chi2 - r.chi2;
      // The nested model: Lorentzian-only is the joint fit with a3 pinned.
      CHECK(r.lorentzian.a3 == 0.0);
      CHECK(r.lorentzian_chi2 >= r.chi2);
    }
    // Far more than the ~1 per trial expected if a3 were spurious.
    CHECK(dchi / trials > 25.0);
  }
  SUBCASE("closure within three sigma") {
    const auto p = reference_peak(2.7, noise);
    const double truth_a = p.source.g0 * p.source.g0 * (2.0 * p.source.budget.n_eff + 1.0);
    int ok = 0, n = 0;
    for (int seed = 0; seed < 60; ++seed) {
      const auto s = synthesize_measured_spectrum(p.model, 100, std::uint64_t(500 + seed));
      PeakFitOptions opt;
      opt.theta = p.source.theta;
      opt.select_model = false;
      const auto r = fit_peak(s, p.window, p.detection, std::nullopt, opt);
      ok += std::abs(r.a_eff->value - truth_a) < 3.0 * r.a_eff->sigma;
      ok += std::abs(r.coeffs.gamma_eff - p.source.budget.gamma_eff) < 3.0 * r.sigma(kGammaEff);
      ok += std::abs(r.coeffs.omega_eff - p.source.budget.omega_eff) < 3.0 * r.sigma(kOmegaEff);
      n += 3;
    }
    CHECK(double(ok) / n >= 0.97);
  }
}

TEST_CASE("peak fit rejects spurious bins and raw units") {
  const auto p = reference_peak(2.7, {});
  auto s = synthesize_measured_spectrum(p.model, 200, std::uint64_t{3});
  const std::size_t spike = s.grid.index_of(rad_to_hz(p.source.budget.omega_eff) + 4e3 * 2.7);
  s.values[spike] *= 40.0;
  PeakFitOptions opt;
  opt.theta = p.source.theta;
  const auto r = fit_peak(s, p.window, p.detection, std::nullopt, opt);
  CHECK(r.outliers_removed >= 1);
  auto raw = s;
  raw.units = SpectrumUnits::raw_volts2;
  CHECK_THROWS_AS(fit_peak(raw, p.window, p.detection), UnitMismatchError);
}

TEST_CASE("background fits") {
  const auto grid = FrequencyGrid::spanning(20e3, 300e3, 50.0);
  BackgroundModel tail;
  tail.tail_offset = 2e-3;
  tail.tail_amplitude = 2e-3 * std::pow(60e3, 2.0);
  tail.tail_exponent = 2.0;
  const auto clean = evaluate_background(tail, grid);

  SUBCASE("pure tail") {
    int ok = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto s = synthesize_measured_spectrum(clean, 200, seed);
      const auto f = fit_background(s, {});
      CHECK_FALSE(f.has_beat);
      ok += std::abs(f.model.tail_exponent - 2.0) < 3.0 * f.sigma.tail_exponent;
      ok += std::abs(f.model.tail_offset - 2e-3) < 3.0 * f.sigma.tail_offset;
    }
    CHECK(ok >= 37);
  }
  SUBCASE("tail plus beat note") {
    BackgroundModel both = tail;
    both.beat_center = 224e3;
    both.beat_width = 3e3;
    both.beat_amplitude = 0.05;
    const auto s = synthesize_measured_spectrum(evaluate_background(both, grid), 200, std::uint64_t{8});
    const auto f = fit_background(s, {});
    CHECK(f.has_beat);
    CHECK(std::abs(f.model.beat_center - 224e3) < 3.0 * f.sigma.beat_center);
    CHECK(std::abs(f.model.beat_width - 3e3) < 3.0 * f.sigma.beat_width);
    CHECK(std::abs(f.model.beat_amplitude - 0.05) < 3.0 * f.sigma.beat_amplitude);
    CHECK(std::abs(f.model.tail_exponent - 2.0) < 3.0 * f.sigma.tail_exponent);

    const auto sub = subtract_background(s, f);
    CHECK(sub.metadata.at("background_subtracted") == "true");
    CHECK(std::stoul(sub.metadata.at("negative_bins")) > 0);
    double mean = 0.0;
    for (double v : sub.values) mean += v;
    mean /= static_cast<double>(sub.size());
    CHECK(std::abs(mean) < 3.0 * 2e-3 / std::sqrt(200.0 * sub.size()) * 3.0);
  }
  SUBCASE("peak excluded by window") {
    const auto p = reference_peak(2.7, {});
    OutputOptions opt;
    opt.units = SpectrumUnits::hz2_per_hz;
    opt.background = tail;
    const auto model = output_psd(grid, {p.source}, p.detection, opt);
    const auto s = synthesize_measured_spectrum(model, 200, std::uint64_t{21});
    // The exclusion has to cover the Lorentzian wings, not just the fit window.
    const double ge = rad_to_hz(p.source.budget.gamma_eff);
    const FitWindow excl[] = {FitWindow::around(rad_to_hz(p.source.budget.omega_eff), 60.0 * ge)};
    const auto f = fit_background(s, excl);
    CHECK(std::abs(f.model.tail_exponent - 2.0) < 3.0 * f.sigma.tail_exponent);
    const auto sub = subtract_background(s, f);
    PeakFitOptions po;
    po.theta = p.source.theta;
    po.noise_reference = s;
    po.select_model = false;
    const auto r = fit_peak(sub, p.window, p.detection, std::nullopt, po);
    const double truth_a = p.source.g0 * p.source.g0 * (2.0 * p.source.budget.n_eff + 1.0);
    CHECK(std::abs(r.a_eff->value - truth_a) < 3.0 * r.a_eff->sigma);
  }
  SUBCASE("subtraction contracts") {
    Spectrum zero = clean;
    std::fill(zero.values.begin(), zero.values.end(), 0.0);
    const auto same = subtract_background(clean, zero);
    CHECK(same.values == clean.values);
    const auto none = subtract_background(clean, clean);
    for (double v : none.values) CHECK(v == 0.0);
    Spectrum shifted = clean;
    shifted.grid.f_start += 1.0;
    CHECK_THROWS_AS(subtract_background(clean, shifted), DomainError);
    Spectrum other = clean;
    other.units = SpectrumUnits::normalized_model;
    CHECK_THROWS_AS(subtract_background(clean, other), UnitMismatchError);
    Spectrum tiny = clean;
    tiny.grid.count = 10;
    tiny.values.resize(10);
    CHECK_THROWS_AS(fit_background(tiny, {}), FitError);
  }
}

TEST_CASE("cooling curve") {
  const auto m = fixtures::mode01();
  const double g0 = hz_to_rad(2.1);
  const double n_th = thermal_occupation(m);
  const double b1 = 2.0 * g0 * g0 * m.gamma_m() * n_th;
  const double b2 = b1 / std::pow(khz(2.35), 2);

  SUBCASE("noiseless reference-style points") {
    std::vector<CoolingPoint> pts;
    for (double ge = khz(0.6); ge < khz(10); ge *= 1.35)
      pts.push_back({ge, b1 / ge + b2 * ge, 1e-3 * (b1 / ge + b2 * ge), 0.0, 0.0, 0.0, 0.0});
    const auto r = fit_cooling_curve(pts, m);
    CHECK(r.b1 == doctest::Approx(b1).epsilon(1e-10));
    CHECK(r.b2 == doctest::Approx(b2).epsilon(1e-10));
    CHECK(r.g0.value == doctest::Approx(g0).epsilon(1e-3));
    CHECK(rad_to_hz(r.gamma_min.value) == doctest::Approx(2350.0).epsilon(1e-9));
    CHECK(r.n_min.value == doctest::Approx(2.0 * m.gamma_m() * n_th / khz(2.35)).epsilon(1e-9));
    CHECK(r.n_min.value == doctest::Approx(450.0).epsilon(0.01));
    // The fitted optimum minimises the model.
    const double h = 1e-4 * r.gamma_min.value;
    CHECK(r.model(r.gamma_min.value) < r.model(r.gamma_min.value + h));
    CHECK(r.model(r.gamma_min.value) < r.model(r.gamma_min.value - h));
    CHECK(std::abs(-r.b1 / std::pow(r.gamma_min.value, 2) + r.b2) < 1e-12 * r.b2);
    CHECK(r.warnings.empty());
  }
  SUBCASE("mode (0,2) analogue") {
    const auto m2 = fixtures::mode02();
    const double g02 = hz_to_rad(1.74);
    const double c1 = 2.0 * g02 * g02 * m2.gamma_m() * thermal_occupation(m2);
    const auto mn = min_occupancy(m2, fixtures::cavity(-480), g02, LaserNoise{0.0, 1.6e-14});
    const double c2 = c1 / (mn.gamma_min * mn.gamma_min);
    std::vector<CoolingPoint> pts;
    for (double ge = khz(1); ge < khz(40); ge *= 1.5)
      pts.push_back({ge, c1 / ge + c2 * ge, 1e-3 * (c1 / ge + c2 * ge)});
    const auto r = fit_cooling_curve(pts, m2);
    CHECK(r.n_min.value == doctest::Approx(104.0).epsilon(0.02));
    CHECK(rad_to_hz(r.gamma_min.value) == doctest::Approx(13e3).epsilon(0.02));
  }
  SUBCASE("two exact points") {
    const CoolingPoint pts[] = {{khz(1), b1 / khz(1) + b2 * khz(1), 1.0},
                                {khz(5), b1 / khz(5) + b2 * khz(5), 1.0}};
    const auto r = fit_cooling_curve(pts, m);
    CHECK(r.b1 == doctest::Approx(b1).epsilon(1e-12));
    CHECK(r.b2 == doctest::Approx(b2).epsilon(1e-12));
  }
  SUBCASE("inconsistent data and warnings") {
    const CoolingPoint rising[] = {{khz(1), 1.0, 0.1}, {khz(2), 2.0, 0.1}, {khz(4), 4.0, 0.1}};
    CHECK_THROWS_WITH_AS(fit_cooling_curve(rising, m), doctest::Contains("dataset inconsistent"), FitError);
    const CoolingPoint slow[] = {{5.0 * m.gamma_m(), b1 / (5.0 * m.gamma_m()), 1.0},
                                 {khz(1), b1 / khz(1) + b2 * khz(1), 1.0},
                                 {khz(5), b1 / khz(5) + b2 * khz(5), 1.0}};
    CHECK(fit_cooling_curve(slow, m).warnings.size() == 1);
    const CoolingPoint bad[] = {{-1.0, 1.0, 1.0}, {1.0, 1.0, 1.0}};
    CHECK_THROWS_AS(fit_cooling_curve(bad, m), DomainError);
  }
  SUBCASE("uncertainty propagation against Monte-Carlo") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> z;
    std::vector<double> n_mins;
    double reported = 0.0;
    for (int t = 0; t < 400; ++t) {
      std::vector<CoolingPoint> pts;
      for (double ge = khz(0.6); ge < khz(10); ge *= 1.35) {
        const double a = b1 / ge + b2 * ge;
        pts.push_back({ge, a * (1.0 + 0.05 * z(rng)), 0.05 * a});
      }
      const auto r = fit_cooling_curve(pts, m);
      n_mins.push_back(r.n_min.value);
      reported += r.n_min.sigma / 400.0;
    }
    double mean = 0.0, var = 0.0;
    for (double v : n_mins) mean += v / 400.0;
    for (double v : n_mins) var += (v - mean) * (v - mean) / 399.0;
    CHECK(reported == doctest::Approx(std::sqrt(var)).epsilon(0.25));
  }
}

TEST_CASE("noise discrimination") {
  const double theta = sideband_angle(fixtures::cavity(-480), khz(256));
  const double s2 = std::sin(2.0 * theta);
  const Measured b2{1.0, 0.05};
  SUBCASE("reference ratio") {
    // r = b2 Gamma / a3 = -2.3 +/- 0.4 against 1/sin 2theta = -1.84.
    const Measured slope{1.0 / -2.3, 0.4 / (2.3 * 2.3)};
    const auto d = discriminate_noise(b2, slope, theta);
    CHECK(d.dominance == NoiseDominance::phase);
    CHECK(d.ratio.value == doctest::Approx(-2.3));
    CHECK(d.inverse_sin_2theta == doctest::Approx(-1.827).epsilon(1e-3));
  }
  SUBCASE("amplitude: dispersive slope consistent with zero") {
    const auto d = discriminate_noise(b2, Measured{0.01 * s2, 0.05}, theta);
    CHECK(d.dominance == NoiseDominance::amplitude);
  }
  SUBCASE("mixed and indeterminate") {
    CHECK(discriminate_noise(b2, Measured{0.7 * s2, 0.02}, theta).dominance == NoiseDominance::mixed);
    CHECK(discriminate_noise(b2, Measured{0.7 * s2, 0.02}, 0.01).dominance ==
          NoiseDominance::indeterminate);
    CHECK(discriminate_noise(b2, Measured{0.7 * s2, 5.0}, theta).dominance ==
          NoiseDominance::indeterminate);
  }
  CHECK(dominance_from_string(to_string(NoiseDominance::mixed)) == NoiseDominance::mixed);
  CHECK_THROWS_AS(dominance_from_string("loud"), DomainError);
}

TEST_CASE("noise extraction round trip") {
  const auto m1 = fixtures::mode01();
  const auto c1 = fixtures::cavity(-480);
  const double g0 = hz_to_rad(2.1);
  auto curve_for = [](const MechMode& m, double g, const MinimumOccupancy& mn) {
    CoolingCurveResult r;
    r.b1 = 2.0 * g * g * m.gamma_m() * thermal_occupation(m);
    r.b2 = r.b1 / (mn.gamma_min * mn.gamma_min);
    r.covariance << 1e-4 * r.b1 * r.b1, 0.0, 0.0, 1e-4 * r.b2 * r.b2;
    return r;
  };

  const LaserNoise phase{2.2e-2 / (256e3 * 256e3), 0.0};
  const auto mn1 = min_occupancy(m1, c1, g0, phase);
  NoiseDiscrimination ph;
  ph.dominance = NoiseDominance::phase;
  ph.phase_fraction = {1.0, 0.1};
  const auto x1 = extract_noise_psd(curve_for(m1, g0, mn1), m1, c1, ph);
  CHECK(x1.s_nu_nu.value == doctest::Approx(2.2e-2).epsilon(1e-9));
  CHECK(x1.amplitude_is_upper_limit);
  CHECK_FALSE(x1.phase_is_upper_limit);
  CHECK(min_occupancy(m1, c1, g0, LaserNoise{x1.s_phi_phi.value, 0.0}).n_min ==
        doctest::Approx(mn1.n_min).epsilon(1e-9));

  const auto m2 = fixtures::mode02();
  const double g02 = hz_to_rad(1.74);
  const LaserNoise amp{0.0, 1.6e-14};
  const auto mn2 = min_occupancy(m2, c1, g02, amp);
  NoiseDiscrimination am;
  am.dominance = NoiseDominance::amplitude;
  am.phase_fraction = {0.0, 0.1};
  const auto x2 = extract_noise_psd(curve_for(m2, g02, mn2), m2, c1, am);
  CHECK(x2.s_eps_eps.value == doctest::Approx(1.6e-14).epsilon(1e-9));
  CHECK(x2.phase_is_upper_limit);

  NoiseDiscrimination ind;
  const auto x3 = extract_noise_psd(curve_for(m2, g02, mn2), m2, c1, ind);
  CHECK(x3.phase_is_upper_limit);
  CHECK(x3.amplitude_is_upper_limit);
  CHECK(x3.s_eps_eps.value == doctest::Approx(1.6e-14).epsilon(1e-9));
}
