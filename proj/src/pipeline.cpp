#include "optocool/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "optocool/errors.hpp"
#include "optocool/units.hpp"

namespace optocool {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

LaserNoise configured_noise(const ExperimentConfig& cfg, const MechMode& mode) {
  return cfg.noise ? cfg.noise->at(mode.omega_m()) : LaserNoise{};
}

std::vector<double> spaced(double from, double to, int n, bool geometric) {
  std::vector<double> out;
  if (n == 1) return {from};
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / (n - 1);
    out.push_back(geometric ? from * std::pow(to / from, t) : from + t * (to - from));
  }
  return out;
}

}  // namespace

// ---- synthesis ---------------------------------------------------------

std::vector<double> damping_grid(const ExperimentConfig& cfg, const ModeConfig& m) {
  const auto& a = cfg.acquisition;
  if (!a.gamma_opt.empty()) return a.gamma_opt;
  if (!(m.g0 > 0.0)) throw DomainError("damping grid needs g0 for mode '" + m.mode.label() + "'");
  const auto minimum = min_occupancy(m.mode, cfg.cavity, m.g0, configured_noise(cfg, m.mode));
  auto grid = spaced(a.gamma_ratio_low, a.gamma_ratio_high, a.points, true);
  for (double& g : grid) g *= minimum.gamma_min;
  return grid;
}

Campaign synthesize_campaign(const ExperimentConfig& cfg, const std::string& mode_label,
                             std::uint64_t seed) {
  cfg.validate();
  const ModeConfig& m = cfg.mode(mode_label);
  if (!(m.g0 > 0.0)) throw DomainError("synthesis needs g0 for mode '" + m.mode.label() + "'");
  const auto& acq = cfg.acquisition;

  Campaign c;
  c.mode = m.mode.label();
  c.g0 = m.g0;
  c.seed = seed;
  c.noise = configured_noise(cfg, m.mode);
  c.theta = sideband_angle(cfg.cavity, m.mode.omega_m());
  try {
    c.minimum = min_occupancy(m.mode, cfg.cavity, m.g0, c.noise);
  } catch (const DomainError&) {
    c.minimum = {};  // noiseless: no finite optimum
  }

  const double fm = rad_to_hz(m.mode.omega_m());
  const double lo = acq.span_low > 0.0 ? acq.span_low : 0.5 * fm;
  const double hi = acq.span_high > 0.0 ? acq.span_high : 2.0 * fm;

  const auto grid = damping_grid(cfg, m);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const std::string where = "point " + std::to_string(i) + " (gamma_opt/2pi = " +
                              fmt(rad_to_hz(grid[i])) + " Hz)";
    CampaignPoint p;
    p.gamma_opt = grid[i];
    PeakSource src;
    try {
      src = peak_source(m.mode, cfg.cavity, DriveField{m.g0, OpticalDamping{grid[i]}}, c.noise);
    } catch (const InstabilityError& e) {
      throw InstabilityError(where + ": " + e.what(), e.gamma_eff());
    } catch (const DomainError& e) {
      throw DomainError(where + ": " + e.what());
    }
    p.budget = src.budget;
    p.coeffs = model_coefficients(src);
    p.a_eff = m.g0 * m.g0 * (2.0 * p.budget.n_eff + 1.0);

    const auto fgrid = FrequencyGrid::spanning(lo, hi, rad_to_hz(p.budget.gamma_eff) / acq.bins_per_gamma);
    OutputOptions opt;
    opt.units = SpectrumUnits::hz2_per_hz;
    opt.vacuum_level = acq.vacuum_level;
    opt.background = acq.background;
    Spectrum model = output_psd(fgrid, {src}, cfg.detection, opt);

    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    try {
      p.spectrum = synthesize_measured_spectrum(model, acq.n_averages, rng);
    } catch (const DomainError& e) {
      throw DomainError(where + ": " + e.what());
    }
    if (cfg.calibration_tone) add_calibration_tone(p.spectrum, *cfg.calibration_tone);
    if (acq.raw_scale) {
      for (double& v : p.spectrum.values) v *= *acq.raw_scale;
      p.spectrum.units = SpectrumUnits::raw_volts2;
    }
    p.spectrum.metadata["mode"] = c.mode;
    p.spectrum.metadata["seed"] = std::to_string(seed);
    p.spectrum.metadata["point"] = std::to_string(i);
    p.spectrum.metadata["gamma_opt_hz"] = fmt(rad_to_hz(grid[i]));
    c.points.push_back(std::move(p));
  }
  return c;
}

json truth_manifest(const Campaign& c, const std::vector<std::string>& files) {
  json pts = json::array();
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    const auto& p = c.points[i];
    pts.push_back({{"file", i < files.size() ? files[i] : std::string()},
                   {"gamma_opt_hz", rad_to_hz(p.gamma_opt)},
                   {"gamma_eff_hz", rad_to_hz(p.budget.gamma_eff)},
                   {"omega_eff_hz", rad_to_hz(p.budget.omega_eff)},
                   {"n_eff", p.budget.n_eff},
                   {"n_ba", p.budget.n_ba},
                   {"n_exc", p.budget.n_exc},
                   {"n_exc_phase", p.budget.n_exc_phase},
                   {"n_exc_amplitude", p.budget.n_exc_amplitude},
                   {"a_eff", p.a_eff},
                   {"a2", p.coeffs.a2},
                   {"a3", p.coeffs.a3}});
  }
  const double phase = c.noise.s_phi_phi, amp = c.noise.s_eps_eps;
  const std::string dominance = phase > 0.0 && amp == 0.0   ? "phase-dominated"
                                : amp > 0.0 && phase == 0.0 ? "amplitude-dominated"
                                : phase > 0.0               ? "mixed"
                                                            : "indeterminate";
  json out = {{"mode", c.mode},
              {"seed", c.seed},
              {"g0_hz", rad_to_hz(c.g0)},
              {"theta_rad", c.theta},
              {"s_phi_phi_rad2_per_hz", phase},
              {"s_eps_eps_per_hz", amp},
              {"dominance", dominance},
              {"points", pts},
              {"units", "a_eff, a2, a3 in (rad/s)^2"}};
  if (c.minimum.gamma_min > 0.0) {
    out["n_min"] = c.minimum.n_min;
    out["gamma_min_hz"] = rad_to_hz(c.minimum.gamma_min);
  }
  return out;
}

// ---- single spectrum ---------------------------------------------------

namespace {

Spectrum to_hz2(const Spectrum& s, const ExperimentConfig& cfg) {
  if (s.units != SpectrumUnits::raw_volts2) return s.converted_to(SpectrumUnits::hz2_per_hz);
  if (!cfg.calibration_tone)
    throw UnitMismatchError("raw spectrum and no calibration tone in the config");
  return calibrate_with_tone(s, cfg.calibration_tone->frequency, cfg.calibration_tone->power);
}

// Peak-only part of the fitted model, in hz2_per_hz, over the whole grid.
Spectrum peak_model(const Spectrum& like, const PeakFitResult& fit, const DetectionConfig& det) {
  LineshapeCoeffs c = fit.selected();
  c.a0 = 0.0;
  c.a1 = 0.0;
  Spectrum out = like;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double w = hz_to_rad(out.frequency(i));
    out.values[i] = w > 0.0 ? lineshape_value(w, fit.omega_center, std::norm(detection_filter_c(w, det)), c) /
                                  kNormalizedPerHz2
                            : 0.0;
  }
  return out;
}

}  // namespace

SpectrumAnalysis analyze_spectrum(const Spectrum& spectrum, const ExperimentConfig& cfg,
                                  const AnalysisOptions& options) {
  const ModeConfig& m = cfg.mode(options.mode);
  SpectrumAnalysis out;
  out.calibrated = to_hz2(spectrum, cfg);
  const Spectrum& cal = out.calibrated;

  // Locate the peak near the bare mode frequency; the spring shift stays
  // well inside 10% of it for weak coupling. A peak wider than that window
  // shows no contrast inside it, so retry over half the frequency.
  const double fm = rad_to_hz(m.mode.omega_m());
  LineshapeCoeffs guess;
  try {
    guess = peak_initial_guess(cal, FitWindow::around(fm, 0.1 * fm), cfg.detection);
  } catch (const NoPeakError&) {
    guess = peak_initial_guess(cal, FitWindow::around(fm, 0.5 * fm), cfg.detection);
  }

  PeakFitOptions popt;
  popt.theta = sideband_angle(cfg.cavity, m.mode.omega_m());
  popt.noise_reference = cal;
  const auto window_for = [&](const LineshapeCoeffs& c) {
    const double half = options.window_hz ? *options.window_hz : 10.0 * rad_to_hz(c.gamma_eff);
    return FitWindow::around(rad_to_hz(c.omega_eff), half);
  };

  PeakFitResult fit = fit_peak(cal, window_for(guess), cfg.detection, guess, popt);
  if (!options.window_hz) fit = fit_peak(cal, window_for(fit.selected()), cfg.detection, fit.selected(), popt);
  out.corrected = cal;

  // The background model is only trusted where it is pinned down on both
  // sides of the fit window; otherwise a0 + a1 (w - w_c) carries it.
  const auto bracketed = [&](const FitWindow& w) {
    const double room = 20.0 * cal.grid.f_step;
    return w.f_low - cal.grid.f_start > room && cal.grid.f_stop() - w.f_high > room;
  };
  if (options.subtract_background && !bracketed(fit.window))
    out.corrected.add_warning("fit window reaches the spectrum edge; background left to the linear term");
  else if (options.subtract_background) {
    std::vector<FitWindow> excl;
    if (cfg.calibration_tone)
      excl.push_back(FitWindow::around(cfg.calibration_tone->frequency, 3.0 * cal.grid.f_step));
    for (int pass = 0; pass < options.background_passes; ++pass) {
      // Background from the spectrum with the fitted peak removed, so the
      // Lorentzian wings outside the window do not leak into the tail.
      Spectrum rest = cal;
      const Spectrum peak = peak_model(cal, fit, cfg.detection);
      for (std::size_t i = 0; i < rest.size(); ++i) rest.values[i] -= peak.values[i];
      std::vector<FitWindow> ex = excl;
      ex.push_back(fit.window);
      BackgroundFitOptions bopt;
      bopt.noise_reference = cal;
      try {
        const BackgroundFit bg = fit_background(rest, ex, bopt);
        Spectrum corrected = subtract_background(cal, bg);
        fit = fit_peak(corrected, fit.window, cfg.detection, fit.selected(), popt);
        out.record.background = bg;
        out.corrected = std::move(corrected);
      } catch (const FitError& e) {
        out.corrected.add_warning(std::string("background pass failed, kept previous fit: ") + e.what());
        break;
      }
    }
  }

  out.record.fit = fit;
  out.record.mode = m.mode.label();
  auto it = spectrum.metadata.find("source");
  out.record.source = it != spectrum.metadata.end() ? it->second : std::string();
  return out;
}

std::string peak_plot_csv(const SpectrumAnalysis& a, const DetectionConfig& det) {
  const auto& fit = a.record.fit;
  std::string out = "frequency_hz,data,fit,lorentzian_fit,residual\n";
  const Spectrum& s = a.corrected;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double f = s.frequency(i);
    if (!fit.window.contains(f)) continue;
    const double w = hz_to_rad(f);
    const double c2 = std::norm(detection_filter_c(w, det));
    const double joint = lineshape_value(w, fit.omega_center, c2, fit.coeffs) / kNormalizedPerHz2;
    const double lor = lineshape_value(w, fit.omega_center, c2, fit.lorentzian) / kNormalizedPerHz2;
    const double data = s.values[i];
    out += fmt(f) + "," + fmt(data) + "," + fmt(joint) + "," + fmt(lor) + "," + fmt(data - joint) + "\n";
  }
  return out;
}

// ---- cooling curve -----------------------------------------------------

CoolingRecord analyze_cooling(const std::vector<PeakRecord>& peaks, const ExperimentConfig& cfg,
                              const std::string& mode_label) {
  const ModeConfig& m = cfg.mode(mode_label);
  CoolingRecord r;
  for (const auto& p : peaks) {
    if (!p.mode.empty() && p.mode != m.mode.label()) continue;
    r.points.push_back(cooling_point(p.fit));
  }
  if (r.points.size() < 3) throw DomainError("cooling curve needs at least three peak fits");
  std::sort(r.points.begin(), r.points.end(),
            [](const CoolingPoint& a, const CoolingPoint& b) { return a.gamma_eff < b.gamma_eff; });

  r.theta = sideband_angle(cfg.cavity, m.mode.omega_m());
  r.curve = fit_cooling_curve(r.points, m.mode);
  r.dispersive_slope = fit_dispersive_slope(r.points);
  const Measured b2{r.curve.b2, std::sqrt(std::max(r.curve.covariance(1, 1), 0.0))};
  r.discrimination = discriminate_noise(b2, r.dispersive_slope, r.theta);
  r.extraction = extract_noise_psd(r.curve, m.mode, cfg.cavity, r.discrimination);

  const double wm = m.mode.omega_m();
  const double t = effective_temperature(r.curve.n_min.value, wm);
  r.t_eff = {t, t * r.curve.n_min.sigma / r.curve.n_min.value};
  const double q = wm / r.curve.gamma_min.value;
  r.q_eff = {q, q * r.curve.gamma_min.sigma / r.curve.gamma_min.value};
  return r;
}

std::string cooling_points_csv(const CoolingRecord& c) {
  const double g2 = c.curve.g0.value * c.curve.g0.value;
  std::string out = "gamma_eff_hz,sigma_gamma_hz,n_eff_plus_half,sigma\n";
  for (const auto& p : c.points)
    out += fmt(rad_to_hz(p.gamma_eff)) + "," + fmt(rad_to_hz(p.sigma_gamma)) + "," +
           fmt(p.a_eff / (2.0 * g2)) + "," + fmt(p.sigma_a_eff / (2.0 * g2)) + "\n";
  return out;
}

std::string cooling_curve_csv(const CoolingRecord& c) {
  const double g2 = c.curve.g0.value * c.curve.g0.value;
  double lo = c.points.front().gamma_eff, hi = c.points.back().gamma_eff;
  std::string out = "gamma_eff_hz,fit,b1_branch\n";
  for (double g : spaced(0.7 * lo, 1.4 * hi, 200, true))
    out += fmt(rad_to_hz(g)) + "," + fmt(c.curve.model(g) / (2.0 * g2)) + "," +
           fmt(c.curve.b1 / g / (2.0 * g2)) + "\n";
  return out;
}

std::string cooling_gnuplot(const std::string& points_file, const std::string& curve_file) {
  return "set datafile separator ','\n"
         "set key autotitle columnhead\n"
         "set logscale xy\n"
         "set xlabel 'Gamma_eff / 2pi (Hz)'\n"
         "set ylabel 'n_eff + 1/2'\n"
         "plot '" + points_file + "' using 1:3:2:4 with xyerrorbars title 'data', \\\n"
         "     '" + curve_file + "' using 1:2 with lines title 'fit', \\\n"
         "     '" + curve_file + "' using 1:3 with lines dashtype 2 title 'b1/Gamma'\n";
}

// ---- prediction --------------------------------------------------------

SweepKind sweep_kind_from_string(const std::string& name) {
  if (name == "detuning") return SweepKind::detuning;
  if (name == "damping" || name == "power") return SweepKind::damping;
  if (name == "q" || name == "q_factor") return SweepKind::q_factor;
  throw DomainError("unknown sweep '" + name + "' (detuning, damping, q_factor)");
}

std::vector<PredictRow> predict(const ExperimentConfig& cfg, const std::string& mode_label,
                                const SweepSpec& sweep) {
  cfg.validate();
  const ModeConfig& m = cfg.mode(mode_label);
  if (!(m.g0 > 0.0)) throw DomainError("prediction needs g0 for mode '" + m.mode.label() + "'");
  if (sweep.points < 1) throw DomainError("sweep needs at least one point");
  if (sweep.geometric && !(sweep.from * sweep.to > 0.0))
    throw DomainError("geometric sweep endpoints must share a sign and be non-zero");

  std::vector<PredictRow> rows;
  for (double x : spaced(sweep.from, sweep.to, sweep.points, sweep.geometric)) {
    PredictRow row;
    row.x = x;
    CavitySpec cav = cfg.cavity;
    MechMode mode = m.mode;
    if (sweep.kind == SweepKind::detuning) cav.detuning = hz_to_rad(x);
    if (sweep.kind == SweepKind::q_factor) mode = mode.with_q(x);
    row.detuning = cav.detuning;
    row.q_factor = mode.q_factor();
    try {
      const LaserNoise noise = configured_noise(cfg, mode);
      row.theta = sideband_angle(cav, mode.omega_m());
      row.a_factor = amplitude_factor(cav, mode.omega_m());
      const auto minimum = min_occupancy(mode, cav, m.g0, noise);
      row.n_min = minimum.n_min;
      row.gamma_min = minimum.gamma_min;
      row.gamma_opt = sweep.kind == SweepKind::damping ? hz_to_rad(x) : minimum.gamma_min;
      const auto b = effective_occupancy(mode, cav, DriveField{m.g0, OpticalDamping{row.gamma_opt}}, noise);
      row.n_ba = b.n_ba;
      row.n_exc = b.n_exc;
      row.n_eff = b.n_eff;
    } catch (const InstabilityError&) {
      row.flag = "unstable";
    } catch (const DomainError& e) {
      row.flag = std::string("undefined: ") + e.what();
    }
    rows.push_back(row);
  }

  // Sanity: n_min falls with Q; n_eff has a single minimum along damping.
  if (sweep.kind == SweepKind::q_factor) {
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i].flag.empty() && rows[i - 1].flag.empty() &&
          (rows[i].x - rows[i - 1].x) * (rows[i].n_min - rows[i - 1].n_min) >= 0.0)
        rows[i].flag = "non-monotonic";
  } else if (sweep.kind == SweepKind::damping) {
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& a = rows[i - 1];
      const auto& b = rows[i];
      if (!a.flag.empty() || !b.flag.empty() || a.gamma_opt <= 0.0) continue;
      const bool below = b.gamma_opt <= a.gamma_min && a.gamma_opt < b.gamma_opt;
      const bool above = a.gamma_opt >= a.gamma_min && a.gamma_opt < b.gamma_opt;
      if ((below && b.n_eff > a.n_eff) || (above && b.n_eff < a.n_eff)) rows[i].flag = "non-monotonic";
    }
  }
  return rows;
}

std::string predict_csv(const std::vector<PredictRow>& rows, SweepKind kind) {
  const char* x = kind == SweepKind::detuning ? "detuning_hz"
                  : kind == SweepKind::damping ? "gamma_opt_hz"
                                               : "q_factor";
  std::string out = "sweep_" + std::string(x) +
                    ",detuning_hz,q_factor,gamma_opt_hz,n_ba,n_exc,n_eff,n_min,gamma_min_hz,"
                    "theta_rad,inv_cos_theta,a_factor,flag\n";
  for (const auto& r : rows) {
    const double ic = r.flag.rfind("undefined", 0) == 0 ? 0.0 : 1.0 / std::cos(r.theta);
    out += fmt(r.x) + "," + fmt(rad_to_hz(r.detuning)) + "," + fmt(r.q_factor) + "," +
           fmt(rad_to_hz(r.gamma_opt)) + "," + fmt(r.n_ba) + "," + fmt(r.n_exc) + "," +
           fmt(r.n_eff) + "," + fmt(r.n_min) + "," + fmt(rad_to_hz(r.gamma_min)) + "," +
           fmt(r.theta) + "," + fmt(ic) + "," + fmt(r.a_factor) + ",\"" + r.flag + "\"\n";
  }
  return out;
}

}  // namespace optocool
