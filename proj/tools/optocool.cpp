// Command-line front end: synth | fit-peak | cooling-curve | predict | convert.
// Machine output goes to files (or stdout where noted); diagnostics to stderr.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "optocool/errors.hpp"
#include "optocool/io.hpp"
#include "optocool/pipeline.hpp"
#include "optocool/units.hpp"

namespace fs = std::filesystem;
using namespace optocool;

namespace {

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kNoPeak = 3,
  kFitFailed = 4,
  kIo = 5,
  kUnstable = 6,
};

struct Common {
  std::string config;
  std::string mode;
  std::string out;
  std::optional<double> detuning_hz;
};

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = read_config(c.config);
  if (c.detuning_hz) {
    cfg.cavity.detuning = hz_to_rad(*c.detuning_hz);
    cfg.validate();
  }
  return cfg;
}

std::vector<std::string> split_warnings(const Spectrum& s) {
  std::vector<std::string> out;
  auto it = s.metadata.find("warnings");
  if (it == s.metadata.end()) return out;
  std::string w = it->second;
  std::size_t pos = 0;
  while (pos <= w.size()) {
    const auto next = w.find("; ", pos);
    out.push_back(w.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
    if (next == std::string::npos) break;
    pos = next + 2;
  }
  return out;
}

fs::path out_dir(const std::string& out) {
  fs::path d = out.empty() ? fs::path(".") : fs::path(out);
  fs::create_directories(d);
  return d;
}

int cmd_synth(const Common& c, std::uint64_t seed) {
  const ExperimentConfig cfg = load(c);
  const Campaign campaign = synthesize_campaign(cfg, c.mode, seed);
  const fs::path dir = out_dir(c.out);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < campaign.points.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "spectrum_%02zu.csv", i);
    write_spectrum(campaign.points[i].spectrum, dir / name);
    names.emplace_back(name);
  }
  nlohmann::json manifest = truth_manifest(campaign, names);
  manifest["config"] = config_to_json(cfg);
  manifest["tool_version"] = std::string(tool_version());
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cerr << "wrote " << names.size() << " spectra and manifest.json to " << dir.string() << "\n";
  return kOk;
}

int cmd_fit_peak(const Common& c, std::optional<double> window_hz,
                 const std::vector<std::string>& inputs) {
  const ExperimentConfig cfg = load(c);
  AnalysisOptions opt;
  opt.mode = c.mode;
  opt.window_hz = window_hz;
  for (const auto& in : inputs) {
    const Spectrum s = read_spectrum(in);
    SpectrumAnalysis a = analyze_spectrum(s, cfg, opt);
    a.record.source = in;
    FitReport report;
    report.peaks.push_back(a.record);
    report.provenance.input_files = {in};
    report.provenance.tool_version = tool_version();
    if (auto it = s.metadata.find("seed"); it != s.metadata.end())
      report.provenance.seed = std::stoull(it->second);
    report.warnings = split_warnings(a.corrected);

    const fs::path dir = c.out.empty() ? fs::path(in).parent_path() : out_dir(c.out);
    const std::string stem = fs::path(in).stem().string();
    write_report(report, dir / (stem + ".fit.json"));
    write_file_atomic(dir / (stem + ".plot.csv"), peak_plot_csv(a, cfg.detection));
    const auto& f = a.record.fit;
    std::cerr << in << ": gamma_eff/2pi = " << rad_to_hz(f.selected().gamma_eff) << " +- "
              << rad_to_hz(f.sigma(kGammaEff)) << " Hz, a_eff = " << f.a_eff->value << " +- "
              << f.a_eff->sigma << (f.lorentzian_selected ? " (Lorentzian only)" : "") << "\n";
    for (const auto& w : report.warnings) std::cerr << "  warning: " << w << "\n";
  }
  return kOk;
}

int cmd_cooling_curve(const Common& c, const std::vector<std::string>& fragments) {
  const ExperimentConfig cfg = load(c);
  FitReport report;
  report.provenance.tool_version = tool_version();
  for (const auto& f : fragments) {
    FitReport part = read_report(f);
    for (auto& p : part.peaks) report.peaks.push_back(std::move(p));
    report.provenance.input_files.push_back(f);
    if (part.provenance.seed && !report.provenance.seed) report.provenance.seed = part.provenance.seed;
  }
  report.cooling = analyze_cooling(report.peaks, cfg, c.mode);
  report.warnings = report.cooling->curve.warnings;

  const fs::path dir = out_dir(c.out);
  write_file_atomic(dir / "cooling_points.csv", cooling_points_csv(*report.cooling));
  write_file_atomic(dir / "cooling_curve.csv", cooling_curve_csv(*report.cooling));
  write_file_atomic(dir / "cooling.gp", cooling_gnuplot("cooling_points.csv", "cooling_curve.csv"));
  write_report(report, dir / "cooling.json");

  const auto& k = report.cooling->curve;
  const auto& e = report.cooling->extraction;
  std::cerr << "g0/2pi = " << rad_to_hz(k.g0.value) << " +- " << rad_to_hz(k.g0.sigma) << " Hz\n"
            << "n_min = " << k.n_min.value << " +- " << k.n_min.sigma << "\n"
            << "gamma_min/2pi = " << rad_to_hz(k.gamma_min.value) << " +- "
            << rad_to_hz(k.gamma_min.sigma) << " Hz\n"
            << "noise: " << to_string(e.dominance) << ", S_phiphi = " << e.s_phi_phi.value
            << (e.phase_is_upper_limit ? " (upper limit)" : "") << " rad^2/Hz, S_epseps = "
            << e.s_eps_eps.value << (e.amplitude_is_upper_limit ? " (upper limit)" : "") << " 1/Hz\n"
            << "T_eff = " << report.cooling->t_eff.value * 1e3 << " mK, Q_eff = "
            << report.cooling->q_eff.value << "\n";
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  return kOk;
}

int cmd_predict(const Common& c, const SweepSpec& sweep) {
  const ExperimentConfig cfg = load(c);
  const auto rows = predict(cfg, c.mode, sweep);
  const std::string csv = predict_csv(rows, sweep.kind);
  if (c.out.empty()) std::cout << csv;
  else write_file_atomic(c.out, csv);
  for (const auto& r : rows)
    if (!r.flag.empty()) std::cerr << "row " << r.x << ": " << r.flag << "\n";
  return kOk;
}

int cmd_convert(const Common& c, const std::string& kind, double value,
                std::optional<double> frequency_hz) {
  double out = 0.0;
  std::string unit;
  if (kind == "snn-to-sll" || kind == "sll-to-snn") {
    if (c.config.empty()) throw DomainError("length conversions need --config for the cavity");
    const ExperimentConfig cfg = load(c);
    out = kind == "snn-to-sll" ? convert_snn_sll(value, cfg.cavity) : convert_sll_snn(value, cfg.cavity);
    unit = kind == "snn-to-sll" ? "m^2/Hz" : "Hz^2/Hz";
  } else if (kind == "snn-to-sphiphi" || kind == "sphiphi-to-snn") {
    double f = 0.0;
    if (frequency_hz) f = *frequency_hz;
    else if (!c.config.empty()) f = rad_to_hz(load(c).mode(c.mode).mode.omega_m());
    else throw DomainError("phase conversions need --frequency-hz or a config mode");
    out = kind == "snn-to-sphiphi" ? convert_frequency_noise(value, hz_to_rad(f))
                                   : frequency_noise_from_phase(value, hz_to_rad(f));
    unit = kind == "snn-to-sphiphi" ? "rad^2/Hz" : "Hz^2/Hz";
  } else {
    throw DomainError("unknown conversion '" + kind + "'");
  }
  std::printf("%.10g %s\n", out, unit.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sideband-cooling spectra: synthesis, fits and noise budgets"};
  app.set_version_flag("--version", std::string(tool_version()));
  app.require_subcommand(1);

  Common common;
  const auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* o = sub->add_option("--config", common.config, "experiment configuration (JSON)");
    if (config_required) o->required()->check(CLI::ExistingFile);
    sub->add_option("--mode", common.mode, "mode label from the config (default: first)");
    sub->add_option("--detuning-hz", common.detuning_hz, "override the cavity detuning");
  };

  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "synthesize a seeded campaign of spectra");
  add_common(synth, true);
  synth->add_option("--seed", seed, "random seed")->required();
  synth->add_option("--out", common.out, "output directory")->required();

  std::optional<double> window_hz;
  std::vector<std::string> inputs;
  auto* fit = app.add_subcommand("fit-peak", "fit mechanical peaks in spectrum files");
  add_common(fit, true);
  fit->add_option("--window-hz", window_hz, "fit half-width around the peak (default 10 gamma_eff)")
      ->check(CLI::PositiveNumber);
  fit->add_option("--out", common.out, "output directory (default: beside each input)");
  fit->add_option("spectra", inputs, "spectrum CSV files")->required()->check(CLI::ExistingFile);

  std::vector<std::string> fragments;
  auto* cool = app.add_subcommand("cooling-curve", "combine peak fits into the cooling curve");
  add_common(cool, true);
  cool->add_option("--out", common.out, "output directory")->required();
  cool->add_option("fragments", fragments, "fit-peak reports (.fit.json)")->required()->check(CLI::ExistingFile);

  SweepSpec sweep;
  std::string sweep_kind = "detuning";
  auto* pred = app.add_subcommand("predict", "closed-form occupancy sweeps");
  add_common(pred, true);
  pred->add_option("--sweep", sweep_kind, "detuning | damping | q_factor");
  pred->add_option("--from", sweep.from, "sweep start (Hz, or Q)")->required();
  pred->add_option("--to", sweep.to, "sweep end (Hz, or Q)")->required();
  pred->add_option("--points", sweep.points, "number of rows")->check(CLI::PositiveNumber);
  pred->add_flag("--geometric", sweep.geometric, "geometric spacing");
  pred->add_option("--out", common.out, "CSV output file (default: stdout)");

  std::string conversion;
  double value = 0.0;
  std::optional<double> frequency_hz;
  auto* conv = app.add_subcommand("convert", "laser-noise unit conversions");
  add_common(conv, false);
  conv->add_option("conversion", conversion,
                   "snn-to-sll | sll-to-snn | snn-to-sphiphi | sphiphi-to-snn")->required();
  conv->add_option("value", value, "input spectral density")->required();
  conv->add_option("--frequency-hz", frequency_hz, "Fourier frequency for phase conversions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(common, seed);
    if (*fit) return cmd_fit_peak(common, window_hz, inputs);
    if (*cool) return cmd_cooling_curve(common, fragments);
    if (*pred) {
      sweep.kind = sweep_kind_from_string(sweep_kind);
      return cmd_predict(common, sweep);
    }
    if (*conv) return cmd_convert(common, conversion, value, frequency_hz);
  } catch (const NoPeakError& e) {
    std::cerr << "error: no peak: " << e.what() << "\n";
    return kNoPeak;
  } catch (const FitError& e) {
    std::cerr << "error: fit failed: " << e.what() << "\n";
    return kFitFailed;
  } catch (const InstabilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnstable;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
