#include "optocool/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "optocool/errors.hpp"
#include "optocool/units.hpp"

namespace optocool {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view tool_version() { return "0.3.0"; }

// ---- files -------------------------------------------------------------

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + path.string() + "'");
  }
}

// ---- spectrum CSV ------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

double header_number(const std::map<std::string, std::string>& h, const std::string& key) {
  double v = 0.0;
  if (!parse_double(h.at(key), v) || !std::isfinite(v))
    throw IoError("header '" + key + "' is not a finite number: '" + h.at(key) + "'");
  return v;
}

}  // namespace

std::string format_spectrum(const Spectrum& s) {
  s.validate(true);
  std::string out;
  out.reserve(48 * s.size() + 256);
  out += "# units=" + std::string(to_string(s.units)) + "\n";
  out += "# n_averages=" + std::to_string(s.n_averages) + "\n";
  out += "# f_start=" + fmt17(s.grid.f_start) + "\n";
  out += "# f_step=" + fmt17(s.grid.f_step) + "\n";
  for (const auto& [k, v] : s.metadata) {
    std::string clean = v;
    std::replace(clean.begin(), clean.end(), '\n', ' ');
    out += "# " + k + "=" + clean + "\n";
  }
  out += "frequency_hz,psd\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += fmt17(s.frequency(i));
    out += ',';
    out += fmt17(s.values[i]);
    out += '\n';
  }
  return out;
}

Spectrum parse_spectrum(const std::string& text) {
  std::map<std::string, std::string> header;
  std::vector<double> freq, psd;
  std::vector<std::size_t> line_of;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      saw_header = true;
      const std::string body = trim(std::string_view(t).substr(1));
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;  // free comment
      header[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
      continue;
    }
    const auto comma = t.find(',');
    if (comma == std::string::npos)
      throw IoError("line " + std::to_string(line_no) + ": expected two comma-separated columns");
    const std::string a = trim(t.substr(0, comma)), b = trim(t.substr(comma + 1));
    double f = 0.0, v = 0.0;
    if (!parse_double(a, f) || !parse_double(b, v)) {
      if (freq.empty() && !std::isdigit(static_cast<unsigned char>(a.empty() ? 'x' : a[0])))
        continue;  // column-name line
      throw IoError("line " + std::to_string(line_no) + ": unparsable number");
    }
    if (!std::isfinite(f) || !std::isfinite(v))
      throw NonFiniteValueError("line " + std::to_string(line_no) + ": non-finite value", line_no);
    freq.push_back(f);
    psd.push_back(v);
    line_of.push_back(line_no);
  }

  Spectrum s;
  if (!saw_header) {
    s.units = SpectrumUnits::raw_volts2;
    s.n_averages = 1;
    s.add_warning("legacy headerless file: units assumed raw_volts2, n_averages 1");
  } else {
    for (const char* key : {"units", "n_averages"})
      if (!header.count(key)) throw MissingHeaderError(std::string("missing header '") + key + "'");
    s.units = units_from_string(header.at("units"));
    const double m = header_number(header, "n_averages");
    if (m < 1.0 || m != std::floor(m)) throw IoError("n_averages must be a positive integer");
    s.n_averages = static_cast<int>(m);
  }
  if (freq.size() < 2) throw IoError("spectrum file needs at least two rows");

  s.grid.count = freq.size();
  s.grid.f_start = header.count("f_start") ? header_number(header, "f_start") : freq[0];
  s.grid.f_step = header.count("f_step") ? header_number(header, "f_step") : freq[1] - freq[0];
  if (!(s.grid.f_step > 0.0))
    throw NonUniformGridError("line " + std::to_string(line_of[1]) +
                                  ": frequencies must increase", line_of[1]);
  const double tol = 1e-6 * s.grid.f_step;
  for (std::size_t i = 0; i < freq.size(); ++i) {
    if (std::abs(freq[i] - s.grid.frequency(i)) > tol)
      throw NonUniformGridError("line " + std::to_string(line_of[i]) + ": frequency " +
                                    fmt17(freq[i]) + " off the uniform grid (expected " +
                                    fmt17(s.grid.frequency(i)) + ")",
                                line_of[i]);
  }
  s.values = std::move(psd);
  for (const auto& [k, v] : header) {
    if (k == "units" || k == "n_averages" || k == "f_start" || k == "f_step") continue;
    if (k == "warnings" && s.metadata.count(k))
      s.add_warning(v);
    else
      s.metadata[k] = v;
  }
  s.grid.validate();
  return s;
}

Spectrum read_spectrum(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("no such file '" + path.string() + "'");
  try {
    return parse_spectrum(read_file(path));
  } catch (const NonUniformGridError& e) {
    throw NonUniformGridError(path.string() + ": " + e.what(), e.row());
  } catch (const NonFiniteValueError& e) {
    throw NonFiniteValueError(path.string() + ": " + e.what(), e.row());
  } catch (const MissingHeaderError& e) {
    throw MissingHeaderError(path.string() + ": " + e.what());
  }
}

void write_spectrum(const Spectrum& spectrum, const fs::path& path) {
  write_file_atomic(path, format_spectrum(spectrum));
}

// ---- calibration -------------------------------------------------------

ToneCalibration calibrate_with_tone_detail(const Spectrum& spectrum, double tone_frequency_hz,
                                          double tone_power_hz2) {
  spectrum.validate(true);
  if (!(tone_power_hz2 > 0.0)) throw DomainError("tone power must be positive");
  const auto& g = spectrum.grid;
  if (tone_frequency_hz < g.f_start || tone_frequency_hz > g.f_stop())
    throw CalibrationError("tone frequency outside the spectrum");
  Spectrum in = spectrum.units == SpectrumUnits::normalized_model
                    ? spectrum.converted_to(SpectrumUnits::hz2_per_hz)
                    : spectrum;

  constexpr std::ptrdiff_t kLine = 2;   // bins either side taken as the line
  constexpr std::ptrdiff_t kLocal = 50;  // bins either side for the median
  const auto n = static_cast<std::ptrdiff_t>(in.size());
  const auto c = static_cast<std::ptrdiff_t>(g.index_of(tone_frequency_hz));
  std::vector<double> local;
  for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, c - kLocal);
       j <= std::min(n - 1, c + kLocal); ++j)
    if (std::abs(j - c) > kLine) local.push_back(in.values[j]);
  if (local.size() < 10) throw CalibrationError("too few bins around the tone for a background");
  std::nth_element(local.begin(), local.begin() + local.size() / 2, local.end());
  const double median = local[local.size() / 2];

  double peak = -INFINITY, area = 0.0;
  for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, c - kLine);
       j <= std::min(n - 1, c + kLine); ++j) {
    peak = std::max(peak, in.values[j]);
    area += (in.values[j] - median) * g.f_step;
  }
  if (!(median > 0.0) || !(peak >= 10.0 * median) || !(area > 0.0))
    throw CalibrationError("calibration tone at " + fmt17(tone_frequency_hz) +
                           " Hz not found at least 10x above the local background");

  ToneCalibration out;
  out.integrated_power = area;
  out.scale = tone_power_hz2 / area;
  out.spectrum = std::move(in);
  for (double& v : out.spectrum.values) v *= out.scale;
  out.spectrum.units = SpectrumUnits::hz2_per_hz;
  out.spectrum.metadata["calibration_scale"] = fmt17(out.scale);
  return out;
}

Spectrum calibrate_with_tone(const Spectrum& spectrum, double tone_frequency_hz,
                             double tone_power_hz2) {
  return calibrate_with_tone_detail(spectrum, tone_frequency_hz, tone_power_hz2).spectrum;
}

double convert_frequency_noise(double s_nu_nu, double omega) {
  if (!(omega > 0.0)) throw DomainError("frequency must be positive");
  const double f = rad_to_hz(omega);
  return s_nu_nu / (f * f);
}

double frequency_noise_from_phase(double s_phi_phi, double omega) {
  if (!(omega > 0.0)) throw DomainError("frequency must be positive");
  const double f = rad_to_hz(omega);
  return s_phi_phi * f * f;
}

namespace {

double length_per_frequency(const CavitySpec& cavity) {
  if (!cavity.cavity_length || !cavity.laser_frequency)
    throw DomainError("length conversion needs cavity_length and laser_frequency");
  return *cavity.cavity_length / *cavity.laser_frequency;
}

}  // namespace

double convert_snn_sll(double s_nu_nu, const CavitySpec& cavity) {
  const double r = length_per_frequency(cavity);
  return r * r * s_nu_nu;
}

double convert_sll_snn(double s_ll, const CavitySpec& cavity) {
  const double r = length_per_frequency(cavity);
  return s_ll / (r * r);
}

// ---- configuration -----------------------------------------------------

LaserNoise NoiseConfig::at(double omega_m) const {
  LaserNoise n;
  if (s_phi_phi) n.s_phi_phi = *s_phi_phi;
  else if (s_nu_nu) n.s_phi_phi = convert_frequency_noise(*s_nu_nu, omega_m);
  n.s_eps_eps = s_eps_eps;
  n.validate();
  return n;
}

void ExperimentConfig::validate() const {
  cavity.validate();
  if (modes.empty()) throw DomainError("config needs at least one mode");
  for (const auto& m : modes)
    if (m.g0 < 0.0) throw DomainError("g0 must be >= 0");
  detection.validate();
  if (noise && noise->s_phi_phi && noise->s_nu_nu)
    throw DomainError("give phase noise as s_phi_phi or s_nu_nu, not both");
  if (calibration_tone && !(calibration_tone->frequency > 0.0 && calibration_tone->power > 0.0))
    throw DomainError("calibration tone frequency and power must be positive");
  const auto& a = acquisition;
  if (a.n_averages < 1) throw DomainError("n_averages must be >= 1");
  if (!(a.bins_per_gamma > 0.0)) throw DomainError("bins_per_gamma must be positive");
  if (a.span_low < 0.0 || a.span_high < 0.0 || (a.span_high > 0.0 && a.span_high <= a.span_low))
    throw DomainError("acquisition span must satisfy 0 <= low < high");
  if (a.points < 1 || !(a.gamma_ratio_low > 0.0) || !(a.gamma_ratio_high >= a.gamma_ratio_low))
    throw DomainError("damping grid must have points >= 1 and 0 < low <= high");
  if (a.raw_scale && !(*a.raw_scale > 0.0)) throw DomainError("raw_scale must be positive");
  if (a.background) a.background->validate();
}

const ModeConfig& ExperimentConfig::mode(const std::string& label) const {
  if (modes.empty()) throw DomainError("config has no modes");
  if (label.empty()) return modes.front();
  for (const auto& m : modes)
    if (m.mode.label() == label) return m;
  throw DomainError("no mode labelled '" + label + "' in config");
}

namespace {

// Strict object reader: typed access with path-qualified errors, and a final
// check that every key was recognised.
class Obj {
 public:
  Obj(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw IoError(where_ + ": expected an object");
  }

  bool has(const std::string& k) const { return j_.contains(k) && !j_.at(k).is_null(); }

  double num(const std::string& k) {
    if (!has(k)) throw IoError(where_ + ": missing field '" + k + "'");
    return number(k);
  }
  double num(const std::string& k, double fallback) { return has(k) ? number(k) : (seen_.insert(k), fallback); }
  std::optional<double> opt(const std::string& k) {
    seen_.insert(k);
    if (!has(k)) return std::nullopt;
    return number(k);
  }
  // Non-finite values are stored as null.
  double num_or_inf(const std::string& k) {
    seen_.insert(k);
    if (j_.contains(k) && j_.at(k).is_null()) return INFINITY;
    return num(k);
  }
  std::string str(const std::string& k, const std::string& fallback = {}) {
    seen_.insert(k);
    if (!has(k)) return fallback;
    if (!j_.at(k).is_string()) throw IoError(where_ + "." + k + ": expected a string");
    return j_.at(k).get<std::string>();
  }
  bool flag(const std::string& k, bool fallback = false) {
    seen_.insert(k);
    if (!has(k)) return fallback;
    if (!j_.at(k).is_boolean()) throw IoError(where_ + "." + k + ": expected true/false");
    return j_.at(k).get<bool>();
  }
  std::uint64_t count(const std::string& k, std::uint64_t fallback = 0) {
    seen_.insert(k);
    if (!has(k)) return fallback;
    if (!j_.at(k).is_number_unsigned() && !j_.at(k).is_number_integer())
      throw IoError(where_ + "." + k + ": expected an integer");
    return j_.at(k).get<std::uint64_t>();
  }
  const json* child(const std::string& k) {
    seen_.insert(k);
    return has(k) ? &j_.at(k) : nullptr;
  }
  const json& need(const std::string& k) {
    if (const json* c = child(k)) return *c;
    throw IoError(where_ + ": missing field '" + k + "'");
  }
  std::string path(const std::string& k) const { return where_ + "." + k; }
  void done() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw IoError(where_ + ": unknown field '" + k + "'");
  }

 private:
  double number(const std::string& k) {
    seen_.insert(k);
    const json& v = j_.at(k);
    if (!v.is_number()) throw IoError(where_ + "." + k + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw IoError(where_ + "." + k + ": non-finite value");
    return d;
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json background_json(const BackgroundModel& b) {
  return {{"tail_offset", b.tail_offset},       {"tail_amplitude", b.tail_amplitude},
          {"tail_exponent", b.tail_exponent},   {"beat_center_hz", b.beat_center},
          {"beat_width_hz", b.beat_width},      {"beat_amplitude", b.beat_amplitude}};
}

BackgroundModel background_from(const json& j, const std::string& where) {
  Obj o(j, where);
  BackgroundModel b;
  b.tail_offset = o.num("tail_offset", 0.0);
  b.tail_amplitude = o.num("tail_amplitude", 0.0);
  b.tail_exponent = o.num("tail_exponent", 2.0);
  b.beat_center = o.num("beat_center_hz", 0.0);
  b.beat_width = o.num("beat_width_hz", 1.0);
  b.beat_amplitude = o.num("beat_amplitude", 0.0);
  o.done();
  return b;
}

}  // namespace

ExperimentConfig config_from_json(const json& root) {
  ExperimentConfig cfg;
  Obj top(root, "config");

  const json* cj = top.child("cavity");
  if (!cj) throw IoError("config: missing field 'cavity'");
  Obj c(*cj, "config.cavity");
  cfg.cavity.kappa = hz_to_rad(c.num("kappa_hz"));
  cfg.cavity.detuning = hz_to_rad(c.num("detuning_hz"));
  cfg.cavity.cavity_length = c.opt("length_m");
  cfg.cavity.laser_frequency = c.opt("laser_frequency_hz");
  if (const auto wl = c.opt("laser_wavelength_m")) {
    if (cfg.cavity.laser_frequency) throw IoError("config.cavity: give laser frequency or wavelength, not both");
    if (!(*wl > 0.0)) throw IoError("config.cavity.laser_wavelength_m must be positive");
    cfg.cavity.laser_frequency = speed_of_light / *wl;
  }
  cfg.cavity.input_transmission_ppm = c.opt("input_transmission_ppm");
  c.done();

  const json* mj = top.child("modes");
  if (!mj || !mj->is_array() || mj->empty()) throw IoError("config: 'modes' must be a non-empty array");
  for (std::size_t i = 0; i < mj->size(); ++i) {
    Obj m((*mj)[i], "config.modes[" + std::to_string(i) + "]");
    const double om = hz_to_rad(m.num("frequency_hz"));
    const double temp = m.num("temperature_k");
    const auto q = m.opt("q_factor");
    const auto lw = m.opt("linewidth_hz");
    if (q.has_value() == lw.has_value())
      throw IoError(m.path("q_factor") + ": give exactly one of q_factor, linewidth_hz");
    std::string label = m.str("label", "mode" + std::to_string(i));
    ModeConfig mc{q ? MechMode::from_q(om, *q, temp, label)
                    : MechMode(om, hz_to_rad(*lw), temp, label),
                  hz_to_rad(m.num("g0_hz", 0.0))};
    m.done();
    cfg.modes.push_back(std::move(mc));
  }

  cfg.detection = DetectionConfig::pdh(cfg.cavity.kappa);
  if (const json* dj = top.child("detection")) {
    Obj d(*dj, "config.detection");
    const std::string scheme = d.str("scheme", "pdh");
    if (scheme != "pdh" && scheme != "homodyne")
      throw IoError("config.detection.scheme: expected 'pdh' or 'homodyne'");
    cfg.detection.theta_lo = d.num("theta_lo_rad", cfg.detection.theta_lo);
    cfg.detection.probe_detuning = hz_to_rad(d.num("probe_detuning_hz", 0.0));
    cfg.detection.probe_kappa = hz_to_rad(d.num("probe_kappa_hz", rad_to_hz(cfg.cavity.kappa)));
    d.done();
  }

  if (const json* nj = top.child("noise")) {
    Obj n(*nj, "config.noise");
    NoiseConfig nc;
    nc.s_phi_phi = n.opt("s_phi_phi_rad2_per_hz");
    nc.s_nu_nu = n.opt("s_nu_nu_hz2_per_hz");
    nc.s_eps_eps = n.num("s_eps_eps_per_hz", 0.0);
    n.done();
    cfg.noise = nc;
  }

  if (const json* tj = top.child("calibration_tone")) {
    Obj t(*tj, "config.calibration_tone");
    cfg.calibration_tone = CalibrationTone{t.num("frequency_hz"), t.num("power_hz2")};
    t.done();
  }

  if (const json* aj = top.child("acquisition")) {
    Obj a(*aj, "config.acquisition");
    auto& q = cfg.acquisition;
    q.n_averages = static_cast<int>(a.count("n_averages", static_cast<std::uint64_t>(q.n_averages)));
    q.span_low = a.num("span_low_hz", q.span_low);
    q.span_high = a.num("span_high_hz", q.span_high);
    q.bins_per_gamma = a.num("bins_per_gamma", q.bins_per_gamma);
    q.vacuum_level = a.num("vacuum_level_hz2_per_hz", q.vacuum_level);
    if (const json* bj = a.child("background"))
      q.background = background_from(*bj, a.path("background"));
    q.raw_scale = a.opt("raw_scale");
    q.gamma_ratio_low = a.num("gamma_ratio_low", q.gamma_ratio_low);
    q.gamma_ratio_high = a.num("gamma_ratio_high", q.gamma_ratio_high);
    q.points = static_cast<int>(a.count("points", static_cast<std::uint64_t>(q.points)));
    if (const json* gj = a.child("gamma_opt_hz")) {
      if (!gj->is_array()) throw IoError(a.path("gamma_opt_hz") + ": expected an array");
      for (const auto& v : *gj) {
        if (!v.is_number()) throw IoError(a.path("gamma_opt_hz") + ": expected numbers");
        q.gamma_opt.push_back(hz_to_rad(v.get<double>()));
      }
    }
    a.done();
  }
  top.done();
  try {
    cfg.validate();
  } catch (const DomainError& e) {
    throw IoError(std::string("config: ") + e.what());
  }
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json c = {{"kappa_hz", rad_to_hz(cfg.cavity.kappa)},
            {"detuning_hz", rad_to_hz(cfg.cavity.detuning)}};
  if (cfg.cavity.cavity_length) c["length_m"] = *cfg.cavity.cavity_length;
  if (cfg.cavity.laser_frequency) c["laser_frequency_hz"] = *cfg.cavity.laser_frequency;
  if (cfg.cavity.input_transmission_ppm) c["input_transmission_ppm"] = *cfg.cavity.input_transmission_ppm;
  json modes = json::array();
  for (const auto& m : cfg.modes)
    modes.push_back({{"label", m.mode.label()},
                     {"frequency_hz", rad_to_hz(m.mode.omega_m())},
                     {"linewidth_hz", rad_to_hz(m.mode.gamma_m())},
                     {"temperature_k", m.mode.temperature()},
                     {"g0_hz", rad_to_hz(m.g0)}});
  json root = {{"cavity", c},
               {"modes", modes},
               {"detection",
                {{"theta_lo_rad", cfg.detection.theta_lo},
                 {"probe_detuning_hz", rad_to_hz(cfg.detection.probe_detuning)},
                 {"probe_kappa_hz", rad_to_hz(cfg.detection.probe_kappa)}}}};
  if (cfg.noise) {
    json n = {{"s_eps_eps_per_hz", cfg.noise->s_eps_eps}};
    if (cfg.noise->s_phi_phi) n["s_phi_phi_rad2_per_hz"] = *cfg.noise->s_phi_phi;
    if (cfg.noise->s_nu_nu) n["s_nu_nu_hz2_per_hz"] = *cfg.noise->s_nu_nu;
    root["noise"] = n;
  }
  if (cfg.calibration_tone)
    root["calibration_tone"] = {{"frequency_hz", cfg.calibration_tone->frequency},
                                {"power_hz2", cfg.calibration_tone->power}};
  const auto& q = cfg.acquisition;
  json a = {{"n_averages", q.n_averages},           {"span_low_hz", q.span_low},
            {"span_high_hz", q.span_high},          {"bins_per_gamma", q.bins_per_gamma},
            {"vacuum_level_hz2_per_hz", q.vacuum_level}, {"gamma_ratio_low", q.gamma_ratio_low},
            {"gamma_ratio_high", q.gamma_ratio_high}, {"points", q.points}};
  if (q.background) a["background"] = background_json(*q.background);
  if (q.raw_scale) a["raw_scale"] = *q.raw_scale;
  if (!q.gamma_opt.empty()) {
    json g = json::array();
    for (double v : q.gamma_opt) g.push_back(rad_to_hz(v));
    a["gamma_opt_hz"] = g;
  }
  root["acquisition"] = a;
  return root;
}

ExperimentConfig read_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": invalid JSON: " + e.what());
  }
  return config_from_json(j);
}

// ---- reports -----------------------------------------------------------

namespace {

constexpr const char* kPeakOrder[] = {"a0", "a1", "a2", "a3", "omega_eff", "gamma_eff"};

json measured_json(const Measured& m) {
  return {{"value", finite_or_null(m.value)}, {"sigma", finite_or_null(m.sigma)}};
}

Measured measured_from(const json& j, const std::string& where) {
  Obj o(j, where);
  Measured m{o.num_or_inf("value"), o.num_or_inf("sigma")};
  o.done();
  return m;
}

template <int N>
json matrix_json(const Eigen::Matrix<double, N, N>& m) {
  json rows = json::array();
  for (int i = 0; i < N; ++i) {
    json r = json::array();
    for (int k = 0; k < N; ++k) r.push_back(finite_or_null(m(i, k)));
    rows.push_back(r);
  }
  return rows;
}

template <int N>
Eigen::Matrix<double, N, N> matrix_from(const json& j, const std::string& where) {
  Eigen::Matrix<double, N, N> m;
  if (!j.is_array() || j.size() != N) throw IoError(where + ": expected a " + std::to_string(N) + "x" + std::to_string(N) + " matrix");
  for (int i = 0; i < N; ++i) {
    if (!j[i].is_array() || j[i].size() != N) throw IoError(where + ": bad matrix row");
    for (int k = 0; k < N; ++k) {
      if (!j[i][k].is_number()) throw IoError(where + ": non-numeric matrix entry");
      m(i, k) = j[i][k].get<double>();
    }
  }
  return m;
}

// Coefficients in the normalized scale: a0 (rad/s)^2/Hz, a1 per rad/s of
// that, a2 and a3 (rad/s)^2; centre and width as ordinary frequencies.
json coeffs_json(const LineshapeCoeffs& c) {
  return {{"a0", c.a0}, {"a1", c.a1}, {"a2", c.a2}, {"a3", c.a3},
          {"omega_eff_hz", rad_to_hz(c.omega_eff)}, {"gamma_eff_hz", rad_to_hz(c.gamma_eff)}};
}

LineshapeCoeffs coeffs_from(const json& j, const std::string& where) {
  Obj o(j, where);
  LineshapeCoeffs c;
  c.a0 = o.num("a0");
  c.a1 = o.num("a1");
  c.a2 = o.num("a2");
  c.a3 = o.num("a3");
  c.omega_eff = hz_to_rad(o.num("omega_eff_hz"));
  c.gamma_eff = hz_to_rad(o.num("gamma_eff_hz"));
  o.done();
  return c;
}

json peak_json(const PeakRecord& r) {
  const auto& f = r.fit;
  json order = json::array();
  for (const char* k : kPeakOrder) order.push_back(k);
  json fit = {{"joint", coeffs_json(f.coeffs)},
              {"joint_covariance", matrix_json<kPeakParams>(f.covariance)},
              {"joint_chi2", f.chi2},
              {"joint_reduced_chi2", f.reduced_chi2},
              {"lorentzian", coeffs_json(f.lorentzian)},
              {"lorentzian_covariance", matrix_json<kPeakParams>(f.lorentzian_covariance)},
              {"lorentzian_chi2", f.lorentzian_chi2},
              {"lorentzian_reduced_chi2", f.lorentzian_reduced_chi2},
              {"lorentzian_selected", f.lorentzian_selected},
              {"covariance_order", order},
              {"covariance_units", "normalized scale, rates in rad/s"},
              {"cov_a_eff_gamma", f.cov_a_eff_gamma},
              {"window", {{"f_low_hz", f.window.f_low}, {"f_high_hz", f.window.f_high}}},
              {"omega_center_hz", rad_to_hz(f.omega_center)},
              {"bins_used", f.bins_used},
              {"outliers_removed", f.outliers_removed}};
  if (f.theta) fit["theta_rad"] = *f.theta;
  if (f.a_eff) fit["a_eff"] = measured_json(*f.a_eff);
  json out = {{"source", r.source}, {"mode", r.mode}, {"fit", fit}};
  if (r.background) {
    const auto& b = *r.background;
    out["background"] = {{"model", background_json(b.model)},
                         {"sigma", background_json(b.sigma)},
                         {"units", std::string(to_string(b.units))},
                         {"has_beat", b.has_beat},
                         {"reduced_chi2", b.reduced_chi2},
                         {"bins_used", b.bins_used}};
  }
  return out;
}

PeakRecord peak_from(const json& j, const std::string& where) {
  Obj o(j, where);
  PeakRecord r;
  r.source = o.str("source");
  r.mode = o.str("mode");
  const json* fj = o.child("fit");
  if (!fj) throw IoError(where + ": missing field 'fit'");
  Obj f(*fj, where + ".fit");
  auto& p = r.fit;
  p.coeffs = coeffs_from(f.need("joint"), f.path("joint"));
  if (const json* c = f.child("joint_covariance")) p.covariance = matrix_from<kPeakParams>(*c, f.path("joint_covariance"));
  p.chi2 = f.num("joint_chi2");
  p.reduced_chi2 = f.num("joint_reduced_chi2");
  if (const json* c = f.child("lorentzian")) p.lorentzian = coeffs_from(*c, f.path("lorentzian"));
  if (const json* c = f.child("lorentzian_covariance"))
    p.lorentzian_covariance = matrix_from<kPeakParams>(*c, f.path("lorentzian_covariance"));
  p.lorentzian_chi2 = f.num("lorentzian_chi2", 0.0);
  p.lorentzian_reduced_chi2 = f.num("lorentzian_reduced_chi2", 0.0);
  p.lorentzian_selected = f.flag("lorentzian_selected");
  f.child("covariance_order");
  f.str("covariance_units");
  p.cov_a_eff_gamma = f.num("cov_a_eff_gamma", 0.0);
  if (const json* w = f.child("window")) {
    Obj wo(*w, f.path("window"));
    p.window = {wo.num("f_low_hz"), wo.num("f_high_hz")};
    wo.done();
  }
  p.omega_center = hz_to_rad(f.num("omega_center_hz", 0.0));
  p.bins_used = f.count("bins_used");
  p.outliers_removed = f.count("outliers_removed");
  p.theta = f.opt("theta_rad");
  if (const json* a = f.child("a_eff")) p.a_eff = measured_from(*a, f.path("a_eff"));
  f.done();
  if (const json* bj = o.child("background")) {
    Obj b(*bj, where + ".background");
    BackgroundFit bf;
    bf.model = background_from(b.need("model"), b.path("model"));
    if (const json* s = b.child("sigma")) bf.sigma = background_from(*s, b.path("sigma"));
    bf.units = units_from_string(b.str("units", "hz2_per_hz"));
    bf.has_beat = b.flag("has_beat");
    bf.reduced_chi2 = b.num("reduced_chi2", 0.0);
    bf.bins_used = b.count("bins_used");
    b.done();
    r.background = bf;
  }
  o.done();
  return r;
}

json point_json(const CoolingPoint& p) {
  return {{"gamma_eff_hz", rad_to_hz(p.gamma_eff)}, {"sigma_gamma_hz", rad_to_hz(p.sigma_gamma)},
          {"a_eff", p.a_eff},   {"sigma_a_eff", p.sigma_a_eff},
          {"cov_a_gamma", p.cov_a_gamma}, {"a3", p.a3}, {"sigma_a3", p.sigma_a3}};
}

CoolingPoint point_from(const json& j, const std::string& where) {
  Obj o(j, where);
  CoolingPoint p;
  p.gamma_eff = hz_to_rad(o.num("gamma_eff_hz"));
  p.sigma_gamma = hz_to_rad(o.num("sigma_gamma_hz"));
  p.a_eff = o.num("a_eff");
  p.sigma_a_eff = o.num("sigma_a_eff");
  p.cov_a_gamma = o.num("cov_a_gamma", 0.0);
  p.a3 = o.num("a3", 0.0);
  p.sigma_a3 = o.num("sigma_a3", 0.0);
  o.done();
  return p;
}

json cooling_json(const CoolingRecord& c) {
  json pts = json::array();
  for (const auto& p : c.points) pts.push_back(point_json(p));
  const auto& k = c.curve;
  const auto& e = c.extraction;
  return {
      {"units", "a_eff, b1 in (rad/s)^2 and (rad/s)^3; b2, slope in rad/s; covariance of (b1, b2)"},
      {"points", pts},
      {"theta_rad", c.theta},
      {"curve",
       {{"b1", k.b1}, {"b2", k.b2}, {"covariance", matrix_json<2>(k.covariance)},
        {"chi2", k.chi2}, {"reduced_chi2", k.reduced_chi2}, {"dof", k.dof},
        {"g0_hz", measured_json({rad_to_hz(k.g0.value), rad_to_hz(k.g0.sigma)})},
        {"n_min", measured_json(k.n_min)},
        {"gamma_min_hz", measured_json({rad_to_hz(k.gamma_min.value), rad_to_hz(k.gamma_min.sigma)})},
        {"warnings", k.warnings}}},
      {"dispersive_slope", measured_json(c.dispersive_slope)},
      {"discrimination",
       {{"dominance", std::string(to_string(c.discrimination.dominance))},
        {"inverse_sin_2theta", finite_or_null(c.discrimination.inverse_sin_2theta)},
        {"ratio", measured_json(c.discrimination.ratio)},
        {"phase_fraction", measured_json(c.discrimination.phase_fraction)}}},
      {"noise",
       {{"dominance", std::string(to_string(e.dominance))},
        {"s_eff_per_hz", measured_json(e.s_eff)},
        {"s_phi_phi_rad2_per_hz", measured_json(e.s_phi_phi)},
        {"s_eps_eps_per_hz", measured_json(e.s_eps_eps)},
        {"s_nu_nu_hz2_per_hz", measured_json(e.s_nu_nu)},
        {"phase_is_upper_limit", e.phase_is_upper_limit},
        {"amplitude_is_upper_limit", e.amplitude_is_upper_limit}}},
      {"t_eff_k", measured_json(c.t_eff)},
      {"q_eff", measured_json(c.q_eff)}};
}

CoolingRecord cooling_from(const json& j, const std::string& where) {
  Obj o(j, where);
  CoolingRecord c;
  o.str("units");
  const json* pj = o.child("points");
  if (!pj || !pj->is_array()) throw IoError(where + ": 'points' must be an array");
  for (std::size_t i = 0; i < pj->size(); ++i)
    c.points.push_back(point_from((*pj)[i], where + ".points[" + std::to_string(i) + "]"));
  c.theta = o.num("theta_rad");

  const json* kj = o.child("curve");
  if (!kj) throw IoError(where + ": missing 'curve'");
  Obj k(*kj, where + ".curve");
  auto& cv = c.curve;
  cv.b1 = k.num("b1");
  cv.b2 = k.num("b2");
  cv.covariance = matrix_from<2>(k.need("covariance"), k.path("covariance"));
  cv.chi2 = k.num("chi2");
  cv.reduced_chi2 = k.num("reduced_chi2");
  cv.dof = static_cast<int>(k.num("dof"));
  const auto hz_measured = [&](const std::string& key) {
    const json* m = k.child(key);
    if (!m) throw IoError(k.path(key) + ": missing");
    const Measured v = measured_from(*m, k.path(key));
    return Measured{hz_to_rad(v.value), hz_to_rad(v.sigma)};
  };
  cv.g0 = hz_measured("g0_hz");
  cv.gamma_min = hz_measured("gamma_min_hz");
  if (const json* m = k.child("n_min")) cv.n_min = measured_from(*m, k.path("n_min"));
  if (const json* w = k.child("warnings")) cv.warnings = w->get<std::vector<std::string>>();
  k.done();

  if (const json* m = o.child("dispersive_slope")) c.dispersive_slope = measured_from(*m, where + ".dispersive_slope");

  if (const json* dj = o.child("discrimination")) {
    Obj d(*dj, where + ".discrimination");
    c.discrimination.dominance = dominance_from_string(d.str("dominance", "indeterminate"));
    c.discrimination.inverse_sin_2theta = d.num_or_inf("inverse_sin_2theta");
    if (const json* m = d.child("ratio")) c.discrimination.ratio = measured_from(*m, d.path("ratio"));
    if (const json* m = d.child("phase_fraction"))
      c.discrimination.phase_fraction = measured_from(*m, d.path("phase_fraction"));
    d.done();
  }
  if (const json* nj = o.child("noise")) {
    Obj n(*nj, where + ".noise");
    auto& e = c.extraction;
    e.dominance = dominance_from_string(n.str("dominance", "indeterminate"));
    const auto m = [&](const std::string& key, Measured& out) {
      if (const json* v = n.child(key)) out = measured_from(*v, n.path(key));
    };
    m("s_eff_per_hz", e.s_eff);
    m("s_phi_phi_rad2_per_hz", e.s_phi_phi);
    m("s_eps_eps_per_hz", e.s_eps_eps);
    m("s_nu_nu_hz2_per_hz", e.s_nu_nu);
    e.phase_is_upper_limit = n.flag("phase_is_upper_limit");
    e.amplitude_is_upper_limit = n.flag("amplitude_is_upper_limit");
    n.done();
  }
  if (const json* m = o.child("t_eff_k")) c.t_eff = measured_from(*m, where + ".t_eff_k");
  if (const json* m = o.child("q_eff")) c.q_eff = measured_from(*m, where + ".q_eff");
  o.done();
  return c;
}

}  // namespace

json report_to_json(const FitReport& r) {
  json peaks = json::array();
  for (const auto& p : r.peaks) peaks.push_back(peak_json(p));
  json prov = {{"input_files", r.provenance.input_files},
               {"tool_version", r.provenance.tool_version}};
  if (r.provenance.seed) prov["seed"] = *r.provenance.seed;
  json out = {{"peaks", peaks}, {"provenance", prov}, {"warnings", r.warnings}};
  if (r.cooling) out["cooling"] = cooling_json(*r.cooling);
  return out;
}

FitReport report_from_json(const json& j) {
  FitReport r;
  Obj o(j, "report");
  if (const json* pj = o.child("peaks")) {
    if (!pj->is_array()) throw IoError("report.peaks: expected an array");
    for (std::size_t i = 0; i < pj->size(); ++i)
      r.peaks.push_back(peak_from((*pj)[i], "report.peaks[" + std::to_string(i) + "]"));
  }
  if (const json* cj = o.child("cooling")) r.cooling = cooling_from(*cj, "report.cooling");
  if (const json* pv = o.child("provenance")) {
    Obj p(*pv, "report.provenance");
    if (const json* f = p.child("input_files")) r.provenance.input_files = f->get<std::vector<std::string>>();
    if (p.has("seed")) r.provenance.seed = p.count("seed");
    else p.count("seed");
    r.provenance.tool_version = p.str("tool_version");
    p.done();
  }
  if (const json* w = o.child("warnings")) r.warnings = w->get<std::vector<std::string>>();
  o.done();
  return r;
}

void write_report(const FitReport& report, const fs::path& path) {
  write_file_atomic(path, report_to_json(report).dump(2) + "\n");
}

FitReport read_report(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": invalid JSON: " + e.what());
  }
  try {
    return report_from_json(j);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace optocool
