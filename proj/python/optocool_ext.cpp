// Python bindings. Rates are angular (rad/s) as in the C++ core; configs and
// reports cross the boundary as plain dicts in their JSON layout.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "optocool/errors.hpp"
#include "optocool/pipeline.hpp"

namespace py = pybind11;
using namespace optocool;

namespace {

py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_py(const py::handle& obj) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

ExperimentConfig as_config(const py::handle& obj) {
  if (py::isinstance<py::str>(obj) || py::hasattr(obj, "__fspath__"))
    return read_config(py::module_::import("os").attr("fspath")(obj).cast<std::string>());
  return config_from_json(from_py(obj));
}

py::array_t<double> as_array(const std::vector<double>& v) {
  return py::array_t<double>(static_cast<py::ssize_t>(v.size()), v.data());
}

std::vector<std::string> split_warnings(const Spectrum& s) {
  std::vector<std::string> out;
  auto it = s.metadata.find("warnings");
  if (it == s.metadata.end()) return out;
  std::size_t pos = 0;
  for (;;) {
    const auto next = it->second.find("; ", pos);
    out.push_back(it->second.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
    if (next == std::string::npos) return out;
    pos = next + 2;
  }
}

Provenance provenance() {
  Provenance p;
  p.tool_version = tool_version();
  return p;
}

DriveField drive(double g0, std::optional<double> gamma_opt, std::optional<double> photon_flux) {
  if (gamma_opt.has_value() == photon_flux.has_value())
    throw DomainError("give exactly one of gamma_opt and photon_flux");
  if (gamma_opt) return {g0, OpticalDamping{*gamma_opt}};
  return {g0, PhotonFlux{*photon_flux}};
}

}  // namespace

PYBIND11_MODULE(_optocool, m) {
  m.doc() = "Sideband-cooling spectra: closed forms, synthesis and fits";
  m.attr("__version__") = std::string(tool_version());

  static py::exception<Error> error(m, "OptocoolError", PyExc_RuntimeError);
  static py::exception<DomainError> domain(m, "DomainError", error.ptr());
  static py::exception<InstabilityError> unstable(m, "InstabilityError", error.ptr());
  static py::exception<UnitMismatchError> units(m, "UnitMismatchError", error.ptr());
  static py::exception<FitError> fit(m, "FitError", error.ptr());
  static py::exception<NoPeakError> no_peak(m, "NoPeakError", error.ptr());
  static py::exception<CalibrationError> calibration(m, "CalibrationError", error.ptr());
  static py::exception<IoError> io(m, "IoError", error.ptr());
  static py::exception<MissingHeaderError> header(m, "MissingHeaderError", io.ptr());
  static py::exception<NonUniformGridError> grid(m, "NonUniformGridError", io.ptr());
  static py::exception<NonFiniteValueError> finite(m, "NonFiniteValueError", io.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const NonUniformGridError& e) {
      py::set_error(grid, e.what());
    } catch (const NonFiniteValueError& e) {
      py::set_error(finite, e.what());
    } catch (const MissingHeaderError& e) {
      py::set_error(header, e.what());
    } catch (const IoError& e) {
      py::set_error(io, e.what());
    } catch (const InstabilityError& e) {
      py::set_error(unstable, e.what());
    } catch (const DomainError& e) {
      py::set_error(domain, e.what());
    } catch (const UnitMismatchError& e) {
      py::set_error(units, e.what());
    } catch (const FitError& e) {
      py::set_error(fit, e.what());
    } catch (const NoPeakError& e) {
      py::set_error(no_peak, e.what());
    } catch (const CalibrationError& e) {
      py::set_error(calibration, e.what());
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.def("hz_to_rad", &hz_to_rad);
  m.def("rad_to_hz", &rad_to_hz);

  // ---- physics ----------------------------------------------------------

  py::class_<CavitySpec>(m, "CavitySpec")
      .def(py::init([](double kappa, double detuning) {
             CavitySpec c{kappa, detuning, {}, {}, {}};
             c.validate();
             return c;
           }),
           py::arg("kappa"), py::arg("detuning"))
      .def_readwrite("kappa", &CavitySpec::kappa)
      .def_readwrite("detuning", &CavitySpec::detuning);

  py::class_<MechMode>(m, "MechMode")
      .def(py::init<double, double, double, std::string>(), py::arg("omega_m"), py::arg("gamma_m"),
           py::arg("temperature"), py::arg("label") = "")
      .def_static("from_q", &MechMode::from_q, py::arg("omega_m"), py::arg("q_factor"),
                  py::arg("temperature"), py::arg("label") = "")
      .def_property_readonly("omega_m", &MechMode::omega_m)
      .def_property_readonly("gamma_m", &MechMode::gamma_m)
      .def_property_readonly("q_factor", &MechMode::q_factor)
      .def_property_readonly("temperature", &MechMode::temperature)
      .def_property_readonly("label", &MechMode::label)
      .def("with_q", &MechMode::with_q);

  py::class_<LaserNoise>(m, "LaserNoise")
      .def(py::init([](double s_phi_phi, double s_eps_eps) {
             LaserNoise n{s_phi_phi, s_eps_eps};
             n.validate();
             return n;
           }),
           py::arg("s_phi_phi") = 0.0, py::arg("s_eps_eps") = 0.0)
      .def_readwrite("s_phi_phi", &LaserNoise::s_phi_phi)
      .def_readwrite("s_eps_eps", &LaserNoise::s_eps_eps);

  py::class_<OccupancyBudget>(m, "OccupancyBudget")
      .def_readonly("n_th", &OccupancyBudget::n_th)
      .def_readonly("n_ba", &OccupancyBudget::n_ba)
      .def_readonly("n_exc", &OccupancyBudget::n_exc)
      .def_readonly("n_exc_phase", &OccupancyBudget::n_exc_phase)
      .def_readonly("n_exc_amplitude", &OccupancyBudget::n_exc_amplitude)
      .def_readonly("n_eff", &OccupancyBudget::n_eff)
      .def_readonly("gamma_opt", &OccupancyBudget::gamma_opt)
      .def_readonly("gamma_eff", &OccupancyBudget::gamma_eff)
      .def_readonly("omega_eff", &OccupancyBudget::omega_eff)
      .def_readonly("photon_flux", &OccupancyBudget::photon_flux);

  py::class_<MinimumOccupancy>(m, "MinimumOccupancy")
      .def_readonly("n_min", &MinimumOccupancy::n_min)
      .def_readonly("gamma_min", &MinimumOccupancy::gamma_min);

  m.def("thermal_occupation", &thermal_occupation);
  m.def("sideband_angle", &sideband_angle, py::arg("cavity"), py::arg("omega_m"));
  m.def("amplitude_factor", &amplitude_factor, py::arg("cavity"), py::arg("omega_m"));
  m.def("backaction_occupancy", &backaction_occupancy, py::arg("cavity"), py::arg("omega_m"));
  m.def("effective_temperature", &effective_temperature, py::arg("occupancy"), py::arg("omega"));
  m.def(
      "effective_occupancy",
      [](const MechMode& mode, const CavitySpec& cavity, double g0, const LaserNoise& noise,
         std::optional<double> gamma_opt, std::optional<double> photon_flux) {
        return effective_occupancy(mode, cavity, drive(g0, gamma_opt, photon_flux), noise);
      },
      py::arg("mode"), py::arg("cavity"), py::arg("g0"), py::arg("noise"), py::kw_only(),
      py::arg("gamma_opt") = py::none(), py::arg("photon_flux") = py::none());
  m.def("min_occupancy", &min_occupancy, py::arg("mode"), py::arg("cavity"), py::arg("g0"),
        py::arg("noise"));
  m.def(
      "required_quality_factor",
      [](double target, const MechMode& mode, const CavitySpec& cavity, double g0, const LaserNoise& noise) {
        const auto r = required_quality_factor(target, mode, cavity, g0, noise);
        return py::make_tuple(r.q_factor, r.no_op);
      },
      py::arg("target_n_min"), py::arg("mode"), py::arg("cavity"), py::arg("g0"), py::arg("noise"));

  // ---- spectra ----------------------------------------------------------

  py::class_<Spectrum>(m, "Spectrum")
      .def(py::init([](double f_start, double f_step, std::vector<double> values, const std::string& units,
                       int n_averages) {
             Spectrum s;
             s.grid = {f_start, f_step, values.size()};
             s.values = std::move(values);
             s.units = units_from_string(units);
             s.n_averages = n_averages;
             s.validate(true);
             return s;
           }),
           py::arg("f_start"), py::arg("f_step"), py::arg("values"), py::arg("units") = "hz2_per_hz",
           py::arg("n_averages") = 1)
      .def_property_readonly("f_start", [](const Spectrum& s) { return s.grid.f_start; })
      .def_property_readonly("f_step", [](const Spectrum& s) { return s.grid.f_step; })
      .def_property_readonly("frequencies",
                             [](const Spectrum& s) {
                               std::vector<double> f(s.size());
                               for (std::size_t i = 0; i < f.size(); ++i) f[i] = s.frequency(i);
                               return as_array(f);
                             })
      .def_property_readonly("values", [](const Spectrum& s) { return as_array(s.values); })
      .def_property_readonly("units", [](const Spectrum& s) { return std::string(to_string(s.units)); })
      .def_readonly("n_averages", &Spectrum::n_averages)
      .def_readonly("metadata", &Spectrum::metadata)
      .def("__len__", &Spectrum::size)
      .def("to_csv", &format_spectrum);

  m.def("read_spectrum", &read_spectrum, py::arg("path"));
  m.def("parse_spectrum", &parse_spectrum, py::arg("text"));
  m.def("write_spectrum", &write_spectrum, py::arg("spectrum"), py::arg("path"));

  // ---- configs, synthesis and fits --------------------------------------

  m.def(
      "load_config", [](const py::object& cfg) { return to_py(config_to_json(as_config(cfg))); },
      py::arg("config"), "Validated config as a dict, from a path or a dict.");

  m.def(
      "synthesize",
      [](const py::object& cfg, std::uint64_t seed, const std::string& mode) {
        const Campaign c = synthesize_campaign(as_config(cfg), mode, seed);
        std::vector<Spectrum> spectra;
        for (const auto& p : c.points) spectra.push_back(p.spectrum);
        return py::make_tuple(spectra, to_py(truth_manifest(c, {})));
      },
      py::arg("config"), py::arg("seed"), py::arg("mode") = "",
      "Seeded campaign: (spectra, truth manifest).");

  m.def(
      "fit_peak",
      [](const Spectrum& spectrum, const py::object& cfg, const std::string& mode,
         std::optional<double> window_hz, const std::string& source) {
        AnalysisOptions opt;
        opt.mode = mode;
        opt.window_hz = window_hz;
        SpectrumAnalysis a = analyze_spectrum(spectrum, as_config(cfg), opt);
        a.record.source = source;
        FitReport report;
        report.peaks.push_back(a.record);
        report.provenance = provenance();
        if (auto it = spectrum.metadata.find("seed"); it != spectrum.metadata.end())
          report.provenance.seed = std::stoull(it->second);
        report.warnings = split_warnings(a.corrected);
        return to_py(report_to_json(report));
      },
      py::arg("spectrum"), py::arg("config"), py::arg("mode") = "", py::arg("window_hz") = py::none(),
      py::arg("source") = "", "Background-corrected peak fit as a report dict.");

  m.def(
      "cooling_curve",
      [](const std::vector<py::object>& reports, const py::object& cfg, const std::string& mode) {
        FitReport out;
        out.provenance = provenance();
        for (const auto& r : reports) {
          FitReport part = report_from_json(from_py(r));
          for (auto& p : part.peaks) out.peaks.push_back(std::move(p));
          if (part.provenance.seed && !out.provenance.seed) out.provenance.seed = part.provenance.seed;
        }
        out.cooling = analyze_cooling(out.peaks, as_config(cfg), mode);
        out.warnings = out.cooling->curve.warnings;
        return to_py(report_to_json(out));
      },
      py::arg("reports"), py::arg("config"), py::arg("mode") = "",
      "Cooling curve and noise extraction from fit_peak reports.");

  m.def(
      "predict",
      [](const py::object& cfg, const std::string& sweep, double from, double to, int points,
         bool geometric, const std::string& mode) {
        const auto rows = predict(as_config(cfg), mode, {sweep_kind_from_string(sweep), from, to, points, geometric});
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["x"] = r.x;
          d["detuning"] = r.detuning;
          d["q_factor"] = r.q_factor;
          d["gamma_opt"] = r.gamma_opt;
          d["n_ba"] = r.n_ba;
          d["n_exc"] = r.n_exc;
          d["n_eff"] = r.n_eff;
          d["n_min"] = r.n_min;
          d["gamma_min"] = r.gamma_min;
          d["theta"] = r.theta;
          d["a_factor"] = r.a_factor;
          d["flag"] = r.flag;
          out.append(d);
        }
        return out;
      },
      py::arg("config"), py::arg("sweep"), py::arg("start"), py::arg("stop"), py::arg("points") = 11,
      py::arg("geometric") = false, py::arg("mode") = "");

  // ---- unit conversions -------------------------------------------------

  m.def("phase_from_frequency_noise", &convert_frequency_noise, py::arg("s_nu_nu"), py::arg("omega"));
  m.def("frequency_from_phase_noise", &frequency_noise_from_phase, py::arg("s_phi_phi"), py::arg("omega"));
  m.def(
      "snn_to_sll", [](double s_nu_nu, const py::object& cfg) { return convert_snn_sll(s_nu_nu, as_config(cfg).cavity); },
      py::arg("s_nu_nu"), py::arg("config"));
  m.def(
      "sll_to_snn", [](double s_ll, const py::object& cfg) { return convert_sll_snn(s_ll, as_config(cfg).cavity); },
      py::arg("s_ll"), py::arg("config"));
}
