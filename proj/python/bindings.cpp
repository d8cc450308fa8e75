#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "relastic/scenario.hpp"

namespace py = pybind11;
using namespace relastic;

namespace {

Eigen::MatrixXd rows(const std::vector<Vec3>& v) {
    Eigen::MatrixXd m(v.size(), 3);
    for (std::size_t i = 0; i < v.size(); ++i) m.row(i) = v[i].transpose();
    return m;
}

py::dict metrics_dict(const Metrics& m) {
    py::dict d;
    d["linf_rel"] = m.linf_rel;
    d["l2_rel"] = m.l2_rel;
    d["valid"] = m.valid;
    d["masked"] = m.masked;
    d["silent_masked"] = m.silent_masked;
    return d;
}

py::dict run(const std::string& config_json) {
    const ScenarioConfig c = parse_config(config_json);
    ScenarioOutcome o;
    {
        py::gil_scoped_release nogil;
        o = run_pipeline(c);
    }
    const ReconstructionResult& r = o.result;
    std::vector<std::string> reasons;
    for (MaskReason m : r.mask) reasons.emplace_back(to_string(m));
    py::dict d;
    d["z"] = rows(r.z);
    d["rho_true"] = o.rho_true;
    d["rho_rec"] = r.rho;
    d["mask"] = reasons;
    d["fault"] = r.fault;
    d["squared_moment"] = r.squared_moment;
    d["metrics"] = metrics_dict(o.metrics);
    d["omega_inc"] = o.setup.res.omega_inc;
    d["config_hash"] = config_hash(c);
    return d;
}

py::dict spectrum(int b_cells, const ElasticMedium& m) {
    const EigenSystem e = compute_spectrum(ball_grid(b_cells, unit_ball_radius()), m);
    py::dict d;
    d["eigenvalues"] = e.eigenvalues;
    d["moments"] = rows(e.moments);
    d["cluster"] = e.cluster;
    d["total_volume"] = e.total_volume;
    return d;
}

}  // namespace

PYBIND11_MODULE(_relastic, mod) {
    mod.doc() = "Elastic density reconstruction from resonant inclusions";

    py::register_exception<ConfigError>(mod, "ConfigError", PyExc_ValueError);

    py::class_<ElasticMedium>(mod, "Medium")
        .def(py::init([](double lam, double mu, double rho_tilde) {
                 ElasticMedium m;
                 m.lam = lam;
                 m.mu = mu;
                 m.rho_tilde = rho_tilde;
                 m.validate();
                 return m;
             }),
             py::arg("lam") = 1.0, py::arg("mu") = 1.0, py::arg("rho_tilde") = 1.0)
        .def_readonly("lam", &ElasticMedium::lam)
        .def_readonly("mu", &ElasticMedium::mu)
        .def_readonly("rho_tilde", &ElasticMedium::rho_tilde)
        .def("__repr__", [](const ElasticMedium& m) {
            return "Medium(lam=" + std::to_string(m.lam) + ", mu=" + std::to_string(m.mu) +
                   ", rho_tilde=" + std::to_string(m.rho_tilde) + ")";
        });

    mod.def("kupradze", &kupradze_matrix, py::arg("x"), py::arg("y"), py::arg("omega"), py::arg("medium"),
            "time-harmonic fundamental solution, 3x3 complex");
    mod.def("kelvin", &kelvin_matrix, py::arg("x"), py::arg("y"), py::arg("medium"), "static fundamental solution");
    mod.def(
        "wavenumbers",
        [](const ElasticMedium& m, double omega) {
            const Wavenumbers k = wavenumbers(m, omega);
            return py::make_tuple(k.kappa_p, k.kappa_s);
        },
        py::arg("medium"), py::arg("omega"));
    mod.def("spectrum", &spectrum, py::arg("b_cells"), py::arg("medium"),
            "eigenpairs of the static volume potential on the voxel ball");
    mod.def(
        "canonical_config", [](const std::string& text) { return config_to_json(parse_config(text)); },
        py::arg("config_json"));
    mod.def(
        "config_hash", [](const std::string& text) { return config_hash(parse_config(text)); },
        py::arg("config_json"));
    mod.def("run", &run, py::arg("config_json"), "simulate then invert, returns arrays and metrics");
}
