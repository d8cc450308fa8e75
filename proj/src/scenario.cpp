#include "relastic/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace relastic {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---- strict JSON reading ----

class Obj {
public:
    Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    }
    ~Obj() noexcept(false) {
        if (std::uncaught_exceptions()) return;
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) throw ConfigError("unknown key \"" + it.key() + "\" in " + where());
    }
    bool has(const std::string& k) {
        used_.insert(k);
        return j_.contains(k);
    }
    const json& at(const std::string& k) {
        used_.insert(k);
        return j_.at(k);
    }
    std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

    void num(const std::string& k, double& out) {
        if (!has(k)) return;
        const json& v = j_.at(k);
        if (!v.is_number()) throw ConfigError(key(k) + " must be a number");
        out = v.get<double>();
    }
    void integer(const std::string& k, int& out) {
        if (!has(k)) return;
        const json& v = j_.at(k);
        if (!v.is_number_integer()) throw ConfigError(key(k) + " must be an integer");
        out = v.get<int>();
    }
    void u64(const std::string& k, std::uint64_t& out) {
        if (!has(k)) return;
        const json& v = j_.at(k);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
            throw ConfigError(key(k) + " must be a non-negative integer");
        out = v.get<std::uint64_t>();
    }
    void str(const std::string& k, std::string& out) {
        if (!has(k)) return;
        const json& v = j_.at(k);
        if (!v.is_string()) throw ConfigError(key(k) + " must be a string");
        out = v.get<std::string>();
    }
    void vec3(const std::string& k, Vec3& out) {
        if (!has(k)) return;
        const json& v = j_.at(k);
        if (!v.is_array() || v.size() != 3) throw ConfigError(key(k) + " must be an array of 3 numbers");
        for (int i = 0; i < 3; ++i) {
            if (!v[i].is_number()) throw ConfigError(key(k) + " must be an array of 3 numbers");
            out[i] = v[i].get<double>();
        }
    }
    void list(const std::string& k, std::vector<double>& out) {
        if (!has(k)) return;
        const json& v = j_.at(k);
        if (!v.is_array()) throw ConfigError(key(k) + " must be an array");
        out.clear();
        for (const auto& e : v) {
            if (!e.is_number()) throw ConfigError(key(k) + " must contain numbers");
            out.push_back(e.get<double>());
        }
    }

private:
    std::string where() const { return path_.empty() ? "config root" : "\"" + path_ + "\""; }
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

json j3(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }
json jc(cplx c) { return json::array({c.real(), c.imag()}); }
json jc3(const Vec3c& v) { return json::array({jc(v[0]), jc(v[1]), jc(v[2])}); }
Vec3 r3(const json& j) { return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }
cplx rc(const json& j) { return cplx(j.at(0).get<double>(), j.at(1).get<double>()); }
Vec3c rc3(const json& j) { return Vec3c(rc(j.at(0)), rc(j.at(1)), rc(j.at(2))); }

const char* phantom_name(PhantomKind k) {
    switch (k) {
        case PhantomKind::constant: return "constant";
        case PhantomKind::gaussian_bump: return "gaussian-bump";
        case PhantomKind::layered: return "layered";
    }
    return "?";
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// complex Gaussian with E|xi|^2 = 1; Box-Muller on our own uniform draws so the
// stream does not depend on the library's normal_distribution
struct Gauss {
    explicit Gauss(std::uint64_t seed) : rng(seed) {}
    cplx next() {
        const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
        const double u2 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
        const double r = std::sqrt(-std::log(u1));  // |xi|^2 = r^2 has mean 1
        return std::polar(r, 2.0 * kPi * u2);
    }
    std::mt19937_64 rng;
};

json farfield_json(const FarField& f) {
    json nodes = json::array(), w = json::array(), p = json::array(), s = json::array();
    for (std::size_t k = 0; k < f.sphere.size(); ++k) {
        nodes.push_back(j3(f.sphere.nodes[k]));
        w.push_back(f.sphere.weights[k]);
        p.push_back(jc3(f.p_values[k]));
        s.push_back(jc3(f.s_values[k]));
    }
    return json{{"nodes", nodes}, {"weights", w}, {"p", p}, {"s", s}};
}

FarField farfield_from(const json& j) {
    FarField f;
    for (const auto& n : j.at("nodes")) f.sphere.nodes.push_back(r3(n));
    for (const auto& w : j.at("weights")) f.sphere.weights.push_back(w.get<double>());
    for (const auto& v : j.at("p")) f.p_values.push_back(rc3(v));
    for (const auto& v : j.at("s")) f.s_values.push_back(rc3(v));
    if (f.p_values.size() != f.sphere.size() || f.s_values.size() != f.sphere.size())
        throw std::runtime_error("far field record: inconsistent sizes");
    return f;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_num(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    return std::stod(s);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
}

// Far field of the background Green column W = G(., z) q on the cells, plus the direct term.
void green_far(const BackgroundSolver& bs, const ComplexField3& W, const Vec3& z, const Vec3c& q,
               const SphereGrid& dirs, std::vector<Vec3c>& p, std::vector<Vec3c>& s) {
    const ElasticMedium& m = bs.background().medium;
    const double w = bs.omega();
    const FarField f = bs.far(W, dirs);
    p.resize(dirs.size());
    s.resize(dirs.size());
    for (std::size_t k = 0; k < dirs.size(); ++k) {
        const FarFieldKernel g = farfield_pattern(dirs.nodes[k], z, w, m);
        p[k] = f.p_values[k] + g.p_part * q;
        s[k] = f.s_values[k] + g.s_part * q;
    }
}

Vec3c green_far_at(const BackgroundSolver& bs, const ComplexField3& W, const Vec3& z, const Vec3c& q,
                   const Vec3& xhat) {
    const ElasticMedium& m = bs.background().medium;
    return far_field_at(bs.cells(), W, xhat, bs.omega(), m) +
           farfield_pattern(xhat, z, bs.omega(), m).total() * q;
}

// Linear back-projection functionals of the three anchor kernels on a bank.
struct Functionals {
    // coefficient vectors on p and s samples, per kernel j and node k
    std::vector<std::array<Vec3c, 3>> ap, as;
};

Functionals functionals(const PointKernels& pk, const ElasticMedium& m) {
    Functionals F;
    const std::size_t n = pk.k[0].kernel.size();
    F.ap.resize(n);
    F.as.resize(n);
    const double cp = 4.0 * kPi * (m.lam + 2.0 * m.mu), cs = 4.0 * kPi * m.mu;
    for (int j = 0; j < 3; ++j) {
        const HerglotzKernel& g = pk.k[j].kernel;
        for (std::size_t k = 0; k < n; ++k) {
            F.ap[k][j] = (g.sphere.weights[k] * cp) * g.g_p(k);
            F.as[k][j] = (g.sphere.weights[k] * cs) * g.g_s(k);
        }
    }
    return F;
}

// Smallest change to (p, s) with backproject3 = target.
void correct_bank(std::vector<Vec3c>& p, std::vector<Vec3c>& s, const Functionals& F, const Vec3c& residual) {
    Mat3c G = Mat3c::Zero();
    for (std::size_t k = 0; k < p.size(); ++k)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                G(i, j) += (F.ap[k][i].transpose() * F.ap[k][j].conjugate())(0) +
                           (F.as[k][i].transpose() * F.as[k][j].conjugate())(0);
    const Vec3c y = G.fullPivLu().solve(residual);
    for (std::size_t k = 0; k < p.size(); ++k)
        for (int j = 0; j < 3; ++j) {
            p[k] += y[j] * F.ap[k][j].conjugate();
            s[k] += y[j] * F.as[k][j].conjugate();
        }
}

double rel_change(const FarField& a, const FarField& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < a.sphere.size(); ++k) {
        num += (a.p_values[k] - b.p_values[k]).squaredNorm() + (a.s_values[k] - b.s_values[k]).squaredNorm();
        den += b.p_values[k].squaredNorm() + b.s_values[k].squaredNorm();
    }
    return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

}  // namespace

// ---------------- config ----------------

void ScenarioConfig::validate() const {
    try {
        medium.validate();
    } catch (const KernelError& e) {
        throw ConfigError(std::string("medium: ") + e.what());
    }
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    need(omega_radius > 0.0, "omega.radius: requires radius > 0");
    need(omega_cells >= 4, "omega.cells: requires cells >= 4");
    need(b_cells >= 2, "reference_shape.cells: requires cells >= 2");
    need(a > 0.0 && a < 1.0, "inclusion.a: requires 0 < a < 1");
    need(c1 > 0.0, "inclusion.c1: requires c1 > 0");
    need(h > 0.0 && h < 1.0, "resonance.h: requires 0 < h < 1");
    need(b >= 0.0, "resonance.b: requires b >= 0");
    need(sign == 1 || sign == -1, "resonance.sign: must be +1 or -1");
    need(!mode || *mode >= 0, "resonance.mode: must be a non-negative index");
    need(lattice_n >= 3, "lattice.n: requires n >= 3");
    need(lattice_spacing >= 0.0, "lattice.spacing: requires spacing >= 0");
    need(sphere_nodes >= 8, "sphere.nodes: requires nodes >= 8");
    need(surface_nodes >= 8, "sphere.surface_nodes: requires surface_nodes >= 8");
    need(k_radius_factor > 1.0, "sphere.k_radius_factor: requires factor > 1 (K contains Omega compactly)");
    need(anchor_distance_factor > 1.0, "anchor.distance_factor: requires factor > 1 (x outside K)");
    need(anchor_direction.norm() > 0.0, "anchor.direction: must be nonzero");
    need(incidence.norm() > 0.0, "incidence.direction: must be nonzero");
    need(std::abs(beta1) + std::abs(beta2) > 0.0, "incidence: beta1 and beta2 cannot both vanish");
    need(delta >= 0.0, "noise.delta: requires delta >= 0");
    need(delta1 >= 0.0, "noise.delta1: requires delta1 >= 0");
    need(alpha_min > 0.0 && alpha_max >= alpha_min, "tikhonov: requires 0 < alpha_min <= alpha_max");
    need(morozov_factor >= 0.0, "tikhonov.morozov_factor: requires factor >= 0");
    need(tau_rel > 0.0 && tau_rel < 1.0, "guards.tau_rel: requires 0 < tau_rel < 1");
    need(denom_rel > 0.0 && denom_rel < 1.0, "guards.denom_rel: requires 0 < denom_rel < 1");
    if (phantom.kind == PhantomKind::gaussian_bump) {
        need(phantom.width > 0.0, "phantom.width: requires width > 0");
        need(phantom.amplitude > -medium.rho_tilde, "phantom.amplitude: density must stay positive");
    }
    if (phantom.kind == PhantomKind::constant) need(phantom.value > 0.0, "phantom.value: requires value > 0");
    if (phantom.kind == PhantomKind::layered) {
        need(phantom.values.size() == phantom.interfaces.size() + 1,
             "phantom.values: needs exactly one more entry than phantom.interfaces");
        need(phantom.axis >= 0 && phantom.axis < 3, "phantom.axis: must be 0, 1 or 2");
        need(phantom.smoothing > 0.0, "phantom.smoothing: requires smoothing > 0");
        for (double v : phantom.values) need(v > 0.0, "phantom.values: densities must be positive");
    }
}

std::vector<double> ScenarioConfig::alphas() const {
    std::vector<double> out;
    for (double a = alpha_max; a >= alpha_min * (1.0 - 1e-9); a /= 10.0) out.push_back(a);
    return out;
}

ScenarioConfig parse_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        const std::size_t upto = std::min<std::size_t>(e.byte ? e.byte - 1 : 0, text.size());
        for (std::size_t i = 0; i < upto; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError("config parse error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                          ": " + e.what());
    }

    ScenarioConfig c;
    {
        Obj r(root, "");
        if (!r.has("medium")) throw ConfigError("missing required section \"medium\"");
        if (!r.has("phantom")) throw ConfigError("missing required section \"phantom\"");
        {
            Obj m(r.at("medium"), "medium");
            m.num("lambda", c.medium.lam);
            m.num("mu", c.medium.mu);
            m.num("rho_tilde", c.medium.rho_tilde);
        }
        {
            Obj p(r.at("phantom"), "phantom");
            std::string type = "gaussian-bump";
            p.str("type", type);
            if (type == "constant") {
                c.phantom.kind = PhantomKind::constant;
                c.phantom.value = c.medium.rho_tilde;
            } else if (type == "gaussian-bump") {
                c.phantom.kind = PhantomKind::gaussian_bump;
            } else if (type == "layered") {
                c.phantom.kind = PhantomKind::layered;
            } else {
                throw ConfigError("phantom.type: unknown phantom \"" + type +
                                  "\" (constant | gaussian-bump | layered)");
            }
            p.num("value", c.phantom.value);
            p.vec3("center", c.phantom.center);
            p.num("width", c.phantom.width);
            p.num("amplitude", c.phantom.amplitude);
            p.integer("axis", c.phantom.axis);
            p.list("interfaces", c.phantom.interfaces);
            p.list("values", c.phantom.values);
            p.num("smoothing", c.phantom.smoothing);
        }
        if (r.has("omega")) {
            Obj o(r.at("omega"), "omega");
            o.vec3("center", c.omega_center);
            o.num("radius", c.omega_radius);
            o.integer("cells", c.omega_cells);
        }
        if (r.has("reference_shape")) {
            Obj o(r.at("reference_shape"), "reference_shape");
            o.integer("cells", c.b_cells);
        }
        if (r.has("inclusion")) {
            Obj o(r.at("inclusion"), "inclusion");
            o.num("a", c.a);
            o.num("c1", c.c1);
        }
        if (r.has("resonance")) {
            Obj o(r.at("resonance"), "resonance");
            if (o.has("mode") && !o.at("mode").is_null()) {
                int m = -1;
                o.integer("mode", m);
                c.mode = m;
            }
            o.num("h", c.h);
            o.num("b", c.b);
            o.integer("sign", c.sign);
        }
        if (r.has("lattice")) {
            Obj o(r.at("lattice"), "lattice");
            o.integer("n", c.lattice_n);
            o.num("spacing", c.lattice_spacing);
            o.vec3("center", c.lattice_center);
        }
        if (r.has("sphere")) {
            Obj o(r.at("sphere"), "sphere");
            o.integer("nodes", c.sphere_nodes);
            o.integer("surface_nodes", c.surface_nodes);
            o.num("k_radius_factor", c.k_radius_factor);
        }
        if (r.has("anchor")) {
            Obj o(r.at("anchor"), "anchor");
            o.vec3("direction", c.anchor_direction);
            o.num("distance_factor", c.anchor_distance_factor);
        }
        if (r.has("incidence")) {
            Obj o(r.at("incidence"), "incidence");
            o.vec3("direction", c.incidence);
            o.num("beta1", c.beta1);
            o.num("beta2", c.beta2);
        }
        if (r.has("noise")) {
            Obj o(r.at("noise"), "noise");
            o.num("delta", c.delta);
            o.num("delta1", c.delta1);
            o.u64("seed", c.seed);
        }
        if (r.has("tikhonov")) {
            Obj o(r.at("tikhonov"), "tikhonov");
            o.num("alpha_max", c.alpha_max);
            o.num("alpha_min", c.alpha_min);
            o.num("morozov_factor", c.morozov_factor);
        }
        if (r.has("guards")) {
            Obj o(r.at("guards"), "guards");
            o.num("tau_rel", c.tau_rel);
            o.num("denom_rel", c.denom_rel);
        }
        if (r.has("source")) {
            std::string s;
            r.str("source", s);
            if (s == "full") c.source = DataSource::full;
            else if (s == "surrogate") c.source = DataSource::surrogate;
            else throw ConfigError("source: must be \"full\" or \"surrogate\", got \"" + s + "\"");
        }
        r.str("output", c.output);
        r.str("cache", c.cache);
    }
    c.validate();
    return c;
}

ScenarioConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::string config_to_json(const ScenarioConfig& c) {
    json p{{"type", phantom_name(c.phantom.kind)}};
    switch (c.phantom.kind) {
        case PhantomKind::constant: p["value"] = c.phantom.value; break;
        case PhantomKind::gaussian_bump:
            p["center"] = j3(c.phantom.center);
            p["width"] = c.phantom.width;
            p["amplitude"] = c.phantom.amplitude;
            break;
        case PhantomKind::layered:
            p["axis"] = c.phantom.axis;
            p["interfaces"] = c.phantom.interfaces;
            p["values"] = c.phantom.values;
            p["smoothing"] = c.phantom.smoothing;
            break;
    }
    json j{
        {"medium", {{"lambda", c.medium.lam}, {"mu", c.medium.mu}, {"rho_tilde", c.medium.rho_tilde}}},
        {"phantom", p},
        {"omega", {{"center", j3(c.omega_center)}, {"radius", c.omega_radius}, {"cells", c.omega_cells}}},
        {"reference_shape", {{"cells", c.b_cells}}},
        {"inclusion", {{"a", c.a}, {"c1", c.c1}}},
        {"resonance", {{"mode", c.mode ? json(*c.mode) : json(nullptr)}, {"h", c.h}, {"b", c.b}, {"sign", c.sign}}},
        {"lattice", {{"n", c.lattice_n}, {"spacing", c.lattice_spacing}, {"center", j3(c.lattice_center)}}},
        {"sphere",
         {{"nodes", c.sphere_nodes}, {"surface_nodes", c.surface_nodes}, {"k_radius_factor", c.k_radius_factor}}},
        {"anchor", {{"direction", j3(c.anchor_direction)}, {"distance_factor", c.anchor_distance_factor}}},
        {"incidence", {{"direction", j3(c.incidence)}, {"beta1", c.beta1}, {"beta2", c.beta2}}},
        {"noise", {{"delta", c.delta}, {"delta1", c.delta1}, {"seed", c.seed}}},
        {"tikhonov",
         {{"alpha_max", c.alpha_max}, {"alpha_min", c.alpha_min}, {"morozov_factor", c.morozov_factor}}},
        {"guards", {{"tau_rel", c.tau_rel}, {"denom_rel", c.denom_rel}}},
        {"source", c.source == DataSource::full ? "full" : "surrogate"},
        {"output", c.output},
        {"cache", c.cache},
    };
    return j.dump(2);
}

std::uint64_t config_hash(const ScenarioConfig& c) {
    // output location and cache path do not change results
    ScenarioConfig k = c;
    k.output.clear();
    k.cache.clear();
    return fnv1a(config_to_json(k));
}

// ---------------- phantom ----------------

double phantom_value(const PhantomSpec& p, const ElasticMedium& m, const Vec3& x) {
    switch (p.kind) {
        case PhantomKind::constant: return p.value;
        case PhantomKind::gaussian_bump:
            return m.rho_tilde + p.amplitude * std::exp(-(x - p.center).squaredNorm() / (p.width * p.width));
        case PhantomKind::layered: {
            double v = p.values[0];
            for (std::size_t i = 0; i < p.interfaces.size(); ++i)
                v += (p.values[i + 1] - p.values[i]) * 0.5 *
                     (1.0 + std::tanh((x[p.axis] - p.interfaces[i]) / p.smoothing));
            return v;
        }
    }
    return m.rho_tilde;
}

Background build_phantom(const ScenarioConfig& c) {
    c.validate();
    Background bg;
    bg.medium = c.medium;
    bg.center = c.omega_center;
    bg.radius = c.omega_radius;
    bg.grid = ball_grid(c.omega_cells, c.omega_radius, c.omega_center);
    if (c.phantom.kind == PhantomKind::gaussian_bump) {
        const double d = c.omega_radius - (c.phantom.center - c.omega_center).norm();
        if (d <= 0.0) throw ConfigError("phantom.center: bump center must lie inside Omega");
        const double edge = std::abs(c.phantom.amplitude) * std::exp(-d * d / (c.phantom.width * c.phantom.width));
        if (edge > 1e-6 * c.medium.rho_tilde)
            throw ConfigError("phantom: gaussian bump reaches the boundary of Omega (deviation " + fmt(edge) +
                              " > 1e-6 rho_tilde); reduce width or move the center inward");
    }
    bg.rho.reserve(bg.grid.size());
    for (const Vec3& x : bg.grid.centers()) {
        const double r = phantom_value(c.phantom, c.medium, x);
        if (!(r > 0.0)) throw ConfigError("phantom: sampled density is not positive");
        bg.rho.push_back(r);
    }
    return bg;
}

// ---------------- setup ----------------

SweepPolicy policy_for(const ScenarioConfig& c) {
    SweepPolicy p;
    p.alphas = c.alphas();
    p.noise_floor = c.morozov_factor * std::max(c.delta, c.delta1);
    return p;
}

ScenarioSetup prepare(const ScenarioConfig& c) {
    ScenarioSetup s;
    s.config = c;
    try {
        s.background = build_phantom(c);
    } catch (const std::exception& e) {
        throw StageError("phantom", e.what());
    }
    try {
        s.gridB = ball_grid(c.b_cells, unit_ball_radius());
        s.eigB = compute_spectrum(s.gridB, c.medium, c.cache);
        s.res = make_resonance(s.eigB, c.c1, c.a, c.h, c.b, c.sign, c.mode);
    } catch (const std::exception& e) {
        throw StageError("spectrum", e.what());
    }
    s.wave.theta = c.incidence.normalized();
    s.wave.theta_perp = perpendicular(s.wave.theta);
    s.wave.beta1 = c.beta1;
    s.wave.beta2 = c.beta2;
    s.wave.omega = s.res.omega_inc;
    const double dz = c.lattice_spacing > 0.0 ? c.lattice_spacing : s.background.grid.spacing;
    s.lattice = Lattice::centered(c.lattice_center, dz, c.lattice_n);
    s.sphere = fibonacci_sphere(c.sphere_nodes);
    s.surface = default_surface(s.background, c.surface_nodes, c.k_radius_factor);
    s.anchor = s.surface.center + c.anchor_distance_factor * s.surface.radius * c.anchor_direction.normalized();
    s.policy = policy_for(c);
    // the lattice must leave room for D and for the stencil
    const double gap = 0.5 * std::sqrt(3.0) * s.background.grid.spacing;
    for (std::size_t i = 0; i < s.lattice.size(); ++i) {
        const Vec3 z = s.lattice.node(i);
        if (c.omega_radius - (z - c.omega_center).norm() < 2.0 * dz - 1e-12)
            throw StageError("lattice", "node closer than 2 spacings to the boundary of Omega");
        for (const Vec3& x : s.background.grid.centers())
            if ((x - z).norm() < 0.5 * gap)
                throw StageError("lattice", "node collides with an Omega collocation point; "
                                            "align the lattice with cell vertices");
    }
    return s;
}

HerglotzSolver make_kernel_solver(const ScenarioSetup& s) {
    return HerglotzSolver(s.surface, s.sphere, s.res.omega_inc, s.config.medium);
}

InversionConfig inversion_config(const ScenarioSetup& s) {
    InversionConfig ic;
    ic.res = s.res;
    ic.a = s.config.a;
    ic.c1 = s.config.c1;
    ic.anchor = s.anchor;
    ic.surface = s.surface;
    ic.policy = s.policy;
    ic.tau_rel = s.config.tau_rel;
    ic.denom_rel = s.config.denom_rel;
    return ic;
}

std::vector<double> true_density(const ScenarioSetup& s) {
    std::vector<double> r(s.lattice.size());
    for (std::size_t i = 0; i < r.size(); ++i)
        r[i] = phantom_value(s.config.phantom, s.config.medium, s.lattice.node(i));
    return r;
}

// ---------------- measurements ----------------

void add_noise(FarField& f, double level, std::uint64_t seed, std::uint64_t stream) {
    if (level == 0.0) return;
    Gauss g(splitmix(seed ^ splitmix(stream + 0x51ED2701ULL)));
    for (std::size_t k = 0; k < f.sphere.size(); ++k)
        for (int c = 0; c < 3; ++c) {
            f.p_values[k][c] *= 1.0 + level * g.next();
            f.s_values[k][c] *= 1.0 + level * g.next();
        }
}

void add_noise(Vec3c& v, double level, std::uint64_t seed, std::uint64_t stream) {
    if (level == 0.0) return;
    Gauss g(splitmix(seed ^ splitmix(stream + 0x51ED2701ULL)));
    for (int c = 0; c < 3; ++c) v[c] *= 1.0 + level * g.next();
}

InjectionSweep generate_measurements(const ScenarioSetup& s, const HerglotzSolver& kernels,
                                     MeasurementReport* report, const Progress& progress) {
    const ScenarioConfig& c = s.config;
    const ElasticMedium& m = c.medium;
    const double omega = s.res.omega_inc;
    const std::size_t n = s.lattice.size();
    const SphereGrid dirs = negated(s.sphere);

    InjectionSweep sw;
    sw.lattice = s.lattice;
    sw.wave = s.wave;
    sw.delta = c.delta;
    sw.delta1 = c.delta1;
    sw.nodes.resize(n);

    std::unique_ptr<BackgroundSolver> bsp;
    ComplexField3 Vt;
    try {
        bsp = std::make_unique<BackgroundSolver>(s.background, omega);
        Vt = bsp->solve_plane(s.wave);
    } catch (const std::exception& e) {
        throw StageError("background", e.what());
    }
    const BackgroundSolver& bs = *bsp;
    const PlaneWave wave = s.wave;
    const IncidentFn inc = [wave, m](const Vec3& x) { return plane_wave_field(wave, x, m); };
    sw.V_bank = bs.far(Vt, dirs);
    sw.V_back = far_field_at(bs.cells(), Vt, sw.xhat_back(), omega, m);

    MeasurementReport rep;
    rep.node_errors.assign(n, "");

    if (c.source == DataSource::full) {
        for (std::size_t i = 0; i < n; ++i) {
            NodeMeasurement& nd = sw.nodes[i];
            try {
                Inclusion in;
                in.z = s.lattice.node(i);
                in.a = c.a;
                in.c1 = c.c1;
                in.gridB = s.gridB;
                InclusionSolver is(bs, in, omega);
                const InclusionSolution sol = is.solve(inc, Vt);
                const ComplexField3 U = sol.stacked();
                nd.U_back = far_field_at(sol.cells, U, sw.xhat_back(), omega, m);
                nd.U_bank = far_field(sol.cells, U, dirs, omega, m);
            } catch (const std::exception& e) {
                nd.present = false;
                rep.node_errors[i] = e.what();
            }
            if (progress) progress(i + 1, n);
        }
    } else {
        // Theorem-1 surrogate: far fields of C G(., z) E V^t(z), then a planted
        // near field that satisfies the discrete Navier equation on the lattice
        const cplx C = resonant_factor(s.res, c.c1, c.a);
        const PointKernels pk = kernels_at(kernels, s.anchor, s.policy);
        const Functionals fun = functionals(pk, m);
        std::vector<std::vector<Vec3c>> dp(n), ds(n);
        std::vector<Vec3c> dback(n);
        const Mat3c E = s.res.E_B.cast<cplx>();
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 z = s.lattice.node(i);
            try {
                const Vec3c q = E * bs.total_at(Vt, inc, z);
                const ComplexField3 W = bs.solve_green(z, q);
                green_far(bs, W, z, q, dirs, dp[i], ds[i]);
                for (auto& v : dp[i]) v *= C;
                for (auto& v : ds[i]) v *= C;
                dback[i] = C * green_far_at(bs, W, z, q, sw.xhat_back());
            } catch (const std::exception& e) {
                sw.nodes[i].present = false;
                rep.node_errors[i] = e.what();
            }
            if (progress) progress(i + 1, n);
        }
        // moments exactly as the inversion will see them
        std::vector<cplx> sq(n, 0.0);
        std::vector<bool> ok(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            if (!sw.nodes[i].present) continue;
            try {
                sq[i] = step1_backscatter_moment(sw.V_back + dback[i], sw.V_back, wave, s.res, m, c.a, c.c1);
                ok[i] = true;
            } catch (const InversionError&) {
            }
        }
        const SignedMoments sm = resolve_sign(s.lattice, sq, c.tau_rel, &ok);
        std::vector<Vec3c> F(n, Vec3c::Zero());
        std::vector<bool> have(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            if (!ok[i] || !sm.determinate[i]) continue;
            FarField tmp;
            tmp.sphere = dirs;
            tmp.p_values = dp[i];
            tmp.s_values = ds[i];
            F[i] = backproject3(tmp, pk, m) / (C * sm.value[i]);
            have[i] = true;
        }
        // interior: solve the lattice Navier problem with the boundary values above
        const FdResult probe = elastic_laplacian_fd(s.lattice, F, m.lam, m.mu, &have);
        std::vector<std::size_t> inner;
        for (std::size_t i = 0; i < n; ++i)
            if (probe.valid[i]) inner.push_back(i);
        std::vector<double> rho(n);
        for (std::size_t i = 0; i < n; ++i) rho[i] = phantom_value(c.phantom, m, s.lattice.node(i));
        rep.planted_rho = rho;
        if (!inner.empty()) {
            const Eigen::Index nu = static_cast<Eigen::Index>(3 * inner.size());
            const double w2 = omega * omega;
            auto apply = [&](const std::vector<Vec3c>& f) {
                const FdResult L = elastic_laplacian_fd(s.lattice, f, m.lam, m.mu, &have);
                Eigen::VectorXcd r(nu);
                for (std::size_t a = 0; a < inner.size(); ++a)
                    r.segment<3>(3 * a) = L.values[inner[a]] + w2 * rho[inner[a]] * f[inner[a]];
                return r;
            };
            std::vector<Vec3c> Fb = F;
            for (std::size_t a : inner) Fb[a] = Vec3c::Zero();
            const Eigen::VectorXcd rhs = -apply(Fb);
            Eigen::MatrixXcd M(nu, nu);
            for (Eigen::Index col = 0; col < nu; ++col) {
                std::vector<Vec3c> e(n, Vec3c::Zero());
                e[inner[col / 3]][col % 3] = 1.0;
                M.col(col) = apply(e);
            }
            const Eigen::VectorXcd u = M.fullPivLu().solve(rhs);
            for (std::size_t a = 0; a < inner.size(); ++a) F[inner[a]] = u.segment<3>(3 * a);
            for (std::size_t a : inner) {
                FarField tmp;
                tmp.sphere = dirs;
                tmp.p_values = dp[a];
                tmp.s_values = ds[a];
                const Vec3c target = C * sm.value[a] * F[a];
                correct_bank(dp[a], ds[a], fun, target - backproject3(tmp, pk, m));
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (!sw.nodes[i].present) continue;
            NodeMeasurement& nd = sw.nodes[i];
            nd.U_back = sw.V_back + dback[i];
            nd.U_bank.sphere = dirs;
            nd.U_bank.p_values.resize(dirs.size());
            nd.U_bank.s_values.resize(dirs.size());
            for (std::size_t k = 0; k < dirs.size(); ++k) {
                nd.U_bank.p_values[k] = sw.V_bank.p_values[k] + dp[i][k];
                nd.U_bank.s_values[k] = sw.V_bank.s_values[k] + ds[i][k];
            }
        }
    }

    // noise, after all clean data exist
    const FarField V_clean = sw.V_bank;
    add_noise(sw.V_bank, c.delta, c.seed, 0);
    add_noise(sw.V_back, c.delta, c.seed, 1);
    rep.realized_delta = rel_change(sw.V_bank, V_clean);
    double acc = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < n; ++i) {
        NodeMeasurement& nd = sw.nodes[i];
        if (!nd.present) continue;
        const FarField clean = nd.U_bank;
        add_noise(nd.U_bank, c.delta1, c.seed, 2 + 2 * i);
        add_noise(nd.U_back, c.delta1, c.seed, 3 + 2 * i);
        acc += rel_change(nd.U_bank, clean);
        ++cnt;
    }
    rep.realized_delta1 = cnt ? acc / cnt : 0.0;
    if (report) *report = rep;
    return sw;
}

// ---------------- pipeline ----------------

Metrics compute_metrics(const std::vector<double>& rho_true, const ReconstructionResult& r) {
    Metrics M;
    double num2 = 0.0, den2 = 0.0;
    for (std::size_t i = 0; i < r.rho.size(); ++i) {
        if (r.mask[i] != MaskReason::none || !std::isfinite(r.rho[i])) continue;
        const double e = std::abs(r.rho[i] - rho_true[i]);
        M.linf_rel = std::max(M.linf_rel, e / std::abs(rho_true[i]));
        num2 += e * e;
        den2 += rho_true[i] * rho_true[i];
        ++M.valid;
    }
    M.l2_rel = den2 > 0.0 ? std::sqrt(num2 / den2) : 0.0;
    M.masked = r.masked_count();
    M.silent_masked = r.silent_masked();
    return M;
}

ReconstructionResult invert_sweep(const ScenarioSetup& s, const InjectionSweep& sweep) {
    try {
        sweep.validate(s.background);
        const HerglotzSolver hs = make_kernel_solver(s);
        return run_inversion(sweep, hs, inversion_config(s));
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("inversion", e.what());
    }
}

ScenarioOutcome run_pipeline(const ScenarioConfig& c, const Progress& progress) {
    ScenarioOutcome o;
    o.setup = prepare(c);
    std::unique_ptr<HerglotzSolver> hs;
    try {
        hs = std::make_unique<HerglotzSolver>(make_kernel_solver(o.setup));
    } catch (const std::exception& e) {
        throw StageError("kernels", e.what());
    }
    try {
        o.sweep = generate_measurements(o.setup, *hs, &o.report, progress);
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("measurements", e.what());
    }
    try {
        o.result = run_inversion(o.sweep, *hs, inversion_config(o.setup));
    } catch (const std::exception& e) {
        throw StageError("inversion", e.what());
    }
    o.rho_true = true_density(o.setup);
    o.metrics = compute_metrics(o.rho_true, o.result);
    return o;
}

// ---------------- files ----------------

void save_sweep(const std::string& path, const InjectionSweep& s) {
    json nodes = json::array();
    for (const NodeMeasurement& n : s.nodes) {
        json e{{"present", n.present}};
        if (n.present) {
            e["U_back"] = jc3(n.U_back);
            e["U_bank"] = farfield_json(n.U_bank);
        }
        nodes.push_back(e);
    }
    json j{
        {"format", "relastic-sweep-1"},
        {"lattice", {{"origin", j3(s.lattice.origin)}, {"spacing", s.lattice.spacing},
                     {"n", {s.lattice.n[0], s.lattice.n[1], s.lattice.n[2]}}}},
        {"wave", {{"theta", j3(s.wave.theta)}, {"theta_perp", j3(s.wave.theta_perp)}, {"beta1", jc(s.wave.beta1)},
                  {"beta2", jc(s.wave.beta2)}, {"omega", s.wave.omega}}},
        {"V_back", jc3(s.V_back)},
        {"V_bank", farfield_json(s.V_bank)},
        {"delta", s.delta},
        {"delta1", s.delta1},
        {"nodes", nodes},
    };
    write_text(path, j.dump());
}

InjectionSweep load_sweep(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open measurements " + path);
    json j = json::parse(f);
    if (j.value("format", "") != "relastic-sweep-1") throw std::runtime_error(path + ": not a measurement file");
    InjectionSweep s;
    const json& L = j.at("lattice");
    s.lattice.origin = r3(L.at("origin"));
    s.lattice.spacing = L.at("spacing").get<double>();
    for (int i = 0; i < 3; ++i) s.lattice.n[i] = L.at("n").at(i).get<int>();
    const json& w = j.at("wave");
    s.wave.theta = r3(w.at("theta"));
    s.wave.theta_perp = r3(w.at("theta_perp"));
    s.wave.beta1 = rc(w.at("beta1"));
    s.wave.beta2 = rc(w.at("beta2"));
    s.wave.omega = w.at("omega").get<double>();
    s.V_back = rc3(j.at("V_back"));
    s.V_bank = farfield_from(j.at("V_bank"));
    s.delta = j.at("delta").get<double>();
    s.delta1 = j.at("delta1").get<double>();
    for (const auto& e : j.at("nodes")) {
        NodeMeasurement n;
        n.present = e.at("present").get<bool>();
        if (n.present) {
            n.U_back = rc3(e.at("U_back"));
            n.U_bank = farfield_from(e.at("U_bank"));
        }
        s.nodes.push_back(std::move(n));
    }
    return s;
}

void write_results_csv(const std::string& path, const std::vector<double>& rho_true, const ReconstructionResult& r) {
    std::ostringstream os;
    os << "zx,zy,zz,rho_true,rho_rec,mask,reason,im_residual\n";
    for (std::size_t i = 0; i < r.z.size(); ++i) {
        const bool masked = r.mask[i] != MaskReason::none;
        os << fmt(r.z[i][0]) << ',' << fmt(r.z[i][1]) << ',' << fmt(r.z[i][2]) << ',' << fmt(rho_true[i]) << ','
           << fmt(masked ? std::numeric_limits<double>::quiet_NaN() : r.rho[i]) << ',' << (masked ? 1 : 0) << ','
           << to_string(r.mask[i]) << ','
           << fmt(masked ? std::numeric_limits<double>::quiet_NaN() : r.im_residual[i]) << '\n';
    }
    write_text(path, os.str());
}

std::vector<ResultRow> read_results_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string line;
    std::getline(f, line);
    if (line != "zx,zy,zz,rho_true,rho_rec,mask,reason,im_residual")
        throw std::runtime_error(path + ": unexpected header");
    std::vector<ResultRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto c = split_csv(line);
        if (c.size() != 8) throw std::runtime_error(path + ": malformed row");
        ResultRow r;
        r.z = Vec3(parse_num(c[0]), parse_num(c[1]), parse_num(c[2]));
        r.rho_true = parse_num(c[3]);
        r.rho_rec = parse_num(c[4]);
        r.mask = std::stoi(c[5]);
        r.reason = c[6];
        r.im_residual = parse_num(c[7]);
        rows.push_back(r);
    }
    return rows;
}

void write_farfield_csv(const std::string& path, const FarField& f) {
    std::ostringstream os;
    os << "node_x,node_y,node_z,weight,re_x,im_x,re_y,im_y,re_z,im_z,part\n";
    for (std::size_t k = 0; k < f.sphere.size(); ++k)
        for (int part = 0; part < 2; ++part) {
            const Vec3& d = f.sphere.nodes[k];
            const Vec3c& v = part == 0 ? f.p_values[k] : f.s_values[k];
            os << fmt(d[0]) << ',' << fmt(d[1]) << ',' << fmt(d[2]) << ',' << fmt(f.sphere.weights[k]);
            for (int c = 0; c < 3; ++c) os << ',' << fmt(v[c].real()) << ',' << fmt(v[c].imag());
            os << ',' << (part == 0 ? 'p' : 's') << '\n';
        }
    write_text(path, os.str());
}

FarField read_farfield_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string line;
    std::getline(f, line);
    FarField ff;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto c = split_csv(line);
        if (c.size() != 11) throw std::runtime_error(path + ": malformed row");
        Vec3c v;
        for (int i = 0; i < 3; ++i) v[i] = cplx(parse_num(c[4 + 2 * i]), parse_num(c[5 + 2 * i]));
        if (c[10] == "p") {
            ff.sphere.nodes.emplace_back(parse_num(c[0]), parse_num(c[1]), parse_num(c[2]));
            ff.sphere.weights.push_back(parse_num(c[3]));
            ff.p_values.push_back(v);
        } else {
            ff.s_values.push_back(v);
        }
    }
    if (ff.s_values.size() != ff.p_values.size()) throw std::runtime_error(path + ": unpaired p/s rows");
    return ff;
}

std::string summary_json(const ScenarioOutcome& o) {
    const ScenarioSetup& s = o.setup;
    const ReconstructionResult& r = o.result;
    char hash[20];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(s.config)));
    json nodes = json::array();
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    for (std::size_t i = 0; i < r.z.size(); ++i) {
        nodes.push_back({
            {"z", j3(r.z[i])},
            {"rho_true", o.rho_true[i]},
            {"rho_rec", num(r.rho[i])},
            {"mask", to_string(r.mask[i])},
            {"fault", r.fault[i]},
            {"im_residual", num(r.im_residual[i])},
            {"component_spread", num(r.component_spread[i])},
            {"squared_moment", jc(r.squared_moment[i])},
            {"moment", jc(r.moment[i])},
            {"dUs_anchor", jc3(r.dUs[i])},
            {"green_moment", jc3(r.green_moment[i])},
        });
    }
    json moment = j3(s.res.moment);
    json EB = json::array();
    for (int i = 0; i < 3; ++i) EB.push_back(j3(s.res.E_B.row(i).transpose()));
    json j{
        {"config_hash", hash},
        {"config", json::parse(config_to_json(s.config))},
        {"seed", s.config.seed},
        {"source", s.config.source == DataSource::full ? "full" : "surrogate"},
        {"noise_model", "independent complex Gaussian per far-field sample component, multiplicative, "
                        "relative level delta (background) and delta1 (after injection)"},
        {"resonance",
         {{"n0", s.res.n0}, {"lambda_B", s.res.lambda_n0_B}, {"omega_n0", s.res.omega_n0},
          {"omega", s.res.omega_inc}, {"degenerate", s.res.degenerate}, {"cluster_size", s.res.cluster_size},
          {"moment", moment}, {"E_B", EB}}},
        {"lattice",
         {{"origin", j3(s.lattice.origin)}, {"spacing", s.lattice.spacing},
          {"n", {s.lattice.n[0], s.lattice.n[1], s.lattice.n[2]}}}},
        {"anchor", j3(s.anchor)},
        {"K_radius", s.surface.radius},
        {"anchor_discrepancy", r.anchor_discrepancy},
        {"kernel_warning", r.kernel_warning},
        {"collision_warning", r.collision_warning},
        {"tau", r.tau},
        {"realized_delta", o.report.realized_delta},
        {"realized_delta1", o.report.realized_delta1},
        {"metrics",
         {{"linf_rel", o.metrics.linf_rel}, {"l2_rel", o.metrics.l2_rel}, {"valid", o.metrics.valid},
          {"masked", o.metrics.masked}, {"silent_masked", o.metrics.silent_masked}}},
        {"nodes", nodes},
    };
    return j.dump(2);
}

void prepare_output_dir(const std::string& dir, bool force) {
    const fs::path p(dir);
    if (fs::exists(p)) {
        if (!fs::is_directory(p)) throw std::runtime_error(dir + " exists and is not a directory");
        if (!fs::is_empty(p) && !force)
            throw std::runtime_error("output directory " + dir + " is not empty; pass --force to overwrite");
    }
    fs::create_directories(p);
}

void write_outputs(const std::string& dir, const ScenarioOutcome& o, double seconds) {
    const fs::path p(dir);
    const std::string csv = (p / "results.csv").string();
    write_results_csv(csv, o.rho_true, o.result);
    // self-consistency: metrics recomputed from the written rows
    {
        const auto rows = read_results_csv(csv);
        ReconstructionResult back;
        back.rho.resize(rows.size());
        back.mask.resize(rows.size());
        std::vector<double> truth(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            back.rho[i] = rows[i].rho_rec;
            back.mask[i] = rows[i].mask ? MaskReason::node_fault : MaskReason::none;
            truth[i] = rows[i].rho_true;
        }
        const Metrics m = compute_metrics(truth, back);
        if (m.valid != o.metrics.valid || std::abs(m.linf_rel - o.metrics.linf_rel) > 1e-14 ||
            std::abs(m.l2_rel - o.metrics.l2_rel) > 1e-14)
            throw std::runtime_error("results.csv does not reproduce the summary metrics");
    }
    write_text((p / "summary.json").string(), summary_json(o));
    write_farfield_csv((p / "farfield_background.csv").string(), o.sweep.V_bank);
    const std::time_t t = std::time(nullptr);
    char stamp[64];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    json meta{{"created", stamp}, {"seconds", seconds}, {"program", "relastic"}, {"version", "0.1.0"}};
    write_text((p / "metadata.json").string(), meta.dump(2));
}

}  // namespace relastic
