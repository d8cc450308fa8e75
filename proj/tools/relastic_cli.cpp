#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "relastic/scenario.hpp"

using namespace relastic;
namespace fs = std::filesystem;

namespace {

struct Args {
    std::string config;
    std::string out;
    std::string in;
    std::uint64_t seed = 0;
    bool has_seed = false;
    std::string source;
    bool force = false;
    bool dry_run = false;
    int threads = 0;
};

void apply_threads(int flag) {
    int n = 0;
    if (const char* env = std::getenv("RELASTIC_THREADS")) n = std::atoi(env);
    if (flag > 0) n = flag;
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

ScenarioConfig resolve(const Args& a) {
    ScenarioConfig c = load_config(a.config);
    if (a.has_seed) c.seed = a.seed;
    if (a.source == "full") c.source = DataSource::full;
    else if (a.source == "surrogate") c.source = DataSource::surrogate;
    if (!a.out.empty()) c.output = a.out;
    c.validate();
    return c;
}

void print_plan(const char* cmd, const ScenarioConfig& c) {
    const int n = c.lattice_n;
    std::printf("plan: %s\n", cmd);
    std::printf("  source      %s\n", c.source == DataSource::full ? "full" : "surrogate");
    std::printf("  omega grid  %d cells across, radius %g\n", c.omega_cells, c.omega_radius);
    std::printf("  B grid      %d cells across\n", c.b_cells);
    std::printf("  inclusion   a=%g c1=%g, detuning h=%g b=%g sign=%+d\n", c.a, c.c1, c.h, c.b, c.sign);
    std::printf("  lattice     %d^3 = %d nodes\n", n, n * n * n);
    std::printf("  sphere      %d directions, K surface %d nodes\n", c.sphere_nodes, c.surface_nodes);
    std::printf("  noise       delta=%g delta1=%g seed=%llu\n", c.delta, c.delta1,
                static_cast<unsigned long long>(c.seed));
    std::printf("  output      %s\n", c.output.c_str());
    std::printf("  config hash %016llx\n", static_cast<unsigned long long>(config_hash(c)));
}

Progress bar() {
    return [](std::size_t done, std::size_t total) {
        std::fprintf(stderr, "\r  node %zu/%zu", done, total);
        if (done == total) std::fputc('\n', stderr);
    };
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report_metrics(const Metrics& m) {
    std::printf("valid nodes %zu, masked %zu (silent %zu)\n", m.valid, m.masked, m.silent_masked);
    std::printf("relative error  Linf %.6g  L2 %.6g\n", m.linf_rel, m.l2_rel);
}

int cmd_simulate(const Args& a) {
    const ScenarioConfig c = resolve(a);
    if (a.dry_run) {
        print_plan("simulate", c);
        return 0;
    }
    prepare_output_dir(c.output, a.force);
    const auto t0 = std::chrono::steady_clock::now();
    const ScenarioSetup s = prepare(c);
    const HerglotzSolver hs = make_kernel_solver(s);
    MeasurementReport rep;
    const InjectionSweep sw = generate_measurements(s, hs, &rep, bar());
    save_sweep((fs::path(c.output) / "measurements.json").string(), sw);
    write_farfield_csv((fs::path(c.output) / "farfield_background.csv").string(), sw.V_bank);
    std::size_t failed = 0;
    for (const auto& e : rep.node_errors) failed += !e.empty();
    std::printf("measurements written to %s (%zu nodes, %zu failed, %.1f s)\n", c.output.c_str(), sw.nodes.size(),
                failed, seconds_since(t0));
    return 0;
}

int cmd_invert(const Args& a) {
    const ScenarioConfig c = resolve(a);
    const std::string in = a.in.empty() ? (fs::path(c.output) / "measurements.json").string() : a.in;
    if (a.dry_run) {
        print_plan("invert", c);
        std::printf("  measurements %s\n", in.c_str());
        return 0;
    }
    const auto t0 = std::chrono::steady_clock::now();
    ScenarioOutcome o;
    o.sweep = load_sweep(in);
    // reading the input from inside the output directory is allowed
    const bool same_dir = a.in.empty() || fs::equivalent(fs::path(in).parent_path(), fs::path(c.output));
    prepare_output_dir(c.output, a.force || same_dir);
    o.setup = prepare(c);
    o.result = invert_sweep(o.setup, o.sweep);
    o.rho_true = true_density(o.setup);
    o.metrics = compute_metrics(o.rho_true, o.result);
    write_outputs(c.output, o, seconds_since(t0));
    report_metrics(o.metrics);
    return 0;
}

int cmd_roundtrip(const Args& a) {
    const ScenarioConfig c = resolve(a);
    if (a.dry_run) {
        print_plan("roundtrip", c);
        return 0;
    }
    prepare_output_dir(c.output, a.force);
    const auto t0 = std::chrono::steady_clock::now();
    const ScenarioOutcome o = run_pipeline(c, bar());
    save_sweep((fs::path(c.output) / "measurements.json").string(), o.sweep);
    write_outputs(c.output, o, seconds_since(t0));
    report_metrics(o.metrics);
    return 0;
}

int cmd_spectrum(const Args& a) {
    const ScenarioConfig c = resolve(a);
    if (a.dry_run) {
        print_plan("spectrum", c);
        return 0;
    }
    const VoxelGrid g = ball_grid(c.b_cells, unit_ball_radius());
    const EigenSystem eig = compute_spectrum(g, c.medium, c.cache);
    const ResonanceInfo r = make_resonance(eig, c.c1, c.a, c.h, c.b, c.sign, c.mode);
    std::printf("B: %zu cells, volume %.6g\n", g.size(), eig.total_volume);
    std::printf("%5s %14s %8s %14s\n", "n", "lambda_n(B)", "cluster", "|moment|");
    const std::size_t show = std::min<std::size_t>(eig.size(), 12);
    for (std::size_t n = 0; n < show; ++n)
        std::printf("%5zu %14.8g %8d %14.8g\n", n, eig.eigenvalues[n], eig.cluster[n], eig.moments[n].norm());
    std::printf("resonant mode n0=%d (cluster of %d%s)\n", r.n0, r.cluster_size, r.degenerate ? ", degenerate" : "");
    std::printf("omega_n0 = %.12g, incident omega = %.12g\n", r.omega_n0, r.omega_inc);
    return 0;
}

int check(bool ok, const char* what, double value) {
    std::printf("%s %-48s %.3g\n", ok ? "ok  " : "FAIL", what, value);
    return ok ? 0 : 1;
}

int cmd_verify(const Args& a) {
    ElasticMedium m;
    if (!a.config.empty()) m = resolve(a).medium;
    int bad = 0;
    // kernel identities
    {
        double worst = 0.0;
        const Vec3 y(0.1, -0.2, 0.05);
        for (double r : {0.05, 0.1, 0.2, 0.4}) {
            const Vec3 x = y + r * Vec3(0.6, 0.0, 0.8);
            const Mat3c a1 = kupradze_closed(x, y, 0.9, m), a2 = kupradze_series(x, y, 0.9, m, 30);
            worst = std::max(worst, (a1 - a2).norm() / a2.norm());
        }
        bad += check(worst < 1e-8, "Kupradze closed form vs series", worst);
    }
    {
        const Vec3 x(0.3, 0.1, -0.4), y(-0.2, 0.5, 0.1);
        const Mat3 K = kelvin_matrix(x, y, m);
        const double sym = (K - K.transpose()).norm() / K.norm();
        const double hom = (kelvin_matrix(2.0 * x, 2.0 * y, m) * 2.0 - K).norm() / K.norm();
        bad += check(std::max(sym, hom) < 1e-12, "Kelvin symmetry and homogeneity", std::max(sym, hom));
    }
    // FD order on a plane p-wave
    {
        PlaneWave w;
        w.theta = Vec3(1.0, 2.0, 2.0) / 3.0;
        w.theta_perp = perpendicular(w.theta);
        w.omega = std::sqrt(m.lam + 2.0 * m.mu);  // kappa_p = 1 at rho_tilde = 1
        double err[2];
        for (int t = 0; t < 2; ++t) {
            const Lattice L = Lattice::centered(Vec3::Zero(), t == 0 ? 0.04 : 0.02, 3);
            std::vector<Vec3c> f(L.size());
            for (std::size_t i = 0; i < L.size(); ++i) f[i] = plane_wave_field(w, L.node(i), m);
            const FdResult r = elastic_laplacian_fd(L, f, m.lam, m.mu);
            const std::size_t c = L.index(1, 1, 1);
            const Vec3c ref = -w.omega * w.omega * m.rho_tilde * f[c];
            err[t] = (r.values[c] - ref).norm() / ref.norm();
        }
        const double slope = std::log2(err[0] / err[1]);
        bad += check(slope >= 1.8 && slope <= 2.2, "finite-difference order", slope);
    }
    std::printf("%s\n", bad ? "verify: FAILED" : "verify: all invariants hold");
    return bad ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"relastic: density reconstruction with resonant elastic inclusions"};
    app.require_subcommand(1);
    Args a;
    auto common = [&a](CLI::App* s, bool needs_config) {
        auto* opt = s->add_option("--config", a.config, "scenario config (JSON)");
        if (needs_config) opt->required()->check(CLI::ExistingFile);
        s->add_option("--out", a.out, "output directory");
        s->add_option("--seed", a.seed, "noise seed")->each([&a](const std::string&) { a.has_seed = true; });
        s->add_option("--source", a.source, "data source")->check(CLI::IsMember({"full", "surrogate"}));
        s->add_flag("--force", a.force, "overwrite a non-empty output directory");
        s->add_flag("--dry-run", a.dry_run, "validate and print the plan only");
        s->add_option("--threads", a.threads, "worker threads (overrides RELASTIC_THREADS)")
            ->check(CLI::PositiveNumber);
    };
    auto* sim = app.add_subcommand("simulate", "generate and store measurements");
    common(sim, true);
    auto* inv = app.add_subcommand("invert", "reconstruct from stored measurements");
    common(inv, true);
    inv->add_option("--in", a.in, "measurements file (default <out>/measurements.json)")->check(CLI::ExistingFile);
    auto* rt = app.add_subcommand("roundtrip", "simulate then invert");
    common(rt, true);
    auto* sp = app.add_subcommand("spectrum", "eigensystem report for the reference shape");
    common(sp, true);
    auto* ver = app.add_subcommand("verify", "quick invariant suite");
    common(ver, false);

    CLI11_PARSE(app, argc, argv);
    apply_threads(a.threads);
    try {
        if (*sim) return cmd_simulate(a);
        if (*inv) return cmd_invert(a);
        if (*rt) return cmd_roundtrip(a);
        if (*sp) return cmd_spectrum(a);
        if (*ver) return cmd_verify(a);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const StageError& e) {
        std::fprintf(stderr, "stage error [%s]: %s\n", e.stage().c_str(), e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
