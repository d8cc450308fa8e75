#include <doctest.h>

#include <random>

#include "support.hpp"

using namespace relastic;
using namespace support;

namespace {

struct Desk {
    Background bg = bump_background(8);
    double omega = 1.6;
    SphereGrid sphere = fibonacci_sphere(128);
    MeasurementSurfaceK K = default_surface(bg, 128, 1.5);
    HerglotzSolver hs{K, sphere, omega, bg.medium};
    BackgroundSolver bs{bg, omega};
    PlaneWave w;
    ComplexField3 Vt;
    FarField Vbank;
    Desk() {
        w.theta = Vec3(0, 0, 1);
        w.theta_perp = Vec3(1, 0, 0);
        w.beta1 = 1.0;
        w.beta2 = 0.4;
        w.omega = omega;
        Vt = bs.solve_plane(w);
        Vbank = bs.far(Vt, negated(sphere));
    }
    std::vector<Vec3> points() const {
        std::vector<Vec3> p;
        const SphereGrid d = fibonacci_sphere(6);
        for (const Vec3& n : d.nodes) p.push_back(K.center + 1.4 * K.radius * n);
        return p;
    }
};

const Desk& desk() {
    static const Desk d;
    return d;
}

HerglotzKernel random_kernel(const SphereGrid& s, std::uint64_t seed) {
    HerglotzKernel g = zero_kernel(s);
    std::mt19937_64 r(seed);
    std::normal_distribution<double> n;
    for (std::size_t k = 0; k < s.size(); ++k) {
        g.gp[k] = cplx(n(r), n(r));
        g.gs1[k] = cplx(n(r), n(r));
        g.gs2[k] = cplx(n(r), n(r));
    }
    return g;
}

}  // namespace

TEST_SUITE("pointsource_recon") {

TEST_CASE("Herglotz field basics") {
    const ElasticMedium m;
    const SphereGrid s = fibonacci_sphere(32);
    const std::vector<Vec3> pts{Vec3(0.3, -0.1, 0.2), Vec3(1.0, 2.0, -0.5)};
    for (const Vec3c& v : herglotz_apply(zero_kernel(s), pts, 1.3, m)) CHECK(v.norm() == 0.0);
    HerglotzKernel g = zero_kernel(s);
    g.gp[5] = 1.0 / s.weights[5];
    const auto v = herglotz_apply(g, pts, 1.3, m);
    const double kp = wavenumbers(m, 1.3).kappa_p;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const Vec3c ref = s.nodes[5].cast<cplx>() * std::exp(cplx(0, kp * s.nodes[5].dot(pts[i])));
        CHECK(rel(v[i], ref) <= 1e-14);
    }
}

TEST_CASE("tangent frame") {
    for (const Vec3& d : fibonacci_sphere(20).nodes) {
        const auto [t1, t2] = tangent_frame(d);
        CHECK(std::abs(t1.dot(d)) < 1e-14);
        CHECK(std::abs(t2.dot(d)) < 1e-14);
        CHECK((t1.cross(t2) - d).norm() < 1e-14);
    }
}

TEST_CASE("Herglotz field solves the Navier equation") {
    const ElasticMedium m{1.5, 1.0, 1.0};
    const double omega = 1.2;
    const HerglotzKernel g = random_kernel(fibonacci_sphere(40), 11);
    const VecFn u = [&](const Vec3& x) { return herglotz_apply(g, {x}, omega, m)[0]; };
    const Vec3 x(0.4, -0.3, 0.7);
    const Vec3c r = navier_fd(u, x, 1e-3, m) + omega * omega * m.rho_tilde * u(x);
    CHECK(r.norm() <= 1e-4 * omega * omega * u(x).norm());
}

TEST_CASE("minimum-norm kernel: sweep monotonicity and accuracy") {
    const ElasticMedium m;
    MeasurementSurfaceK K;
    K.radius = 2.0;
    K.nodes_unit = fibonacci_sphere(128);
    HerglotzSolver hs(K, fibonacci_sphere(128), 1.2, m);
    const Vec3 x(0.0, 1.8, 2.4);  // distance 3
    double prev_d = 1e300, prev_n = 0.0, best = 1e300;
    for (double a : {1e-2, 1e-4, 1e-6, 1e-8}) {
        const KernelResult r = hs.minimum_norm_kernel(x, Vec3(0.6, 0, 0.8), a);
        CHECK(r.discrepancy <= prev_d);
        CHECK(r.kernel_norm >= prev_n);
        prev_d = r.discrepancy;
        prev_n = r.kernel_norm;
        best = std::min(best, r.discrepancy);
        // discrepancy reported equals the direct misfit on the surface
        std::vector<Vec3> nodes;
        for (std::size_t k = 0; k < K.size(); ++k) nodes.push_back(K.node(k));
        const auto H = herglotz_apply(r.kernel, nodes, 1.2, m);
        double num = 0, den = 0;
        for (std::size_t k = 0; k < K.size(); ++k) {
            const Vec3c t = kupradze_matrix(nodes[k], x, 1.2, m) * Vec3c(0.6, 0, 0.8);
            num += K.weight(k) * (H[k] - t).squaredNorm();
            den += K.weight(k) * t.squaredNorm();
        }
        CHECK(std::sqrt(num / den) == doctest::Approx(r.discrepancy).epsilon(1e-6));
        for (std::size_t k = 0; k < r.kernel.size(); ++k) {
            const Vec3& d = r.kernel.sphere.nodes[k];
            CHECK(r.kernel.g_p(k).cross(d.cast<cplx>()).norm() <= 1e-12 * (1 + r.kernel.g_p(k).norm()));
            CHECK(std::abs(r.kernel.g_s(k).dot(d.cast<cplx>())) <= 1e-12 * (1 + r.kernel.g_s(k).norm()));
        }
    }
    CHECK(best <= 0.05);
    CHECK_THROWS_AS(hs.minimum_norm_kernel(Vec3(0, 0, 1.0), Vec3(1, 0, 0), 1e-3), PointSourceError);
}

TEST_CASE("Morozov choice") {
    const Desk& d = desk();
    SweepPolicy p;
    p.noise_floor = 0.0;
    auto s = d.hs.sweep(d.points()[0], Vec3(1, 0, 0), p);
    CHECK(s.chosen == p.alphas.size() - 1);
    p.noise_floor = 1e-3;
    s = d.hs.sweep(d.points()[0], Vec3(1, 0, 0), p);
    CHECK(s.results[s.chosen].discrepancy >= 1e-3);
    for (std::size_t i = 0; i < s.results.size(); ++i)
        if (p.alphas[i] < p.alphas[s.chosen]) CHECK(s.results[i].discrepancy < 1e-3);
    // x on top of K: the floor cannot be reached
    p.noise_floor = 0.0;
    s = d.hs.sweep(d.K.center + d.K.radius * 1.0001 * Vec3(0, 0, 1), Vec3(1, 0, 0), p);
    CHECK(s.results[s.chosen].discrepancy > 0.0);
}

TEST_CASE("back-projection linearity") {
    const Desk& d = desk();
    const HerglotzKernel g = random_kernel(d.sphere, 5);
    FarField f2 = d.Vbank;
    for (auto& v : f2.p_values) v = v.cwiseProduct(Vec3c(cplx(0.3, 1), 2, -1));
    for (auto& v : f2.s_values) v *= cplx(-0.5, 0.2);
    FarField sum = d.Vbank;
    for (std::size_t k = 0; k < sum.sphere.size(); ++k) {
        sum.p_values[k] += f2.p_values[k];
        sum.s_values[k] += f2.s_values[k];
    }
    const cplx a = backproject(d.Vbank, g, d.bg.medium), b = backproject(f2, g, d.bg.medium);
    CHECK(std::abs(backproject(sum, g, d.bg.medium) - a - b) <= 1e-12 * (std::abs(a) + std::abs(b)));
    FarField wrong = d.Vbank;
    wrong.sphere = d.sphere;
    CHECK_THROWS_AS(backproject(wrong, g, d.bg.medium), PointSourceError);
}

TEST_CASE("recovered scattered field at exterior points") {
    const Desk& d = desk();
    const auto pts = d.points();
    const ExteriorFields f = recover_exterior_fields(d.Vbank, nullptr, d.hs, pts, d.w, SweepPolicy{});
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const Vec3c direct = d.bs.scattered(d.Vt, pts[i]);
        CHECK(rel(f.Vs[i], direct) <= 0.05);
        CHECK(f.discrepancy[i] <= 0.05);
    }
}

TEST_CASE("error tracks the kernel discrepancy") {
    const Desk& d = desk();
    const Vec3 x = d.points()[2];
    const Vec3c direct = d.bs.scattered(d.Vt, x);
    for (double a : {1e-2, 1e-3, 1e-4, 1e-5}) {
        Vec3c rec;
        double eps = 0.0;
        for (int j = 0; j < 3; ++j) {
            const KernelResult r = d.hs.minimum_norm_kernel(x, Vec3::Unit(j), a);
            rec[j] = backproject(d.Vbank, r.kernel, d.bg.medium);
            eps = std::max(eps, r.discrepancy);
        }
        CHECK(rel(rec, direct) <= 10.0 * eps);
    }
}

TEST_CASE("noise amplification is bounded by the kernel norms") {
    const Desk& d = desk();
    const ElasticMedium& m = d.bg.medium;
    const Vec3 x = d.points()[1];
    const KernelResult r = d.hs.minimum_norm_kernel(x, Vec3(0, 1, 0), 1e-6);
    FarField noisy = d.Vbank;
    add_noise(noisy, 1e-3, 42, 0);
    double np = 0, ns = 0;
    for (std::size_t k = 0; k < noisy.sphere.size(); ++k) {
        np += noisy.sphere.weights[k] * (noisy.p_values[k] - d.Vbank.p_values[k]).squaredNorm();
        ns += noisy.sphere.weights[k] * (noisy.s_values[k] - d.Vbank.s_values[k]).squaredNorm();
    }
    const double bound = 4 * kPi * ((m.lam + 2 * m.mu) * r.kernel.norm_p() * std::sqrt(np) +
                                    m.mu * r.kernel.norm_s() * std::sqrt(ns));
    const Vec3c direct = d.bs.scattered(d.Vt, x);
    const double e0 = std::abs(backproject(d.Vbank, r.kernel, m) - direct[1]);
    const double e1 = std::abs(backproject(noisy, r.kernel, m) - direct[1]);
    CHECK(e1 - e0 <= 1.5 * bound);
}

TEST_CASE("homogeneous background: recovered total field is the incident wave") {
    const Background bg = homogeneous(6);
    const double omega = 1.6;
    const SphereGrid s = fibonacci_sphere(128);
    const MeasurementSurfaceK K = default_surface(bg, 128, 1.5);
    HerglotzSolver hs(K, s, omega, bg.medium);
    BackgroundSolver bs(bg, omega);
    PlaneWave w;
    w.theta = Vec3(0.6, 0, 0.8);
    w.theta_perp = perpendicular(w.theta);
    w.beta1 = 1.0;
    w.beta2 = 1.0;
    w.omega = omega;
    const FarField V = bs.far(bs.solve_plane(w), negated(s));
    const std::vector<Vec3> pts{K.center + 1.4 * K.radius * Vec3(0, 1, 0)};
    const ExteriorFields f = recover_exterior_fields(V, nullptr, hs, pts, w, SweepPolicy{});
    CHECK(rel(f.Vt[0], plane_wave_field(w, pts[0], bg.medium)) <= 0.05);
    CHECK(f.Vs[0].norm() == 0.0);
}

TEST_CASE("recovered inclusion response") {
    const Desk& d = desk();
    const ElasticMedium& m = d.bg.medium;
    const VoxelGrid gB = ball_grid(6, unit_ball_radius());
    const EigenSystem eB = compute_spectrum(gB, m);
    const double a = 0.05, c1 = 10.0;
    const ResonanceInfo res = make_resonance(eB, c1, a, 0.5, 1.0, -1);
    Background bg = d.bg;
    BackgroundSolver bs(bg, res.omega_inc);
    const SphereGrid s = d.sphere;
    HerglotzSolver hs(d.K, s, res.omega_inc, m);
    PlaneWave w = d.w;
    w.omega = res.omega_inc;
    const ComplexField3 Vt = bs.solve_plane(w);
    Inclusion inc;
    inc.z = Vec3(0.25, 0.0, 0.0);
    inc.a = a;
    inc.c1 = c1;
    inc.gridB = gB;
    InclusionSolver is(bs, inc, w.omega);
    const IncidentFn fn = [&](const Vec3& x) { return plane_wave_field(w, x, m); };
    const InclusionSolution sol = is.solve(fn, Vt);
    const FarField V = bs.far(Vt, negated(s));
    const FarField U = far_field(sol.cells, sol.stacked(), negated(s), w.omega, m);
    const auto pts = d.points();
    const ExteriorFields f = recover_exterior_fields(V, &U, hs, {pts[0], pts[3]}, w, SweepPolicy{});
    for (int i = 0; i < 2; ++i) {
        const Vec3& x = i == 0 ? pts[0] : pts[3];
        const Vec3c direct = scattered_at(sol.cells, sol.stacked(), x, w.omega, m) - bs.scattered(Vt, x);
        const Vec3c dom = asymptotic_scattered(bs.total_at(Vt, fn, inc.z), bs.green_matrix(x, inc.z), res, c1, a);
        CHECK(rel(f.Us[i] - f.Vs[i], direct) <= 0.05);
        CHECK(rel(f.Us[i] - f.Vs[i], dom) <= 0.2);
    }
}

}
