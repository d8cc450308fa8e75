#include <doctest.h>

#include <random>

#include "support.hpp"

using namespace relastic;
using namespace support;

namespace {

ResonanceInfo planted_resonance(const Vec3& m, double c1, double a) {
    ResonanceInfo r;
    r.moment = m;
    r.E_B = m * m.transpose();
    r.lambda_n0_B = 0.15;
    r.omega_n0 = resonance_frequency(r.lambda_n0_B, c1);
    r.h = 0.5;
    r.b = 1.0;
    r.sign = -1;
    r.omega_inc = incident_frequency(r.omega_n0, a, 0.5, 1.0, -1);
    return r;
}

PlaneWave wave_at(double omega) {
    PlaneWave w;
    w.theta = Vec3(0.0, 0.6, 0.8);
    w.theta_perp = perpendicular(w.theta);
    w.beta1 = cplx(1.0, 0.2);
    w.beta2 = cplx(0.3, -0.5);
    w.omega = omega;
    return w;
}

}  // namespace

TEST_SUITE("density_inversion") {

TEST_CASE("step 1: no response gives zero") {
    const ResonanceInfo r = planted_resonance(Vec3(1, 0, 0), 2.0, 0.05);
    const Vec3c V(1.0, cplx(0.2, 0.1), -0.3);
    CHECK(step1_backscatter_moment(V, V, wave_at(r.omega_inc), r, ElasticMedium{}, 0.05, 2.0) == 0.0);
}

TEST_CASE("step 1 inverts the backscatter formula") {
    const ElasticMedium m{1.3, 0.9, 1.0};
    const double a = 0.05, c1 = 2.0;
    const Vec3 mom(0.4, -0.7, 0.2);
    const ResonanceInfo r = planted_resonance(mom, c1, a);
    const PlaneWave w = wave_at(r.omega_inc);
    const cplx C = resonant_factor(r, c1, a);
    for (const Vec3& z : {Vec3(0.1, 0.0, -0.2), Vec3(-0.3, 0.25, 0.05)}) {
        const Vec3c Vi = plane_wave_field(w, z, m);
        const cplx s = mom.cast<cplx>().dot(Vi);
        const Vec3c dU = C * (farfield_pattern(-w.theta, z, w.omega, m).total() * mom.cast<cplx>()) * s;
        const Vec3c Vb(0.2, 0.1, cplx(0, 0.3));
        const cplx got = step1_backscatter_moment(Vb + dU, Vb, w, r, m, a, c1);
        CHECK(std::abs(got - s * s) <= 1e-10 * std::abs(s * s));
    }
    CHECK_THROWS_AS(step1_backscatter_moment(Vec3c(1e-9, 0, 0), Vec3c::Zero(), w, r, m, a, c1, 1e-6), InversionError);
}

TEST_CASE("step 1 on full-solver data") {
    const Background bg = bump_background(8);
    const ElasticMedium& m = bg.medium;
    const double a = 0.05, c1 = 10.0;
    const VoxelGrid gB = ball_grid(6, unit_ball_radius());
    const ResonanceInfo r = make_resonance(compute_spectrum(gB, m), c1, a, 0.5, 1.0, -1);
    const PlaneWave w = wave_at(r.omega_inc);
    BackgroundSolver bs(bg, w.omega);
    const ComplexField3 Vt = bs.solve_plane(w);
    const IncidentFn fn = [&](const Vec3& x) { return plane_wave_field(w, x, m); };
    const Vec3 xb = -w.theta;
    const Vec3c Vb = far_field_at(bs.cells(), Vt, xb, w.omega, m);
    Inclusion inc;
    inc.z = Vec3(0.0, 0.0, 0.0);
    inc.a = a;
    inc.c1 = c1;
    inc.gridB = gB;
    const InclusionSolution sol = InclusionSolver(bs, inc, w.omega).solve(fn, Vt);
    const Vec3c Ub = far_field_at(sol.cells, sol.stacked(), xb, w.omega, m);
    const cplx got = step1_backscatter_moment(Ub, Vb, w, r, m, a, c1);
    // degenerate cluster: the backscatter datum carries sum_q (V^t . m_q)^2
    const Vec3c vz = bs.total_at(Vt, fn, inc.z);
    const cplx ref = (vz.transpose() * r.E_B.cast<cplx>() * vz)(0);
    CHECK(std::abs(got - ref) <= 0.2 * std::abs(ref));
}

TEST_CASE("sign resolution") {
    const Lattice L = Lattice::centered(Vec3::Zero(), 0.1, 5);
    std::vector<cplx> plus(L.size()), change(L.size());
    std::vector<cplx> f(L.size());
    for (std::size_t i = 0; i < L.size(); ++i) {
        const Vec3 z = L.node(i);
        f[i] = cplx(1.0 + z[0], 0.3 * z[1]);
        plus[i] = f[i] * f[i];
    }
    SignedMoments s = resolve_sign(L, plus);
    for (std::size_t i = 0; i < L.size(); ++i) CHECK(std::abs(s.value[i] - f[i]) <= 1e-12);
    // one smooth sign change across the plane z_x = 0.05
    for (std::size_t i = 0; i < L.size(); ++i) {
        const Vec3 z = L.node(i);
        f[i] = cplx(z[0] - 0.05, 0.1 * z[2]) * 3.0;
        change[i] = f[i] * f[i];
    }
    s = resolve_sign(L, change);
    const std::size_t ref = L.index(4, 2, 2);
    const cplx g = s.value[ref] / f[ref];
    CHECK(std::abs(std::abs(g) - 1.0) < 1e-12);
    for (std::size_t i = 0; i < L.size(); ++i) CHECK(std::abs(s.value[i] - g * f[i]) <= 1e-12);
    std::vector<cplx> flipped(L.size());
    for (std::size_t i = 0; i < L.size(); ++i) flipped[i] = (-f[i]) * (-f[i]);
    const SignedMoments s2 = resolve_sign(L, flipped);
    for (std::size_t i = 0; i < L.size(); ++i) CHECK(s2.value[i] == s.value[i]);
}

TEST_CASE("step 3 inverts the scattered-field formula") {
    const double a = 0.05;
    const Vec3 mom(0.4, -0.7, 0.2);
    const Mat3c G = (Mat3c() << cplx(1, 0.1), 0.2, 0.0, 0.2, cplx(0.5, -0.3), 0.1, 0.0, 0.1, 0.7).finished();
    const Vec3c Vt(cplx(0.3, 0.4), 1.0, -0.2);
    const Vec3c target = G * mom.cast<cplx>();
    for (double c1 : {2.0, 4.0}) {
        const ResonanceInfo r = planted_resonance(mom, c1, a);
        const cplx s = mom.cast<cplx>().dot(Vt);
        const Vec3c dUs = asymptotic_scattered(Vt, G, r, c1, a);
        const Vec3c got = step3_green_moment(dUs, s, r, a, c1, 0.0);
        CHECK(rel(got, target) <= 1e-10);
    }
    const ResonanceInfo r = planted_resonance(mom, 2.0, a);
    CHECK_THROWS_AS(step3_green_moment(Vec3c::Ones(), 1e-9, r, a, 2.0, 1e-6), InversionError);
}

TEST_CASE("FD operator") {
    const ElasticMedium m{1.0, 1.0, 1.0};
    // affine field
    Lattice L = Lattice::centered(Vec3(0.1, -0.2, 0.3), 0.05, 5);
    std::vector<Vec3c> F(L.size());
    const Mat3c A = (Mat3c() << 1, 2, 3, cplx(0, 1), 5, 6, 7, 8, cplx(9, -2)).finished();
    for (std::size_t i = 0; i < L.size(); ++i) F[i] = Vec3c(1, 2, cplx(0, 3)) + A * L.node(i).cast<cplx>();
    FdResult r = elastic_laplacian_fd(L, F, m.lam, m.mu);
    std::size_t valid = 0;
    for (std::size_t i = 0; i < L.size(); ++i)
        if (r.valid[i]) {
            CHECK(r.values[i].norm() <= 1e-10 * 100);  // entries of A are O(10); h^-2 = 400
            ++valid;
        }
    CHECK(valid == 27);
    // plane p-wave with kappa_p = 1
    PlaneWave w;
    w.theta = Vec3(1, 2, 2) / 3.0;
    w.theta_perp = perpendicular(w.theta);
    w.omega = std::sqrt(3.0);
    double err[2];
    for (int t = 0; t < 2; ++t) {
        L = Lattice::centered(Vec3(0.2, 0.1, -0.1), t == 0 ? 0.02 : 0.01, 3);
        for (auto& v : F) v.setZero();
        F.resize(L.size());
        for (std::size_t i = 0; i < L.size(); ++i) F[i] = plane_wave_field(w, L.node(i), m);
        r = elastic_laplacian_fd(L, F, m.lam, m.mu);
        const std::size_t c = L.index(1, 1, 1);
        const Vec3c ref = -w.omega * w.omega * F[c];
        err[t] = rel(r.values[c], ref);
    }
    CHECK(err[0] <= 1e-3);
    const double slope = std::log2(err[0] / err[1]);
    CHECK(slope >= 1.8);
    CHECK(slope <= 2.2);
    // missing neighbour invalidates the stencil
    L = Lattice::centered(Vec3::Zero(), 0.1, 3);
    F.assign(L.size(), Vec3c::Ones());
    std::vector<bool> av(L.size(), true);
    av[L.index(1, 0, 0)] = false;
    CHECK_FALSE(elastic_laplacian_fd(L, F, 1, 1, &av).valid[L.index(1, 1, 1)]);
}

TEST_CASE("density from the Kupradze field") {
    const ElasticMedium m{1.0, 1.0, 1.0};
    const double omega = 1.1;
    const Vec3 x(2.0, 1.0, -1.5);
    const Vec3c v(1.0, cplx(0.5, 0.2), -0.3);
    const Lattice L = Lattice::centered(Vec3::Zero(), 0.02, 3);
    std::vector<Vec3c> F(L.size());
    for (std::size_t i = 0; i < L.size(); ++i) F[i] = kupradze_matrix(L.node(i), x, omega, m) * v;
    const DensityEstimate d = extract_density(L, F, omega, m);
    const std::size_t c = L.index(1, 1, 1);
    CHECK(std::abs(d.rho[c] - 1.0) <= 5e-3);
    CHECK(d.mask[c] == MaskReason::none);
    CHECK(d.mask[0] == MaskReason::fd_stencil);
    std::vector<Vec3c> flip = F, scaled = F;
    for (auto& f : flip) f = -f;
    for (auto& f : scaled) f *= cplx(-2.0, 3.5);
    CHECK(extract_density(L, flip, omega, m).rho[c] == doctest::Approx(d.rho[c]).epsilon(1e-12));
    CHECK(extract_density(L, scaled, omega, m).rho[c] == doctest::Approx(d.rho[c]).epsilon(1e-12));
    std::vector<Vec3c> zero(L.size(), Vec3c::Zero());
    zero[0] = Vec3c::Ones();
    CHECK(extract_density(L, zero, omega, m).mask[c] == MaskReason::small_denominator);
}

TEST_CASE("lattice indexing") {
    const Lattice L = Lattice::centered(Vec3(1, 2, 3), 0.5, 4);
    for (std::size_t i = 0; i < L.size(); ++i) {
        const Index3 c = L.ijk(i);
        CHECK(L.index(c[0], c[1], c[2]) == i);
    }
    Vec3 mean = Vec3::Zero();
    for (std::size_t i = 0; i < L.size(); ++i) mean += L.node(i) / static_cast<double>(L.size());
    CHECK((mean - Vec3(1, 2, 3)).norm() < 1e-12);
}

}
