#include <doctest.h>

#include <random>

#include "support.hpp"

using namespace relastic;
using namespace support;

TEST_SUITE("elastic_kernels") {

TEST_CASE("wavenumbers from Lame constants") {
    ElasticMedium m{1.0, 1.0, 1.0};
    Wavenumbers k = wavenumbers(m, 1.0);
    CHECK(k.kappa_s == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(k.kappa_p == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-14));
    k = wavenumbers(m, 0.0);
    CHECK(k.kappa_p == 0.0);
    CHECK(k.kappa_s == 0.0);
    k = wavenumbers(ElasticMedium{2.0, 1.0, 2.0}, 2.0);
    CHECK(k.kappa_s == doctest::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-14));
    CHECK(k.kappa_p == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
    CHECK(k.kappa_p <= k.kappa_s);
    CHECK(k.c_s * k.c_s * 2.0 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(k.c_p * k.c_p * 2.0 == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("medium validation names the inequality") {
    ElasticMedium m{1.0, -1.0, 1.0};
    CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("μ > 0"), KernelError);
    ElasticMedium m2{-1.0, 1.0, 1.0};
    CHECK_THROWS_WITH_AS(m2.validate(), doctest::Contains("3λ+2μ > 0"), KernelError);
    CHECK_NOTHROW(ElasticMedium{}.validate());
}

TEST_CASE("Kelvin matrix entries, symmetry, homogeneity") {
    ElasticMedium m;
    const Mat3 K = kelvin_matrix(Vec3(1, 0, 0), Vec3::Zero(), m);
    CHECK(K(0, 0) == doctest::Approx(1.0 / (4 * kPi)).epsilon(1e-14));
    CHECK(K(1, 1) == doctest::Approx(1.0 / (6 * kPi)).epsilon(1e-14));
    CHECK(K(2, 2) == doctest::Approx(1.0 / (6 * kPi)).epsilon(1e-14));
    CHECK(std::abs(K(0, 1)) + std::abs(K(0, 2)) + std::abs(K(1, 2)) == 0.0);
    CHECK(m.gamma1() == doctest::Approx(2.0 / 3.0));
    CHECK(m.gamma2() == doctest::Approx(1.0 / 3.0));

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 20; ++t) {
        const Vec3 x(u(rng), u(rng), u(rng)), y(u(rng), u(rng), u(rng));
        const Mat3 A = kelvin_matrix(x, y, m), B = kelvin_matrix(y, x, m);
        CHECK((A - B).norm() <= 1e-12 * A.norm());
        CHECK((A - A.transpose()).norm() <= 1e-12 * A.norm());
        const double s = 0.5 + 2.0 * (u(rng) + 1.0);
        CHECK((kelvin_matrix(s * x, s * y, m) * s - A).norm() <= 1e-12 * A.norm());
    }
}

TEST_CASE("Kupradze translation invariance") {
    ElasticMedium m{2.0, 1.0, 1.0};
    const Vec3 x(0.3, -0.2, 0.5), y(-0.1, 0.4, 0.2), t(1.5, -2.0, 0.7);
    const Mat3c A = kupradze_matrix(x, y, 1.3, m), B = kupradze_matrix(x + t, y + t, 1.3, m);
    CHECK(rel(B, A) < 1e-13);
}

TEST_CASE("Kupradze matches the 30-term series for kappa_s r up to 0.5") {
    ElasticMedium m;
    const double omega = 1.0;  // kappa_s = 1
    const Vec3 dir = Vec3(1, 2, -2) / 3.0;
    double worst = 0.0;
    for (double r : {1e-4, 1e-3, 1e-2, 4e-2, 6e-2, 0.1, 0.2, 0.3, 0.5}) {
        const Mat3c a = kupradze_matrix(r * dir, Vec3::Zero(), omega, m);
        const Mat3c s = kupradze_series(r * dir, Vec3::Zero(), omega, m, 30);
        worst = std::max(worst, rel(a, s));
    }
    CHECK(worst <= 1e-8);
}

TEST_CASE("Kupradze tends to Kelvin at low frequency") {
    ElasticMedium m;
    const Vec3 x(1, 0, 0), y = Vec3::Zero();
    const Mat3c d = kupradze_matrix(x, y, 1e-4, m) - kelvin_matrix(x, y, m).cast<cplx>();
    CHECK(d.cwiseAbs().maxCoeff() <= 1e-3);
    std::vector<double> w, e;
    for (double om : {1e-1, 3e-2, 1e-2, 3e-3, 1e-3}) {
        w.push_back(om);
        e.push_back((kupradze_matrix(x, y, om, m) - kelvin_matrix(x, y, m).cast<cplx>()).norm());
    }
    CHECK(loglog_slope(w, e) >= 0.9);
}

TEST_CASE("far-field kernel structure") {
    ElasticMedium m{1.5, 0.8, 1.0};
    const Vec3 xh = Vec3(2, -1, 2) / 3.0;
    FarFieldKernel k = farfield_pattern(xh, Vec3::Zero(), 1.2, m);
    const Mat3 P = xh * xh.transpose();
    CHECK(rel(k.p_part, (P / (4 * kPi * (m.lam + 2 * m.mu))).cast<cplx>()) < 1e-14);
    CHECK(rel(k.s_part, ((Mat3::Identity() - P) / (4 * kPi * m.mu)).cast<cplx>()) < 1e-14);
    const Vec3 y(0.2, -0.3, 0.4);
    k = farfield_pattern(xh, y, 1.2, m);
    CHECK((k.s_part * xh.cast<cplx>()).norm() <= 1e-15);
}

TEST_CASE("far-field kernel against a reversed plane wave") {
    // the p-amplitude enters with a minus sign: theta = -xhat flips theta along xhat
    ElasticMedium m{1.5, 0.8, 1.0};
    const double omega = 1.7;
    const Vec3 xh = Vec3(0.48, 0.6, 0.64);
    const Vec3 xp = perpendicular(xh);
    const cplx b1(0.7, 0.2), b2(-0.3, 0.9);
    for (const Vec3& y : {Vec3(0.1, 0.2, -0.3), Vec3(-0.5, 0.4, 0.1)}) {
        const FarFieldKernel k = farfield_pattern(xh, y, omega, m);
        const Vec3c lhs = 4 * kPi * (m.lam + 2 * m.mu) * b1 * (k.total() * xh.cast<cplx>()) +
                          4 * kPi * m.mu * b2 * (k.total() * xp.cast<cplx>());
        PlaneWave w;
        w.theta = -xh;
        w.theta_perp = xp;
        w.beta1 = -b1;
        w.beta2 = b2;
        w.omega = omega;
        CHECK(rel(lhs, plane_wave_field(w, y, m)) < 1e-13);
    }
}

TEST_CASE("plane wave values and Navier residual") {
    ElasticMedium m{1.0, 1.0, 1.0};
    PlaneWave w;
    w.theta = Vec3(1, 2, 2) / 3.0;
    w.theta_perp = perpendicular(w.theta);
    w.beta1 = cplx(1.0, 0.5);
    w.beta2 = cplx(-0.4, 0.2);
    w.omega = 2.0;
    CHECK(std::abs(w.theta.dot(w.theta_perp)) < 1e-12);
    CHECK(rel(plane_wave_field(w, Vec3::Zero(), m),
              w.beta1 * w.theta.cast<cplx>() + w.beta2 * w.theta_perp.cast<cplx>()) < 1e-15);
    const VecFn u = [&](const Vec3& x) { return plane_wave_field(w, x, m); };
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-1, 1);
    for (int t = 0; t < 5; ++t) {
        const Vec3 x(U(rng), U(rng), U(rng));
        const Vec3c r = navier_fd(u, x, 1e-3, m) + w.omega * w.omega * m.rho_tilde * u(x);
        CHECK(r.norm() <= 1e-4 * u(x).norm());
    }
    PlaneWave s = w;
    s.beta1 = 0.0;
    const VecFn us = [&](const Vec3& x) { return plane_wave_field(s, x, m); };
    const double ks = wavenumbers(m, s.omega).kappa_s;
    CHECK(std::abs(divergence_fd(us, Vec3(0.3, 0.1, -0.2), 1e-3)) <= 1e-6 * ks * us(Vec3::Zero()).norm());
}

TEST_CASE("plane wave validation") {
    PlaneWave w;
    w.theta = Vec3(1, 0, 0);
    w.theta_perp = Vec3(1, 0, 0);
    CHECK_THROWS(w.validate());
}

}
