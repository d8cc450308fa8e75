#pragma once

#include <functional>

#include "relastic/scenario.hpp"

namespace support {

using namespace relastic;

using VecFn = std::function<Vec3c(const Vec3&)>;

inline double rel(const Mat3c& a, const Mat3c& b) { return (a - b).norm() / b.norm(); }
inline double rel(const Vec3c& a, const Vec3c& b) { return (a - b).norm() / b.norm(); }

// central-difference Navier operator of an arbitrary vector function
inline Vec3c navier_fd(const VecFn& u, const Vec3& x, double h, const ElasticMedium& m) {
    Vec3c lap = Vec3c::Zero(), graddiv = Vec3c::Zero();
    const Vec3c u0 = u(x);
    for (int i = 0; i < 3; ++i) {
        const Vec3 ei = Vec3::Unit(i) * h;
        lap += (u(x + ei) - 2.0 * u0 + u(x - ei)) / (h * h);
    }
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const Vec3 ei = Vec3::Unit(i) * h, ej = Vec3::Unit(j) * h;
            cplx d;
            if (i == j) d = (u(x + ei)[j] - 2.0 * u0[j] + u(x - ei)[j]) / (h * h);
            else d = (u(x + ei + ej)[j] - u(x + ei - ej)[j] - u(x - ei + ej)[j] + u(x - ei - ej)[j]) / (4 * h * h);
            graddiv[i] += d;
        }
    return (m.lam + m.mu) * graddiv + m.mu * lap;
}

inline cplx divergence_fd(const VecFn& u, const Vec3& x, double h) {
    cplx d = 0.0;
    for (int i = 0; i < 3; ++i) {
        const Vec3 ei = Vec3::Unit(i) * h;
        d += (u(x + ei)[i] - u(x - ei)[i]) / (2 * h);
    }
    return d;
}

// least-squares slope of log(y) against log(x)
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline Background homogeneous(int cells, const ElasticMedium& m = {}) {
    Background bg;
    bg.medium = m;
    bg.grid = ball_grid(cells, 1.0);
    bg.rho.assign(bg.grid.size(), m.rho_tilde);
    return bg;
}

inline Background bump_background(int cells, double amp = 1.0, double width = 0.25, const ElasticMedium& m = {}) {
    Background bg = homogeneous(cells, m);
    const auto c = bg.grid.centers();
    for (std::size_t i = 0; i < c.size(); ++i) bg.rho[i] = m.rho_tilde + amp * std::exp(-c[i].squaredNorm() / (width * width));
    return bg;
}

}  // namespace support
