#include "relastic/kernels.hpp"

#include <cmath>

namespace relastic {

namespace {

constexpr double kSeriesSwitch = 5e-2;
constexpr int kSeriesTermsNear = 14;
const cplx I1(0.0, 1.0);

}  // namespace

double kupradze_series_switch() { return kSeriesSwitch; }

void ElasticMedium::validate() const {
    if (!(mu > 0.0)) throw KernelError("invalid medium: requires mu > 0 (μ > 0), got mu = " + std::to_string(mu));
    if (!(3.0 * lam + 2.0 * mu > 0.0))
        throw KernelError("invalid medium: requires 3*lam + 2*mu > 0 (3λ+2μ > 0), got " +
                          std::to_string(3.0 * lam + 2.0 * mu));
    if (!(rho_tilde > 0.0)) throw KernelError("invalid medium: requires rho_tilde > 0 (ρ̃₀ > 0)");
}

void PlaneWave::validate() const {
    if (std::abs(theta.norm() - 1.0) > 1e-12 || std::abs(theta_perp.norm() - 1.0) > 1e-12)
        throw KernelError("plane wave directions must be unit vectors");
    if (std::abs(theta.dot(theta_perp)) > 1e-12) throw KernelError("theta_perp must be orthogonal to theta");
    if (!(omega > 0.0)) throw KernelError("plane wave requires omega > 0");
}

Wavenumbers wavenumbers(const ElasticMedium& medium, double omega) {
    medium.validate();
    if (omega < 0.0) throw KernelError("omega must be >= 0");
    Wavenumbers k;
    k.c_s = std::sqrt(medium.mu / medium.rho_tilde);
    k.c_p = std::sqrt((medium.lam + 2.0 * medium.mu) / medium.rho_tilde);
    k.kappa_s = omega / k.c_s;
    k.kappa_p = omega / k.c_p;
    return k;
}

Mat3c kupradze_closed(const Vec3& x, const Vec3& y, double omega, const ElasticMedium& m) {
    const Vec3 d = x - y;
    const double r = d.norm();
    if (r < 1e-14) throw KernelError("kupradze_matrix: singular at x = y");
    const Wavenumbers k = wavenumbers(m, omega);
    const Vec3 rh = d / r;
    const cplx es = std::exp(I1 * k.kappa_s * r);
    const cplx ep = std::exp(I1 * k.kappa_p * r);
    // f_k = e^{ikr}/r, derivatives
    auto d1 = [r](double kk, cplx e) { return e * (I1 * kk / r - 1.0 / (r * r)); };
    auto d2 = [r](double kk, cplx e) {
        return e * (-kk * kk / r - 2.0 * I1 * kk / (r * r) + 2.0 / (r * r * r));
    };
    const cplx phi1 = d1(k.kappa_s, es) - d1(k.kappa_p, ep);
    const cplx phi2 = d2(k.kappa_s, es) - d2(k.kappa_p, ep);
    const double cdd = 1.0 / (4.0 * kPi * omega * omega * m.rho_tilde);
    const Mat3 P = rh * rh.transpose();
    const Mat3 Q = Mat3::Identity() - P;
    Mat3c G = (es / (4.0 * kPi * m.mu * r)) * Mat3c::Identity();
    G += cdd * (phi2 * P.cast<cplx>() + (phi1 / r) * Q.cast<cplx>());
    return G;
}

Mat3c kupradze_series(const Vec3& x, const Vec3& y, double omega, const ElasticMedium& m, int terms) {
    const Vec3 d = x - y;
    const double r = d.norm();
    if (r < 1e-14) throw KernelError("kupradze_matrix: singular at x = y");
    const Wavenumbers k = wavenumbers(m, omega);
    const double pre = 1.0 / (4.0 * kPi * m.rho_tilde);
    cplx a(0.0), b(0.0);
    cplx in(1.0, 0.0);
    double fact = 1.0;
    // (omega/c)^n r^n accumulated directly to stay in range
    double ws = 1.0, wp = 1.0;
    for (int n = 0; n < terms; ++n) {
        if (n > 0) {
            in *= I1;
            fact *= n;
            ws *= k.kappa_s * r;
            wp *= k.kappa_p * r;
        }
        const double cs2 = k.c_s * k.c_s, cp2 = k.c_p * k.c_p;
        const double den = (n + 2.0) * fact;
        a += in / den * ((n + 1.0) * ws / cs2 + wp / cp2);
        b += in * (n - 1.0) / den * (ws / cs2 - wp / cp2);
    }
    // a multiplies delta_ij / r, b multiplies d_i d_j / r^3
    const Mat3 P = d * d.transpose() / (r * r * r);
    Mat3c G = (pre * a / r) * Mat3c::Identity() - (pre * b) * P.cast<cplx>();
    return G;
}

Mat3c kupradze_matrix(const Vec3& x, const Vec3& y, double omega, const ElasticMedium& m) {
    if (!(omega > 0.0)) throw KernelError("kupradze_matrix requires omega > 0");
    const double r = (x - y).norm();
    if (r < 1e-14) throw KernelError("kupradze_matrix: singular at x = y");
    const Wavenumbers k = wavenumbers(m, omega);
    if (k.kappa_s * r < kSeriesSwitch) return kupradze_series(x, y, omega, m, kSeriesTermsNear);
    return kupradze_closed(x, y, omega, m);
}

Mat3c kupradze_minus_kelvin_at_zero(double omega, const ElasticMedium& m) {
    const Wavenumbers k = wavenumbers(m, omega);
    const double v = omega * (2.0 / std::pow(k.c_s, 3) + 1.0 / std::pow(k.c_p, 3)) /
                     (3.0 * 4.0 * kPi * m.rho_tilde);
    return cplx(0.0, v) * Mat3c::Identity();
}

Mat3 kelvin_matrix(const Vec3& x, const Vec3& y, const ElasticMedium& m) {
    const Vec3 d = x - y;
    const double r = d.norm();
    if (r < 1e-14) throw KernelError("kelvin_matrix: singular at x = y");
    const double g1 = m.gamma1(), g2 = m.gamma2();
    return (g1 / (4.0 * kPi * r)) * Mat3::Identity() + (g2 / (4.0 * kPi * r * r * r)) * (d * d.transpose());
}

FarFieldKernel farfield_pattern(const Vec3& xhat, const Vec3& y, double omega, const ElasticMedium& m) {
    if (std::abs(xhat.norm() - 1.0) > 1e-10) throw KernelError("farfield_pattern: xhat must be a unit vector");
    const Wavenumbers k = wavenumbers(m, omega);
    const double t = xhat.dot(y);
    const Mat3 P = xhat * xhat.transpose();
    FarFieldKernel f;
    f.p_part = (std::exp(-I1 * k.kappa_p * t) / (4.0 * kPi * (m.lam + 2.0 * m.mu))) * P.cast<cplx>();
    f.s_part = (std::exp(-I1 * k.kappa_s * t) / (4.0 * kPi * m.mu)) * (Mat3::Identity() - P).cast<cplx>();
    return f;
}

Vec3c plane_wave_field(const PlaneWave& w, const Vec3& x, const ElasticMedium& m) {
    const Wavenumbers k = wavenumbers(m, w.omega);
    const double t = w.theta.dot(x);
    return (w.beta1 * std::exp(I1 * k.kappa_p * t)) * w.theta.cast<cplx>() +
           (w.beta2 * std::exp(I1 * k.kappa_s * t)) * w.theta_perp.cast<cplx>();
}

Vec3 perpendicular(const Vec3& d) {
    // pick the axis least aligned with d
    int j = 0;
    for (int i = 1; i < 3; ++i)
        if (std::abs(d[i]) < std::abs(d[j])) j = i;
    Vec3 e = Vec3::Zero();
    e[j] = 1.0;
    Vec3 t = e - d.dot(e) * d;
    return t.normalized();
}

}  // namespace relastic
