#pragma once

#include <complex>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace relastic {

using cplx = std::complex<double>;
using Vec3 = Eigen::Vector3d;
using Vec3c = Eigen::Vector3cd;
using Mat3 = Eigen::Matrix3d;
using Mat3c = Eigen::Matrix3cd;

constexpr double kPi = 3.14159265358979323846;

class KernelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Homogeneous part of the medium: Lame constants and the exterior density.
// The variable density rho_0 lives on the Omega grid (see forward.hpp).
struct ElasticMedium {
    double lam = 1.0;
    double mu = 1.0;
    double rho_tilde = 1.0;

    // throws KernelError naming the violated inequality
    void validate() const;

    double gamma1() const { return 0.5 * (1.0 / mu + 1.0 / (2.0 * mu + lam)); }
    double gamma2() const { return 0.5 * (1.0 / mu - 1.0 / (2.0 * mu + lam)); }
};

struct Wavenumbers {
    double kappa_p = 0.0;
    double kappa_s = 0.0;
    double c_p = 0.0;
    double c_s = 0.0;
};

struct PlaneWave {
    Vec3 theta{0.0, 0.0, 1.0};
    Vec3 theta_perp{1.0, 0.0, 0.0};
    cplx beta1{1.0, 0.0};
    cplx beta2{0.0, 0.0};
    double omega = 1.0;

    void validate() const;
};

Wavenumbers wavenumbers(const ElasticMedium& medium, double omega);

// Closed form with analytic radial derivatives. Switches to the series for
// kappa_s r below kSeriesSwitch.
Mat3c kupradze_matrix(const Vec3& x, const Vec3& y, double omega, const ElasticMedium& medium);

// Closed form only, no small-argument switch. Exposed for tests.
Mat3c kupradze_closed(const Vec3& x, const Vec3& y, double omega, const ElasticMedium& medium);

// Truncated power series in omega r, `terms` terms (n = 0 .. terms-1).
Mat3c kupradze_series(const Vec3& x, const Vec3& y, double omega, const ElasticMedium& medium,
                      int terms = 30);

// lim_{r->0} (Gamma^omega - Gamma^0); purely imaginary multiple of I.
Mat3c kupradze_minus_kelvin_at_zero(double omega, const ElasticMedium& medium);

Mat3 kelvin_matrix(const Vec3& x, const Vec3& y, const ElasticMedium& medium);

struct FarFieldKernel {
    Mat3c p_part;
    Mat3c s_part;
    Mat3c total() const { return p_part + s_part; }
};

FarFieldKernel farfield_pattern(const Vec3& xhat, const Vec3& y, double omega,
                                const ElasticMedium& medium);

Vec3c plane_wave_field(const PlaneWave& wave, const Vec3& x, const ElasticMedium& medium);

// Unit vector orthogonal to d, deterministic.
Vec3 perpendicular(const Vec3& d);

double kupradze_series_switch();

}  // namespace relastic
