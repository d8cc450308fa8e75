#pragma once

#include <array>
#include <optional>
#include <vector>

#include "relastic/forward.hpp"

namespace relastic {

class PointSourceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Herglotz kernel on a sphere grid. The shear part is carried by two tangent
// fields so that the tangent plane is covered at every node.
struct HerglotzKernel {
    SphereGrid sphere;
    std::vector<cplx> gp;
    std::vector<cplx> gs1;
    std::vector<cplx> gs2;
    std::vector<Vec3> t1;
    std::vector<Vec3> t2;

    std::size_t size() const { return sphere.size(); }
    // vector kernels at node k
    Vec3c g_p(std::size_t k) const { return gp[k] * sphere.nodes[k].cast<cplx>(); }
    Vec3c g_s(std::size_t k) const { return gs1[k] * t1[k].cast<cplx>() + gs2[k] * t2[k].cast<cplx>(); }
    double norm_p() const;
    double norm_s() const;
    double norm() const;
};

HerglotzKernel zero_kernel(const SphereGrid& sphere);

// Orthonormal tangent pair (t1, t2) with t1 x t2 = d.
std::pair<Vec3, Vec3> tangent_frame(const Vec3& d);

struct MeasurementSurfaceK {
    Vec3 center = Vec3::Zero();
    double radius = 1.5;
    SphereGrid nodes_unit;  // directions; boundary node = center + radius*dir

    Vec3 node(std::size_t k) const { return center + radius * nodes_unit.nodes[k]; }
    double weight(std::size_t k) const { return radius * radius * nodes_unit.weights[k]; }
    std::size_t size() const { return nodes_unit.size(); }
    bool contains_strictly(const Vec3& c, double r) const { return (c - center).norm() + r < radius; }
    void validate() const;
};

MeasurementSurfaceK default_surface(const Background& bg, int n_nodes, double factor = 1.5);

std::vector<Vec3c> herglotz_apply(const HerglotzKernel& g, const std::vector<Vec3>& points, double omega,
                                  const ElasticMedium& medium);

struct KernelResult {
    HerglotzKernel kernel;
    double alpha = 0.0;
    double discrepancy = 0.0;  // relative L2(dK) misfit
    double kernel_norm = 0.0;
    bool warning = false;      // discrepancy above the ceiling
};

struct SweepPolicy {
    std::vector<double> alphas{1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9};
    double noise_floor = 0.0;        // Morozov target on the relative discrepancy
    double ceiling = 0.05;           // warning threshold on the chosen discrepancy
    double collision_floor = 0.20;   // stagnation threshold for the collision warning
};

// Tikhonov machinery for a fixed surface, kernel sphere and frequency. The
// weighted system is decomposed once; alpha is relative to sigma_max^2.
class HerglotzSolver {
public:
    HerglotzSolver(const MeasurementSurfaceK& surface, const SphereGrid& sphere, double omega,
                   const ElasticMedium& medium);

    KernelResult minimum_norm_kernel(const Vec3& x, const Vec3& polarization, double alpha) const;

    // full sweep plus Morozov pick
    struct Sweep {
        std::vector<KernelResult> results;  // in policy order
        std::size_t chosen = 0;
        bool collision_warning = false;
    };
    Sweep sweep(const Vec3& x, const Vec3& polarization, const SweepPolicy& policy) const;

    const MeasurementSurfaceK& surface() const { return surface_; }
    const SphereGrid& sphere() const { return sphere_; }
    double sigma_max() const { return sigma_max_; }
    double omega() const { return omega_; }
    const ElasticMedium& medium() const { return medium_; }

private:
    Eigen::VectorXcd target(const Vec3& x, const Vec3& p) const;

    MeasurementSurfaceK surface_;
    SphereGrid sphere_;
    double omega_;
    ElasticMedium medium_;
    std::vector<Vec3> t1_, t2_;
    Eigen::VectorXd row_w_;   // sqrt of surface weights per row
    Eigen::VectorXd col_w_;   // sqrt of sphere weights per column
    Eigen::MatrixXcd U_;
    Eigen::VectorXd S_;
    Eigen::MatrixXcd V_;
    double sigma_max_ = 0.0;
};

// p . (scattered field at x) from far-field data at the mirrored nodes -d.
cplx backproject(const FarField& data, const HerglotzKernel& g, const ElasticMedium& medium);

// Chosen kernels for the three Cartesian polarizations at one exterior point.
struct PointKernels {
    Vec3 x = Vec3::Zero();
    std::array<KernelResult, 3> k;
    bool collision_warning = false;
};

PointKernels kernels_at(const HerglotzSolver& solver, const Vec3& x, const SweepPolicy& policy);

// scattered-field vector at pk.x
Vec3c backproject3(const FarField& data, const PointKernels& pk, const ElasticMedium& medium);

struct ExteriorFields {
    std::vector<Vec3> points;
    std::vector<Vec3c> Vt, Ut, Vs, Us;
    std::vector<double> discrepancy;    // worst over the three polarizations
    std::vector<double> kernel_norm;    // largest over the three polarizations
    std::vector<double> alpha;
    bool warning = false;
    bool collision_warning = false;
};

// `U_bank` may be empty (background only).
ExteriorFields recover_exterior_fields(const FarField& V_bank, const FarField* U_bank,
                                       const HerglotzSolver& solver, const std::vector<Vec3>& points,
                                       const PlaneWave& wave, const SweepPolicy& policy);

}  // namespace relastic
