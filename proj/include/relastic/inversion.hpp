#pragma once

#include <optional>
#include <string>
#include <vector>

#include "relastic/pointsource.hpp"

namespace relastic {

class InversionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Regular lattice of injection points; index (i,j,k) -> (i*ny + j)*nz + k.
struct Lattice {
    Vec3 origin = Vec3::Zero();  // node (0,0,0)
    double spacing = 0.1;
    Index3 n{5, 5, 5};

    std::size_t size() const { return static_cast<std::size_t>(n[0]) * n[1] * n[2]; }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * n[1] + j) * n[2] + k;
    }
    Index3 ijk(std::size_t idx) const;
    Vec3 node(std::size_t idx) const;
    bool inside(int i, int j, int k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < n[0] && j < n[1] && k < n[2];
    }
    // centered lattice of n^3 nodes
    static Lattice centered(const Vec3& c, double spacing, int n);
};

enum class MaskReason { none, small_moment, small_denominator, fd_stencil, node_fault };
const char* to_string(MaskReason r);

struct NodeMeasurement {
    Vec3c U_back = Vec3c::Zero();  // far field after injection at the backscatter direction
    FarField U_bank;               // after injection, observed at the mirrored kernel nodes
    bool present = true;
};

struct InjectionSweep {
    Lattice lattice;
    PlaneWave wave;        // the reconstruction incidence
    Vec3c V_back = Vec3c::Zero();
    FarField V_bank;
    std::vector<NodeMeasurement> nodes;
    double delta = 0.0;
    double delta1 = 0.0;

    Vec3 xhat_back() const { return -wave.theta; }
    void validate(const Background& bg) const;
};

struct InversionConfig {
    ResonanceInfo res;
    double a = 0.05;
    double c1 = 1.0;
    Vec3 anchor = Vec3::Zero();
    MeasurementSurfaceK surface;
    SweepPolicy policy;
    double tau_rel = 1e-3;    // moment guard relative to the sweep maximum
    double denom_rel = 1e-3;  // component guard relative to the field maximum
};

// (V^t . m)^2 from the backscatter pair.
cplx step1_backscatter_moment(const Vec3c& U_back, const Vec3c& V_back, const PlaneWave& wave,
                              const ResonanceInfo& res, const ElasticMedium& medium, double a, double c1,
                              double noise_floor = 0.0);

struct SignedMoments {
    std::vector<cplx> value;
    std::vector<bool> determinate;
    std::vector<int> region;  // connected-component id, -1 when indeterminate
    double tau = 0.0;
};

SignedMoments resolve_sign(const Lattice& lat, const std::vector<cplx>& squared, double tau_rel = 1e-3,
                           const std::vector<bool>* usable = nullptr);

// G(x,z) m from the recovered scattered-field difference at the anchor.
Vec3c step3_green_moment(const Vec3c& dUs, cplx signed_moment, const ResonanceInfo& res, double a, double c1,
                         double tau);

struct FdResult {
    std::vector<Vec3c> values;
    std::vector<bool> valid;
};

// Second-order central differences of (lam+mu) grad div + mu Laplacian.
FdResult elastic_laplacian_fd(const Lattice& lat, const std::vector<Vec3c>& field, double lam, double mu,
                              const std::vector<bool>* available = nullptr);

struct DensityEstimate {
    std::vector<double> rho;
    std::vector<double> im_residual;
    std::vector<double> component_spread;  // max pairwise gap of per-component ratios
    std::vector<MaskReason> mask;
};

DensityEstimate extract_density(const Lattice& lat, const std::vector<Vec3c>& field, double omega,
                                const ElasticMedium& medium, double denom_rel = 1e-3,
                                const std::vector<bool>* available = nullptr);

struct ReconstructionResult {
    Lattice lattice;
    std::vector<Vec3> z;
    std::vector<cplx> squared_moment;
    std::vector<cplx> moment;
    std::vector<Vec3c> dUs;        // recovered U^s - V^s at the anchor
    std::vector<Vec3c> green_moment;
    std::vector<double> rho;
    std::vector<double> im_residual;
    std::vector<double> component_spread;
    std::vector<MaskReason> mask;
    std::vector<std::string> fault;  // per node, empty when fine
    std::vector<double> anchor_discrepancy;  // per polarization
    double tau = 0.0;
    bool kernel_warning = false;
    bool collision_warning = false;

    std::size_t masked_count() const;
    std::size_t silent_masked() const;  // masked nodes without a reason; must be zero
};

ReconstructionResult run_inversion(const InjectionSweep& sweep, const HerglotzSolver& solver,
                                   const InversionConfig& cfg);

}  // namespace relastic
