#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "relastic/newtonian.hpp"

namespace relastic {

using Eigen::MatrixXcd;
using Eigen::VectorXcd;

class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Variable-density background: rho_0 sampled per Omega cell; rho_tilde elsewhere.
struct Background {
    ElasticMedium medium;
    VoxelGrid grid;
    std::vector<double> rho;
    Vec3 center = Vec3::Zero();
    double radius = 1.0;

    void validate() const;
    // piecewise constant lookup; rho_tilde outside the occupied cells
    double rho_at(const Vec3& y) const;
    double max_rho() const;
};

// Point-collocated volume sources: position, weight, contrast rho - rho_tilde.
struct SourceCells {
    std::vector<Vec3> x;
    std::vector<double> vol;
    std::vector<double> contrast;
    std::size_t size() const { return x.size(); }
    void append(const VoxelGrid& g, const std::vector<double>& c);
};

struct ComplexField3 {
    std::vector<Vec3c> values;
    std::size_t size() const { return values.size(); }
    VectorXcd flat() const;
    static ComplexField3 from_flat(const VectorXcd& v);
};

struct FarField {
    SphereGrid sphere;
    std::vector<Vec3c> p_values;
    std::vector<Vec3c> s_values;
    Vec3c total(std::size_t k) const { return p_values[k] + s_values[k]; }
    // max violation of the p/s orthogonality invariant, relative
    double orthogonality_defect() const;
};

// Self block for the Kupradze kernel on a cell of volume `vol`.
Mat3c kupradze_self_block(double vol, double omega, const ElasticMedium& medium);

// Dense block matrix K with K_ij = Gamma^omega(x_i,x_j) c_j vol_j (self blocks
// analytic); rows from `rows`, columns from `cols`. Same set -> square with self terms.
MatrixXcd volume_potential(const SourceCells& rows, const SourceCells& cols, double omega,
                           const ElasticMedium& medium, bool same_set);

// Sum_j omega^2 c_j Gamma^omega(x, y_j) U_j vol_j
Vec3c scattered_at(const SourceCells& cells, const ComplexField3& U, const Vec3& x, double omega,
                   const ElasticMedium& medium);

FarField far_field(const SourceCells& cells, const ComplexField3& U, const SphereGrid& sphere, double omega,
                   const ElasticMedium& medium);
Vec3c far_field_at(const SourceCells& cells, const ComplexField3& U, const Vec3& xhat, double omega,
                   const ElasticMedium& medium);

using IncidentFn = std::function<Vec3c(const Vec3&)>;

// Factorized Lippmann-Schwinger system on the Omega cells of a background.
class BackgroundSolver {
public:
    BackgroundSolver(const Background& bg, double omega);

    const Background& background() const { return bg_; }
    const SourceCells& cells() const { return cells_; }
    double omega() const { return omega_; }
    bool trivial() const { return trivial_; }

    ComplexField3 solve(const IncidentFn& inc) const;
    MatrixXcd solve_many(const MatrixXcd& rhs) const;
    double last_residual() const { return last_residual_; }

    ComplexField3 solve_plane(const PlaneWave& w) const;
    // G^omega(., source) p on the cells; source must be off the cells
    ComplexField3 solve_green(const Vec3& source, const Vec3c& p) const;

    // total field at an arbitrary point from a solved cell field
    Vec3c total_at(const ComplexField3& U, const IncidentFn& inc, const Vec3& x) const;
    Vec3c scattered(const ComplexField3& U, const Vec3& x) const;
    FarField far(const ComplexField3& U, const SphereGrid& sphere) const;

    // G^omega(x, z) as a matrix for x off the cells, z anywhere off the cells
    Mat3c green_matrix(const Vec3& x, const Vec3& z) const;

    const MatrixXcd& system_matrix() const { return A_; }
    const Eigen::PartialPivLU<MatrixXcd>& lu() const { return lu_; }

private:
    Background bg_;
    double omega_;
    SourceCells cells_;
    bool trivial_ = false;
    MatrixXcd A_;
    Eigen::PartialPivLU<MatrixXcd> lu_;
    mutable double last_residual_ = 0.0;
};

struct Inclusion {
    Vec3 z = Vec3::Zero();
    double a = 0.05;
    double c1 = 1.0;
    VoxelGrid gridB;  // reference shape centered at the origin

    double rho1() const { return c1 / (a * a); }
    VoxelGrid gridD() const { return gridB.scaled(a, z); }
    void validate(const Background& bg) const;
};

struct InclusionSolution {
    ComplexField3 U_omega;  // on Omega cells
    ComplexField3 U_D;      // on D cells
    SourceCells cells;      // Omega cells then D cells, with their contrasts
    double residual = 0.0;

    ComplexField3 stacked() const;
};

// Monolithic Omega + D solve, done by a Schur complement on the factorized
// background block. `Vt` is the background solution for the same incidence.
class InclusionSolver {
public:
    InclusionSolver(const BackgroundSolver& bg, const Inclusion& inc, double omega);

    InclusionSolution solve(const IncidentFn& inc, const ComplexField3& Vt) const;
    const SourceCells& d_cells() const { return dcells_; }

private:
    const BackgroundSolver& bg_;
    double omega_;
    SourceCells dcells_;
    MatrixXcd A_OD_, A_DO_, A_DD_;
    MatrixXcd X_;  // A_OO^{-1} A_OD
    Eigen::PartialPivLU<MatrixXcd> schur_lu_;
};

// Free-function forms of the main operations.
ComplexField3 solve_background(const Background& bg, const PlaneWave& w);
ComplexField3 background_green(const Background& bg, const Vec3& source, const Vec3c& p, double omega);
InclusionSolution solve_with_inclusion(const Background& bg, const PlaneWave& w, const Inclusion& inc);

// Dominant correction U^s - V^s at x:
// c1 a w^2 w_n0^2 / (w_n0^2 - w^2) G(x,z) E_B V^t(z)
Vec3c asymptotic_scattered(const Vec3c& Vt_z, const Mat3c& G_xz, const ResonanceInfo& res, double c1, double a);
cplx resonant_factor(const ResonanceInfo& res, double c1, double a);

}  // namespace relastic
