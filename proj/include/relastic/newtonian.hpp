#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "relastic/grid.hpp"

namespace relastic {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Analytic integral of the Kelvin kernel over the ball with volume `vol`.
Mat3 kelvin_self_block(double vol, const ElasticMedium& medium);

// 3N x 3N midpoint discretization of the Kelvin volume potential on `grid`.
MatrixXd assemble_newtonian(const VoxelGrid& grid, const ElasticMedium& medium);

struct EigenSystem {
    VectorXd eigenvalues;        // sorted by descending |lambda|
    MatrixXd eigenfunctions;     // 3N x M, column n is e_n (cell-major, xyz)
    std::vector<Vec3> moments;   // integral of e_n
    std::vector<int> cluster;    // degenerate-cluster id per mode
    double cell_volume = 1.0;
    double total_volume = 0.0;

    std::size_t size() const { return static_cast<std::size_t>(eigenvalues.size()); }
};

// Relative gap below which two eigenvalues are treated as one cluster.
constexpr double kDegeneracyTol = 1e-6;

EigenSystem eigensystem(const MatrixXd& matrix, double cell_volume);

struct ScalingReport {
    double a = 1.0;
    std::vector<double> eigen_ratios;   // lambda_n(aB) / lambda_n(B)
    std::vector<double> moment_ratios;  // |m_n(aB)| / |m_n(B)|, modes with nonzero moment
    std::vector<int> moment_modes;
    double max_eigen_dev = 0.0;   // max |ratio/a^2 - 1|
    double max_moment_dev = 0.0;  // max |ratio/a^{3/2} - 1|
};

ScalingReport verify_scaling(const VoxelGrid& gridB, const ElasticMedium& medium, double a, int n_modes = 5);

class SpectrumError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModeSelection {
    int n0 = -1;
    bool degenerate = false;
    std::vector<int> cluster_members;
};

ModeSelection select_resonant_mode(const EigenSystem& eig);

double resonance_frequency(double lambda_n0_B, double c1);

struct ResonanceInfo {
    int n0 = -1;
    double lambda_n0_B = 0.0;
    double omega_n0 = 0.0;
    Vec3 moment = Vec3::Zero();   // integral of e_{n0} over B
    Mat3 E_B = Mat3::Zero();      // sum of m m^T over the degenerate cluster of n0
    bool degenerate = false;
    int cluster_size = 1;
    double h = 0.5;
    double b = 1.0;
    int sign = 1;
    double omega_inc = 0.0;
};

double incident_frequency(double omega_n0, double a, double h, double b, int sign);

ResonanceInfo make_resonance(const EigenSystem& eigB, double c1, double a, double h, double b, int sign,
                             std::optional<int> mode_override = std::nullopt);

// Integral over D of (I - (rho1 - rho0_z) omega^2 N_D)^{-1} e_j, column j.
Mat3 resolvent_moment(const MatrixXd& matrix, double cell_volume, double rho1, double rho0_z, double omega,
                      const EigenSystem* eig = nullptr);

// Same through the eigen expansion, for checks.
Mat3 resolvent_moment_spectral(const EigenSystem& eig, double rho1, double rho0_z, double omega,
                               int only_mode = -1);

// Eigensystem cache. The hash covers the grid and Lame constants.
std::uint64_t assembly_hash(const VoxelGrid& grid, const ElasticMedium& medium);
void save_eigensystem(const std::string& path, const EigenSystem& eig, std::uint64_t hash);
std::optional<EigenSystem> load_eigensystem(const std::string& path, std::uint64_t hash);

// Convenience: assemble + decompose, using the cache if `cache_path` is nonempty.
EigenSystem compute_spectrum(const VoxelGrid& grid, const ElasticMedium& medium,
                             const std::string& cache_path = "");

}  // namespace relastic
