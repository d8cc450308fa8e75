#include "relastic/newtonian.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace relastic {

namespace {

// clusters tighter than this are rotated to a canonical basis
constexpr double kRotateTol = 1e-9;

void fix_sign(Eigen::Ref<Eigen::VectorXd> e, Vec3& m) {
    double s = 1.0;
    if (m.norm() > 1e-10) {
        int j = 0;
        for (int i = 1; i < 3; ++i)
            if (std::abs(m[i]) > std::abs(m[j]) + 1e-14) j = i;
        s = m[j] < 0.0 ? -1.0 : 1.0;
    } else {
        // first cell, largest component; fall back to the first nonzero entry
        int j = 0;
        for (int i = 1; i < 3; ++i)
            if (std::abs(e[i]) > std::abs(e[j]) + 1e-14) j = i;
        if (std::abs(e[j]) > 1e-14) {
            s = e[j] < 0.0 ? -1.0 : 1.0;
        } else {
            for (Eigen::Index i = 0; i < e.size(); ++i)
                if (std::abs(e[i]) > 1e-14) {
                    s = e[i] < 0.0 ? -1.0 : 1.0;
                    break;
                }
        }
    }
    if (s < 0.0) {
        e = -e;
        m = -m;
    }
}

int dominant_axis(const Vec3& m) {
    int j = 0;
    for (int i = 1; i < 3; ++i)
        if (std::abs(m[i]) > std::abs(m[j]) + 1e-12 * m.norm()) j = i;
    return j;
}

Vec3 moment_of(const Eigen::Ref<const Eigen::VectorXd>& e, double vol) {
    Vec3 m = Vec3::Zero();
    for (Eigen::Index i = 0; i < e.size(); i += 3) m += Vec3(e[i], e[i + 1], e[i + 2]);
    return m * vol;
}

// Rotate a degenerate block so the moments become orthogonal and, inside
// groups of equal moment size, aligned with the coordinate axes.
void canonicalize_block(MatrixXd& basis, double vol) {
    const int k = static_cast<int>(basis.cols());
    Eigen::MatrixXd Mo(k, 3);
    for (int i = 0; i < k; ++i) Mo.row(i) = moment_of(basis.col(i), vol).transpose();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Mo, Eigen::ComputeFullU | Eigen::ComputeFullV);
    basis = basis * svd.matrixU();
    const Eigen::VectorXd sv = svd.singularValues();
    const Eigen::MatrixXd V = svd.matrixV();
    const int r = static_cast<int>(std::min<Eigen::Index>(sv.size(), 3));
    int i = 0;
    while (i < r) {
        if (sv[i] <= 1e-10) break;
        int j = i + 1;
        while (j < r && sv[j] > 1e-10 && std::abs(sv[j] - sv[i]) <= 1e-6 * sv[i]) ++j;
        const int g = j - i;
        Eigen::MatrixXd Vg(g, 3);
        for (int q = 0; q < g; ++q) Vg.row(q) = V.col(i + q).transpose();
        // project coordinate axes onto span(Vg), Gram-Schmidt
        Eigen::MatrixXd W(g, 3);
        int got = 0;
        for (int ax = 0; ax < 3 && got < g; ++ax) {
            Eigen::RowVector3d e = Eigen::RowVector3d::Zero();
            e[ax] = 1.0;
            Eigen::RowVector3d p = (e * Vg.transpose()) * Vg;
            for (int q = 0; q < got; ++q) p -= p.dot(W.row(q)) * W.row(q);
            if (p.norm() > 1e-6) W.row(got++) = p.normalized();
        }
        if (got == g) {
            const Eigen::MatrixXd R = W * Vg.transpose();  // g x g orthogonal
            basis.middleCols(i, g) = basis.middleCols(i, g) * R.transpose();
        }
        i = j;
    }
}

}  // namespace

Mat3 kelvin_self_block(double vol, const ElasticMedium& m) {
    const double R = std::cbrt(3.0 * vol / (4.0 * kPi));
    return (0.5 * R * R * (m.gamma1() + m.gamma2() / 3.0)) * Mat3::Identity();
}

MatrixXd assemble_newtonian(const VoxelGrid& grid, const ElasticMedium& medium) {
    medium.validate();
    const std::size_t n = grid.size();
    if (n == 0) throw SpectrumError("assemble_newtonian: empty grid");
    const std::vector<Vec3> x = grid.centers();
    const double vol = grid.cell_volume();
    MatrixXd M(3 * n, 3 * n);
    const Mat3 self = kelvin_self_block(vol, medium);
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        for (std::size_t j = 0; j < n; ++j) {
            const Mat3 B = (i == j) ? self : Mat3(kelvin_matrix(x[i], x[j], medium) * vol);
            M.block<3, 3>(3 * i, 3 * j) = B;
        }
    }
    return M;
}

EigenSystem eigensystem(const MatrixXd& M, double cell_volume) {
    if (M.rows() != M.cols() || M.rows() % 3 != 0) throw SpectrumError("eigensystem: matrix must be square 3N x 3N");
    const double scale = M.cwiseAbs().maxCoeff();
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(scale, 1e-300))
        throw SpectrumError("eigensystem: matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
    if (es.info() != Eigen::Success) throw SpectrumError("eigensystem: decomposition failed");
    const Eigen::Index n = M.rows();
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    const VectorXd& ev = es.eigenvalues();
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return std::abs(ev[a]) > std::abs(ev[b]); });

    EigenSystem out;
    out.cell_volume = cell_volume;
    out.total_volume = cell_volume * static_cast<double>(n / 3);
    out.eigenvalues.resize(n);
    MatrixXd V(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        out.eigenvalues[k] = ev[order[k]];
        V.col(k) = es.eigenvectors().col(order[k]);
    }

    // clusters
    out.cluster.assign(n, 0);
    int cid = 0;
    for (Eigen::Index k = 1; k < n; ++k) {
        const double a = out.eigenvalues[k - 1], b = out.eigenvalues[k];
        if (std::abs(a - b) > kDegeneracyTol * std::max(std::abs(a), std::abs(b))) ++cid;
        out.cluster[k] = cid;
    }

    // canonical basis inside exactly degenerate blocks
    Eigen::Index k = 0;
    while (k < n) {
        Eigen::Index j = k + 1;
        while (j < n && std::abs(out.eigenvalues[j] - out.eigenvalues[k]) <=
                            kRotateTol * std::abs(out.eigenvalues[k]))
            ++j;
        if (j - k > 1) {
            MatrixXd blk = V.middleCols(k, j - k);
            canonicalize_block(blk, cell_volume);
            // order: larger moment first, then axis
            std::vector<Eigen::Index> idx(j - k);
            std::iota(idx.begin(), idx.end(), 0);
            std::vector<Vec3> mom(j - k);
            for (Eigen::Index q = 0; q < j - k; ++q) mom[q] = moment_of(blk.col(q), cell_volume);
            std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
                const double na = mom[a].norm(), nb = mom[b].norm();
                if (std::abs(na - nb) > 1e-9 * std::max(na, nb)) return na > nb;
                if (na <= 1e-10) return false;
                return dominant_axis(mom[a]) < dominant_axis(mom[b]);
            });
            for (Eigen::Index q = 0; q < j - k; ++q) {
                V.col(k + q) = blk.col(idx[q]);
                out.eigenvalues[k + q] = V.col(k + q).dot(M * V.col(k + q));
            }
        }
        k = j;
    }

    const double inv = 1.0 / std::sqrt(cell_volume);
    out.eigenfunctions = V * inv;
    out.moments.resize(n);
    for (Eigen::Index q = 0; q < n; ++q) {
        Vec3 m = moment_of(out.eigenfunctions.col(q), cell_volume);
        fix_sign(out.eigenfunctions.col(q), m);
        out.moments[q] = m;
    }
    return out;
}

ScalingReport verify_scaling(const VoxelGrid& gridB, const ElasticMedium& medium, double a, int n_modes) {
    if (!(a > 0.0 && a <= 1.0)) throw SpectrumError("verify_scaling: need 0 < a <= 1");
    const EigenSystem eB = eigensystem(assemble_newtonian(gridB, medium), gridB.cell_volume());
    const VoxelGrid gD = gridB.scaled(a);
    const EigenSystem eD = eigensystem(assemble_newtonian(gD, medium), gD.cell_volume());
    ScalingReport rep;
    rep.a = a;
    const int nm = std::min<int>(n_modes, static_cast<int>(eB.size()));
    for (int n = 0; n < nm; ++n) {
        const double r = eD.eigenvalues[n] / eB.eigenvalues[n];
        rep.eigen_ratios.push_back(r);
        rep.max_eigen_dev = std::max(rep.max_eigen_dev, std::abs(r / (a * a) - 1.0));
        if (eB.moments[n].norm() > 1e-8) {
            const double mr = eD.moments[n].norm() / eB.moments[n].norm();
            rep.moment_ratios.push_back(mr);
            rep.moment_modes.push_back(n);
            rep.max_moment_dev = std::max(rep.max_moment_dev, std::abs(mr / std::pow(a, 1.5) - 1.0));
        }
    }
    return rep;
}

ModeSelection select_resonant_mode(const EigenSystem& eig) {
    if (eig.size() == 0) throw SpectrumError("select_resonant_mode: empty eigensystem");
    int best = -1;
    double bm = 0.0, bl = 0.0;
    for (std::size_t n = 0; n < eig.size(); ++n) {
        const double lam = eig.eigenvalues[n];
        if (!(lam > 1e-10)) continue;
        const double m = eig.moments[n].norm();
        if (m < 1e-10) continue;
        bool take = false;
        if (best < 0) {
            take = true;
        } else if (m > bm * (1.0 + 1e-9)) {
            take = true;
        } else if (m >= bm * (1.0 - 1e-9)) {
            // tie on moment: larger eigenvalue, then lower index (already lower)
            if (lam > bl * (1.0 + 1e-12)) take = true;
        }
        if (take) {
            best = static_cast<int>(n);
            bm = m;
            bl = lam;
        }
    }
    if (best < 0) throw SpectrumError("select_resonant_mode: no radiating mode (all moments below 1e-10)");
    ModeSelection sel;
    sel.n0 = best;
    for (std::size_t n = 0; n < eig.size(); ++n)
        if (eig.cluster[n] == eig.cluster[best]) sel.cluster_members.push_back(static_cast<int>(n));
    sel.degenerate = sel.cluster_members.size() > 1;
    return sel;
}

double resonance_frequency(double lambda_n0_B, double c1) {
    if (!(lambda_n0_B > 0.0) || !(c1 > 0.0))
        throw SpectrumError("resonance_frequency: requires lambda > 0 and c1 > 0");
    return 1.0 / std::sqrt(c1 * lambda_n0_B);
}

double incident_frequency(double omega_n0, double a, double h, double b, int sign) {
    if (!(h > 0.0 && h < 1.0)) throw SpectrumError("incident_frequency: requires 0 < h < 1");
    if (b < 0.0) throw SpectrumError("incident_frequency: requires b >= 0");
    if (sign != 1 && sign != -1) throw SpectrumError("incident_frequency: sign must be +1 or -1");
    const double w2 = omega_n0 * omega_n0 + sign * b * std::pow(a, h);
    if (!(w2 > 0.0)) throw SpectrumError("incident_frequency: omega^2 <= 0, reduce b or flip sign");
    return std::sqrt(w2);
}

ResonanceInfo make_resonance(const EigenSystem& eigB, double c1, double a, double h, double b, int sign,
                             std::optional<int> mode_override) {
    ResonanceInfo r;
    ModeSelection sel;
    if (mode_override) {
        const int n = *mode_override;
        if (n < 0 || n >= static_cast<int>(eigB.size())) throw SpectrumError("mode override out of range");
        sel.n0 = n;
        for (std::size_t q = 0; q < eigB.size(); ++q)
            if (eigB.cluster[q] == eigB.cluster[n]) sel.cluster_members.push_back(static_cast<int>(q));
        sel.degenerate = sel.cluster_members.size() > 1;
    } else {
        sel = select_resonant_mode(eigB);
    }
    r.n0 = sel.n0;
    r.lambda_n0_B = eigB.eigenvalues[sel.n0];
    r.moment = eigB.moments[sel.n0];
    r.degenerate = sel.degenerate;
    r.cluster_size = static_cast<int>(sel.cluster_members.size());
    for (int q : sel.cluster_members) r.E_B += eigB.moments[q] * eigB.moments[q].transpose();
    r.omega_n0 = resonance_frequency(r.lambda_n0_B, c1);
    r.h = h;
    r.b = b;
    r.sign = sign;
    r.omega_inc = incident_frequency(r.omega_n0, a, h, b, sign);
    return r;
}

Mat3 resolvent_moment(const MatrixXd& M, double vol, double rho1, double rho0_z, double omega,
                      const EigenSystem* eig) {
    const double alpha = rho1 - rho0_z;
    const Eigen::Index n = M.rows();
    const double scale = alpha * omega * omega;
    if (scale != 0.0) {
        EigenSystem local;
        if (!eig) {
            local = eigensystem(M, vol);
            eig = &local;
        }
        const double target = 1.0 / scale;
        const double mnorm = M.cwiseAbs().maxCoeff() * static_cast<double>(n);
        for (std::size_t q = 0; q < eig->size(); ++q)
            if (std::abs(eig->eigenvalues[q] - target) < 1e-10 * mnorm)
                throw SpectrumError("resolvent_moment: resonance collision with eigenvalue " +
                                    std::to_string(eig->eigenvalues[q]));
    }
    MatrixXd A = MatrixXd::Identity(n, n) - scale * M;
    MatrixXd rhs = MatrixXd::Zero(n, 3);
    for (Eigen::Index i = 0; i < n; i += 3)
        for (int j = 0; j < 3; ++j) rhs(i + j, j) = 1.0;
    const MatrixXd W = A.partialPivLu().solve(rhs);
    Mat3 out = Mat3::Zero();
    for (Eigen::Index i = 0; i < n; i += 3) out += W.block<3, 3>(i, 0);
    return out * vol;
}

Mat3 resolvent_moment_spectral(const EigenSystem& eig, double rho1, double rho0_z, double omega, int only_mode) {
    const double s = (rho1 - rho0_z) * omega * omega;
    Mat3 out = Mat3::Zero();
    for (std::size_t q = 0; q < eig.size(); ++q) {
        if (only_mode >= 0 && static_cast<int>(q) != only_mode) continue;
        out += (1.0 / (1.0 - s * eig.eigenvalues[q])) * eig.moments[q] * eig.moments[q].transpose();
    }
    return out;
}

namespace {

struct Fnv {
    std::uint64_t h = 1469598103934665603ull;
    void add(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 1099511628211ull;
        }
    }
    template <class T>
    void put(const T& v) {
        add(&v, sizeof(T));
    }
};

constexpr char kMagic[8] = {'R', 'E', 'L', 'E', 'I', 'G', '0', '1'};

}  // namespace

std::uint64_t assembly_hash(const VoxelGrid& g, const ElasticMedium& m) {
    Fnv f;
    f.put(m.lam);
    f.put(m.mu);
    f.put(g.spacing);
    for (int i = 0; i < 3; ++i) f.put(g.origin[i]);
    const std::uint64_t n = g.cells.size();
    f.put(n);
    for (const auto& c : g.cells) f.add(c.data(), sizeof(int) * 3);
    return f.h;
}

void save_eigensystem(const std::string& path, const EigenSystem& eig, std::uint64_t hash) {
    const std::filesystem::path dir = std::filesystem::path(path).parent_path();
    std::error_code ec;
    if (!dir.empty()) std::filesystem::create_directories(dir, ec);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw SpectrumError("cannot write eigensystem cache: " + path);
    os.write(kMagic, 8);
    os.write(reinterpret_cast<const char*>(&hash), sizeof hash);
    const std::int64_t rows = eig.eigenfunctions.rows(), cols = eig.eigenfunctions.cols();
    os.write(reinterpret_cast<const char*>(&rows), sizeof rows);
    os.write(reinterpret_cast<const char*>(&cols), sizeof cols);
    os.write(reinterpret_cast<const char*>(&eig.cell_volume), sizeof(double));
    os.write(reinterpret_cast<const char*>(&eig.total_volume), sizeof(double));
    os.write(reinterpret_cast<const char*>(eig.eigenvalues.data()), sizeof(double) * cols);
    os.write(reinterpret_cast<const char*>(eig.eigenfunctions.data()), sizeof(double) * rows * cols);
    for (const auto& m : eig.moments) os.write(reinterpret_cast<const char*>(m.data()), sizeof(double) * 3);
    os.write(reinterpret_cast<const char*>(eig.cluster.data()), sizeof(int) * cols);
}

std::optional<EigenSystem> load_eigensystem(const std::string& path, std::uint64_t hash) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return std::nullopt;
    char magic[8];
    std::uint64_t h = 0;
    is.read(magic, 8);
    is.read(reinterpret_cast<char*>(&h), sizeof h);
    if (!is || std::memcmp(magic, kMagic, 8) != 0 || h != hash) return std::nullopt;
    std::int64_t rows = 0, cols = 0;
    is.read(reinterpret_cast<char*>(&rows), sizeof rows);
    is.read(reinterpret_cast<char*>(&cols), sizeof cols);
    if (!is || rows <= 0 || cols <= 0 || rows > 100000 || cols > rows) return std::nullopt;
    EigenSystem e;
    is.read(reinterpret_cast<char*>(&e.cell_volume), sizeof(double));
    is.read(reinterpret_cast<char*>(&e.total_volume), sizeof(double));
    e.eigenvalues.resize(cols);
    e.eigenfunctions.resize(rows, cols);
    e.moments.resize(cols);
    e.cluster.resize(cols);
    is.read(reinterpret_cast<char*>(e.eigenvalues.data()), sizeof(double) * cols);
    is.read(reinterpret_cast<char*>(e.eigenfunctions.data()), sizeof(double) * rows * cols);
    for (auto& m : e.moments) is.read(reinterpret_cast<char*>(m.data()), sizeof(double) * 3);
    is.read(reinterpret_cast<char*>(e.cluster.data()), sizeof(int) * cols);
    if (!is) return std::nullopt;
    return e;
}

EigenSystem compute_spectrum(const VoxelGrid& grid, const ElasticMedium& medium, const std::string& cache_path) {
    const std::uint64_t h = assembly_hash(grid, medium);
    if (!cache_path.empty()) {
        if (auto e = load_eigensystem(cache_path, h)) return *e;
    }
    EigenSystem e = eigensystem(assemble_newtonian(grid, medium), grid.cell_volume());
    if (!cache_path.empty()) save_eigensystem(cache_path, e, h);
    return e;
}

}  // namespace relastic
