#include "relastic/forward.hpp"

#include <cmath>

namespace relastic {

namespace {

constexpr double kResidualTol = 1e-8;

double rel_residual(const VectorXcd& r, const VectorXcd& b) {
    const double nb = b.norm();
    return nb > 0.0 ? r.norm() / nb : r.norm();
}

}  // namespace

void Background::validate() const {
    medium.validate();
    if (rho.size() != grid.size()) throw SolverError("background: rho sample count does not match the grid");
    for (double r : rho)
        if (!(r > 0.0)) throw SolverError("background: rho_0 must be strictly positive");
}

double Background::rho_at(const Vec3& y) const {
    const Vec3 q = (y - grid.origin) / grid.spacing;
    const Index3 c{static_cast<int>(std::lround(q[0])), static_cast<int>(std::lround(q[1])),
                   static_cast<int>(std::lround(q[2]))};
    // cells are stored in lexicographic order by construction; linear scan is
    // cheap compared with any solve
    for (std::size_t i = 0; i < grid.cells.size(); ++i)
        if (grid.cells[i] == c) return rho[i];
    return medium.rho_tilde;
}

double Background::max_rho() const {
    double m = medium.rho_tilde;
    for (double r : rho) m = std::max(m, r);
    return m;
}

void SourceCells::append(const VoxelGrid& g, const std::vector<double>& c) {
    if (c.size() != g.size()) throw SolverError("SourceCells: contrast size mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) {
        x.push_back(g.center(i));
        vol.push_back(g.cell_volume());
        contrast.push_back(c[i]);
    }
}

VectorXcd ComplexField3::flat() const {
    VectorXcd v(3 * values.size());
    for (std::size_t i = 0; i < values.size(); ++i) v.segment<3>(3 * i) = values[i];
    return v;
}

ComplexField3 ComplexField3::from_flat(const VectorXcd& v) {
    ComplexField3 f;
    f.values.resize(v.size() / 3);
    for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = v.segment<3>(3 * i);
    return f;
}

double FarField::orthogonality_defect() const {
    double worst = 0.0;
    for (std::size_t k = 0; k < sphere.size(); ++k) {
        const Vec3c xh = sphere.nodes[k].cast<cplx>();
        const double np = p_values[k].norm(), ns = s_values[k].norm();
        if (np > 0.0) worst = std::max(worst, p_values[k].cross(xh).norm() / np);
        if (ns > 0.0) worst = std::max(worst, std::abs(s_values[k].dot(xh)) / ns);
    }
    return worst;
}

Mat3c kupradze_self_block(double vol, double omega, const ElasticMedium& m) {
    return kelvin_self_block(vol, m).cast<cplx>() + kupradze_minus_kelvin_at_zero(omega, m) * vol;
}

MatrixXcd volume_potential(const SourceCells& rows, const SourceCells& cols, double omega,
                           const ElasticMedium& m, bool same_set) {
    const long long nr = static_cast<long long>(rows.size());
    const std::size_t nc = cols.size();
    MatrixXcd K(3 * rows.size(), 3 * nc);
    std::vector<Mat3c> self;
    if (same_set) {
        self.resize(nc);
        for (std::size_t j = 0; j < nc; ++j) self[j] = kupradze_self_block(cols.vol[j], omega, m);
    }
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < nr; ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        for (std::size_t j = 0; j < nc; ++j) {
            const double w = cols.contrast[j] * cols.vol[j];
            if (same_set && i == j) {
                K.block<3, 3>(3 * i, 3 * j) = self[j] * cols.contrast[j];
            } else if (w == 0.0) {
                K.block<3, 3>(3 * i, 3 * j).setZero();
            } else {
                K.block<3, 3>(3 * i, 3 * j) = kupradze_matrix(rows.x[i], cols.x[j], omega, m) * w;
            }
        }
    }
    return K;
}

Vec3c scattered_at(const SourceCells& cells, const ComplexField3& U, const Vec3& x, double omega,
                   const ElasticMedium& m) {
    Vec3c s = Vec3c::Zero();
    const double w2 = omega * omega;
    for (std::size_t j = 0; j < cells.size(); ++j) {
        const double w = cells.contrast[j] * cells.vol[j];
        if (w == 0.0) continue;
        s += kupradze_matrix(x, cells.x[j], omega, m) * U.values[j] * (w2 * w);
    }
    return s;
}

Vec3c far_field_at(const SourceCells& cells, const ComplexField3& U, const Vec3& xhat, double omega,
                   const ElasticMedium& m) {
    Vec3c f = Vec3c::Zero();
    const double w2 = omega * omega;
    for (std::size_t j = 0; j < cells.size(); ++j) {
        const double w = cells.contrast[j] * cells.vol[j];
        if (w == 0.0) continue;
        f += farfield_pattern(xhat, cells.x[j], omega, m).total() * U.values[j] * (w2 * w);
    }
    return f;
}

FarField far_field(const SourceCells& cells, const ComplexField3& U, const SphereGrid& sphere, double omega,
                   const ElasticMedium& m) {
    FarField F;
    F.sphere = sphere;
    F.p_values.assign(sphere.size(), Vec3c::Zero());
    F.s_values.assign(sphere.size(), Vec3c::Zero());
    const double w2 = omega * omega;
#pragma omp parallel for schedule(static)
    for (long long kk = 0; kk < static_cast<long long>(sphere.size()); ++kk) {
        const std::size_t k = static_cast<std::size_t>(kk);
        Vec3c p = Vec3c::Zero(), s = Vec3c::Zero();
        for (std::size_t j = 0; j < cells.size(); ++j) {
            const double w = cells.contrast[j] * cells.vol[j];
            if (w == 0.0) continue;
            const FarFieldKernel g = farfield_pattern(sphere.nodes[k], cells.x[j], omega, m);
            p += g.p_part * U.values[j] * (w2 * w);
            s += g.s_part * U.values[j] * (w2 * w);
        }
        F.p_values[k] = p;
        F.s_values[k] = s;
    }
    return F;
}

BackgroundSolver::BackgroundSolver(const Background& bg, double omega) : bg_(bg), omega_(omega) {
    bg_.validate();
    if (!(omega > 0.0)) throw SolverError("background solve requires omega > 0");
    std::vector<double> c(bg_.grid.size());
    trivial_ = true;
    for (std::size_t i = 0; i < c.size(); ++i) {
        c[i] = bg_.rho[i] - bg_.medium.rho_tilde;
        if (c[i] != 0.0) trivial_ = false;
    }
    cells_.append(bg_.grid, c);
    if (trivial_) return;
    const Eigen::Index n = 3 * static_cast<Eigen::Index>(cells_.size());
    A_ = MatrixXcd::Identity(n, n) - (omega * omega) * volume_potential(cells_, cells_, omega, bg_.medium, true);
    lu_.compute(A_);
    if (lu_.rcond() < 1e-14)
        throw SolverError("background system is numerically singular (rcond " + std::to_string(lu_.rcond()) + ")");
}

MatrixXcd BackgroundSolver::solve_many(const MatrixXcd& rhs) const {
    if (trivial_) return rhs;
    MatrixXcd X = lu_.solve(rhs);
    double worst = 0.0;
    for (Eigen::Index j = 0; j < rhs.cols(); ++j)
        worst = std::max(worst, rel_residual(A_ * X.col(j) - rhs.col(j), rhs.col(j)));
    last_residual_ = worst;
    if (worst > kResidualTol) throw SolverError("background solve residual " + std::to_string(worst) + " > 1e-8");
    return X;
}

ComplexField3 BackgroundSolver::solve(const IncidentFn& inc) const {
    VectorXcd b(3 * cells_.size());
    for (std::size_t i = 0; i < cells_.size(); ++i) b.segment<3>(3 * i) = inc(cells_.x[i]);
    return ComplexField3::from_flat(solve_many(b));
}

ComplexField3 BackgroundSolver::solve_plane(const PlaneWave& w) const {
    w.validate();
    if (std::abs(w.omega - omega_) > 1e-12 * omega_) throw SolverError("plane wave frequency differs from solver");
    const ElasticMedium& m = bg_.medium;
    return solve([&](const Vec3& x) { return plane_wave_field(w, x, m); });
}

ComplexField3 BackgroundSolver::solve_green(const Vec3& src, const Vec3c& p) const {
    const double guard = 0.5 * bg_.grid.spacing;
    for (const auto& x : cells_.x)
        if ((x - src).norm() < guard)
            throw SolverError("background_green: source lies inside Omega (closer than half a voxel to a cell)");
    const ElasticMedium& m = bg_.medium;
    const double w = omega_;
    return solve([&](const Vec3& x) { return Vec3c(kupradze_matrix(x, src, w, m) * p); });
}

Vec3c BackgroundSolver::scattered(const ComplexField3& U, const Vec3& x) const {
    return scattered_at(cells_, U, x, omega_, bg_.medium);
}

Vec3c BackgroundSolver::total_at(const ComplexField3& U, const IncidentFn& inc, const Vec3& x) const {
    return inc(x) + scattered(U, x);
}

FarField BackgroundSolver::far(const ComplexField3& U, const SphereGrid& sphere) const {
    return far_field(cells_, U, sphere, omega_, bg_.medium);
}

Mat3c BackgroundSolver::green_matrix(const Vec3& x, const Vec3& z) const {
    // G(x,z) = G(z,x)^T; columns of G(z,x) come from sources at x
    Mat3c Gzx;
    const ElasticMedium& m = bg_.medium;
    const double w = omega_;
    for (int i = 0; i < 3; ++i) {
        Vec3c e = Vec3c::Zero();
        e[i] = 1.0;
        const ComplexField3 col = solve_green(x, e);
        Gzx.col(i) = total_at(col, [&](const Vec3& y) { return Vec3c(kupradze_matrix(y, x, w, m) * e); }, z);
    }
    return Gzx.transpose();
}

void Inclusion::validate(const Background& bg) const {
    if (!(a > 0.0 && a < 1.0)) throw SolverError("inclusion: scale a must lie in (0,1)");
    if (!(c1 > 0.0)) throw SolverError("inclusion: c1 must be positive");
    if (!(rho1() > bg.max_rho()))
        throw SolverError("inclusion: rho1 = c1/a^2 must exceed max rho_0 over Omega");
    const VoxelGrid d = gridD();
    const double margin = bg.grid.spacing;
    for (std::size_t i = 0; i < d.size(); ++i)
        if ((d.center(i) - bg.center).norm() + 0.5 * std::sqrt(3.0) * d.spacing > bg.radius - margin)
            throw SolverError("inclusion: D = z + aB must lie inside Omega with a one-voxel margin");
}

ComplexField3 InclusionSolution::stacked() const {
    ComplexField3 f = U_omega;
    f.values.insert(f.values.end(), U_D.values.begin(), U_D.values.end());
    return f;
}

InclusionSolver::InclusionSolver(const BackgroundSolver& bg, const Inclusion& inc, double omega)
    : bg_(bg), omega_(omega) {
    inc.validate(bg.background());
    if (std::abs(omega - bg.omega()) > 1e-12 * omega) throw SolverError("inclusion solver frequency mismatch");
    const VoxelGrid gD = inc.gridD();
    std::vector<double> alpha(gD.size());
    for (std::size_t i = 0; i < gD.size(); ++i) alpha[i] = inc.rho1() - bg.background().rho_at(gD.center(i));
    dcells_.append(gD, alpha);
    const ElasticMedium& m = bg.background().medium;
    const double w2 = omega * omega;
    const SourceCells& oc = bg.cells();
    A_OD_ = -w2 * volume_potential(oc, dcells_, omega, m, false);
    A_DO_ = -w2 * volume_potential(dcells_, oc, omega, m, false);
    const Eigen::Index nd = 3 * static_cast<Eigen::Index>(dcells_.size());
    A_DD_ = MatrixXcd::Identity(nd, nd) - w2 * volume_potential(dcells_, dcells_, omega, m, true);
    X_ = bg.trivial() ? A_OD_ : MatrixXcd(bg.lu().solve(A_OD_));
    MatrixXcd S = A_DD_ - A_DO_ * X_;
    schur_lu_.compute(S);
    if (schur_lu_.rcond() < 1e-14)
        throw SolverError("inclusion system is numerically singular at this frequency; detune omega from omega_n0");
}

InclusionSolution InclusionSolver::solve(const IncidentFn& inc, const ComplexField3& Vt) const {
    const SourceCells& oc = bg_.cells();
    VectorXcd fO(3 * oc.size()), fD(3 * dcells_.size());
    for (std::size_t i = 0; i < oc.size(); ++i) fO.segment<3>(3 * i) = inc(oc.x[i]);
    for (std::size_t i = 0; i < dcells_.size(); ++i) fD.segment<3>(3 * i) = inc(dcells_.x[i]);
    const VectorXcd y = Vt.flat();
    const VectorXcd uD = schur_lu_.solve(fD - A_DO_ * y);
    const VectorXcd uO = y - X_ * uD;
    VectorXcd rO = A_OD_ * uD - fO;
    rO += bg_.trivial() ? uO : VectorXcd(bg_.system_matrix() * uO);
    const VectorXcd rD = A_DO_ * uO + A_DD_ * uD - fD;
    const double nb = std::sqrt(fO.squaredNorm() + fD.squaredNorm());
    const double res = std::sqrt(rO.squaredNorm() + rD.squaredNorm()) / nb;
    if (res > kResidualTol) throw SolverError("inclusion solve residual " + std::to_string(res) + " > 1e-8");
    InclusionSolution s;
    s.U_omega = ComplexField3::from_flat(uO);
    s.U_D = ComplexField3::from_flat(uD);
    s.cells = oc;
    s.cells.x.insert(s.cells.x.end(), dcells_.x.begin(), dcells_.x.end());
    s.cells.vol.insert(s.cells.vol.end(), dcells_.vol.begin(), dcells_.vol.end());
    s.cells.contrast.insert(s.cells.contrast.end(), dcells_.contrast.begin(), dcells_.contrast.end());
    s.residual = res;
    return s;
}

ComplexField3 solve_background(const Background& bg, const PlaneWave& w) {
    return BackgroundSolver(bg, w.omega).solve_plane(w);
}

ComplexField3 background_green(const Background& bg, const Vec3& source, const Vec3c& p, double omega) {
    return BackgroundSolver(bg, omega).solve_green(source, p);
}

InclusionSolution solve_with_inclusion(const Background& bg, const PlaneWave& w, const Inclusion& inc) {
    BackgroundSolver bs(bg, w.omega);
    const ComplexField3 Vt = bs.solve_plane(w);
    InclusionSolver is(bs, inc, w.omega);
    const ElasticMedium& m = bg.medium;
    return is.solve([&](const Vec3& x) { return plane_wave_field(w, x, m); }, Vt);
}

cplx resonant_factor(const ResonanceInfo& res, double c1, double a) {
    const double w2 = res.omega_inc * res.omega_inc, n2 = res.omega_n0 * res.omega_n0;
    if (n2 == w2) throw SolverError("asymptotic_scattered: zero detuning");
    return c1 * a * w2 * n2 / (n2 - w2);
}

Vec3c asymptotic_scattered(const Vec3c& Vt_z, const Mat3c& G_xz, const ResonanceInfo& res, double c1, double a) {
    return resonant_factor(res, c1, a) * (G_xz * (res.E_B.cast<cplx>() * Vt_z));
}

}  // namespace relastic
