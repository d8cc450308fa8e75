#include "relastic/pointsource.hpp"

#include <cmath>

namespace relastic {

namespace {

const cplx I1(0.0, 1.0);

}  // namespace

double HerglotzKernel::norm_p() const {
    double s = 0.0;
    for (std::size_t k = 0; k < size(); ++k) s += sphere.weights[k] * std::norm(gp[k]);
    return std::sqrt(s);
}

double HerglotzKernel::norm_s() const {
    double s = 0.0;
    for (std::size_t k = 0; k < size(); ++k) s += sphere.weights[k] * (std::norm(gs1[k]) + std::norm(gs2[k]));
    return std::sqrt(s);
}

double HerglotzKernel::norm() const { return std::hypot(norm_p(), norm_s()); }

std::pair<Vec3, Vec3> tangent_frame(const Vec3& d) {
    Vec3 t1 = perpendicular(d);
    Vec3 t2 = d.cross(t1).normalized();
    return {t1, t2};
}

HerglotzKernel zero_kernel(const SphereGrid& sphere) {
    HerglotzKernel g;
    g.sphere = sphere;
    const std::size_t n = sphere.size();
    g.gp.assign(n, 0.0);
    g.gs1.assign(n, 0.0);
    g.gs2.assign(n, 0.0);
    for (const Vec3& d : sphere.nodes) {
        auto [a, b] = tangent_frame(d);
        g.t1.push_back(a);
        g.t2.push_back(b);
    }
    return g;
}

void MeasurementSurfaceK::validate() const {
    if (!(radius > 0.0)) throw PointSourceError("surface: radius must be positive");
    if (nodes_unit.size() == 0) throw PointSourceError("surface: no boundary nodes");
    for (double w : nodes_unit.weights)
        if (!(w > 0.0)) throw PointSourceError("surface: quadrature weights must be positive");
}

MeasurementSurfaceK default_surface(const Background& bg, int n_nodes, double factor) {
    MeasurementSurfaceK K;
    K.center = bg.center;
    // circumscribed radius of the occupied cells
    double r = 0.0;
    const double half_diag = 0.5 * std::sqrt(3.0) * bg.grid.spacing;
    for (const Vec3& c : bg.grid.centers()) r = std::max(r, (c - bg.center).norm() + half_diag);
    r = std::max(r, bg.radius);
    K.radius = factor * r;
    K.nodes_unit = fibonacci_sphere(n_nodes);
    return K;
}

std::vector<Vec3c> herglotz_apply(const HerglotzKernel& g, const std::vector<Vec3>& points, double omega,
                                  const ElasticMedium& medium) {
    const Wavenumbers k = wavenumbers(medium, omega);
    std::vector<Vec3c> out(points.size(), Vec3c::Zero());
    for (std::size_t i = 0; i < points.size(); ++i) {
        Vec3c s = Vec3c::Zero();
        for (std::size_t n = 0; n < g.size(); ++n) {
            const double t = points[i].dot(g.sphere.nodes[n]);
            s += g.sphere.weights[n] *
                 (std::exp(I1 * k.kappa_p * t) * g.g_p(n) + std::exp(I1 * k.kappa_s * t) * g.g_s(n));
        }
        out[i] = s;
    }
    return out;
}

HerglotzSolver::HerglotzSolver(const MeasurementSurfaceK& surface, const SphereGrid& sphere, double omega,
                               const ElasticMedium& medium)
    : surface_(surface), sphere_(sphere), omega_(omega), medium_(medium) {
    surface_.validate();
    medium_.validate();
    if (sphere_.size() == 0) throw PointSourceError("herglotz: empty sphere grid");
    const Wavenumbers k = wavenumbers(medium_, omega_);
    const Eigen::Index nk = static_cast<Eigen::Index>(surface_.size());
    const Eigen::Index nd = static_cast<Eigen::Index>(sphere_.size());
    for (const Vec3& d : sphere_.nodes) {
        auto [a, b] = tangent_frame(d);
        t1_.push_back(a);
        t2_.push_back(b);
    }
    row_w_.resize(3 * nk);
    for (Eigen::Index i = 0; i < nk; ++i) row_w_.segment<3>(3 * i).setConstant(std::sqrt(surface_.weight(i)));
    col_w_.resize(3 * nd);
    for (Eigen::Index j = 0; j < nd; ++j) col_w_.segment<3>(3 * j).setConstant(std::sqrt(sphere_.weights[j]));

    // columns act on c = sqrt(w_d) g, so the Euclidean norm of c is the L2(S^2) norm of g
    Eigen::MatrixXcd H(3 * nk, 3 * nd);
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < nk; ++i) {
        const Vec3 y = surface_.node(i);
        for (Eigen::Index j = 0; j < nd; ++j) {
            const Vec3& d = sphere_.nodes[j];
            const double t = y.dot(d);
            const cplx ep = std::exp(I1 * k.kappa_p * t), es = std::exp(I1 * k.kappa_s * t);
            const double s = row_w_[3 * i] * col_w_[3 * j];
            for (int c = 0; c < 3; ++c) {
                H(3 * i + c, 3 * j + 0) = s * ep * d[c];
                H(3 * i + c, 3 * j + 1) = s * es * t1_[j][c];
                H(3 * i + c, 3 * j + 2) = s * es * t2_[j][c];
            }
        }
    }
    Eigen::BDCSVD<Eigen::MatrixXcd> svd(H, Eigen::ComputeThinU | Eigen::ComputeThinV);
    U_ = svd.matrixU();
    S_ = svd.singularValues();
    V_ = svd.matrixV();
    sigma_max_ = S_.size() ? S_[0] : 0.0;
    if (!(sigma_max_ > 0.0)) throw PointSourceError("herglotz: degenerate system");
}

Eigen::VectorXcd HerglotzSolver::target(const Vec3& x, const Vec3& p) const {
    const Eigen::Index nk = static_cast<Eigen::Index>(surface_.size());
    Eigen::VectorXcd b(3 * nk);
    const Vec3c pc = p.cast<cplx>();
    for (Eigen::Index i = 0; i < nk; ++i)
        b.segment<3>(3 * i) = kupradze_matrix(surface_.node(i), x, omega_, medium_) * pc * row_w_[3 * i];
    return b;
}

KernelResult HerglotzSolver::minimum_norm_kernel(const Vec3& x, const Vec3& polarization, double alpha) const {
    if (!(alpha > 0.0)) throw PointSourceError("minimum_norm_kernel: alpha must be positive");
    if ((x - surface_.center).norm() <= surface_.radius)
        throw PointSourceError("minimum_norm_kernel: x must lie strictly outside K");
    const Eigen::VectorXcd b = target(x, polarization);
    const Eigen::VectorXcd beta = U_.adjoint() * b;
    const double a = alpha * sigma_max_ * sigma_max_;
    Eigen::VectorXcd coef(beta.size());
    double res2 = std::max(0.0, b.squaredNorm() - beta.squaredNorm());
    for (Eigen::Index i = 0; i < beta.size(); ++i) {
        const double s = S_[i];
        coef[i] = beta[i] * (s / (s * s + a));
        res2 += std::norm(beta[i] * (a / (s * s + a)));
    }
    const Eigen::VectorXcd c = V_ * coef;

    KernelResult r;
    r.alpha = alpha;
    r.kernel = zero_kernel(sphere_);
    for (std::size_t j = 0; j < sphere_.size(); ++j) {
        const double w = col_w_[3 * j];
        r.kernel.gp[j] = c[3 * j + 0] / w;
        r.kernel.gs1[j] = c[3 * j + 1] / w;
        r.kernel.gs2[j] = c[3 * j + 2] / w;
    }
    r.kernel_norm = coef.norm();
    const double nb = b.norm();
    r.discrepancy = nb > 0.0 ? std::sqrt(res2) / nb : 0.0;
    return r;
}

HerglotzSolver::Sweep HerglotzSolver::sweep(const Vec3& x, const Vec3& polarization, const SweepPolicy& policy) const {
    if (policy.alphas.empty()) throw PointSourceError("sweep: empty alpha list");
    Sweep s;
    double best = 1e300;
    for (double a : policy.alphas) {
        s.results.push_back(minimum_norm_kernel(x, polarization, a));
        best = std::min(best, s.results.back().discrepancy);
    }
    // Morozov: smallest alpha whose misfit still reaches the floor
    s.chosen = 0;
    bool found = false;
    for (std::size_t i = 0; i < s.results.size(); ++i) {
        if (s.results[i].discrepancy >= policy.noise_floor) {
            if (!found || policy.alphas[i] < policy.alphas[s.chosen]) s.chosen = i;
            found = true;
        }
    }
    if (!found) {
        // every alpha overshoots the floor; take the most regularized
        for (std::size_t i = 1; i < policy.alphas.size(); ++i)
            if (policy.alphas[i] > policy.alphas[s.chosen]) s.chosen = i;
    }
    s.collision_warning = best > policy.collision_floor;
    s.results[s.chosen].warning = s.results[s.chosen].discrepancy > policy.ceiling;
    return s;
}

cplx backproject(const FarField& data, const HerglotzKernel& g, const ElasticMedium& m) {
    if (data.sphere.size() != g.size() || data.p_values.size() != g.size() || data.s_values.size() != g.size())
        throw PointSourceError("backproject: direction-set size mismatch");
    const double cp = 4.0 * kPi * (m.lam + 2.0 * m.mu);
    const double cs = 4.0 * kPi * m.mu;
    cplx acc = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        const Vec3& d = g.sphere.nodes[k];
        if ((data.sphere.nodes[k] + d).norm() > 1e-10)
            throw PointSourceError("backproject: data must sit on the mirrored kernel directions");
        const Vec3c dc = d.cast<cplx>();
        const cplx vp = dc.dot(data.p_values[k]);  // real d, so no conjugation issue
        const cplx v1 = g.t1[k].cast<cplx>().dot(data.s_values[k]);
        const cplx v2 = g.t2[k].cast<cplx>().dot(data.s_values[k]);
        acc += g.sphere.weights[k] * (cp * g.gp[k] * vp + cs * (g.gs1[k] * v1 + g.gs2[k] * v2));
    }
    return acc;
}

PointKernels kernels_at(const HerglotzSolver& solver, const Vec3& x, const SweepPolicy& policy) {
    PointKernels pk;
    pk.x = x;
    for (int j = 0; j < 3; ++j) {
        const auto sw = solver.sweep(x, Vec3::Unit(j), policy);
        pk.k[j] = sw.results[sw.chosen];
        pk.collision_warning = pk.collision_warning || sw.collision_warning;
    }
    return pk;
}

Vec3c backproject3(const FarField& data, const PointKernels& pk, const ElasticMedium& medium) {
    Vec3c v;
    for (int j = 0; j < 3; ++j) v[j] = backproject(data, pk.k[j].kernel, medium);
    return v;
}

ExteriorFields recover_exterior_fields(const FarField& V_bank, const FarField* U_bank, const HerglotzSolver& solver,
                                       const std::vector<Vec3>& points, const PlaneWave& wave,
                                       const SweepPolicy& policy) {
    ExteriorFields out;
    out.points = points;
    const std::size_t n = points.size();
    out.Vt.resize(n);
    out.Vs.resize(n);
    out.discrepancy.assign(n, 0.0);
    out.kernel_norm.assign(n, 0.0);
    out.alpha.assign(n, 0.0);
    if (U_bank) {
        out.Ut.resize(n);
        out.Us.resize(n);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const PointKernels pk = kernels_at(solver, points[i], policy);
        for (const KernelResult& kr : pk.k) {
            out.discrepancy[i] = std::max(out.discrepancy[i], kr.discrepancy);
            out.kernel_norm[i] = std::max(out.kernel_norm[i], kr.kernel_norm);
            out.alpha[i] = std::max(out.alpha[i], kr.alpha);
            out.warning = out.warning || kr.warning;
        }
        out.collision_warning = out.collision_warning || pk.collision_warning;
        const Vec3c inc = plane_wave_field(wave, points[i], solver.medium());
        out.Vs[i] = backproject3(V_bank, pk, solver.medium());
        out.Vt[i] = out.Vs[i] + inc;
        if (U_bank) {
            out.Us[i] = backproject3(*U_bank, pk, solver.medium());
            out.Ut[i] = out.Us[i] + inc;
        }
    }
    return out;
}

}  // namespace relastic
