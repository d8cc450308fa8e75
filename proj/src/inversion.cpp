#include "relastic/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace relastic {

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

cplx resonant_c(const ResonanceInfo& res, double a, double c1) {
    const double w2 = res.omega_inc * res.omega_inc;
    const double n2 = res.omega_n0 * res.omega_n0;
    const double det = n2 - w2;
    if (det == 0.0) throw InversionError("zero detuning: the incident frequency sits on the resonance");
    return c1 * a * w2 * n2 / det;
}

}  // namespace

Index3 Lattice::ijk(std::size_t idx) const {
    const int k = static_cast<int>(idx % n[2]);
    const std::size_t r = idx / n[2];
    const int j = static_cast<int>(r % n[1]);
    const int i = static_cast<int>(r / n[1]);
    return {i, j, k};
}

Vec3 Lattice::node(std::size_t idx) const {
    const Index3 c = ijk(idx);
    return origin + spacing * Vec3(c[0], c[1], c[2]);
}

Lattice Lattice::centered(const Vec3& c, double spacing, int n) {
    Lattice L;
    L.spacing = spacing;
    L.n = {n, n, n};
    L.origin = c - Vec3::Constant(0.5 * (n - 1) * spacing);
    return L;
}

const char* to_string(MaskReason r) {
    switch (r) {
        case MaskReason::none: return "ok";
        case MaskReason::small_moment: return "small_moment";
        case MaskReason::small_denominator: return "small_denominator";
        case MaskReason::fd_stencil: return "fd_stencil";
        case MaskReason::node_fault: return "node_fault";
    }
    return "unknown";
}

void InjectionSweep::validate(const Background& bg) const {
    if (nodes.size() != lattice.size()) throw InversionError("sweep: node count does not match the lattice");
    if (!(lattice.spacing > 0.0)) throw InversionError("sweep: lattice spacing must be positive");
    for (std::size_t i = 0; i < lattice.size(); ++i) {
        const double gap = bg.radius - (lattice.node(i) - bg.center).norm();
        if (gap < 2.0 * lattice.spacing - 1e-12)
            throw InversionError("sweep: lattice node closer than 2 spacings to the boundary of Omega");
    }
}

cplx step1_backscatter_moment(const Vec3c& U_back, const Vec3c& V_back, const PlaneWave& w, const ResonanceInfo& res,
                              const ElasticMedium& m, double a, double c1, double noise_floor) {
    const Vec3c d = U_back - V_back;
    if (d.norm() == 0.0) return 0.0;
    if (d.norm() <= noise_floor)
        throw InversionError("insufficient contrast: backscatter difference is below the noise floor");
    // the incident wave is generated by the far-field kernel of q at xhat = -theta
    const Vec3c q = ((m.lam + 2.0 * m.mu) * w.beta1) * w.theta.cast<cplx>() +
                    (m.mu * w.beta2) * w.theta_perp.cast<cplx>();
    return 4.0 * kPi * (q.transpose() * d)(0) / resonant_c(res, a, c1);
}

SignedMoments resolve_sign(const Lattice& lat, const std::vector<cplx>& squared, double tau_rel,
                           const std::vector<bool>* usable) {
    const std::size_t n = lat.size();
    if (squared.size() != n) throw InversionError("resolve_sign: size mismatch");
    SignedMoments out;
    out.value.assign(n, 0.0);
    out.determinate.assign(n, false);
    out.region.assign(n, -1);
    std::vector<cplx> root(n);
    double mx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        root[i] = std::sqrt(squared[i]);
        if (!usable || (*usable)[i]) mx = std::max(mx, std::abs(root[i]));
    }
    out.tau = tau_rel * mx;
    std::vector<bool> ok(n);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
        ok[i] = (!usable || (*usable)[i]) && mx > 0.0 && std::abs(root[i]) >= out.tau;
        any = any || ok[i];
    }
    if (!any) throw InversionError("resolve_sign: every node is indeterminate");

    std::vector<bool> done(n, false);
    int region = 0;
    const int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (;;) {
        // strongest unassigned determinate node seeds the next region
        std::size_t seed = n;
        for (std::size_t i = 0; i < n; ++i)
            if (ok[i] && !done[i] && (seed == n || std::abs(root[i]) > std::abs(root[seed]))) seed = i;
        if (seed == n) break;
        out.value[seed] = root[seed];
        done[seed] = true;
        out.region[seed] = region;
        std::deque<std::size_t> q{seed};
        while (!q.empty()) {
            const std::size_t c = q.front();
            q.pop_front();
            const Index3 ci = lat.ijk(c);
            for (const auto& o : nb) {
                const int i = ci[0] + o[0], j = ci[1] + o[1], k = ci[2] + o[2];
                if (!lat.inside(i, j, k)) continue;
                const std::size_t t = lat.index(i, j, k);
                if (!ok[t] || done[t]) continue;
                // linear extrapolation through c when the node behind c is known
                cplx pred = out.value[c];
                const int bi = ci[0] - o[0], bj = ci[1] - o[1], bk = ci[2] - o[2];
                if (lat.inside(bi, bj, bk)) {
                    const std::size_t b = lat.index(bi, bj, bk);
                    if (done[b] && out.region[b] == region) pred = 2.0 * out.value[c] - out.value[b];
                }
                out.value[t] = std::abs(root[t] - pred) <= std::abs(root[t] + pred) ? root[t] : -root[t];
                done[t] = true;
                out.region[t] = region;
                q.push_back(t);
            }
        }
        ++region;
    }
    for (std::size_t i = 0; i < n; ++i) out.determinate[i] = ok[i];
    return out;
}

Vec3c step3_green_moment(const Vec3c& dUs, cplx s, const ResonanceInfo& res, double a, double c1, double tau) {
    if (!(std::abs(s) >= tau) || s == 0.0)
        throw InversionError("step3: moment below the guard threshold");
    return dUs / (resonant_c(res, a, c1) * s);
}

FdResult elastic_laplacian_fd(const Lattice& lat, const std::vector<Vec3c>& F, double lam, double mu,
                              const std::vector<bool>* available) {
    const std::size_t n = lat.size();
    if (F.size() != n) throw InversionError("elastic_laplacian_fd: size mismatch");
    FdResult out;
    out.values.assign(n, Vec3c::Zero());
    out.valid.assign(n, false);
    const double h2 = lat.spacing * lat.spacing;
    auto avail = [&](int i, int j, int k) {
        return lat.inside(i, j, k) && (!available || (*available)[lat.index(i, j, k)]);
    };
    for (std::size_t idx = 0; idx < n; ++idx) {
        const Index3 c = lat.ijk(idx);
        bool good = avail(c[0], c[1], c[2]);
        for (int p = 0; p < 3 && good; ++p) {
            for (int s = -1; s <= 1 && good; s += 2) {
                Index3 e = c;
                e[p] += s;
                good = avail(e[0], e[1], e[2]);
                for (int q = p + 1; q < 3 && good; ++q)
                    for (int t = -1; t <= 1 && good; t += 2) {
                        Index3 f = e;
                        f[q] += t;
                        good = avail(f[0], f[1], f[2]);
                    }
            }
        }
        if (!good) continue;
        auto at = [&](int di, int dj, int dk) -> const Vec3c& {
            return F[lat.index(c[0] + di, c[1] + dj, c[2] + dk)];
        };
        const Vec3c& f0 = at(0, 0, 0);
        // D(p,q) = d_p d_q F as a 3-vector of components
        Vec3c D[3][3];
        for (int p = 0; p < 3; ++p) {
            int e[3] = {0, 0, 0};
            e[p] = 1;
            D[p][p] = (at(e[0], e[1], e[2]) - 2.0 * f0 + at(-e[0], -e[1], -e[2])) / h2;
            for (int q = p + 1; q < 3; ++q) {
                int u[3] = {0, 0, 0};
                auto corner = [&](int sp, int sq) -> const Vec3c& {
                    u[0] = u[1] = u[2] = 0;
                    u[p] = sp;
                    u[q] = sq;
                    return at(u[0], u[1], u[2]);
                };
                const Vec3c pp = corner(1, 1), pm = corner(1, -1), mp = corner(-1, 1), mm = corner(-1, -1);
                D[p][q] = (pp - pm - mp + mm) / (4.0 * h2);
                D[q][p] = D[p][q];
            }
        }
        Vec3c lap = D[0][0] + D[1][1] + D[2][2];
        Vec3c gd;
        for (int i = 0; i < 3; ++i) gd[i] = D[i][0][0] + D[i][1][1] + D[i][2][2];
        out.values[idx] = (lam + mu) * gd + mu * lap;
        out.valid[idx] = true;
    }
    return out;
}

DensityEstimate extract_density(const Lattice& lat, const std::vector<Vec3c>& F, double omega,
                                const ElasticMedium& m, double denom_rel, const std::vector<bool>* available) {
    const std::size_t n = lat.size();
    const FdResult L = elastic_laplacian_fd(lat, F, m.lam, m.mu, available);
    DensityEstimate out;
    out.rho.assign(n, kNaN);
    out.im_residual.assign(n, kNaN);
    out.component_spread.assign(n, kNaN);
    out.mask.assign(n, MaskReason::none);
    double fmax = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (!available || (*available)[i]) fmax = std::max(fmax, F[i].cwiseAbs().maxCoeff());
    const double tau = denom_rel * fmax;
    const double w2 = omega * omega;
    for (std::size_t i = 0; i < n; ++i) {
        if (!L.valid[i]) {
            out.mask[i] = MaskReason::fd_stencil;
            continue;
        }
        double num = 0.0, im = 0.0, den = 0.0;
        double lo = 1e300, hi = -1e300, ilo = 1e300, ihi = -1e300;
        for (int j = 0; j < 3; ++j) {
            const cplx fj = F[i][j];
            if (!(std::abs(fj) >= tau) || fj == 0.0) continue;
            const cplx r = -L.values[i][j] / (w2 * fj);
            const double wt = std::norm(fj);
            num += wt * r.real();
            im += wt * r.imag();
            den += wt;
            lo = std::min(lo, r.real());
            hi = std::max(hi, r.real());
            ilo = std::min(ilo, r.imag());
            ihi = std::max(ihi, r.imag());
        }
        if (den == 0.0) {
            out.mask[i] = MaskReason::small_denominator;
            continue;
        }
        out.rho[i] = num / den;
        out.im_residual[i] = im / den;
        out.component_spread[i] = std::hypot(hi - lo, ihi - ilo);
    }
    return out;
}

std::size_t ReconstructionResult::masked_count() const {
    return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](MaskReason r) {
        return r != MaskReason::none;
    }));
}

std::size_t ReconstructionResult::silent_masked() const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < rho.size(); ++i)
        if (!std::isfinite(rho[i]) && mask[i] == MaskReason::none) ++c;
    return c;
}

ReconstructionResult run_inversion(const InjectionSweep& sw, const HerglotzSolver& solver,
                                   const InversionConfig& cfg) {
    const Lattice& lat = sw.lattice;
    const std::size_t n = lat.size();
    if (sw.nodes.size() != n) throw InversionError("run_inversion: node count does not match the lattice");
    const ElasticMedium& m = solver.medium();
    const double omega = cfg.res.omega_inc;
    if (std::abs(omega - solver.omega()) > 1e-12 * std::max(1.0, omega))
        throw InversionError("run_inversion: kernel solver built for a different frequency");
    if (std::abs(sw.wave.omega - omega) > 1e-12 * std::max(1.0, omega))
        throw InversionError("run_inversion: incident wave frequency does not match the resonance window");

    ReconstructionResult R;
    R.lattice = lat;
    R.z.resize(n);
    R.squared_moment.assign(n, 0.0);
    R.moment.assign(n, 0.0);
    R.dUs.assign(n, Vec3c::Zero());
    R.green_moment.assign(n, Vec3c::Zero());
    R.mask.assign(n, MaskReason::none);
    R.fault.assign(n, "");
    for (std::size_t i = 0; i < n; ++i) R.z[i] = lat.node(i);

    // Step 2 kernels depend only on the anchor
    const PointKernels pk = kernels_at(solver, cfg.anchor, cfg.policy);
    for (const KernelResult& kr : pk.k) {
        R.anchor_discrepancy.push_back(kr.discrepancy);
        R.kernel_warning = R.kernel_warning || kr.warning;
    }
    R.collision_warning = pk.collision_warning;
    const Vec3c Vs_anchor = backproject3(sw.V_bank, pk, m);

    // Steps 1-2 per node, isolated
    std::vector<bool> usable(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const NodeMeasurement& nd = sw.nodes[i];
        if (!nd.present) {
            R.mask[i] = MaskReason::node_fault;
            R.fault[i] = "no measurement";
            continue;
        }
        try {
            const double floor = sw.delta1 * nd.U_back.norm();
            R.squared_moment[i] = step1_backscatter_moment(nd.U_back, sw.V_back, sw.wave, cfg.res, m, cfg.a, cfg.c1, floor);
            R.dUs[i] = backproject3(nd.U_bank, pk, m) - Vs_anchor;
            usable[i] = true;
        } catch (const InversionError& e) {
            R.mask[i] = MaskReason::small_moment;
            R.fault[i] = e.what();
        } catch (const std::exception& e) {
            R.mask[i] = MaskReason::node_fault;
            R.fault[i] = e.what();
        }
    }

    // Step 3-4: signs then G(x,z) m
    const SignedMoments sm = resolve_sign(lat, R.squared_moment, cfg.tau_rel, &usable);
    R.tau = sm.tau;
    std::vector<bool> avail(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        if (!usable[i]) continue;
        if (!sm.determinate[i]) {
            R.mask[i] = MaskReason::small_moment;
            R.fault[i] = "moment below guard threshold";
            continue;
        }
        R.moment[i] = sm.value[i];
        try {
            R.green_moment[i] = step3_green_moment(R.dUs[i], sm.value[i], cfg.res, cfg.a, cfg.c1, sm.tau);
            avail[i] = true;
        } catch (const std::exception& e) {
            R.mask[i] = MaskReason::small_moment;
            R.fault[i] = e.what();
        }
    }

    // Step 5 after the barrier
    const DensityEstimate d = extract_density(lat, R.green_moment, omega, m, cfg.denom_rel, &avail);
    R.rho = d.rho;
    R.im_residual = d.im_residual;
    R.component_spread = d.component_spread;
    for (std::size_t i = 0; i < n; ++i) {
        if (R.mask[i] != MaskReason::none) {
            R.rho[i] = kNaN;
            continue;
        }
        R.mask[i] = d.mask[i];
        if (d.mask[i] == MaskReason::fd_stencil) R.fault[i] = "finite-difference stencil incomplete";
        if (d.mask[i] == MaskReason::small_denominator) R.fault[i] = "all field components below guard";
    }
    return R;
}

}  // namespace relastic
