#include "relastic/grid.hpp"

#include <cmath>

namespace relastic {

std::vector<Vec3> VoxelGrid::centers() const {
    std::vector<Vec3> out(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) out[i] = center(i);
    return out;
}

VoxelGrid VoxelGrid::scaled(double s, const Vec3& shift) const {
    VoxelGrid g = *this;
    g.origin = shift + s * origin;
    g.spacing = s * spacing;
    return g;
}

VoxelGrid ball_grid(int n_across, double radius, const Vec3& center) {
    if (n_across < 1 || !(radius > 0.0)) throw KernelError("ball_grid: need n_across >= 1 and radius > 0");
    VoxelGrid g;
    g.spacing = 2.0 * radius / n_across;
    g.origin = center - Vec3::Constant(radius - 0.5 * g.spacing);
    for (int i = 0; i < n_across; ++i)
        for (int j = 0; j < n_across; ++j)
            for (int k = 0; k < n_across; ++k) {
                const Vec3 x = g.origin + g.spacing * Vec3(i, j, k);
                if ((x - center).norm() <= radius * (1.0 + 1e-12)) g.cells.push_back({i, j, k});
            }
    return g;
}

double unit_ball_radius() { return std::cbrt(3.0 / (4.0 * kPi)); }

SphereGrid fibonacci_sphere(int n) {
    if (n < 2) throw KernelError("fibonacci_sphere: need at least 2 nodes");
    SphereGrid s;
    s.nodes.reserve(n);
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - (2.0 * i + 1.0) / n;
        const double rr = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * i;
        s.nodes.emplace_back(rr * std::cos(phi), rr * std::sin(phi), z);
        s.nodes.back().normalize();
    }
    s.weights.assign(n, 4.0 * kPi / n);
    return s;
}

SphereGrid negated(const SphereGrid& s) {
    SphereGrid o = s;
    for (auto& v : o.nodes) v = -v;
    return o;
}

}  // namespace relastic
