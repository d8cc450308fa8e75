#pragma once

#include <array>
#include <vector>

#include "relastic/kernels.hpp"

namespace relastic {

using Index3 = std::array<int, 3>;

// Uniform voxel grid with a subset of occupied cells. origin is the center
// of cell (0,0,0).
struct VoxelGrid {
    Vec3 origin = Vec3::Zero();
    double spacing = 1.0;
    std::vector<Index3> cells;

    double cell_volume() const { return spacing * spacing * spacing; }
    std::size_t size() const { return cells.size(); }
    double total_volume() const { return cell_volume() * static_cast<double>(cells.size()); }
    Vec3 center(std::size_t i) const {
        const Index3& c = cells[i];
        return origin + spacing * Vec3(c[0], c[1], c[2]);
    }
    std::vector<Vec3> centers() const;

    // same topology, coordinates mapped by x -> shift + s*x
    VoxelGrid scaled(double s, const Vec3& shift = Vec3::Zero()) const;
};

// n cells across the cube [c-R, c+R]^3, keeping cells whose centers lie in the ball.
VoxelGrid ball_grid(int n_across, double radius, const Vec3& center = Vec3::Zero());

// Radius of the ball of unit volume.
double unit_ball_radius();

struct SphereGrid {
    std::vector<Vec3> nodes;
    std::vector<double> weights;
    std::size_t size() const { return nodes.size(); }
};

// Fibonacci lattice, equal weights summing to 4 pi.
SphereGrid fibonacci_sphere(int n);

SphereGrid negated(const SphereGrid& s);

}  // namespace relastic
