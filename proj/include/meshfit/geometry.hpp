#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace meshfit {

using Vec3 = Eigen::Vector3d;
using Face = std::array<int, 3>;
using Rng = std::mt19937_64;

inline double dist2(const Vec3& a, const Vec3& b) {
    const double dx = a.x() - b.x();
    const double dy = a.y() - b.y();
    const double dz = a.z() - b.z();
    return dx * dx + dy * dy + dz * dz;
}

/// Affine map between physical (mm) and normalized [-1,1]^3 coordinates.
/// Normalized coordinates are corner-aligned: (-1,-1,-1) is the center of the
/// first voxel, (+1,+1,+1) the center of the last.
struct NormMap {
    Vec3 scale = Vec3::Ones();   // mm per normalized unit, per axis
    Vec3 offset = Vec3::Zero();  // mm position of normalized origin

    Vec3 to_normalized(const Vec3& mm) const {
        return (mm - offset).cwiseQuotient(scale);
    }
    Vec3 to_mm(const Vec3& n) const { return n.cwiseProduct(scale) + offset; }
};

}  // namespace meshfit
