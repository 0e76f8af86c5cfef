#include "meshfit/rasterize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace meshfit {

namespace {

struct ColumnResult {
    bool clean = true;
    std::vector<double> crossings;
};

// Crossings of the +x ray at (y,z) with one triangle, in the (y,z)
// projection. The inside test uses a physical margin per edge: points within
// tol of any projected edge (or of an edge-on triangle) flag the column
// dirty, points outside by margin are skipped, points inside by margin
// produce a crossing.
void intersect_column(const Vec3& a, const Vec3& b, const Vec3& c, double y, double z,
                      double tol, ColumnResult& out) {
    const double sa = (c.y() - b.y()) * (z - b.z()) - (c.z() - b.z()) * (y - b.y());
    const double sb = (a.y() - c.y()) * (z - c.z()) - (a.z() - c.z()) * (y - c.y());
    const double sc = (b.y() - a.y()) * (z - a.z()) - (b.z() - a.z()) * (y - a.y());
    const double len_a = std::hypot(c.y() - b.y(), c.z() - b.z());
    const double len_b = std::hypot(a.y() - c.y(), a.z() - c.z());
    const double len_c = std::hypot(b.y() - a.y(), b.z() - a.z());
    const double denom = sa + sb + sc;

    if (denom == 0.0) {
        // Edge-on projection: dirty only when the point touches the sliver.
        const double far_off =
            std::max({len_a > 0 ? std::abs(sa) / len_a : 0.0,
                      len_b > 0 ? std::abs(sb) / len_b : 0.0,
                      len_c > 0 ? std::abs(sc) / len_c : 0.0});
        if (far_off > tol) return;
        const double lo_y = std::min({a.y(), b.y(), c.y()}) - tol;
        const double hi_y = std::max({a.y(), b.y(), c.y()}) + tol;
        const double lo_z = std::min({a.z(), b.z(), c.z()}) - tol;
        const double hi_z = std::max({a.z(), b.z(), c.z()}) + tol;
        if (y >= lo_y && y <= hi_y && z >= lo_z && z <= hi_z) out.clean = false;
        return;
    }

    const double sgn = denom > 0.0 ? 1.0 : -1.0;
    const double ta = sa * sgn, tb = sb * sgn, tc = sc * sgn;
    if (ta < -tol * len_a || tb < -tol * len_b || tc < -tol * len_c) return;
    if (ta > tol * len_a && tb > tol * len_b && tc > tol * len_c) {
        out.crossings.push_back((sa * a.x() + sb * b.x() + sc * c.x()) / denom);
        return;
    }
    out.clean = false;
}

}  // namespace

Volume rasterize(const TriMesh& mesh, std::array<int, 3> dims,
                 std::array<double, 3> spacing, std::array<double, 3> origin) {
    if (!is_watertight(mesh))
        throw std::invalid_argument("rasterization requires closed surface");

    Volume out = Volume::zeros(dims, VolumeKind::mask, spacing, origin);
    const int nx = dims[0], ny = dims[1], nz = dims[2];

    // Bin triangles over (y,z) voxel cells by projected bounding box.
    auto bin_of = [&](double y, double z) {
        const int j = static_cast<int>(std::floor((y - origin[1]) / spacing[1] + 0.5));
        const int k = static_cast<int>(std::floor((z - origin[2]) / spacing[2] + 0.5));
        return std::make_pair(j, k);
    };
    std::vector<std::vector<int>> bins(static_cast<std::size_t>(ny) * nz);
    for (int f = 0; f < mesh.face_count(); ++f) {
        const Face& face = mesh.faces()[f];
        const Vec3& a = mesh.vertices()[face[0]];
        const Vec3& b = mesh.vertices()[face[1]];
        const Vec3& c = mesh.vertices()[face[2]];
        auto [j0, k0] = bin_of(std::min({a.y(), b.y(), c.y()}), std::min({a.z(), b.z(), c.z()}));
        auto [j1, k1] = bin_of(std::max({a.y(), b.y(), c.y()}), std::max({a.z(), b.z(), c.z()}));
        j0 = std::max(j0 - 1, 0);
        k0 = std::max(k0 - 1, 0);
        j1 = std::min(j1 + 1, ny - 1);
        k1 = std::min(k1 + 1, nz - 1);
        for (int k = k0; k <= k1; ++k)
            for (int j = j0; j <= j1; ++j) bins[static_cast<std::size_t>(k) * ny + j].push_back(f);
    }

    const double scale = *std::max_element(spacing.begin(), spacing.end());
    const double tol = 1e-11 * scale;

    for (int k = 0; k < nz; ++k) {
        for (int j = 0; j < ny; ++j) {
            const auto& cand = bins[static_cast<std::size_t>(k) * ny + j];
            if (cand.empty()) continue;
            const double cy0 = origin[1] + j * spacing[1];
            const double cz0 = origin[2] + k * spacing[2];

            ColumnResult col;
            for (int attempt = 0; attempt < 32; ++attempt) {
                col.clean = true;
                col.crossings.clear();
                const double dy = attempt * 3.094e-7 * scale;
                const double dz = attempt * 7.781e-7 * scale;
                for (int f : cand) {
                    const Face& face = mesh.faces()[f];
                    intersect_column(mesh.vertices()[face[0]], mesh.vertices()[face[1]],
                                     mesh.vertices()[face[2]], cy0 + dy, cz0 + dz, tol, col);
                    if (!col.clean) break;
                }
                if (col.clean) break;
            }
            if (!col.clean)
                throw std::runtime_error("rasterize: could not find a clean ray after retries");

            std::sort(col.crossings.begin(), col.crossings.end());
            for (int i = 0; i < nx; ++i) {
                const double cx = origin[0] + i * spacing[0];
                const auto it =
                    std::upper_bound(col.crossings.begin(), col.crossings.end(), cx);
                const std::size_t behind = col.crossings.end() - it;
                if (behind % 2 == 1) out.at(i, j, k) = 1.0;
            }
        }
    }
    return out;
}

}  // namespace meshfit
