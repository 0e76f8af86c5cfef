#include "meshfit/isosurface.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace meshfit {

namespace {

// Corner c sits at offset (c&1, c>>1&1, c>>2&1). Edges 0-3 run along x,
// 4-7 along y, 8-11 along z; [0] is the lower corner on the edge axis.
constexpr int kEdgeCorner[12][2] = {
    {0, 1}, {2, 3}, {4, 5}, {6, 7},
    {0, 2}, {1, 3}, {4, 6}, {5, 7},
    {0, 4}, {1, 5}, {2, 6}, {3, 7},
};

// Face corners listed CCW as seen from outside the cube.
constexpr int kFaceCorner[6][4] = {
    {0, 4, 6, 2},  // -x
    {1, 3, 7, 5},  // +x
    {0, 1, 5, 4},  // -y
    {2, 6, 7, 3},  // +y
    {0, 2, 3, 1},  // -z
    {4, 5, 7, 6},  // +z
};

int cube_edge_between(int a, int b) {
    for (int e = 0; e < 12; ++e) {
        if ((kEdgeCorner[e][0] == a && kEdgeCorner[e][1] == b) ||
            (kEdgeCorner[e][0] == b && kEdgeCorner[e][1] == a))
            return e;
    }
    return -1;
}

// Per-case triangle lists (cube edge ids), built by linking per-face contour
// segments into loops. Each face contributes one directed segment per
// maximal run of inside corners, from the run's entry crossing to its exit
// crossing; diagonal-ambiguous faces therefore keep inside corners separate,
// and both cells sharing a face derive identical face contours.
const std::vector<std::array<int, 3>>& case_triangles(unsigned mask) {
    static const std::vector<std::vector<std::array<int, 3>>> table = [] {
        std::vector<std::vector<std::array<int, 3>>> t(256);
        for (unsigned m = 0; m < 256; ++m) {
            int next[12];
            for (int& x : next) x = -1;
            for (const auto& face : kFaceCorner) {
                auto inside = [&](int k) { return (m >> face[k]) & 1u; };
                for (int k = 0; k < 4; ++k) {
                    if (!(inside(k) && !inside((k + 3) % 4))) continue;
                    // k starts an inside run; find its end.
                    int e = k;
                    while (inside((e + 1) % 4)) e = (e + 1) % 4;
                    const int entry = cube_edge_between(face[(k + 3) % 4], face[k]);
                    const int exit = cube_edge_between(face[e], face[(e + 1) % 4]);
                    next[entry] = exit;
                }
            }
            std::array<bool, 12> used{};
            for (int start = 0; start < 12; ++start) {
                if (next[start] < 0 || used[start]) continue;
                std::vector<int> loop;
                int e = start;
                do {
                    loop.push_back(e);
                    used[e] = true;
                    e = next[e];
                } while (e != start);
                for (std::size_t i = 1; i + 1 < loop.size(); ++i)
                    t[m].push_back({loop[0], loop[i], loop[i + 1]});
            }
        }
        return t;
    }();
    return table[mask];
}

}  // namespace

TriMesh marching_cubes(const Volume& v, double isovalue) {
    for (int d : v.dims)
        if (d < 2) throw std::invalid_argument("marching_cubes: dims must be >= 2 per axis");

    const int nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];
    const bool sdf = v.kind == VolumeKind::sdf;
    const double outside_value =
        v.kind == VolumeKind::mask ? 0.0 : (sdf ? isovalue + 1.0 : isovalue - 1.0);

    auto value_at = [&](int i, int j, int k) {
        return v.in_bounds(i, j, k) ? v.at(i, j, k) : outside_value;
    };
    auto is_inside = [&](double val) { return sdf ? val < isovalue : val > isovalue; };
    auto sample_pos = [&](int i, int j, int k) {
        return Vec3(v.origin[0] + i * v.spacing[0], v.origin[1] + j * v.spacing[1],
                    v.origin[2] + k * v.spacing[2]);
    };

    // One welded vertex per crossed lattice edge of the padded grid.
    const int px = nx + 2, py = ny + 2, pz = nz + 2;
    std::vector<int> edge_vertex(static_cast<std::size_t>(px) * py * pz * 3, -1);
    auto edge_slot = [&](int i, int j, int k, int axis) -> int& {
        const std::size_t node =
            (static_cast<std::size_t>(k + 1) * py + (j + 1)) * px + (i + 1);
        return edge_vertex[node * 3 + axis];
    };

    std::vector<Vec3> vertices;
    std::vector<Face> faces;

    double corner_val[8];
    for (int ck = -1; ck < nz; ++ck) {
        for (int cj = -1; cj < ny; ++cj) {
            for (int ci = -1; ci < nx; ++ci) {
                unsigned mask = 0;
                for (int c = 0; c < 8; ++c) {
                    corner_val[c] = value_at(ci + (c & 1), cj + ((c >> 1) & 1), ck + ((c >> 2) & 1));
                    if (is_inside(corner_val[c])) mask |= 1u << c;
                }
                if (mask == 0 || mask == 255) continue;

                const auto& tris = case_triangles(mask);
                for (const auto& tri : tris) {
                    Face face;
                    for (int t = 0; t < 3; ++t) {
                        const int e = tri[t];
                        const int axis = e / 4;
                        const int c0 = kEdgeCorner[e][0];
                        const int bi = ci + (c0 & 1), bj = cj + ((c0 >> 1) & 1),
                                  bk = ck + ((c0 >> 2) & 1);
                        int& slot = edge_slot(bi, bj, bk, axis);
                        if (slot < 0) {
                            const int c1 = kEdgeCorner[e][1];
                            const double v0 = corner_val[c0], v1 = corner_val[c1];
                            const double tt = (isovalue - v0) / (v1 - v0);
                            Vec3 p = sample_pos(bi, bj, bk);
                            p[axis] += tt * v.spacing[axis];
                            slot = static_cast<int>(vertices.size());
                            vertices.push_back(p);
                        }
                        face[t] = slot;
                    }
                    faces.push_back(face);
                }
            }
        }
    }
    return TriMesh::build(std::move(vertices), std::move(faces), Units::mm);
}

std::pair<TriMesh, NormMap> normalize_coords(const TriMesh& mesh, std::array<int, 3> dims,
                                             std::array<double, 3> spacing,
                                             std::array<double, 3> origin) {
    if (mesh.vertices().empty()) throw std::invalid_argument("normalize_coords: empty mesh");
    NormMap map;
    for (int a = 0; a < 3; ++a) {
        map.scale[a] = (dims[a] - 1) * spacing[a] / 2.0;
        map.offset[a] = origin[a] + map.scale[a];
    }
    std::vector<Vec3> v = mesh.vertices();
    for (auto& p : v) p = map.to_normalized(p);
    return {mesh.with_vertices(std::move(v), Units::normalized), map};
}

std::pair<TriMesh, NormMap> normalize_coords(const TriMesh& mesh, const Volume& grid) {
    return normalize_coords(mesh, grid.dims, grid.spacing, grid.origin);
}

PseudoGold pseudo_gold(const Volume& mask, const IsoConfig& cfg) {
    if (!(cfg.isovalue > 0.0 && cfg.isovalue < 1.0))
        throw std::invalid_argument("pseudo_gold: isovalue must be in (0,1) for masks");
    auto [labels_before, counts_before] = connected_components6(mask);
    MorphOptions opt;
    opt.min_component = cfg.min_component_voxels;
    opt.largest_only = false;
    Volume cleaned = morph_cleanup(mask, opt);
    // The deformation target is one closed region.
    opt.largest_only = true;
    cleaned = morph_cleanup(cleaned, opt);
    bool any = false;
    for (double x : cleaned.data)
        if (x != 0.0) {
            any = true;
            break;
        }
    if (!any) throw std::runtime_error("pseudo_gold: no foreground after cleanup");

    auto [labels_after, counts_after] = connected_components6(cleaned);
    PseudoGold out;
    out.components_removed =
        static_cast<int>(counts_before.size()) - static_cast<int>(counts_after.size());

    TriMesh mc = marching_cubes(cleaned, cfg.isovalue);
    if (cfg.normalize_to_unit_cube) {
        auto [mesh, frame] = normalize_coords(mc, cleaned);
        out.mesh = std::move(mesh);
        out.frame = frame;
    } else {
        out.mesh = std::move(mc);
        for (int a = 0; a < 3; ++a) {
            out.frame.scale[a] = 1.0;
            out.frame.offset[a] = 0.0;
        }
    }
    return out;
}

}  // namespace meshfit
