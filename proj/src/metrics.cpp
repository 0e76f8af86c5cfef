#include "meshfit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace meshfit {

NearestQuery::NearestQuery(const TriMesh& target) : target_(target), bvh_(target) {
    if (target.empty()) throw std::invalid_argument("NearestQuery: empty target");
}

NearestQuery::Result NearestQuery::point_to_surface(const Vec3& p) const {
    const auto hit = bvh_.nearest(p);
    return {std::sqrt(hit.d2), hit.point, hit.face};
}

NearestQuery::Result NearestQuery::point_to_surface_brute(const Vec3& p) const {
    const auto hit = bvh_.nearest_brute(p);
    return {std::sqrt(hit.d2), hit.point, hit.face};
}

std::vector<Vec3> sample_surface(const TriMesh& m, const SampleConfig& cfg) {
    std::vector<Vec3> pts = m.vertices();
    if (cfg.per_face <= 0) return pts;
    Rng rng(cfg.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    pts.reserve(pts.size() + static_cast<std::size_t>(m.face_count()) * cfg.per_face);
    for (const Face& f : m.faces()) {
        const Vec3& a = m.vertices()[f[0]];
        const Vec3& b = m.vertices()[f[1]];
        const Vec3& c = m.vertices()[f[2]];
        for (int s = 0; s < cfg.per_face; ++s) {
            double u = uni(rng), v = uni(rng);
            if (u + v > 1.0) {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            pts.push_back(a + u * (b - a) + v * (c - a));
        }
    }
    return pts;
}

std::vector<Vec3> boundary_voxel_centers(const Volume& mask) {
    std::vector<Vec3> out;
    static constexpr int d[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                    {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
    for (int k = 0; k < mask.dims[2]; ++k)
        for (int j = 0; j < mask.dims[1]; ++j)
            for (int i = 0; i < mask.dims[0]; ++i) {
                if (mask.at(i, j, k) == 0.0) continue;
                for (auto& dd : d) {
                    const int x = i + dd[0], y = j + dd[1], z = k + dd[2];
                    if (!mask.in_bounds(x, y, z) || mask.at(x, y, z) == 0.0) {
                        out.push_back(mask.voxel_center(i, j, k));
                        break;
                    }
                }
            }
    return out;
}

namespace {

struct DirectedStats {
    double sum = 0.0;
    double max = 0.0;
    std::size_t count = 0;
};

DirectedStats points_to_surface(const std::vector<Vec3>& pts, const NearestQuery& q) {
    DirectedStats s;
    for (const Vec3& p : pts) {
        const double d = q.point_to_surface(p).distance;
        s.sum += d;
        s.max = std::max(s.max, d);
    }
    s.count = pts.size();
    return s;
}

DirectedStats points_to_points(const std::vector<Vec3>& pts, const PointKdTree& tree) {
    DirectedStats s;
    for (const Vec3& p : pts) {
        const double d = std::sqrt(tree.nearest(p).d2);
        s.sum += d;
        s.max = std::max(s.max, d);
    }
    s.count = pts.size();
    return s;
}

SurfaceDistance combine(const DirectedStats& fwd, const DirectedStats& bwd) {
    SurfaceDistance out;
    out.forward_mean = fwd.count ? fwd.sum / fwd.count : 0.0;
    out.backward_mean = bwd.count ? bwd.sum / bwd.count : 0.0;
    out.forward_max = fwd.max;
    out.backward_max = bwd.max;
    out.assd = (fwd.sum + bwd.sum) / static_cast<double>(fwd.count + bwd.count);
    out.hausdorff = std::max(fwd.max, bwd.max);
    return out;
}

}  // namespace

SurfaceDistance surface_distance_mesh(const TriMesh& pred, const TriMesh& ref,
                                      const SampleConfig& cfg) {
    if (pred.empty() || ref.empty())
        throw std::invalid_argument("surface_distance: empty mesh");
    NearestQuery pred_q(pred), ref_q(ref);
    const auto fwd = points_to_surface(sample_surface(pred, cfg), ref_q);
    const auto bwd = points_to_surface(sample_surface(ref, cfg), pred_q);
    return combine(fwd, bwd);
}

SurfaceDistance surface_distance_outer(const TriMesh& pred, const Volume& ref_mask,
                                       const SampleConfig& cfg) {
    const std::vector<Vec3> ref_pts = boundary_voxel_centers(ref_mask);
    if (ref_pts.empty()) throw std::invalid_argument("surface_distance_outer: empty reference");
    NearestQuery pred_q(pred);
    PointKdTree ref_tree(ref_pts);
    const auto fwd = points_to_points(sample_surface(pred, cfg), ref_tree);
    const auto bwd = points_to_surface(ref_pts, pred_q);
    return combine(fwd, bwd);
}

double assd(const TriMesh& pred, const TriMesh& ref, const SampleConfig& cfg) {
    return surface_distance_mesh(pred, ref, cfg).assd;
}

double hausdorff(const TriMesh& pred, const TriMesh& ref, const SampleConfig& cfg) {
    return surface_distance_mesh(pred, ref, cfg).hausdorff;
}

double p2sd(const TriMesh& pred, const NearestQuery& ref) {
    if (pred.vertices().empty()) throw std::invalid_argument("p2sd: empty mesh");
    double sum = 0.0;
    for (const Vec3& v : pred.vertices()) sum += ref.point_to_surface(v).distance;
    return sum / static_cast<double>(pred.vertices().size());
}

Overlap dice_jaccard(const Volume& a, const Volume& b) {
    if (a.dims != b.dims) throw std::invalid_argument("dice_jaccard: dims mismatch");
    std::int64_t na = 0, nb = 0, inter = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool xa = a.data[i] != 0.0;
        const bool xb = b.data[i] != 0.0;
        na += xa;
        nb += xb;
        inter += xa && xb;
    }
    if (na + nb == 0) return {1.0, 1.0};
    Overlap o;
    o.dice = 2.0 * inter / static_cast<double>(na + nb);
    const std::int64_t uni = na + nb - inter;
    o.jaccard = uni == 0 ? 1.0 : inter / static_cast<double>(uni);
    return o;
}

}  // namespace meshfit
