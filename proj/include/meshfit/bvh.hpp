#pragma once

#include "meshfit/trimesh.hpp"

#include <utility>
#include <vector>

namespace meshfit {

/// Exact closest point on triangle (a,b,c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Bounding-volume hierarchy over mesh triangles. Nearest queries return the
/// same (distance, face, point) as a brute-force scan: pruning only uses
/// lower bounds and ties resolve to the lowest face index.
class TriBvh {
public:
    TriBvh() = default;
    explicit TriBvh(const TriMesh& mesh);

    struct Hit {
        int face = -1;
        double d2 = 0.0;
        Vec3 point = Vec3::Zero();
    };
    Hit nearest(const Vec3& query) const;
    Hit nearest_brute(const Vec3& query) const;

    /// Non-adjacent face pairs (no shared vertex index) whose triangles
    /// intersect, sorted; exact predicate test on BVH candidate pairs.
    std::vector<std::pair<int, int>> self_intersections() const;
    std::vector<std::pair<int, int>> self_intersections_brute() const;

    bool empty() const { return tri_.empty(); }

private:
    struct Node {
        Vec3 lo, hi;
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf triangle range when left < 0
    };
    struct Tri {
        Vec3 a, b, c;
        int face;
    };

    int build_node(int begin, int end);
    void search(int node, const Vec3& q, Hit& best) const;
    void collect_pairs(int na, int nb, std::vector<std::pair<int, int>>& out) const;
    bool faces_adjacent(int fa, int fb) const;
    double box_d2(const Node& n, const Vec3& q) const;

    std::vector<Tri> tri_;
    std::vector<Node> nodes_;
    std::vector<Face> faces_;
    int root_ = -1;
};

}  // namespace meshfit
