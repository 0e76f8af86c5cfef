#include "meshfit/bvh.hpp"

#include "meshfit/predicates.hpp"

#include <algorithm>
#include <limits>

namespace meshfit {

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    // Ericson, Real-Time Collision Detection, 5.1.5.
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return b;

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return c;

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
        return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);

    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

namespace {
constexpr int kLeafTris = 4;
}

TriBvh::TriBvh(const TriMesh& mesh) : faces_(mesh.faces()) {
    tri_.reserve(mesh.face_count());
    for (int f = 0; f < mesh.face_count(); ++f) {
        const Face& face = mesh.faces()[f];
        tri_.push_back({mesh.vertices()[face[0]], mesh.vertices()[face[1]],
                        mesh.vertices()[face[2]], f});
    }
    if (!tri_.empty()) root_ = build_node(0, static_cast<int>(tri_.size()));
}

int TriBvh::build_node(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Vec3 lo = tri_[begin].a, hi = tri_[begin].a;
    for (int i = begin; i < end; ++i) {
        for (const Vec3* p : {&tri_[i].a, &tri_[i].b, &tri_[i].c}) {
            lo = lo.cwiseMin(*p);
            hi = hi.cwiseMax(*p);
        }
    }
    nodes_[id].lo = lo;
    nodes_[id].hi = hi;
    if (end - begin <= kLeafTris) {
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }
    Vec3 extent = hi - lo;
    int axis = 0;
    if (extent[1] > extent[axis]) axis = 1;
    if (extent[2] > extent[axis]) axis = 2;
    const int mid = (begin + end) / 2;
    std::nth_element(tri_.begin() + begin, tri_.begin() + mid, tri_.begin() + end,
                     [axis](const Tri& x, const Tri& y) {
                         const double cx = x.a[axis] + x.b[axis] + x.c[axis];
                         const double cy = y.a[axis] + y.b[axis] + y.c[axis];
                         return cx < cy || (cx == cy && x.face < y.face);
                     });
    const int l = build_node(begin, mid);
    const int r = build_node(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
}

double TriBvh::box_d2(const Node& n, const Vec3& q) const {
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) {
        const double d = std::max({n.lo[a] - q[a], q[a] - n.hi[a], 0.0});
        d2 += d * d;
    }
    return d2;
}

void TriBvh::search(int node, const Vec3& q, Hit& best) const {
    const Node& n = nodes_[node];
    if (n.left < 0) {
        for (int i = n.begin; i < n.end; ++i) {
            const Vec3 cp = closest_point_on_triangle(q, tri_[i].a, tri_[i].b, tri_[i].c);
            const double d2 = dist2(q, cp);
            if (d2 < best.d2 || (d2 == best.d2 && tri_[i].face < best.face)) {
                best.d2 = d2;
                best.face = tri_[i].face;
                best.point = cp;
            }
        }
        return;
    }
    const double dl = box_d2(nodes_[n.left], q);
    const double dr = box_d2(nodes_[n.right], q);
    const int first = dl <= dr ? n.left : n.right;
    const int second = dl <= dr ? n.right : n.left;
    const double dfirst = std::min(dl, dr), dsecond = std::max(dl, dr);
    if (dfirst <= best.d2) search(first, q, best);
    if (dsecond <= best.d2) search(second, q, best);
}

TriBvh::Hit TriBvh::nearest(const Vec3& q) const {
    Hit best;
    best.d2 = std::numeric_limits<double>::infinity();
    best.face = std::numeric_limits<int>::max();
    search(root_, q, best);
    return best;
}

TriBvh::Hit TriBvh::nearest_brute(const Vec3& q) const {
    Hit best;
    best.d2 = std::numeric_limits<double>::infinity();
    best.face = std::numeric_limits<int>::max();
    for (const Tri& t : tri_) {
        const Vec3 cp = closest_point_on_triangle(q, t.a, t.b, t.c);
        const double d2 = dist2(q, cp);
        if (d2 < best.d2 || (d2 == best.d2 && t.face < best.face)) {
            best.d2 = d2;
            best.face = t.face;
            best.point = cp;
        }
    }
    return best;
}

bool TriBvh::faces_adjacent(int fa, int fb) const {
    for (int i : faces_[fa])
        for (int j : faces_[fb])
            if (i == j) return true;
    return false;
}

void TriBvh::collect_pairs(int na, int nb, std::vector<std::pair<int, int>>& out) const {
    const Node& a = nodes_[na];
    const Node& b = nodes_[nb];
    if (na != nb) {
        for (int axis = 0; axis < 3; ++axis)
            if (a.lo[axis] > b.hi[axis] || b.lo[axis] > a.hi[axis]) return;
    }
    const bool leaf_a = a.left < 0, leaf_b = b.left < 0;
    if (leaf_a && leaf_b) {
        for (int i = a.begin; i < a.end; ++i) {
            for (int j = (na == nb ? i + 1 : b.begin); j < b.end; ++j) {
                const Tri& ta = tri_[i];
                const Tri& tb = tri_[j];
                if (ta.face == tb.face || faces_adjacent(ta.face, tb.face)) continue;
                if (tri_tri_intersect(ta.a, ta.b, ta.c, tb.a, tb.b, tb.c))
                    out.emplace_back(std::min(ta.face, tb.face), std::max(ta.face, tb.face));
            }
        }
        return;
    }
    if (na == nb) {
        collect_pairs(a.left, a.left, out);
        collect_pairs(a.right, a.right, out);
        collect_pairs(a.left, a.right, out);
        return;
    }
    if (leaf_a) {
        collect_pairs(na, b.left, out);
        collect_pairs(na, b.right, out);
    } else {
        collect_pairs(a.left, nb, out);
        collect_pairs(a.right, nb, out);
    }
}

std::vector<std::pair<int, int>> TriBvh::self_intersections() const {
    std::vector<std::pair<int, int>> out;
    if (root_ >= 0) collect_pairs(root_, root_, out);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<std::pair<int, int>> TriBvh::self_intersections_brute() const {
    std::vector<std::pair<int, int>> out;
    const int n = static_cast<int>(faces_.size());
    std::vector<int> slot(n, -1);
    for (std::size_t i = 0; i < tri_.size(); ++i) slot[tri_[i].face] = static_cast<int>(i);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (faces_adjacent(i, j)) continue;
            const Tri& ta = tri_[slot[i]];
            const Tri& tb = tri_[slot[j]];
            if (tri_tri_intersect(ta.a, ta.b, ta.c, tb.a, tb.b, tb.c)) out.emplace_back(i, j);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace meshfit
