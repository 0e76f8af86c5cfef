#include "meshfit/trimesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace meshfit {

namespace {

std::uint64_t edge_key(int a, int b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
}

}  // namespace

TriMesh TriMesh::build(std::vector<Vec3> vertices, std::vector<Face> faces, Units units) {
    TriMesh m;
    const int nv = static_cast<int>(vertices.size());
    for (const Face& f : faces) {
        for (int idx : f) {
            if (idx < 0 || idx >= nv)
                throw std::invalid_argument("face index out of range: " + std::to_string(idx));
        }
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
            throw std::invalid_argument("degenerate face (repeated vertex index)");
    }
    m.vertices_ = std::move(vertices);
    m.faces_ = std::move(faces);
    m.units_ = units;

    // Edges in deterministic (u,v)-lexicographic order.
    std::map<std::pair<int, int>, Edge> edge_map;
    for (int fi = 0; fi < m.face_count(); ++fi) {
        const Face& f = m.faces_[fi];
        for (int k = 0; k < 3; ++k) {
            int a = f[k], b = f[(k + 1) % 3];
            auto key = std::minmax(a, b);
            Edge& e = edge_map[key];
            e.u = key.first;
            e.v = key.second;
            if (e.n_faces == 0) e.f0 = fi;
            else if (e.n_faces == 1) e.f1 = fi;
            ++e.n_faces;
        }
    }
    m.edges_.reserve(edge_map.size());
    for (auto& [key, e] : edge_map) {
        m.edge_lookup_[edge_key(e.u, e.v)] = static_cast<int>(m.edges_.size());
        m.edges_.push_back(e);
    }

    m.vneigh_.assign(nv, {});
    for (const Edge& e : m.edges_) {
        m.vneigh_[e.u].push_back(e.v);
        m.vneigh_[e.v].push_back(e.u);
    }
    for (auto& nb : m.vneigh_) std::sort(nb.begin(), nb.end());

    m.vfaces_.assign(nv, {});
    for (int fi = 0; fi < m.face_count(); ++fi)
        for (int idx : m.faces_[fi]) m.vfaces_[idx].push_back(fi);

    // Orientation: each 2-face edge must be traversed once in each direction.
    m.orientation_consistent_ = true;
    std::unordered_map<std::uint64_t, int> directed;
    for (const Face& f : m.faces_) {
        for (int k = 0; k < 3; ++k) {
            int a = f[k], b = f[(k + 1) % 3];
            ++directed[(static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b)];
        }
    }
    for (const Edge& e : m.edges_) {
        if (e.n_faces != 2) continue;
        auto fwd = directed.find((static_cast<std::uint64_t>(e.u) << 32) | static_cast<std::uint32_t>(e.v));
        auto bwd = directed.find((static_cast<std::uint64_t>(e.v) << 32) | static_cast<std::uint32_t>(e.u));
        int nf = fwd == directed.end() ? 0 : fwd->second;
        int nb = bwd == directed.end() ? 0 : bwd->second;
        if (nf != 1 || nb != 1) m.orientation_consistent_ = false;
    }
    return m;
}

int TriMesh::edge_index(int a, int b) const {
    auto it = edge_lookup_.find(edge_key(a, b));
    return it == edge_lookup_.end() ? -1 : it->second;
}

TriMesh TriMesh::with_vertices(std::vector<Vec3> vertices, Units units) const {
    if (vertices.size() != vertices_.size())
        throw std::invalid_argument("with_vertices: vertex count mismatch");
    TriMesh m = *this;
    m.vertices_ = std::move(vertices);
    m.units_ = units;
    return m;
}

int ParentMap::midpoint(int a, int b) const {
    auto it = midpoint_of_edge.find(edge_key(a, b));
    return it == midpoint_of_edge.end() ? -1 : it->second;
}

TriMesh icosphere(int level) {
    if (level < 0) throw std::invalid_argument("icosphere level must be >= 0");
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {
        {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
        {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
        {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1},
    };
    for (auto& p : v) p.normalize();
    std::vector<Face> f = {
        {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
        {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
        {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1},
    };
    for (int l = 0; l < level; ++l) {
        std::unordered_map<std::uint64_t, int> mid;
        auto midpoint = [&](int a, int b) {
            auto key = edge_key(a, b);
            auto it = mid.find(key);
            if (it != mid.end()) return it->second;
            int idx = static_cast<int>(v.size());
            v.push_back(((v[a] + v[b]) * 0.5).normalized());
            mid.emplace(key, idx);
            return idx;
        };
        std::vector<Face> nf;
        nf.reserve(f.size() * 4);
        for (const Face& face : f) {
            int mab = midpoint(face[0], face[1]);
            int mbc = midpoint(face[1], face[2]);
            int mca = midpoint(face[2], face[0]);
            nf.push_back({face[0], mab, mca});
            nf.push_back({face[1], mbc, mab});
            nf.push_back({face[2], mca, mbc});
            nf.push_back({mab, mbc, mca});
        }
        f = std::move(nf);
    }
    return TriMesh::build(std::move(v), std::move(f), Units::normalized);
}

std::pair<TriMesh, ParentMap> uniform_unpool(const TriMesh& m) {
    if (!is_watertight(m)) throw std::invalid_argument("uniform_unpool requires a watertight mesh");

    ParentMap pm;
    pm.base_vertex_count = m.vertex_count();
    pm.base_faces = m.faces();

    std::vector<Vec3> v = m.vertices();
    v.reserve(v.size() + m.edge_count());
    pm.parent.reserve(m.edge_count());
    pm.parent_length.reserve(m.edge_count());
    for (const TriMesh::Edge& e : m.edges()) {
        int idx = static_cast<int>(v.size());
        v.push_back((m.vertices()[e.u] + m.vertices()[e.v]) * 0.5);
        pm.parent.push_back({e.u, e.v});
        pm.parent_length.push_back((m.vertices()[e.u] - m.vertices()[e.v]).norm());
        pm.midpoint_of_edge[edge_key(e.u, e.v)] = idx;
    }

    std::vector<Face> f;
    f.reserve(m.face_count() * 4);
    for (const Face& face : m.faces()) {
        int mab = pm.midpoint(face[0], face[1]);
        int mbc = pm.midpoint(face[1], face[2]);
        int mca = pm.midpoint(face[2], face[0]);
        f.push_back({face[0], mab, mca});
        f.push_back({face[1], mbc, mab});
        f.push_back({face[2], mca, mbc});
        f.push_back({mab, mbc, mca});
    }
    return {TriMesh::build(std::move(v), std::move(f), m.units()), std::move(pm)};
}

TriMesh vertex_filter(const TriMesh& m, std::span<const Vec3> displacements,
                      const ParentMap& pm, const VFThresholds& th) {
    if (!(th.t_lo >= 0.0 && th.t_lo < th.t_hi))
        throw std::invalid_argument("vertex_filter thresholds must satisfy 0 <= t_lo < t_hi");
    if (static_cast<int>(displacements.size()) != m.vertex_count())
        throw std::invalid_argument("vertex_filter: displacement count mismatch");

    const int nb = pm.base_vertex_count;
    const int n_mid = m.vertex_count() - nb;
    std::vector<char> keep(n_mid, 1);
    for (int i = 0; i < n_mid; ++i) {
        const double d = displacements[nb + i].norm();
        const double len = pm.parent_length[i];
        if (d < th.t_lo * len || d > th.t_hi * len) keep[i] = 0;
    }

    std::vector<int> remap(m.vertex_count(), -1);
    std::vector<Vec3> v;
    v.reserve(m.vertex_count());
    for (int i = 0; i < nb; ++i) {
        remap[i] = static_cast<int>(v.size());
        v.push_back(m.vertices()[i]);
    }
    for (int i = 0; i < n_mid; ++i) {
        if (!keep[i]) continue;
        remap[nb + i] = static_cast<int>(v.size());
        v.push_back(m.vertices()[nb + i]);
    }

    std::vector<Face> f;
    f.reserve(m.face_count());
    for (const Face& base : pm.base_faces) {
        int mid[3];  // midpoint of edge (k, k+1), or -1 once pruned
        int kept_count = 0;
        for (int k = 0; k < 3; ++k) {
            int mi = pm.midpoint(base[k], base[(k + 1) % 3]);
            mid[k] = (mi >= 0 && keep[mi - nb]) ? remap[mi] : -1;
            if (mid[k] >= 0) ++kept_count;
        }
        const int a = remap[base[0]], b = remap[base[1]], c = remap[base[2]];
        if (kept_count == 0) {
            f.push_back({a, b, c});
        } else if (kept_count == 3) {
            f.push_back({a, mid[0], mid[2]});
            f.push_back({b, mid[1], mid[0]});
            f.push_back({c, mid[2], mid[1]});
            f.push_back({mid[0], mid[1], mid[2]});
        } else if (kept_count == 1) {
            // Rotate so the kept midpoint lies on edge (p,q), opposite r.
            int k = mid[0] >= 0 ? 0 : (mid[1] >= 0 ? 1 : 2);
            int corner[3] = {a, b, c};
            int p = corner[k], q = corner[(k + 1) % 3], r = corner[(k + 2) % 3];
            f.push_back({p, mid[k], r});
            f.push_back({mid[k], q, r});
        } else {
            // Rotate so edges (p,q) and (q,r) carry the kept midpoints.
            int k = mid[0] < 0 ? 1 : (mid[1] < 0 ? 2 : 0);
            int corner[3] = {a, b, c};
            int p = corner[k], q = corner[(k + 1) % 3], r = corner[(k + 2) % 3];
            int mpq = mid[k], mqr = mid[(k + 1) % 3];
            f.push_back({mpq, q, mqr});
            f.push_back({p, mpq, mqr});
            f.push_back({p, mqr, r});
        }
    }
    return TriMesh::build(std::move(v), std::move(f), m.units());
}

Vec3 face_normal_raw(const TriMesh& m, int f) {
    const Face& face = m.faces()[f];
    const Vec3& p0 = m.vertices()[face[0]];
    const Vec3& p1 = m.vertices()[face[1]];
    const Vec3& p2 = m.vertices()[face[2]];
    return (p1 - p0).cross(p2 - p0);
}

std::vector<Vec3> face_normals(const TriMesh& m, std::vector<int>* degenerate) {
    std::vector<Vec3> out(m.face_count());
    for (int f = 0; f < m.face_count(); ++f) {
        Vec3 n = face_normal_raw(m, f);
        const double len = n.norm();
        if (len <= 0.0) {
            out[f] = Vec3::Zero();
            if (degenerate) degenerate->push_back(f);
        } else {
            out[f] = n / len;
        }
    }
    return out;
}

std::vector<double> face_areas(const TriMesh& m) {
    std::vector<double> out(m.face_count());
    for (int f = 0; f < m.face_count(); ++f) out[f] = 0.5 * face_normal_raw(m, f).norm();
    return out;
}

std::vector<Vec3> vertex_normals(const TriMesh& m) {
    std::vector<Vec3> out(m.vertex_count(), Vec3::Zero());
    for (int f = 0; f < m.face_count(); ++f) {
        const Vec3 n = face_normal_raw(m, f);  // length = 2 * area
        for (int idx : m.faces()[f]) out[idx] += n;
    }
    for (auto& n : out) {
        const double len = n.norm();
        if (len > 0.0) n /= len;
    }
    return out;
}

int euler_characteristic(const TriMesh& m) {
    return m.vertex_count() - m.edge_count() + m.face_count();
}

bool is_watertight(const TriMesh& m) {
    if (m.empty()) return false;
    for (const TriMesh::Edge& e : m.edges())
        if (e.n_faces != 2) return false;
    return true;
}

std::vector<int> non_fan_vertices(const TriMesh& m) {
    std::vector<int> bad;
    for (int v = 0; v < m.vertex_count(); ++v) {
        const auto& inc = m.vertex_faces()[v];
        if (inc.empty()) {
            bad.push_back(v);
            continue;
        }
        // Union incident faces across shared edges at v; a single fan is one
        // component in which every local edge pairs exactly two faces.
        std::unordered_map<int, std::vector<int>> by_edge;  // other vertex -> faces
        for (int fi : inc) {
            const Face& f = m.faces()[fi];
            for (int idx : f)
                if (idx != v) by_edge[idx].push_back(fi);
        }
        std::unordered_map<int, int> face_slot;
        for (size_t i = 0; i < inc.size(); ++i) face_slot[inc[i]] = static_cast<int>(i);
        std::vector<int> parent(inc.size());
        for (size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
        auto find = [&](int x) {
            while (parent[x] != x) x = parent[x] = parent[parent[x]];
            return x;
        };
        bool local_manifold = true;
        for (auto& [other, fs] : by_edge) {
            if (fs.size() != 2) local_manifold = false;
            for (size_t i = 1; i < fs.size(); ++i) {
                int ra = find(face_slot[fs[0]]);
                int rb = find(face_slot[fs[i]]);
                if (ra != rb) parent[rb] = ra;
            }
        }
        int components = 0;
        for (size_t i = 0; i < parent.size(); ++i)
            if (find(static_cast<int>(i)) == static_cast<int>(i)) ++components;
        if (!local_manifold || components != 1) bad.push_back(v);
    }
    return bad;
}

bool is_manifold(const TriMesh& m) {
    return is_watertight(m) && non_fan_vertices(m).empty();
}

double signed_volume6(const TriMesh& m) {
    double vol = 0.0;
    for (const Face& f : m.faces()) {
        const Vec3& a = m.vertices()[f[0]];
        const Vec3& b = m.vertices()[f[1]];
        const Vec3& c = m.vertices()[f[2]];
        vol += a.dot(b.cross(c));
    }
    return vol;
}

}  // namespace meshfit
