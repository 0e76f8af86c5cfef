#pragma once

#include "meshfit/geometry.hpp"

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace meshfit {

enum class Units { mm, normalized };

/// Indexed triangle surface with cached adjacency. Treated as immutable after
/// construction: every topology-changing operation returns a new mesh.
class TriMesh {
public:
    struct Edge {
        int u = -1, v = -1;      // u < v
        int f0 = -1, f1 = -1;    // first two incident faces
        int n_faces = 0;         // total incident faces (may exceed 2)
    };

    TriMesh() = default;

    /// Validates indices, rejects degenerate faces, builds adjacency caches.
    /// Non-manifold edges (more than 2 incident faces) are tolerated here;
    /// the validity module reports them.
    static TriMesh build(std::vector<Vec3> vertices, std::vector<Face> faces,
                         Units units = Units::mm);

    const std::vector<Vec3>& vertices() const { return vertices_; }
    const std::vector<Face>& faces() const { return faces_; }
    const std::vector<Edge>& edges() const { return edges_; }
    const std::vector<std::vector<int>>& vertex_neighbors() const { return vneigh_; }
    const std::vector<std::vector<int>>& vertex_faces() const { return vfaces_; }

    int vertex_count() const { return static_cast<int>(vertices_.size()); }
    int face_count() const { return static_cast<int>(faces_.size()); }
    int edge_count() const { return static_cast<int>(edges_.size()); }
    bool empty() const { return faces_.empty(); }

    /// Index of the undirected edge (a,b), or -1.
    int edge_index(int a, int b) const;

    bool orientation_consistent() const { return orientation_consistent_; }

    Units units() const { return units_; }

    /// Same connectivity, new vertex positions.
    TriMesh with_vertices(std::vector<Vec3> vertices, Units units) const;
    TriMesh with_vertices(std::vector<Vec3> vertices) const {
        return with_vertices(std::move(vertices), units_);
    }

private:
    std::vector<Vec3> vertices_;
    std::vector<Face> faces_;
    std::vector<Edge> edges_;
    std::vector<std::vector<int>> vneigh_;
    std::vector<std::vector<int>> vfaces_;
    std::unordered_map<std::uint64_t, int> edge_lookup_;
    bool orientation_consistent_ = true;
    Units units_ = Units::mm;
};

/// Midpoint bookkeeping produced by uniform_unpool. Midpoint vertex i + base
/// count sits on base edge (parent_u, parent_v) whose pre-unpool length is
/// parent_length.
struct ParentMap {
    int base_vertex_count = 0;
    std::vector<Face> base_faces;
    std::vector<std::array<int, 2>> parent;  // per midpoint, base vertex pair
    std::vector<double> parent_length;
    std::unordered_map<std::uint64_t, int> midpoint_of_edge;

    int midpoint(int a, int b) const;
    bool is_midpoint(int v) const { return v >= base_vertex_count; }
};

struct VFThresholds {
    double t_lo = 0.01;  // stationary cutoff, fraction of parent edge length
    double t_hi = 1.0;   // runaway cutoff, same units
};

TriMesh icosphere(int level);

/// 1->4 midpoint subdivision of every face. Requires a watertight input.
std::pair<TriMesh, ParentMap> uniform_unpool(const TriMesh& m);

/// Prunes unpooled midpoints whose displacement since the unpool is below
/// t_lo or above t_hi times the parent edge length, then re-triangulates each
/// base face by the kept-midpoint pattern (1/2/3/4-way split) so the result
/// stays watertight with consistent winding. Base vertices are never removed.
TriMesh vertex_filter(const TriMesh& m, std::span<const Vec3> displacements,
                      const ParentMap& pm, const VFThresholds& th);

/// Unnormalized face normal (p1-p0) x (p2-p0); zero for degenerate faces.
Vec3 face_normal_raw(const TriMesh& m, int f);
std::vector<Vec3> face_normals(const TriMesh& m, std::vector<int>* degenerate = nullptr);
std::vector<double> face_areas(const TriMesh& m);
/// Area-weighted average of incident face normals, normalized.
std::vector<Vec3> vertex_normals(const TriMesh& m);

int euler_characteristic(const TriMesh& m);
/// Every edge has exactly two incident faces.
bool is_watertight(const TriMesh& m);
/// Watertight and every vertex's incident faces form a single fan.
bool is_manifold(const TriMesh& m);
/// Vertices with no incident faces or whose incident faces form more than one fan.
std::vector<int> non_fan_vertices(const TriMesh& m);

/// Six times the signed volume enclosed by a closed mesh (positive when
/// wound outward).
double signed_volume6(const TriMesh& m);

/// Reads a genus-0 watertight template in [-1,1]^3; rejects anything else.
TriMesh load_template(const std::string& path);

}  // namespace meshfit
