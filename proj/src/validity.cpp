#include "meshfit/validity.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace meshfit {

std::vector<int> find_dangling(const TriMesh& m) {
    return non_fan_vertices(m);
}

std::vector<std::pair<int, int>> find_self_intersections(const TriMesh& m) {
    TriBvh bvh(m);
    return bvh.self_intersections();
}

std::vector<std::pair<int, int>> find_self_intersections_brute(const TriMesh& m) {
    TriBvh bvh(m);
    return bvh.self_intersections_brute();
}

std::vector<std::pair<int, double>> find_reflective_edges(const TriMesh& m,
                                                          double max_deviation_deg) {
    std::vector<std::pair<int, double>> out;
    const std::vector<Vec3> normals = face_normals(m);
    for (int e = 0; e < m.edge_count(); ++e) {
        const TriMesh::Edge& edge = m.edges()[e];
        if (edge.n_faces != 2) continue;  // boundary/non-manifold: skipped
        const Vec3& n0 = normals[edge.f0];
        const Vec3& n1 = normals[edge.f1];
        if (n0.isZero(0.0) || n1.isZero(0.0)) continue;
        const double c = std::clamp(n0.dot(n1), -1.0, 1.0);
        const double deviation = std::acos(c) * 180.0 / std::numbers::pi;
        if (deviation > max_deviation_deg) out.emplace_back(e, deviation);
    }
    return out;
}

DeviationResult deviation_fractions(const TriMesh& m, const NearestQuery& ref, double t1_mm,
                                    double t2_mm, const NormMap* frame) {
    if (m.units() == Units::normalized && frame == nullptr)
        throw std::invalid_argument(
            "deviation_fractions: units — normalized mesh needs its frame to recover mm");
    DeviationResult out;
    out.distances_mm.reserve(m.vertex_count());
    int over1 = 0, over2 = 0;
    for (const Vec3& v : m.vertices()) {
        const Vec3 p = frame ? frame->to_mm(v) : v;
        const double d = ref.point_to_surface(p).distance;
        out.distances_mm.push_back(d);
        if (d > t1_mm) ++over1;
        if (d > t2_mm) ++over2;
    }
    const double n = static_cast<double>(m.vertex_count());
    out.frac_over_t1 = n > 0 ? over1 / n : 0.0;
    out.frac_over_t2 = n > 0 ? over2 / n : 0.0;
    return out;
}

ValidityReport audit(const TriMesh& m, const NearestQuery* ref, const NormMap* frame,
                     const AuditOptions& opt) {
    ValidityReport r;
    r.dangling_nodes = find_dangling(m);
    r.self_intersections = find_self_intersections(m);
    r.reflective_edges = find_reflective_edges(m, opt.reflective_deviation_deg);
    r.euler_characteristic = euler_characteristic(m);
    r.watertight = is_watertight(m);
    r.manifold = is_manifold(m);
    r.orientation_consistent = m.orientation_consistent();
    if (ref) {
        const DeviationResult dev = deviation_fractions(m, *ref, opt.t1_mm, opt.t2_mm, frame);
        r.has_reference = true;
        r.frac_over_3_2mm = dev.frac_over_t1;
        r.frac_over_6_4mm = dev.frac_over_t2;
        r.vertex_distances_mm = dev.distances_mm;
    }
    return r;
}

std::string ValidityReport::to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "dangling_count " << dangling_nodes.size() << "\n";
    os << "dangling_ids";
    for (int v : dangling_nodes) os << ' ' << v;
    os << "\n";
    os << "self_intersection_count " << self_intersections.size() << "\n";
    os << "self_intersection_pairs";
    for (auto& [a, b] : self_intersections) os << ' ' << a << ':' << b;
    os << "\n";
    os << "reflective_edge_count " << reflective_edges.size() << "\n";
    os << "reflective_edges";
    for (auto& [e, deg] : reflective_edges) os << ' ' << e << ':' << deg;
    os << "\n";
    os << "euler_characteristic " << euler_characteristic << "\n";
    os << "watertight " << (watertight ? 1 : 0) << "\n";
    os << "manifold " << (manifold ? 1 : 0) << "\n";
    os << "orientation_consistent " << (orientation_consistent ? 1 : 0) << "\n";
    if (has_reference) {
        os << "frac_gt_3.2mm " << frac_over_3_2mm << "\n";
        os << "frac_gt_6.4mm " << frac_over_6_4mm << "\n";
    }
    return os.str();
}

}  // namespace meshfit
