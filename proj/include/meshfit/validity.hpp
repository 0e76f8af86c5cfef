#pragma once

#include "meshfit/metrics.hpp"
#include "meshfit/trimesh.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace meshfit {

struct ValidityReport {
    std::vector<int> dangling_nodes;
    std::vector<std::pair<int, int>> self_intersections;
    std::vector<std::pair<int, double>> reflective_edges;  // edge id, deviation deg
    int euler_characteristic = 0;
    bool watertight = false;
    bool manifold = false;
    bool orientation_consistent = false;
    // Reference-dependent fields (set when a reference was given).
    bool has_reference = false;
    double frac_over_3_2mm = 0.0;
    double frac_over_6_4mm = 0.0;
    std::vector<double> vertex_distances_mm;

    std::string to_text() const;  // stable key order
};

/// Vertices with no incident faces, or whose incident faces do not close
/// into a single fan.
std::vector<int> find_dangling(const TriMesh& m);

/// Intersecting non-adjacent face pairs; accelerated result equals the
/// brute-force all-pairs scan.
std::vector<std::pair<int, int>> find_self_intersections(const TriMesh& m);
std::vector<std::pair<int, int>> find_self_intersections_brute(const TriMesh& m);

/// Interior edges whose dihedral angle deviates from flat (180 deg) by more
/// than the threshold; boundary edges are skipped.
std::vector<std::pair<int, double>> find_reflective_edges(const TriMesh& m,
                                                          double max_deviation_deg = 150.0);

struct DeviationResult {
    double frac_over_t1 = 0.0;
    double frac_over_t2 = 0.0;
    std::vector<double> distances_mm;
};

/// Per-vertex distances (mm) to the reference surface and the fractions
/// exceeding the two thresholds. The mesh must be in mm; pass the frame to
/// invert normalized coordinates first.
DeviationResult deviation_fractions(const TriMesh& m, const NearestQuery& ref,
                                    double t1_mm = 3.2, double t2_mm = 6.4,
                                    const NormMap* frame = nullptr);

struct AuditOptions {
    double reflective_deviation_deg = 150.0;
    double t1_mm = 3.2;
    double t2_mm = 6.4;
};

ValidityReport audit(const TriMesh& m, const NearestQuery* ref = nullptr,
                     const NormMap* frame = nullptr, const AuditOptions& opt = {});

}  // namespace meshfit
