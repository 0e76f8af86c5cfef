#pragma once

#include "meshfit/trimesh.hpp"
#include "meshfit/volume.hpp"

#include <utility>

namespace meshfit {

struct IsoConfig {
    double isovalue = 0.5;
    int min_component_voxels = 50;
    bool normalize_to_unit_cube = true;
};

/// Marching cubes over the voxel-center lattice. The case table is generated
/// once from a per-face contour rule (ambiguous faces always separate the
/// inside corners), so adjacent cells agree on shared faces and closed level
/// sets come out watertight. The grid is virtually padded with one outside
/// layer, so masks touching the boundary still close. Vertices are in mm.
/// For kind=sdf volumes "inside" means value < isovalue, otherwise
/// value > isovalue; output faces are wound outward.
TriMesh marching_cubes(const Volume& v, double isovalue);

/// Affine map of the sample bounding box (voxel centers, corner-aligned) to
/// [-1,1]^3. Returns the mapped mesh and the invertible map.
std::pair<TriMesh, NormMap> normalize_coords(const TriMesh& mesh, const Volume& grid);
std::pair<TriMesh, NormMap> normalize_coords(const TriMesh& mesh, std::array<int, 3> dims,
                                             std::array<double, 3> spacing,
                                             std::array<double, 3> origin = {0, 0, 0});

struct PseudoGold {
    TriMesh mesh;          // normalized coords unless cfg disabled
    NormMap frame;         // normalized -> mm
    int components_removed = 0;
};

/// morph_cleanup -> marching_cubes -> normalize_coords, no smoothing.
PseudoGold pseudo_gold(const Volume& mask, const IsoConfig& cfg = {});

}  // namespace meshfit
