#pragma once

#include "meshfit/trimesh.hpp"
#include "meshfit/volume.hpp"

namespace meshfit {

/// Voxelizes a watertight mesh (mm coordinates): a voxel is foreground iff
/// its center lies inside by +x ray parity. Rays grazing edges, vertices or
/// coplanar faces are re-cast with a fixed deterministic offset sequence, so
/// the result is reproducible and independent of face orientation.
Volume rasterize(const TriMesh& mesh, std::array<int, 3> dims,
                 std::array<double, 3> spacing, std::array<double, 3> origin = {0, 0, 0});

}  // namespace meshfit
