#pragma once

#include "meshfit/bvh.hpp"
#include "meshfit/kdtree.hpp"
#include "meshfit/trimesh.hpp"
#include "meshfit/volume.hpp"

#include <cstdint>
#include <vector>

namespace meshfit {

/// Accelerated closest-point queries against a triangle surface.
class NearestQuery {
public:
    explicit NearestQuery(const TriMesh& target);

    struct Result {
        double distance = 0.0;
        Vec3 closest = Vec3::Zero();
        int face = -1;
    };
    Result point_to_surface(const Vec3& p) const;
    Result point_to_surface_brute(const Vec3& p) const;

    const TriMesh& target() const { return target_; }

private:
    TriMesh target_;
    TriBvh bvh_;
};

struct SampleConfig {
    int per_face = 4;
    std::uint64_t seed = 20240901;
};

/// Vertices plus per-face stratified interior samples; deterministic.
std::vector<Vec3> sample_surface(const TriMesh& m, const SampleConfig& cfg = {});

/// Centers of mask voxels with at least one background 6-neighbor (the
/// volume border counts as background).
std::vector<Vec3> boundary_voxel_centers(const Volume& mask);

struct SurfaceDistance {
    double assd = 0.0;
    double hausdorff = 0.0;
    double forward_mean = 0.0;   // pred points -> reference
    double backward_mean = 0.0;  // reference points -> pred
    double forward_max = 0.0;
    double backward_max = 0.0;
};

/// Mesh mode: symmetric sampled point-to-surface distances between the two
/// surfaces. Both meshes must share one coordinate frame (mm).
SurfaceDistance surface_distance_mesh(const TriMesh& pred, const TriMesh& ref,
                                      const SampleConfig& cfg = {});

/// Outer mode: pred samples against the mask's boundary voxel centers
/// (point set), reference points against the pred surface.
SurfaceDistance surface_distance_outer(const TriMesh& pred, const Volume& ref_mask,
                                       const SampleConfig& cfg = {});

enum class DistanceMode { mesh, outer };

double assd(const TriMesh& pred, const TriMesh& ref, const SampleConfig& cfg = {});
double hausdorff(const TriMesh& pred, const TriMesh& ref, const SampleConfig& cfg = {});

/// Mean distance from pred vertices to the reference surface.
double p2sd(const TriMesh& pred, const NearestQuery& ref);

struct Overlap {
    double dice = 1.0;
    double jaccard = 1.0;
};
Overlap dice_jaccard(const Volume& a, const Volume& b);

}  // namespace meshfit
