#pragma once

#include "meshfit/geometry.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace meshfit {

enum class VolumeKind { intensity, mask, sdf };

/// Dense scalar grid. data is row-major with x fastest; voxel (i,j,k) has its
/// center at origin + (i,j,k) * spacing (mm).
struct Volume {
    std::array<int, 3> dims{0, 0, 0};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::array<double, 3> origin{0.0, 0.0, 0.0};
    VolumeKind kind = VolumeKind::intensity;
    std::vector<double> data;

    static Volume zeros(std::array<int, 3> dims, VolumeKind kind,
                        std::array<double, 3> spacing = {1.0, 1.0, 1.0},
                        std::array<double, 3> origin = {0.0, 0.0, 0.0});

    std::size_t size() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
    }
    double& at(int i, int j, int k) { return data[index(i, j, k)]; }
    double at(int i, int j, int k) const { return data[index(i, j, k)]; }
    bool in_bounds(int i, int j, int k) const {
        return i >= 0 && i < dims[0] && j >= 0 && j < dims[1] && k >= 0 && k < dims[2];
    }
    Vec3 voxel_center(int i, int j, int k) const {
        return {origin[0] + i * spacing[0], origin[1] + j * spacing[1], origin[2] + k * spacing[2]};
    }
    /// Trilinear sample at an mm position, edge-clamped.
    double sample_clamped(const Vec3& mm) const;

    void validate() const;  // throws on broken invariants
};

struct SynthParams {
    std::uint64_t seed = 0;
    int n_blobs = 3;
    std::array<int, 3> dims{64, 64, 64};
    double spacing_mm = 1.0;
    double radius_min = 0.22;   // normalized units, half-box = 1
    double radius_max = 0.42;
    double center_extent = 0.35;  // blob centers land in [-e, e]^3
    double neck_width = 0.08;     // smooth-min blending radius
    double noise_sigma = 0.0;     // used by render_intensity only
};

/// Signed distance (normalized units) to a smooth-min union of spheres plus
/// the mask sdf < 0. The blob chain is built so the mask is one 6-connected
/// component; deterministic for a fixed seed.
std::pair<Volume, Volume> synth_shape(const SynthParams& params);

/// Intensity image for training: soft foreground/background contrast around
/// the sdf zero level plus Gaussian noise (sigma = params.noise_sigma).
Volume render_intensity(const Volume& sdf, const SynthParams& params);

Volume zscore_normalize(const Volume& v);

/// Center-crop + trilinear resample to an isotropic 1 mm cubic grid around
/// roi_center (mm); out-of-source reads are edge-clamped.
Volume preprocess(const Volume& v, const Vec3& roi_center_mm, int out_dim = 64);

struct MorphOptions {
    int min_component = 50;
    bool largest_only = false;
    bool fill_holes = true;
};

/// Flood-fill hole filling plus removal of small 6-connected components.
Volume morph_cleanup(const Volume& mask, const MorphOptions& opt);
inline Volume morph_cleanup(const Volume& mask, int min_component) {
    return morph_cleanup(mask, MorphOptions{min_component, false, true});
}

/// 6-connected component labels (0 = background); returns label volume and
/// per-label voxel counts (counts[0] unused).
std::pair<std::vector<int>, std::vector<std::int64_t>> connected_components6(const Volume& mask);

}  // namespace meshfit
