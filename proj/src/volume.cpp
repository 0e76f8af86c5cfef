#include "meshfit/volume.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace meshfit {

Volume Volume::zeros(std::array<int, 3> dims, VolumeKind kind,
                     std::array<double, 3> spacing, std::array<double, 3> origin) {
    Volume v;
    v.dims = dims;
    v.spacing = spacing;
    v.origin = origin;
    v.kind = kind;
    v.data.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], 0.0);
    return v;
}

void Volume::validate() const {
    for (int d : dims)
        if (d <= 0) throw std::invalid_argument("volume dims must be positive");
    for (double s : spacing)
        if (!(s > 0.0)) throw std::invalid_argument("volume spacing must be positive");
    if (data.size() != size()) throw std::invalid_argument("volume data length mismatch");
    if (kind == VolumeKind::mask) {
        for (double v : data)
            if (v != 0.0 && v != 1.0) throw std::invalid_argument("mask values must be 0 or 1");
    }
}

double Volume::sample_clamped(const Vec3& mm) const {
    double fx = (mm.x() - origin[0]) / spacing[0];
    double fy = (mm.y() - origin[1]) / spacing[1];
    double fz = (mm.z() - origin[2]) / spacing[2];
    fx = std::clamp(fx, 0.0, static_cast<double>(dims[0] - 1));
    fy = std::clamp(fy, 0.0, static_cast<double>(dims[1] - 1));
    fz = std::clamp(fz, 0.0, static_cast<double>(dims[2] - 1));
    const int i0 = std::min(static_cast<int>(fx), dims[0] - 1);
    const int j0 = std::min(static_cast<int>(fy), dims[1] - 1);
    const int k0 = std::min(static_cast<int>(fz), dims[2] - 1);
    const int i1 = std::min(i0 + 1, dims[0] - 1);
    const int j1 = std::min(j0 + 1, dims[1] - 1);
    const int k1 = std::min(k0 + 1, dims[2] - 1);
    const double tx = fx - i0, ty = fy - j0, tz = fz - k0;
    auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
    const double c00 = lerp(at(i0, j0, k0), at(i1, j0, k0), tx);
    const double c10 = lerp(at(i0, j1, k0), at(i1, j1, k0), tx);
    const double c01 = lerp(at(i0, j0, k1), at(i1, j0, k1), tx);
    const double c11 = lerp(at(i0, j1, k1), at(i1, j1, k1), tx);
    return lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz);
}

namespace {

// Quadratic polynomial smooth minimum; equals min outside the blend band.
double smooth_min(double a, double b, double k) {
    if (k <= 0.0) return std::min(a, b);
    const double h = std::max(k - std::abs(a - b), 0.0) / k;
    return std::min(a, b) - h * h * k * 0.25;
}

}  // namespace

std::pair<Volume, Volume> synth_shape(const SynthParams& p) {
    for (int d : p.dims)
        if (d < 8) throw std::invalid_argument("synth_shape: dims must be at least 8 per axis");
    if (p.n_blobs < 1) throw std::invalid_argument("synth_shape: n_blobs must be >= 1");
    if (p.radius_max < p.radius_min || p.radius_min < 0.0)
        throw std::invalid_argument("synth_shape: invalid radius range");

    Rng rng(p.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };

    // Chain of blobs: each next center overlaps the previous so the union
    // stays one connected component.
    std::vector<Vec3> centers;
    std::vector<double> radii;
    centers.emplace_back(uniform(-p.center_extent * 0.5, p.center_extent * 0.5),
                         uniform(-p.center_extent * 0.5, p.center_extent * 0.5),
                         uniform(-p.center_extent * 0.5, p.center_extent * 0.5));
    radii.push_back(uniform(p.radius_min, p.radius_max));
    for (int b = 1; b < p.n_blobs; ++b) {
        const double r = uniform(p.radius_min, p.radius_max);
        Vec3 dir(uniform(-1, 1), uniform(-1, 1), uniform(-1, 1));
        if (dir.norm() < 1e-9) dir = Vec3(1, 0, 0);
        dir.normalize();
        const double gap = 0.7 * (radii.back() + r);
        Vec3 c = centers.back() + dir * gap;
        for (int a = 0; a < 3; ++a) c[a] = std::clamp(c[a], -p.center_extent, p.center_extent);
        centers.push_back(c);
        radii.push_back(r);
    }

    // Cell-centered normalized coordinates: voxel i covers
    // [-1 + 2i/n, -1 + 2(i+1)/n), sampled at its center.
    Volume sdf = Volume::zeros(p.dims, VolumeKind::sdf, {p.spacing_mm, p.spacing_mm, p.spacing_mm});
    Volume mask = Volume::zeros(p.dims, VolumeKind::mask, {p.spacing_mm, p.spacing_mm, p.spacing_mm});
    for (int k = 0; k < p.dims[2]; ++k) {
        const double z = 2.0 * (k + 0.5) / p.dims[2] - 1.0;
        for (int j = 0; j < p.dims[1]; ++j) {
            const double y = 2.0 * (j + 0.5) / p.dims[1] - 1.0;
            for (int i = 0; i < p.dims[0]; ++i) {
                const double x = 2.0 * (i + 0.5) / p.dims[0] - 1.0;
                const Vec3 q(x, y, z);
                double d = (q - centers[0]).norm() - radii[0];
                for (std::size_t b = 1; b < centers.size(); ++b)
                    d = smooth_min(d, (q - centers[b]).norm() - radii[b], p.neck_width);
                sdf.at(i, j, k) = d;
                mask.at(i, j, k) = d < 0.0 ? 1.0 : 0.0;
            }
        }
    }
    return {std::move(sdf), std::move(mask)};
}

Volume render_intensity(const Volume& sdf, const SynthParams& p) {
    Volume img = sdf;
    img.kind = VolumeKind::intensity;
    const double w = 0.05;  // contrast transition width, normalized units
    Rng rng(p.seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (double& v : img.data) {
        v = 1.0 / (1.0 + std::exp(v / w));
        if (p.noise_sigma > 0.0) v += p.noise_sigma * noise(rng);
    }
    return img;
}

Volume zscore_normalize(const Volume& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v.data) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v.data) var += (x - mean) * (x - mean);
    var /= n;
    if (var <= 0.0) throw std::invalid_argument("zscore_normalize: zero variance");
    const double inv_std = 1.0 / std::sqrt(var);
    Volume out = v;
    out.kind = VolumeKind::intensity;
    for (double& x : out.data) x = (x - mean) * inv_std;
    return out;
}

Volume preprocess(const Volume& v, const Vec3& roi_center_mm, int out_dim) {
    v.validate();
    const Vec3 lo(v.origin[0], v.origin[1], v.origin[2]);
    const Vec3 hi(v.origin[0] + (v.dims[0] - 1) * v.spacing[0],
                  v.origin[1] + (v.dims[1] - 1) * v.spacing[1],
                  v.origin[2] + (v.dims[2] - 1) * v.spacing[2]);
    for (int a = 0; a < 3; ++a)
        if (roi_center_mm[a] < lo[a] || roi_center_mm[a] > hi[a])
            throw std::invalid_argument("preprocess: roi_center outside volume bounds");

    Volume out = Volume::zeros({out_dim, out_dim, out_dim}, v.kind);
    const double half = (out_dim - 1) / 2.0;
    out.origin = {roi_center_mm.x() - half, roi_center_mm.y() - half, roi_center_mm.z() - half};
    for (int k = 0; k < out_dim; ++k)
        for (int j = 0; j < out_dim; ++j)
            for (int i = 0; i < out_dim; ++i)
                out.at(i, j, k) = v.sample_clamped(out.voxel_center(i, j, k));
    if (v.kind == VolumeKind::mask)
        for (double& x : out.data) x = x >= 0.5 ? 1.0 : 0.0;
    return out;
}

std::pair<std::vector<int>, std::vector<std::int64_t>> connected_components6(const Volume& mask) {
    const int nx = mask.dims[0], ny = mask.dims[1], nz = mask.dims[2];
    std::vector<int> label(mask.size(), 0);
    std::vector<std::int64_t> counts(1, 0);
    std::deque<std::array<int, 3>> queue;
    int next = 1;
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i) {
                const std::size_t idx = mask.index(i, j, k);
                if (mask.data[idx] == 0.0 || label[idx] != 0) continue;
                label[idx] = next;
                counts.push_back(0);
                queue.push_back({i, j, k});
                while (!queue.empty()) {
                    auto [x, y, z] = queue.front();
                    queue.pop_front();
                    ++counts[next];
                    static constexpr int d[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                                    {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
                    for (auto& dd : d) {
                        const int xx = x + dd[0], yy = y + dd[1], zz = z + dd[2];
                        if (!mask.in_bounds(xx, yy, zz)) continue;
                        const std::size_t nidx = mask.index(xx, yy, zz);
                        if (mask.data[nidx] == 0.0 || label[nidx] != 0) continue;
                        label[nidx] = next;
                        queue.push_back({xx, yy, zz});
                    }
                }
                ++next;
            }
    return {std::move(label), std::move(counts)};
}

Volume morph_cleanup(const Volume& mask, const MorphOptions& opt) {
    Volume out = mask;
    out.kind = VolumeKind::mask;

    if (opt.fill_holes) {
        // Background reachable from the boundary stays; enclosed cavities flip.
        Volume inv = out;
        for (double& x : inv.data) x = x == 0.0 ? 1.0 : 0.0;
        auto [label, counts] = connected_components6(inv);
        std::vector<char> touches(counts.size(), 0);
        const int nx = out.dims[0], ny = out.dims[1], nz = out.dims[2];
        for (int k = 0; k < nz; ++k)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i) {
                    if (i != 0 && i != nx - 1 && j != 0 && j != ny - 1 && k != 0 && k != nz - 1)
                        continue;
                    const int l = label[out.index(i, j, k)];
                    if (l > 0) touches[l] = 1;
                }
        for (std::size_t idx = 0; idx < out.data.size(); ++idx)
            if (label[idx] > 0 && !touches[label[idx]]) out.data[idx] = 1.0;
    }

    auto [label, counts] = connected_components6(out);
    if (counts.size() <= 1) return out;  // empty mask passes through

    std::int64_t largest = 0;
    int largest_label = 0;
    for (std::size_t l = 1; l < counts.size(); ++l)
        if (counts[l] > largest) {
            largest = counts[l];
            largest_label = static_cast<int>(l);
        }
    for (std::size_t idx = 0; idx < out.data.size(); ++idx) {
        const int l = label[idx];
        if (l == 0) continue;
        const bool drop = opt.largest_only ? (l != largest_label)
                                           : (counts[l] < opt.min_component);
        if (drop) out.data[idx] = 0.0;
    }
    return out;
}

}  // namespace meshfit
