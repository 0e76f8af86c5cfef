#pragma once

#include "meshfit/kdtree.hpp"
#include "meshfit/trimesh.hpp"
#include "meshfit/volume.hpp"

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace meshfit {

/// Term order: chamfer, laplacian, normal, edge, area, seal.
struct RecWeights {
    std::array<double, 6> alpha{1.0, 0.1, 0.1, 0.1, 1.0, 0.1};
    double lambda_seal = 0.1;
};

struct ExtWeights {
    std::array<double, 3> gamma{0.2, 0.3, 0.5};  // coarse -> fine
    std::array<double, 2> rho{0.5, 0.5};         // dice, cross-entropy
};

struct TermGrad {
    double value = 0.0;
    std::vector<Vec3> grad;
};

struct ChamferMatch {
    std::vector<int> p_to_q;
    std::vector<int> q_to_p;
};

/// Bidirectional squared-distance chamfer between point sets; gradient with
/// respect to P covers both directions. Ties choose the lowest index.
TermGrad chamfer(std::span<const Vec3> p_pts, std::span<const Vec3> q_pts,
                 ChamferMatch* match = nullptr);
/// Same, with a prebuilt tree over q_pts (identical result).
TermGrad chamfer(std::span<const Vec3> p_pts, std::span<const Vec3> q_pts,
                 const PointKdTree& q_tree, ChamferMatch* match = nullptr);
/// Value under a frozen correspondence (finite-difference oracle support).
double chamfer_fixed(std::span<const Vec3> p_pts, std::span<const Vec3> q_pts,
                     const ChamferMatch& match);

TermGrad laplacian_loss(const TriMesh& m);
TermGrad edge_loss(const TriMesh& m);
TermGrad area_loss(const TriMesh& m);

enum class NormalLossForm {
    cross_product,   // squared dot of the raw face cross product with n_q
    edge_tangency,   // squared dot of neighbor edges with n_q
};

/// Per vertex p with frozen nearest reference vertex q: accumulates the form
/// above over faces (or edges) incident to p; q positions/normals constant.
TermGrad normal_loss(const TriMesh& m, std::span<const Vec3> q_normals,
                     std::span<const int> nearest_q,
                     NormalLossForm form = NormalLossForm::cross_product);

/// eps_area defaults to 1e-3 * (mean edge length)^2 of m; it is treated as a
/// constant during differentiation, so pass it explicitly when running
/// finite-difference checks.
double seal_eps_area(const TriMesh& m);
TermGrad seal_loss(const TriMesh& m, double lambda,
                   std::optional<double> eps_area = std::nullopt);
/// The two addends of the seal loss separately (closure term, normal term).
std::pair<double, double> seal_loss_parts(const TriMesh& m, double lambda,
                                          std::optional<double> eps_area = std::nullopt);

struct EnergyReport {
    std::array<double, 6> term{};                 // per-term values
    std::array<std::vector<Vec3>, 6> term_grad;   // per-term gradients
    double total = 0.0;
    std::vector<Vec3> total_grad;
};

/// Reference-side state reused across iterations: point set, per-point
/// normals and the nearest-neighbor tree. The default uses the mesh
/// vertices; samples_per_face > 0 adds deterministic per-face interior
/// samples (with the face normal) for a denser target.
struct TargetContext {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
    PointKdTree tree;
    explicit TargetContext(const TriMesh& q, int samples_per_face = 0,
                           std::uint64_t sample_seed = 20240901);
};

EnergyReport rec_energy(const TriMesh& p, const TargetContext& q, const RecWeights& w,
                        NormalLossForm form = NormalLossForm::cross_product);
std::vector<EnergyReport> rec_energy(std::span<const TriMesh> stages, const TriMesh& q,
                                     const RecWeights& w,
                                     NormalLossForm form = NormalLossForm::cross_product);

struct VolTerm {
    double value = 0.0;
    std::vector<double> grad;
};

VolTerm dice_loss(const Volume& pred, const Volume& gold);
VolTerm ce_loss(const Volume& pred, const Volume& gold);

Volume resample_nearest(const Volume& v, std::array<int, 3> dims);

struct ExtResult {
    double value = 0.0;
    std::vector<std::vector<double>> grads;  // per scale, matching preds
};

/// Deep-supervision loss over (up to) three scales; gold is resampled to
/// each prediction's grid by nearest neighbor.
ExtResult ext_loss(std::span<const Volume> preds, const Volume& gold, const ExtWeights& w);

}  // namespace meshfit
