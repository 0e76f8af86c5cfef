#pragma once

#include "meshfit/energy.hpp"
#include "meshfit/trimesh.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace meshfit {

struct FitStage {
    int iterations = 100;
    double step_size = 1e-2;
    RecWeights weights;
    bool unpool_after = false;  // subdivide when this stage ends
    VFThresholds vf;
};

struct FitSchedule {
    std::vector<FitStage> stages;
    std::uint64_t rng_seed = 0;
    double convergence_tol = 1e-7;  // relative energy decrease
    bool apply_vf = true;           // prune midpoints after 25% of a post-unpool stage
    int target_samples_per_face = 0;  // densify the chamfer target surface
    NormalLossForm normal_form = NormalLossForm::cross_product;

    /// 162-vertex start, two unpools: the reference configuration.
    static FitSchedule three_stage();
};

struct StageTrace {
    std::vector<std::array<double, 6>> term_values;  // per accepted iteration
    std::vector<double> total;
    int iterations = 0;
    int vf_pruned = 0;
    int vf_at_iteration = -1;
};

struct FitResult {
    std::vector<TriMesh> stage_meshes;
    std::vector<StageTrace> traces;
    TriMesh final_mesh;
    double wall_seconds = 0.0;  // informational; not part of the trace text

    /// Delimited text (stage, iteration, per-term, total) for plotting;
    /// identical runs produce identical bytes.
    std::string trace_text() const;
};

/// Per-vertex first-order state: momentum plus element-wise second-moment
/// normalization, bias-corrected.
struct StepState {
    std::vector<Vec3> m, v;
    long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    static StepState zeros(int n_vertices);
    /// Drop rows of pruned vertices, keeping survivor order.
    StepState remap(const std::vector<int>& survivors) const;
};

/// One additive update on vertex positions; deterministic given state.
std::vector<Vec3> stage_step(std::span<const Vec3> positions, std::span<const Vec3> grad,
                             StepState& state, double step_size);

/// Coarse-to-fine deformation of a genus-0 template toward the target mesh q,
/// minimizing the weighted reconstruction energy stage by stage with
/// backtracking on energy increase; unpool and vertex-filter run between and
/// inside stages per the schedule.
FitResult fit_template(const TriMesh& q, const TriMesh& template_mesh,
                       const FitSchedule& sched);

}  // namespace meshfit
