#include "meshfit/fit.hpp"

#include "meshfit/isosurface.hpp"
#include "meshfit/rasterize.hpp"
#include "meshfit/metrics.hpp"
#include "meshfit/validity.hpp"

#include "test_support.hpp"

#include <doctest.h>

using namespace meshfit;
using namespace meshfit::testing;

namespace {

TriMesh scaled_icosphere(int level, double r) {
    TriMesh ico = icosphere(level);
    std::vector<Vec3> v = ico.vertices();
    for (Vec3& p : v) p *= r;
    return ico.with_vertices(std::move(v), Units::normalized);
}

}  // namespace

TEST_CASE("stage_step basics") {
    const TriMesh ico = scaled_icosphere(0, 0.5);
    StepState state = StepState::zeros(ico.vertex_count());

    SUBCASE("zero gradient leaves the mesh unchanged") {
        const std::vector<Vec3> zero(ico.vertex_count(), Vec3::Zero());
        const auto out = stage_step(ico.vertices(), zero, state, 1e-2);
        for (int i = 0; i < ico.vertex_count(); ++i)
            CHECK((out[i] - ico.vertices()[i]).norm() == 0.0);
    }

    SUBCASE("constant gradient moves every vertex by the same vector, against g") {
        const Vec3 g(0.3, -0.2, 0.5);
        const std::vector<Vec3> grad(ico.vertex_count(), g);
        const auto out = stage_step(ico.vertices(), grad, state, 1e-2);
        const Vec3 delta = out[0] - ico.vertices()[0];
        for (int i = 0; i < ico.vertex_count(); ++i)
            CHECK((out[i] - ico.vertices()[i] - delta).norm() < 1e-15);
        CHECK(delta.dot(g) < 0.0);
    }

    SUBCASE("deterministic trajectories") {
        Rng rng(3);
        std::uniform_real_distribution<double> uni(-1, 1);
        std::vector<Vec3> grad(ico.vertex_count());
        for (auto& x : grad) x = Vec3(uni(rng), uni(rng), uni(rng));
        StepState s1 = StepState::zeros(ico.vertex_count());
        StepState s2 = StepState::zeros(ico.vertex_count());
        auto p1 = ico.vertices();
        auto p2 = ico.vertices();
        for (int it = 0; it < 5; ++it) {
            p1 = stage_step(p1, grad, s1, 1e-2);
            p2 = stage_step(p2, grad, s2, 1e-2);
        }
        for (std::size_t i = 0; i < p1.size(); ++i) CHECK((p1[i] - p2[i]).norm() == 0.0);
    }
}

TEST_CASE("fit with an already-aligned target is a fixed point") {
    const TriMesh tmpl = scaled_icosphere(2, 0.5);
    FitSchedule sched;
    FitStage st;
    st.iterations = 20;
    st.weights.alpha = {1, 0, 0, 0, 0, 0};  // geometry term only
    sched.stages.push_back(st);

    const FitResult r = fit_template(tmpl, tmpl, sched);
    CHECK(r.traces[0].iterations <= 5);
    double disp = 0.0;
    for (int i = 0; i < tmpl.vertex_count(); ++i)
        disp += (r.final_mesh.vertices()[i] - tmpl.vertices()[i]).norm();
    CHECK(disp < 1e-6);
}

TEST_CASE("fit recovers a uniform scaling") {
    const TriMesh tmpl = scaled_icosphere(2, 0.5);
    const TriMesh target = scaled_icosphere(2, 0.65);  // template scaled by 1.3

    FitSchedule sched;
    FitStage st;
    st.iterations = 300;
    st.step_size = 2e-2;
    st.weights.alpha = {1, 0, 0, 0, 0, 0};
    sched.stages.push_back(st);

    const double initial = chamfer(tmpl.vertices(), target.vertices()).value;
    const FitResult r = fit_template(target, tmpl, sched);
    const double final_chamfer =
        chamfer(r.final_mesh.vertices(), target.vertices()).value;
    CHECK(final_chamfer < 0.01 * initial);
}

TEST_CASE("accepted energy is non-increasing within stage segments") {
    SynthParams p;
    p.seed = 91;
    p.n_blobs = 2;
    p.dims = {32, 32, 32};
    auto [sdf, mask] = synth_shape(p);
    IsoConfig iso;
    iso.min_component_voxels = 10;
    const PseudoGold pg = pseudo_gold(mask, iso);

    FitSchedule sched = FitSchedule::three_stage();
    for (auto& st : sched.stages) st.iterations = 30;
    const FitResult r = fit_template(pg.mesh, scaled_icosphere(2, 0.45), sched);

    for (const StageTrace& tr : r.traces) {
        for (int i = 1; i < tr.iterations; ++i) {
            if (i == tr.vf_at_iteration + 1 && tr.vf_at_iteration >= 0) continue;
            CHECK(tr.total[i] <= tr.total[i - 1] + 1e-12);
        }
    }
    CHECK(is_watertight(r.final_mesh));
    CHECK(euler_characteristic(r.final_mesh) == 2);
}

TEST_CASE("three-stage fit reaches the synthetic quality bar") {
    SynthParams p;
    p.seed = 92;
    p.n_blobs = 2;
    p.dims = {64, 64, 64};
    auto [sdf, mask] = synth_shape(p);
    const PseudoGold pg = pseudo_gold(mask);

    const FitSchedule sched = FitSchedule::three_stage();
    const TriMesh tmpl = scaled_icosphere(2, 0.45);
    const double initial = chamfer(tmpl.vertices(), pg.mesh.vertices()).value;
    const FitResult r = fit_template(pg.mesh, tmpl, sched);
    const double final_chamfer =
        chamfer(r.final_mesh.vertices(), pg.mesh.vertices()).value;
    CHECK(final_chamfer <= 0.10 * initial);

    std::vector<Vec3> mm = r.final_mesh.vertices();
    for (Vec3& q : mm) q = pg.frame.to_mm(q);
    const TriMesh mesh_mm = r.final_mesh.with_vertices(std::move(mm), Units::mm);
    const Volume rast = rasterize(mesh_mm, mask.dims, mask.spacing, mask.origin);
    CHECK(dice_jaccard(rast, mask).dice >= 0.85);
    CHECK(find_self_intersections(r.final_mesh).empty());
    CHECK(euler_characteristic(r.final_mesh) == 2);
}

TEST_CASE("fit is deterministic byte for byte") {
    SynthParams p;
    p.seed = 93;
    p.n_blobs = 1;
    p.dims = {32, 32, 32};
    auto [sdf, mask] = synth_shape(p);
    IsoConfig iso;
    iso.min_component_voxels = 10;
    const PseudoGold pg = pseudo_gold(mask, iso);

    FitSchedule sched = FitSchedule::three_stage();
    for (auto& st : sched.stages) st.iterations = 15;
    const FitResult a = fit_template(pg.mesh, scaled_icosphere(2, 0.45), sched);
    const FitResult b = fit_template(pg.mesh, scaled_icosphere(2, 0.45), sched);
    CHECK(a.trace_text() == b.trace_text());
    REQUIRE(a.final_mesh.vertex_count() == b.final_mesh.vertex_count());
    for (int i = 0; i < a.final_mesh.vertex_count(); ++i)
        CHECK(a.final_mesh.vertices()[i] == b.final_mesh.vertices()[i]);
}

TEST_CASE("fit rejects bad templates and NaN targets") {
    const TriMesh target = scaled_icosphere(1, 0.5);
    CHECK_THROWS(fit_template(target, torus_mesh(), FitSchedule::three_stage()));

    // A NaN in the target poisons the first chamfer evaluation.
    std::vector<Vec3> v = target.vertices();
    v[0].x() = std::numeric_limits<double>::quiet_NaN();
    const TriMesh bad = target.with_vertices(std::move(v));
    FitSchedule sched;
    sched.stages.push_back(FitStage{});
    CHECK_THROWS_WITH_AS(fit_template(bad, scaled_icosphere(1, 0.5), sched),
                         "fit: NaN in energy term 'chamfer'", std::runtime_error);
}

TEST_CASE("unpool energy jump settles below the pre-unpool minimum") {
    SynthParams p;
    p.seed = 94;
    p.n_blobs = 2;
    p.dims = {48, 48, 48};
    auto [sdf, mask] = synth_shape(p);
    IsoConfig iso;
    iso.min_component_voxels = 20;
    const PseudoGold pg = pseudo_gold(mask, iso);

    FitSchedule sched = FitSchedule::three_stage();
    const FitResult r = fit_template(pg.mesh, scaled_icosphere(2, 0.45), sched);
    for (std::size_t s = 1; s < r.traces.size(); ++s) {
        const double prev_min = r.traces[s - 1].total.back();
        double stage_min = 1e300;
        for (double v : r.traces[s].total) stage_min = std::min(stage_min, v);
        CHECK(stage_min < prev_min);
    }
}
