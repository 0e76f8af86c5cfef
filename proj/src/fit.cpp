#include "meshfit/fit.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace meshfit {

FitSchedule FitSchedule::three_stage() {
    FitSchedule s;
    FitStage st;
    st.iterations = 150;
    st.step_size = 2e-2;
    st.unpool_after = true;
    s.stages.push_back(st);
    st.iterations = 200;
    s.stages.push_back(st);
    st.iterations = 300;
    st.step_size = 1e-2;
    st.unpool_after = false;
    s.stages.push_back(st);
    return s;
}

StepState StepState::zeros(int n_vertices) {
    StepState s;
    s.m.assign(n_vertices, Vec3::Zero());
    s.v.assign(n_vertices, Vec3::Zero());
    return s;
}

StepState StepState::remap(const std::vector<int>& survivors) const {
    StepState s;
    s.t = t;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    s.m.reserve(survivors.size());
    s.v.reserve(survivors.size());
    for (int idx : survivors) {
        s.m.push_back(m[idx]);
        s.v.push_back(v[idx]);
    }
    return s;
}

std::vector<Vec3> stage_step(std::span<const Vec3> positions, std::span<const Vec3> grad,
                             StepState& state, double step_size) {
    if (positions.size() != grad.size() || positions.size() != state.m.size())
        throw std::invalid_argument("stage_step: shape mismatch");
    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    std::vector<Vec3> out(positions.begin(), positions.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] =
            state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i].cwiseProduct(grad[i]);
        const Vec3 mhat = state.m[i] / c1;
        const Vec3 vhat = state.v[i] / c2;
        for (int a = 0; a < 3; ++a)
            out[i][a] -= step_size * mhat[a] / (std::sqrt(vhat[a]) + state.eps);
    }
    return out;
}

namespace {

const char* kTermName[6] = {"chamfer", "laplacian", "normal", "edge", "area", "seal"};

void check_finite(const EnergyReport& rep) {
    for (int t = 0; t < 6; ++t)
        if (!std::isfinite(rep.term[t]))
            throw std::runtime_error(std::string("fit: NaN in energy term '") + kTermName[t] +
                                     "'");
    if (!std::isfinite(rep.total)) throw std::runtime_error("fit: NaN in total energy");
}

double grad_inf_norm(const std::vector<Vec3>& g) {
    double m = 0.0;
    for (const Vec3& v : g) m = std::max(m, v.cwiseAbs().maxCoeff());
    return m;
}

void check_topology(const TriMesh& m, int expected_chi) {
    if (!is_watertight(m)) throw std::runtime_error("fit: mesh lost watertightness");
    if (euler_characteristic(m) != expected_chi)
        throw std::runtime_error("fit: Euler characteristic changed");
}

}  // namespace

FitResult fit_template(const TriMesh& q, const TriMesh& template_mesh,
                       const FitSchedule& sched) {
    if (sched.stages.empty()) throw std::invalid_argument("fit: schedule needs >= 1 stage");
    for (const FitStage& st : sched.stages)
        if (!(st.step_size > 0.0)) throw std::invalid_argument("fit: step_size must be > 0");
    if (q.empty()) throw std::invalid_argument("fit: empty target");
    if (!is_watertight(template_mesh) || euler_characteristic(template_mesh) != 2)
        throw std::invalid_argument("fit: template must be watertight genus-0");
    for (const Vec3& v : template_mesh.vertices())
        if (v.cwiseAbs().maxCoeff() > 1.0 + 1e-9)
            throw std::invalid_argument("fit: template must lie in [-1,1]^3");

    const auto t_start = std::chrono::steady_clock::now();
    TargetContext target(q, sched.target_samples_per_face, sched.rng_seed);

    FitResult result;
    TriMesh mesh = template_mesh;
    bool stage_starts_unpooled = false;
    ParentMap pm;

    for (std::size_t si = 0; si < sched.stages.size(); ++si) {
        const FitStage& stage = sched.stages[si];
        StageTrace trace;
        StepState state = StepState::zeros(mesh.vertex_count());
        double lr = stage.step_size;

        std::vector<Vec3> stage_start_pos = mesh.vertices();
        EnergyReport rep = rec_energy(mesh, target, stage.weights, sched.normal_form);
        check_finite(rep);

        const int vf_iteration = (stage_starts_unpooled && sched.apply_vf)
                                     ? std::max(1, stage.iterations / 4)
                                     : -1;
        int streak = 0;
        for (int it = 0; it < stage.iterations; ++it) {
            trace.term_values.push_back(rep.term);
            trace.total.push_back(rep.total);
            ++trace.iterations;

            if (it == vf_iteration) {
                std::vector<Vec3> disp(mesh.vertex_count());
                for (int i = 0; i < mesh.vertex_count(); ++i)
                    disp[i] = mesh.vertices()[i] - stage_start_pos[i];
                const int before = mesh.vertex_count();
                TriMesh filtered = vertex_filter(mesh, disp, pm, stage.vf);
                if (filtered.vertex_count() != before) {
                    // Survivors: base vertices then kept midpoints, in order.
                    std::vector<int> survivors;
                    survivors.reserve(filtered.vertex_count());
                    for (int i = 0; i < pm.base_vertex_count; ++i) survivors.push_back(i);
                    for (int i = pm.base_vertex_count; i < before; ++i) {
                        const double dn = disp[i].norm();
                        const double len = pm.parent_length[i - pm.base_vertex_count];
                        if (dn >= stage.vf.t_lo * len && dn <= stage.vf.t_hi * len)
                            survivors.push_back(i);
                    }
                    trace.vf_pruned = before - filtered.vertex_count();
                    trace.vf_at_iteration = it;
                    mesh = std::move(filtered);
                    state = state.remap(survivors);
                    stage_start_pos = mesh.vertices();
                    rep = rec_energy(mesh, target, stage.weights, sched.normal_form);
                    check_finite(rep);
                }
            }

            if (grad_inf_norm(rep.total_grad) < 1e-12) break;

            bool accepted = false;
            for (int halving = 0; halving < 24; ++halving) {
                StepState trial_state = state;
                std::vector<Vec3> proposal =
                    stage_step(mesh.vertices(), rep.total_grad, trial_state, lr);
                TriMesh trial = mesh.with_vertices(std::move(proposal));
                EnergyReport trial_rep =
                    rec_energy(trial, target, stage.weights, sched.normal_form);
                check_finite(trial_rep);
                if (trial_rep.total <= rep.total) {
                    const double drop =
                        (rep.total - trial_rep.total) / std::max(std::abs(rep.total), 1e-300);
                    mesh = std::move(trial);
                    rep = std::move(trial_rep);
                    state = std::move(trial_state);
                    lr = std::min(lr * 1.05, stage.step_size);
                    accepted = true;
                    streak = drop < sched.convergence_tol ? streak + 1 : 0;
                    break;
                }
                lr *= 0.5;
            }
            if (!accepted || streak >= 3) break;
        }

        check_topology(mesh, 2);
        result.stage_meshes.push_back(mesh);
        result.traces.push_back(std::move(trace));

        stage_starts_unpooled = false;
        if (stage.unpool_after && si + 1 < sched.stages.size()) {
            auto [unpooled, parent_map] = uniform_unpool(mesh);
            mesh = std::move(unpooled);
            pm = std::move(parent_map);
            stage_starts_unpooled = true;
        }
    }

    result.final_mesh = mesh;
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

std::string FitResult::trace_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "stage\titer\tchamfer\tlaplacian\tnormal\tedge\tarea\tseal\ttotal\n";
    for (std::size_t s = 0; s < traces.size(); ++s) {
        for (int i = 0; i < traces[s].iterations; ++i) {
            os << s << '\t' << i;
            for (double v : traces[s].term_values[i]) os << '\t' << v;
            os << '\t' << traces[s].total[i] << '\n';
        }
    }
    return os.str();
}

}  // namespace meshfit
