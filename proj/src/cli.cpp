#include "meshfit/io.hpp"
#include "meshfit/rasterize.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>

namespace meshfit {

namespace {

namespace fs = std::filesystem;

TriMesh to_mm(const MeshFile& mf) {
    if (mf.mesh.units() == Units::mm) return mf.mesh;
    if (!mf.frame)
        throw std::runtime_error("mesh is in normalized units but carries no frame");
    std::vector<Vec3> v = mf.mesh.vertices();
    for (Vec3& p : v) p = mf.frame->to_mm(p);
    return mf.mesh.with_vertices(std::move(v), Units::mm);
}

TriMesh load_template_arg(const std::string& arg, double radius) {
    if (arg.rfind("ico:", 0) == 0) {
        const int level = std::stoi(arg.substr(4));
        TriMesh ico = icosphere(level);
        std::vector<Vec3> v = ico.vertices();
        for (Vec3& p : v) p *= radius;
        return ico.with_vertices(std::move(v), Units::normalized);
    }
    return load_template(arg);
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

int run_synth(const RunConfig& cfg, const std::string& out_prefix, RunManifest& manifest) {
    Timer t;
    auto [sdf, mask] = synth_shape(cfg.synth);
    const Volume img = render_intensity(sdf, cfg.synth);
    write_volume(sdf, out_prefix + "_sdf.vol");
    write_volume(mask, out_prefix + "_mask.vol");
    write_volume(img, out_prefix + "_img.vol");
    manifest.wall_times.emplace_back("synth", t.seconds());
    for (const char* suffix : {"_sdf.vol", "_mask.vol", "_img.vol"}) {
        manifest.add_output(out_prefix + suffix);
        manifest.add_output(out_prefix + suffix + std::string(".raw"));
    }
    return 0;
}

int run_extract(const RunConfig& cfg, const std::string& mask_path, const std::string& out,
                RunManifest& manifest) {
    Timer t;
    manifest.add_input(mask_path);
    const Volume mask = read_volume(mask_path);
    const PseudoGold pg = pseudo_gold(mask, cfg.iso);
    write_mesh(pg.mesh, out, &pg.frame);
    manifest.wall_times.emplace_back("extract", t.seconds());
    manifest.add_output(out);
    std::cout << "components_removed " << pg.components_removed << "\n";
    return 0;
}

int run_fit(const RunConfig& cfg, const std::string& target_path,
            const std::string& template_arg, const std::string& out,
            const std::string& trace_path, RunManifest& manifest) {
    Timer t;
    manifest.add_input(target_path);
    const MeshFile target = read_mesh(target_path);
    const TriMesh tmpl = load_template_arg(template_arg, 0.45);
    const FitResult result = fit_template(target.mesh, tmpl, cfg.fit);
    const NormMap* frame = target.frame ? &*target.frame : nullptr;
    write_mesh(result.final_mesh, out, frame);
    manifest.add_output(out);
    if (!trace_path.empty()) {
        std::ofstream os(trace_path);
        os << result.trace_text();
        os.close();
        manifest.add_output(trace_path);
    }
    manifest.wall_times.emplace_back("fit", t.seconds());
    return 0;
}

int run_train(const RunConfig& cfg, const std::string& out_params,
              const std::string& report_path, RunManifest& manifest) {
    Timer t;
    ModelConfig mc = cfg.model;
    DeformNet net(mc);
    const std::vector<TrainSample> train =
        make_synthetic_dataset(cfg.train_count, mc.input_dim, cfg.seed);
    const std::vector<TrainSample> test =
        make_synthetic_dataset(cfg.test_count, mc.input_dim, cfg.seed + 777);
    TrainConfig tc;
    tc.model = mc;
    tc.epochs = cfg.train_epochs;
    tc.lr = cfg.train_lr;
    tc.early_stop_dice = cfg.train_early_stop_dice;
    tc.rec = cfg.weights;
    tc.ext = cfg.ext_weights;
    tc.normal_form = cfg.normal_form;
    tc.seed = cfg.seed;
    const TrainReport report = train_toy(net, train, test, tc);
    write_params(net.params(), out_params);
    manifest.add_output(out_params);
    manifest.add_output(out_params + ".blob");

    std::ostringstream os;
    os.precision(17);
    os << "epochs_run " << report.epochs_run << "\n";
    os << "final_dice " << report.final_dice << "\n";
    os << "reached_target " << (report.reached_target ? 1 : 0) << "\n";
    os << "diverged " << (report.diverged ? 1 : 0) << "\n";
    os << "epoch\tloss\n";
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e)
        os << e + 1 << '\t' << report.epoch_loss[e] << '\n';
    os << "epoch\tdice\n";
    for (const auto& [e, d] : report.dice_trace) os << e << '\t' << d << '\n';
    if (!report_path.empty()) {
        std::ofstream rf(report_path);
        rf << os.str();
        rf.close();
        manifest.add_output(report_path);
    } else {
        std::cout << os.str();
    }
    manifest.wall_times.emplace_back("train", t.seconds());
    if (report.diverged) {
        std::cerr << "train: diverged (restored last good checkpoint)\n";
        return 2;
    }
    return 0;
}

int run_eval(const RunConfig& cfg, const std::string& pred_path, const std::string& ref_mesh,
             const std::string& ref_mask, const std::string& out_rows, RunManifest& manifest) {
    Timer t;
    manifest.add_input(pred_path);
    const MeshFile pred_file = read_mesh(pred_path);
    const TriMesh pred = to_mm(pred_file);
    const std::string case_id = fs::path(pred_path).stem().string();

    std::ostringstream rows;
    rows.precision(17);
    auto emit = [&](const std::string& metric, const std::string& mode, double value) {
        rows << case_id << '\t' << metric << '\t' << mode << '\t' << value << '\n';
    };

    if (!ref_mesh.empty()) {
        manifest.add_input(ref_mesh);
        const TriMesh ref = to_mm(read_mesh(ref_mesh));
        const SurfaceDistance sd = surface_distance_mesh(pred, ref, cfg.metric_sampling);
        emit("assd", "mesh", sd.assd);
        emit("assd_forward", "mesh", sd.forward_mean);
        emit("assd_backward", "mesh", sd.backward_mean);
        emit("hd", "mesh", sd.hausdorff);
        NearestQuery q(ref);
        emit("p2sd", "mesh", p2sd(pred, q));
    }
    if (!ref_mask.empty()) {
        manifest.add_input(ref_mask);
        const Volume mask = read_volume(ref_mask);
        const SurfaceDistance sd = surface_distance_outer(pred, mask, cfg.metric_sampling);
        emit("assd", "outer", sd.assd);
        emit("assd_forward", "outer", sd.forward_mean);
        emit("assd_backward", "outer", sd.backward_mean);
        emit("hd", "outer", sd.hausdorff);
        const Volume rast = rasterize(pred, mask.dims, mask.spacing, mask.origin);
        const Overlap o = dice_jaccard(rast, mask);
        emit("dice", "voxel", o.dice);
        emit("jaccard", "voxel", o.jaccard);
    }
    if (!out_rows.empty()) {
        std::ofstream os(out_rows);
        os << rows.str();
        os.close();
        manifest.add_output(out_rows);
    } else {
        std::cout << rows.str();
    }
    manifest.wall_times.emplace_back("eval", t.seconds());
    return 0;
}

int run_validate(const RunConfig& cfg, const std::string& mesh_path, const std::string& ref_path,
                 const std::string& out, RunManifest& manifest) {
    Timer t;
    manifest.add_input(mesh_path);
    const MeshFile mf = read_mesh(mesh_path);
    const TriMesh mesh = to_mm(mf);

    ValidityReport report;
    if (!ref_path.empty()) {
        manifest.add_input(ref_path);
        const TriMesh ref = to_mm(read_mesh(ref_path));
        NearestQuery q(ref);
        report = audit(mesh, &q, nullptr, cfg.validity);
    } else {
        report = audit(mesh, nullptr, nullptr, cfg.validity);
    }
    if (!out.empty()) {
        std::ofstream os(out);
        os << report.to_text();
        os.close();
        manifest.add_output(out);
    } else {
        std::cout << report.to_text();
    }
    manifest.wall_times.emplace_back("validate", t.seconds());
    return 0;
}

int run_export(const RunConfig& cfg, const std::string& mesh_path, const std::string& out,
               bool cfd, RunManifest& manifest) {
    Timer t;
    manifest.add_input(mesh_path);
    const MeshFile mf = read_mesh(mesh_path);
    const TriMesh mesh = to_mm(mf);
    if (cfd) {
        const ValidityReport report = audit(mesh, nullptr, nullptr, cfg.validity);
        if (!report.watertight || !report.manifold || !report.self_intersections.empty() ||
            !report.orientation_consistent) {
            std::cerr << "export --cfd refused: mesh fails the readiness audit\n"
                      << report.to_text();
            return 2;
        }
    }
    write_stl(mesh, out);
    write_material_sidecar(out);
    manifest.add_output(out);
    manifest.add_output(out + ".materials.txt");
    manifest.wall_times.emplace_back("export", t.seconds());
    return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"template-to-volume mesh reconstruction toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // accept --config/--manifest after the subcommand

    std::string config_path, manifest_path;
    app.add_option("--config", config_path, "run configuration (json)");
    app.add_option("--manifest", manifest_path, "write a run manifest here");

    auto* synth = app.add_subcommand("synth", "generate a synthetic target volume");
    std::string out_prefix = "case";
    std::uint64_t synth_seed = 0;
    int synth_dims = 0, synth_blobs = 0;
    bool have_seed = false;
    synth->add_option("--out", out_prefix, "output path prefix");
    synth->add_option("--seed", synth_seed, "generator seed")->each([&](std::string) {
        have_seed = true;
    });
    synth->add_option("--dims", synth_dims, "cubic grid size");
    synth->add_option("--blobs", synth_blobs, "number of blobs");

    auto* extract = app.add_subcommand("extract", "pseudo-gold mesh from a mask volume");
    std::string mask_path, extract_out = "gold.mesh";
    extract->add_option("--mask", mask_path, "mask volume")->required();
    extract->add_option("--out", extract_out, "output mesh");

    auto* fit = app.add_subcommand("fit", "deform a template onto a target mesh");
    std::string target_path, fit_out = "fit.mesh", template_arg = "ico:2", trace_path;
    fit->add_option("--target", target_path, "target mesh (pseudo-gold)")->required();
    fit->add_option("--out", fit_out, "output mesh");
    fit->add_option("--template", template_arg, "template: ico:<level> or a mesh file");
    fit->add_option("--trace", trace_path, "write the energy trace here");

    auto* train = app.add_subcommand("train", "toy end-to-end training on synthetic data");
    std::string params_out = "params.txt", report_out;
    train->add_option("--out", params_out, "parameter archive path");
    train->add_option("--report", report_out, "training report path");

    auto* eval = app.add_subcommand("eval", "surface/overlap metrics for a predicted mesh");
    std::string pred_path, ref_mesh_path, ref_mask_path, rows_out;
    eval->add_option("--pred", pred_path, "predicted mesh")->required();
    eval->add_option("--ref-mesh", ref_mesh_path, "reference mesh");
    eval->add_option("--ref-mask", ref_mask_path, "reference mask volume");
    eval->add_option("--out", rows_out, "write metric rows here");

    auto* validate = app.add_subcommand("validate", "surface validity audit");
    std::string vmesh_path, vref_path, vout;
    validate->add_option("--mesh", vmesh_path, "mesh to audit")->required();
    validate->add_option("--ref", vref_path, "reference mesh for deviations");
    validate->add_option("--out", vout, "write the report here");

    auto* export_cmd = app.add_subcommand("export", "triangle-soup export with material sidecar");
    std::string emesh_path, eout = "mesh.stl";
    bool cfd = false;
    export_cmd->add_option("--mesh", emesh_path, "mesh to export")->required();
    export_cmd->add_option("--out", eout, "output stl path");
    export_cmd->add_flag("--cfd", cfd, "refuse meshes that fail the readiness audit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 1;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = read_config(config_path);
        if (cfg.fit.stages.empty()) {
            cfg.fit = FitSchedule::three_stage();
            for (FitStage& st : cfg.fit.stages) {
                st.weights = cfg.weights;
                st.vf = cfg.vf;
            }
            cfg.fit.normal_form = cfg.normal_form;
        }
        RunManifest manifest;
        manifest.config_json = cfg.to_json();
        if (!config_path.empty()) manifest.add_input(config_path);

        int rc = 0;
        if (synth->parsed()) {
            if (have_seed) cfg.synth.seed = synth_seed;
            if (synth_dims > 0) cfg.synth.dims = {synth_dims, synth_dims, synth_dims};
            if (synth_blobs > 0) cfg.synth.n_blobs = synth_blobs;
            rc = run_synth(cfg, out_prefix, manifest);
        } else if (extract->parsed()) {
            rc = run_extract(cfg, mask_path, extract_out, manifest);
        } else if (fit->parsed()) {
            rc = run_fit(cfg, target_path, template_arg, fit_out, trace_path, manifest);
        } else if (train->parsed()) {
            rc = run_train(cfg, params_out, report_out, manifest);
        } else if (eval->parsed()) {
            if (ref_mesh_path.empty() && ref_mask_path.empty())
                throw std::runtime_error("eval: need --ref-mesh and/or --ref-mask");
            rc = run_eval(cfg, pred_path, ref_mesh_path, ref_mask_path, rows_out, manifest);
        } else if (validate->parsed()) {
            rc = run_validate(cfg, vmesh_path, vref_path, vout, manifest);
        } else if (export_cmd->parsed()) {
            rc = run_export(cfg, emesh_path, eout, cfd, manifest);
        }
        if (!manifest_path.empty()) write_manifest(manifest, manifest_path);
        return rc;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace meshfit
