#include "meshfit/io.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace meshfit;
using namespace meshfit::testing;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("meshfit_test_" + std::to_string(Rng(std::random_device{}())()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("volume round trip is bit exact") {
    TempDir dir;
    Volume v = Volume::zeros({6, 5, 4}, VolumeKind::sdf, {0.7, 1.1, 2.3}, {-3.0, 0.25, 9.5});
    Rng rng(1);
    std::normal_distribution<double> dist(0.0, 10.0);
    for (double& x : v.data) x = dist(rng);

    write_volume(v, dir.file("vol.vol"));
    const Volume r = read_volume(dir.file("vol.vol"));
    CHECK(r.dims == v.dims);
    CHECK(r.spacing == v.spacing);
    CHECK(r.origin == v.origin);
    CHECK(r.kind == v.kind);
    CHECK(r.data == v.data);
}

TEST_CASE("mesh round trip is bit exact, with and without a frame") {
    TempDir dir;
    const TriMesh m = bumpy_sphere(1, 0.31, 77);
    NormMap frame;
    frame.scale = Vec3(31.5, 31.5, 31.5);
    frame.offset = Vec3(1.0, -2.0, 0.125);

    write_mesh(m, dir.file("a.mesh"), &frame);
    const MeshFile r = read_mesh(dir.file("a.mesh"));
    CHECK(r.mesh.vertices() == m.vertices());
    CHECK(r.mesh.faces() == m.faces());
    CHECK(r.mesh.units() == m.units());
    REQUIRE(r.frame.has_value());
    CHECK(r.frame->scale == frame.scale);
    CHECK(r.frame->offset == frame.offset);

    write_mesh(m, dir.file("b.mesh"));
    CHECK(!read_mesh(dir.file("b.mesh")).frame.has_value());
}

TEST_CASE("malformed mesh files report the line") {
    TempDir dir;
    {
        std::ofstream os(dir.file("bad.mesh"));
        os << "meshfit-mesh 1\nunits mm\nvertices 2\n0 0 0\nnot a number\n";
    }
    try {
        read_mesh(dir.file("bad.mesh"));
        FAIL("expected throw");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find(":5:") != std::string::npos);
    }
}

TEST_CASE("template loading enforces the contract") {
    TempDir dir;
    write_mesh(icosphere(1), dir.file("ok.mesh"));
    const TriMesh t = load_template(dir.file("ok.mesh"));
    CHECK(euler_characteristic(t) == 2);

    write_mesh(torus_mesh(), dir.file("torus.mesh"));
    CHECK_THROWS_WITH_AS(load_template(dir.file("torus.mesh")),
                         "template must be spherical topology (g = 0)", std::runtime_error);

    TriMesh big = icosphere(1);
    std::vector<Vec3> v = big.vertices();
    v[0] = Vec3(1.5, 0, 0);
    write_mesh(big.with_vertices(std::move(v), Units::normalized), dir.file("big.mesh"));
    CHECK_THROWS(load_template(dir.file("big.mesh")));
}

TEST_CASE("stl export and material sidecar") {
    TempDir dir;
    const TriMesh m = icosphere(1);
    write_stl(m, dir.file("m.stl"));
    write_material_sidecar(dir.file("m.stl"));

    const std::string stl = slurp(dir.file("m.stl"));
    CHECK(stl.size() == 84 + 50 * static_cast<std::size_t>(m.face_count()));

    const std::string side = slurp(dir.file("m.stl") + ".materials.txt");
    CHECK(side.find("density_kg_m3 urine 1050") != std::string::npos);
    CHECK(side.find("viscosity_kg_ms urine 0.002") != std::string::npos);
    CHECK(side.find("initial_velocity_m_s 0.0001") != std::string::npos);
    CHECK(side.find("specific_heat_J_kgK tissue 3800") != std::string::npos);
}

TEST_CASE("config serializes to a fixed point and rejects unknown keys") {
    RunConfig cfg;
    cfg.seed = 123;
    cfg.weights.alpha = {1.0, 0.2, 0.3, 0.4, 0.5, 0.6};
    cfg.fit = FitSchedule::three_stage();
    const std::string once = cfg.to_json();
    const RunConfig back = RunConfig::from_json(once);
    CHECK(back.to_json() == once);
    CHECK(back.seed == 123);
    CHECK(back.weights.alpha[1] == 0.2);
    CHECK(back.fit.stages.size() == 3);
    CHECK(back.fit.stages[0].weights.alpha[1] == 0.2);  // propagated to stages

    CHECK_THROWS(RunConfig::from_json("{\"sead\": 1}"));
    CHECK_THROWS(RunConfig::from_json("{\"synth\": {\"blobs\": 2}}"));
}

TEST_CASE("parameter archive round trip") {
    TempDir dir;
    ModelConfig mc;
    mc.input_dim = 16;
    mc.channels = {2, 4, 8};
    mc.gcn_dim = 8;
    mc.seed = 3;
    DeformNet a(mc);
    write_params(a.params(), dir.file("p.txt"));

    DeformNet b(mc);
    // Perturb, then restore from the archive.
    for (auto& p : b.params().all())
        for (double& w : const_cast<Param*>(p.get())->w) w += 1.0;
    read_params(b.params(), dir.file("p.txt"));
    for (std::size_t i = 0; i < a.params().all().size(); ++i)
        CHECK(a.params().all()[i]->w == b.params().all()[i]->w);
}

TEST_CASE("sha256 digests") {
    CHECK(sha256_bytes("abc", 3) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

#ifdef MESHFIT_CLI
TEST_CASE("cli pipeline smoke: synth, extract, fit, eval") {
    TempDir dir;
    const std::string cli = MESHFIT_CLI;
    auto run = [&](const std::string& args) {
        const std::string cmd = cli + " " + args + " > " + dir.file("stdout.txt") + " 2>&1";
        return std::system(cmd.c_str());
    };

    // Short fit schedule via config.
    RunConfig cfg;
    cfg.synth.dims = {32, 32, 32};
    cfg.synth.seed = 7;
    cfg.iso.min_component_voxels = 10;
    cfg.fit = FitSchedule::three_stage();
    for (auto& st : cfg.fit.stages) st.iterations = 60;
    write_config(cfg, dir.file("cfg.json"));
    const std::string base = " --config " + dir.file("cfg.json");

    CHECK(run("synth --seed 7 --dims 32 --out " + dir.file("case") + base) == 0);
    CHECK(run("extract --mask " + dir.file("case_mask.vol") + " --out " + dir.file("gold.mesh") +
              base) == 0);
    CHECK(run("fit --target " + dir.file("gold.mesh") + " --out " + dir.file("fit.mesh") +
              " --trace " + dir.file("trace.tsv") + base) == 0);
    CHECK(run("eval --pred " + dir.file("fit.mesh") + " --ref-mesh " + dir.file("gold.mesh") +
              " --ref-mask " + dir.file("case_mask.vol") + " --out " + dir.file("rows.tsv") +
              base) == 0);

    const std::string rows = slurp(dir.file("rows.tsv"));
    bool dice_found = false;
    std::istringstream is(rows);
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string case_id, metric, mode;
        double value;
        ls >> case_id >> metric >> mode >> value;
        if (metric == "dice") {
            dice_found = true;
            CHECK(value >= 0.0);
            CHECK(value <= 1.0);
        }
    }
    CHECK(dice_found);

    // validate reports defects without failing.
    CHECK(run("validate --mesh " + dir.file("fit.mesh") + " --out " + dir.file("validity.txt") +
              base) == 0);
    const std::string validity = slurp(dir.file("validity.txt"));
    CHECK(validity.find("euler_characteristic 2") != std::string::npos);

    // export with the readiness gate.
    CHECK(run("export --mesh " + dir.file("fit.mesh") + " --out " + dir.file("out.stl") +
              " --cfd" + base) == 0);
    CHECK(fs::exists(dir.file("out.stl")));
    CHECK(fs::exists(dir.file("out.stl") + ".materials.txt"));

    // unknown flag: usage error, exit 1.
    CHECK(run("fit --bogus 1") != 0);
}

TEST_CASE("cli validate reports defects with a zero exit code") {
    TempDir dir;
    const std::string cli = MESHFIT_CLI;
    // Pierced sphere: self-intersections, still a valid run (reporting is
    // not failure).
    TriMesh base = icosphere(1);
    std::vector<Vec3> v = base.vertices();
    v[3] = -1.8 * v[3];
    write_mesh(base.with_vertices(std::move(v), Units::mm), dir.file("bad.mesh"));
    const std::string cmd = cli + " validate --mesh " + dir.file("bad.mesh") + " --out " +
                            dir.file("report.txt") + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(rc) == 0);
    const std::string report = slurp(dir.file("report.txt"));
    CHECK(report.find("self_intersection_count 0") == std::string::npos);
    CHECK(report.find("self_intersection_count") != std::string::npos);
}

TEST_CASE("cli export --cfd refuses an unsound mesh") {
    TempDir dir;
    const std::string cli = MESHFIT_CLI;
    // Single open triangle: fails watertightness.
    write_mesh(TriMesh::build({{0, 0, 0}, {4, 0, 0}, {0, 4, 0}}, {{0, 1, 2}}, Units::mm),
               dir.file("open.mesh"));
    const std::string cmd = cli + " export --mesh " + dir.file("open.mesh") + " --out " +
                            dir.file("x.stl") + " --cfd > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(rc) == 2);
}
#endif
