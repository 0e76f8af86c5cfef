#include "meshfit/io.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace meshfit {

using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "meshfit 1.0.0";

void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << text;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_blob(const std::string& path, const std::vector<double>& data) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
}

std::vector<double> read_blob(const std::string& path, std::size_t count) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::vector<double> data(count);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (static_cast<std::size_t>(is.gcount()) != count * sizeof(double))
        throw std::runtime_error("blob too short: " + path);
    return data;
}

[[noreturn]] void parse_fail(const std::string& path, int line, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

void check_keys(const json& obj, const char* where, std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok)
            throw std::runtime_error(std::string("config: unknown key '") + it.key() + "' in " +
                                     where);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// volume format

void write_volume(const Volume& v, const std::string& path) {
    std::ostringstream os;
    os << "meshfit-volume 1\n";
    os << "dims " << v.dims[0] << ' ' << v.dims[1] << ' ' << v.dims[2] << '\n';
    os.precision(17);
    os << "spacing " << v.spacing[0] << ' ' << v.spacing[1] << ' ' << v.spacing[2] << '\n';
    os << "origin " << v.origin[0] << ' ' << v.origin[1] << ' ' << v.origin[2] << '\n';
    os << "kind "
       << (v.kind == VolumeKind::mask ? "mask" : v.kind == VolumeKind::sdf ? "sdf" : "intensity")
       << '\n';
    os << "scalar float64\n";
    os << "byteorder little\n";
    write_file(path, os.str());
    write_blob(path + ".raw", v.data);
}

Volume read_volume(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::string line, tag;
    int lineno = 1;
    if (!std::getline(is, line) || line != "meshfit-volume 1")
        parse_fail(path, lineno, "bad magic");
    Volume v;
    std::string kind, scalar, order;
    for (const char* expect : {"dims", "spacing", "origin", "kind", "scalar", "byteorder"}) {
        ++lineno;
        if (!std::getline(is, line)) parse_fail(path, lineno, "truncated header");
        std::istringstream ls(line);
        ls >> tag;
        if (tag != expect) parse_fail(path, lineno, "expected '" + std::string(expect) + "'");
        if (tag == std::string("dims")) ls >> v.dims[0] >> v.dims[1] >> v.dims[2];
        else if (tag == std::string("spacing")) ls >> v.spacing[0] >> v.spacing[1] >> v.spacing[2];
        else if (tag == std::string("origin")) ls >> v.origin[0] >> v.origin[1] >> v.origin[2];
        else if (tag == std::string("kind")) ls >> kind;
        else if (tag == std::string("scalar")) ls >> scalar;
        else ls >> order;
        if (!ls) parse_fail(path, lineno, "malformed value");
    }
    if (scalar != "float64") parse_fail(path, 6, "unsupported scalar type");
    if (order != "little") parse_fail(path, 7, "unsupported byte order");
    v.kind = kind == "mask" ? VolumeKind::mask
             : kind == "sdf" ? VolumeKind::sdf
                             : VolumeKind::intensity;
    v.data = read_blob(path + ".raw", v.size());
    v.validate();
    return v;
}

// ---------------------------------------------------------------------------
// mesh format

void write_mesh(const TriMesh& m, const std::string& path, const NormMap* frame) {
    std::ostringstream os;
    os.precision(17);
    os << "meshfit-mesh 1\n";
    os << "units " << (m.units() == Units::mm ? "mm" : "normalized") << '\n';
    if (frame)
        os << "frame " << frame->scale[0] << ' ' << frame->scale[1] << ' ' << frame->scale[2]
           << ' ' << frame->offset[0] << ' ' << frame->offset[1] << ' ' << frame->offset[2]
           << '\n';
    os << "vertices " << m.vertex_count() << '\n';
    for (const Vec3& v : m.vertices()) os << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    os << "faces " << m.face_count() << '\n';
    for (const Face& f : m.faces()) os << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    write_file(path, os.str());
}

MeshFile read_mesh(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    int lineno = 1;
    std::string line;
    if (!std::getline(is, line) || line != "meshfit-mesh 1") parse_fail(path, lineno, "bad magic");

    MeshFile out;
    Units units = Units::mm;
    ++lineno;
    if (!std::getline(is, line)) parse_fail(path, lineno, "truncated");
    {
        std::istringstream ls(line);
        std::string tag, u;
        ls >> tag >> u;
        if (tag != "units" || (u != "mm" && u != "normalized"))
            parse_fail(path, lineno, "expected units line");
        units = u == "mm" ? Units::mm : Units::normalized;
    }

    ++lineno;
    if (!std::getline(is, line)) parse_fail(path, lineno, "truncated");
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "frame") {
        NormMap f;
        ls >> f.scale[0] >> f.scale[1] >> f.scale[2] >> f.offset[0] >> f.offset[1] >>
            f.offset[2];
        if (!ls) parse_fail(path, lineno, "malformed frame");
        out.frame = f;
        ++lineno;
        if (!std::getline(is, line)) parse_fail(path, lineno, "truncated");
        ls = std::istringstream(line);
        ls >> tag;
    }
    int nv = 0;
    if (tag != "vertices" || !(ls >> nv) || nv < 0)
        parse_fail(path, lineno, "expected vertex count");
    std::vector<Vec3> vertices(nv);
    for (int i = 0; i < nv; ++i) {
        ++lineno;
        if (!std::getline(is, line)) parse_fail(path, lineno, "truncated vertices");
        std::istringstream vs(line);
        if (!(vs >> vertices[i].x() >> vertices[i].y() >> vertices[i].z()))
            parse_fail(path, lineno, "malformed vertex");
    }
    ++lineno;
    if (!std::getline(is, line)) parse_fail(path, lineno, "truncated");
    std::istringstream fs(line);
    int nf = 0;
    fs >> tag;
    if (tag != "faces" || !(fs >> nf) || nf < 0) parse_fail(path, lineno, "expected face count");
    std::vector<Face> faces(nf);
    for (int i = 0; i < nf; ++i) {
        ++lineno;
        if (!std::getline(is, line)) parse_fail(path, lineno, "truncated faces");
        std::istringstream fls(line);
        if (!(fls >> faces[i][0] >> faces[i][1] >> faces[i][2]))
            parse_fail(path, lineno, "malformed face");
    }
    out.mesh = TriMesh::build(std::move(vertices), std::move(faces), units);
    return out;
}

// ---------------------------------------------------------------------------
// STL export + material sidecar

void write_stl(const TriMesh& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    char header[80] = {};
    std::strncpy(header, kToolVersion, sizeof(header) - 1);
    os.write(header, 80);
    const std::uint32_t n = static_cast<std::uint32_t>(m.face_count());
    os.write(reinterpret_cast<const char*>(&n), 4);
    const std::vector<Vec3> normals = face_normals(m);
    for (int f = 0; f < m.face_count(); ++f) {
        float buf[12];
        for (int a = 0; a < 3; ++a) buf[a] = static_cast<float>(normals[f][a]);
        for (int k = 0; k < 3; ++k)
            for (int a = 0; a < 3; ++a)
                buf[3 + 3 * k + a] = static_cast<float>(m.vertices()[m.faces()[f][k]][a]);
        os.write(reinterpret_cast<const char*>(buf), sizeof(buf));
        const std::uint16_t attr = 0;
        os.write(reinterpret_cast<const char*>(&attr), 2);
    }
}

void write_material_sidecar(const std::string& stl_path) {
    std::ostringstream os;
    os << "# simulation material metadata\n";
    os << "units mm\n";
    os << "fluid urine\n";
    os << "density_kg_m3 urine 1050\n";
    os << "density_kg_m3 tissue 1050\n";
    os << "specific_heat_J_kgK urine 4180\n";
    os << "specific_heat_J_kgK tissue 3800\n";
    os << "thermal_conductivity_W_mK urine 0.6\n";
    os << "thermal_conductivity_W_mK tissue 0.5\n";
    os << "viscosity_kg_ms urine 0.002\n";
    os << "initial_velocity_m_s 0.0001\n";
    write_file(stl_path + ".materials.txt", os.str());
}

// ---------------------------------------------------------------------------
// config

namespace {

json weights_to_json(const RecWeights& w) {
    return json{{"alpha", w.alpha}, {"lambda_seal", w.lambda_seal}};
}

json stage_to_json(const FitStage& s) {
    return json{{"iterations", s.iterations},
                {"step_size", s.step_size},
                {"unpool_after", s.unpool_after}};
}

}  // namespace

std::string RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["units"] = units;
    j["synth"] = {{"seed", synth.seed},
                  {"n_blobs", synth.n_blobs},
                  {"dims", synth.dims[0]},
                  {"spacing_mm", synth.spacing_mm},
                  {"radius_min", synth.radius_min},
                  {"radius_max", synth.radius_max},
                  {"center_extent", synth.center_extent},
                  {"neck_width", synth.neck_width},
                  {"noise_sigma", synth.noise_sigma}};
    j["iso"] = {{"isovalue", iso.isovalue},
                {"min_component_voxels", iso.min_component_voxels},
                {"normalize_to_unit_cube", iso.normalize_to_unit_cube}};
    j["weights"] = weights_to_json(weights);
    j["ext_weights"] = {{"gamma", ext_weights.gamma}, {"rho", ext_weights.rho}};
    j["normal_form"] =
        normal_form == NormalLossForm::cross_product ? "cross_product" : "edge_tangency";
    json stages = json::array();
    for (const FitStage& s : fit.stages) stages.push_back(stage_to_json(s));
    j["fit"] = {{"stages", stages},
                {"convergence_tol", fit.convergence_tol},
                {"apply_vf", fit.apply_vf},
                {"target_samples_per_face", fit.target_samples_per_face}};
    j["vf"] = {{"t_lo", vf.t_lo}, {"t_hi", vf.t_hi}};
    j["metric_sampling"] = {{"per_face", metric_sampling.per_face},
                            {"seed", metric_sampling.seed}};
    j["validity"] = {{"reflective_deviation_deg", validity.reflective_deviation_deg},
                     {"t1_mm", validity.t1_mm},
                     {"t2_mm", validity.t2_mm}};
    j["model"] = {{"input_dim", model.input_dim},
                  {"channels", model.channels},
                  {"gcn_dim", model.gcn_dim},
                  {"n_stages", model.n_stages},
                  {"unpools", model.unpools},
                  {"use_attention", model.use_attention},
                  {"use_vertex_filter", model.use_vertex_filter},
                  {"template_level", model.template_level},
                  {"template_radius", model.template_radius},
                  {"seed", model.seed}};
    j["train"] = {{"epochs", train_epochs},
                  {"lr", train_lr},
                  {"early_stop_dice", train_early_stop_dice},
                  {"train_count", train_count},
                  {"test_count", test_count}};
    return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    RunConfig c;
    check_keys(j, "root",
               {"seed", "units", "synth", "iso", "weights", "ext_weights", "normal_form", "fit",
                "vf", "metric_sampling", "validity", "model", "train"});
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("units")) c.units = j["units"].get<std::string>();
    if (j.contains("synth")) {
        const json& s = j["synth"];
        check_keys(s, "synth",
                   {"seed", "n_blobs", "dims", "spacing_mm", "radius_min", "radius_max",
                    "center_extent", "neck_width", "noise_sigma"});
        if (s.contains("seed")) c.synth.seed = s["seed"].get<std::uint64_t>();
        if (s.contains("n_blobs")) c.synth.n_blobs = s["n_blobs"].get<int>();
        if (s.contains("dims")) {
            const int d = s["dims"].get<int>();
            c.synth.dims = {d, d, d};
        }
        if (s.contains("spacing_mm")) c.synth.spacing_mm = s["spacing_mm"].get<double>();
        if (s.contains("radius_min")) c.synth.radius_min = s["radius_min"].get<double>();
        if (s.contains("radius_max")) c.synth.radius_max = s["radius_max"].get<double>();
        if (s.contains("center_extent")) c.synth.center_extent = s["center_extent"].get<double>();
        if (s.contains("neck_width")) c.synth.neck_width = s["neck_width"].get<double>();
        if (s.contains("noise_sigma")) c.synth.noise_sigma = s["noise_sigma"].get<double>();
    }
    if (j.contains("iso")) {
        const json& s = j["iso"];
        check_keys(s, "iso", {"isovalue", "min_component_voxels", "normalize_to_unit_cube"});
        if (s.contains("isovalue")) c.iso.isovalue = s["isovalue"].get<double>();
        if (s.contains("min_component_voxels"))
            c.iso.min_component_voxels = s["min_component_voxels"].get<int>();
        if (s.contains("normalize_to_unit_cube"))
            c.iso.normalize_to_unit_cube = s["normalize_to_unit_cube"].get<bool>();
    }
    if (j.contains("weights")) {
        const json& s = j["weights"];
        check_keys(s, "weights", {"alpha", "lambda_seal"});
        if (s.contains("alpha")) c.weights.alpha = s["alpha"].get<std::array<double, 6>>();
        if (s.contains("lambda_seal")) c.weights.lambda_seal = s["lambda_seal"].get<double>();
    }
    if (j.contains("ext_weights")) {
        const json& s = j["ext_weights"];
        check_keys(s, "ext_weights", {"gamma", "rho"});
        if (s.contains("gamma")) c.ext_weights.gamma = s["gamma"].get<std::array<double, 3>>();
        if (s.contains("rho")) c.ext_weights.rho = s["rho"].get<std::array<double, 2>>();
    }
    if (j.contains("normal_form")) {
        const std::string f = j["normal_form"].get<std::string>();
        if (f == "cross_product") c.normal_form = NormalLossForm::cross_product;
        else if (f == "edge_tangency") c.normal_form = NormalLossForm::edge_tangency;
        else throw std::runtime_error("config: bad normal_form '" + f + "'");
    }
    if (j.contains("fit")) {
        const json& s = j["fit"];
        check_keys(s, "fit",
                   {"stages", "convergence_tol", "apply_vf", "target_samples_per_face"});
        if (s.contains("convergence_tol"))
            c.fit.convergence_tol = s["convergence_tol"].get<double>();
        if (s.contains("apply_vf")) c.fit.apply_vf = s["apply_vf"].get<bool>();
        if (s.contains("target_samples_per_face"))
            c.fit.target_samples_per_face = s["target_samples_per_face"].get<int>();
        if (s.contains("stages")) {
            c.fit.stages.clear();
            for (const json& st : s["stages"]) {
                check_keys(st, "fit.stages[]", {"iterations", "step_size", "unpool_after"});
                FitStage f;
                if (st.contains("iterations")) f.iterations = st["iterations"].get<int>();
                if (st.contains("step_size")) f.step_size = st["step_size"].get<double>();
                if (st.contains("unpool_after")) f.unpool_after = st["unpool_after"].get<bool>();
                c.fit.stages.push_back(f);
            }
        }
    }
    if (j.contains("vf")) {
        const json& s = j["vf"];
        check_keys(s, "vf", {"t_lo", "t_hi"});
        if (s.contains("t_lo")) c.vf.t_lo = s["t_lo"].get<double>();
        if (s.contains("t_hi")) c.vf.t_hi = s["t_hi"].get<double>();
    }
    if (j.contains("metric_sampling")) {
        const json& s = j["metric_sampling"];
        check_keys(s, "metric_sampling", {"per_face", "seed"});
        if (s.contains("per_face")) c.metric_sampling.per_face = s["per_face"].get<int>();
        if (s.contains("seed")) c.metric_sampling.seed = s["seed"].get<std::uint64_t>();
    }
    if (j.contains("validity")) {
        const json& s = j["validity"];
        check_keys(s, "validity", {"reflective_deviation_deg", "t1_mm", "t2_mm"});
        if (s.contains("reflective_deviation_deg"))
            c.validity.reflective_deviation_deg = s["reflective_deviation_deg"].get<double>();
        if (s.contains("t1_mm")) c.validity.t1_mm = s["t1_mm"].get<double>();
        if (s.contains("t2_mm")) c.validity.t2_mm = s["t2_mm"].get<double>();
    }
    if (j.contains("model")) {
        const json& s = j["model"];
        check_keys(s, "model",
                   {"input_dim", "channels", "gcn_dim", "n_stages", "unpools", "use_attention",
                    "use_vertex_filter", "template_level", "template_radius", "seed"});
        if (s.contains("input_dim")) c.model.input_dim = s["input_dim"].get<int>();
        if (s.contains("channels")) c.model.channels = s["channels"].get<std::array<int, 3>>();
        if (s.contains("gcn_dim")) c.model.gcn_dim = s["gcn_dim"].get<int>();
        if (s.contains("n_stages")) c.model.n_stages = s["n_stages"].get<int>();
        if (s.contains("unpools")) c.model.unpools = s["unpools"].get<int>();
        if (s.contains("use_attention")) c.model.use_attention = s["use_attention"].get<bool>();
        if (s.contains("use_vertex_filter"))
            c.model.use_vertex_filter = s["use_vertex_filter"].get<bool>();
        if (s.contains("template_level")) c.model.template_level = s["template_level"].get<int>();
        if (s.contains("template_radius"))
            c.model.template_radius = s["template_radius"].get<double>();
        if (s.contains("seed")) c.model.seed = s["seed"].get<std::uint64_t>();
    }
    if (j.contains("train")) {
        const json& s = j["train"];
        check_keys(s, "train", {"epochs", "lr", "early_stop_dice", "train_count", "test_count"});
        if (s.contains("epochs")) c.train_epochs = s["epochs"].get<int>();
        if (s.contains("lr")) c.train_lr = s["lr"].get<double>();
        if (s.contains("early_stop_dice"))
            c.train_early_stop_dice = s["early_stop_dice"].get<double>();
        if (s.contains("train_count")) c.train_count = s["train_count"].get<int>();
        if (s.contains("test_count")) c.test_count = s["test_count"].get<int>();
    }
    // Stage weights and filter thresholds come from the shared blocks.
    for (FitStage& st : c.fit.stages) {
        st.weights = c.weights;
        st.vf = c.vf;
    }
    c.fit.normal_form = c.normal_form;
    c.fit.rng_seed = c.seed;
    return c;
}

RunConfig read_config(const std::string& path) { return RunConfig::from_json(read_file(path)); }

void write_config(const RunConfig& cfg, const std::string& path) {
    write_file(path, cfg.to_json());
}

// ---------------------------------------------------------------------------
// digests + manifest

std::string sha256_bytes(const void* data, std::size_t n) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr);
    std::ostringstream os;
    os << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(md[i]);
    return os.str();
}

std::string sha256_file(const std::string& path) {
    const std::string bytes = read_file(path);
    return sha256_bytes(bytes.data(), bytes.size());
}

void RunManifest::add_input(const std::string& path) {
    inputs.push_back({path, sha256_file(path)});
}

void RunManifest::add_output(const std::string& path) {
    outputs.push_back({path, sha256_file(path)});
}

std::string RunManifest::to_json() const {
    json j;
    j["tool_version"] = tool_version.empty() ? kToolVersion : tool_version;
    j["config"] = json::parse(config_json.empty() ? "{}" : config_json);
    json in = json::array(), out = json::array(), wt = json::array();
    for (const auto& e : inputs) in.push_back({{"path", e.path}, {"sha256", e.digest}});
    for (const auto& e : outputs) out.push_back({{"path", e.path}, {"sha256", e.digest}});
    for (const auto& [k, v] : wall_times) wt.push_back({{"step", k}, {"seconds", v}});
    j["inputs"] = in;
    j["outputs"] = out;
    j["wall_times"] = wt;
    return j.dump(2) + "\n";
}

void write_manifest(const RunManifest& m, const std::string& path) {
    write_file(path, m.to_json());
}

// ---------------------------------------------------------------------------
// parameter archive

void write_params(const ParamStore& ps, const std::string& path) {
    std::ostringstream manifest;
    manifest << "meshfit-params 1\n";
    std::vector<double> blob;
    for (const auto& p : ps.all()) {
        manifest << p->name;
        for (int s : p->shape) manifest << ' ' << s;
        manifest << " @" << blob.size() << '\n';
        blob.insert(blob.end(), p->w.begin(), p->w.end());
    }
    write_file(path, manifest.str());
    write_blob(path + ".blob", blob);
}

void read_params(ParamStore& ps, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line) || line != "meshfit-params 1")
        throw std::runtime_error(path + ": bad magic");
    std::size_t total = 0;
    for (const auto& p : ps.all()) total += p->count();
    const std::vector<double> blob = read_blob(path + ".blob", total);
    int lineno = 1;
    for (const auto& p : ps.all()) {
        ++lineno;
        if (!std::getline(is, line)) parse_fail(path, lineno, "truncated manifest");
        std::istringstream ls(line);
        std::string name;
        ls >> name;
        if (name != p->name)
            parse_fail(path, lineno, "parameter mismatch: expected " + p->name + " got " + name);
        std::string tok, at;
        std::vector<int> shape;
        while (ls >> tok) {
            if (tok[0] == '@') {
                at = tok.substr(1);
                break;
            }
            shape.push_back(std::stoi(tok));
        }
        if (shape != p->shape) parse_fail(path, lineno, "shape mismatch for " + p->name);
        const std::size_t offset = std::stoull(at);
        std::copy(blob.begin() + offset, blob.begin() + offset + p->count(), p->w.begin());
    }
}

}  // namespace meshfit

namespace meshfit {

TriMesh load_template(const std::string& path) {
    const MeshFile mf = read_mesh(path);
    const TriMesh& m = mf.mesh;
    if (!is_watertight(m) || euler_characteristic(m) != 2)
        throw std::runtime_error("template must be spherical topology (g = 0)");
    if (!m.orientation_consistent())
        throw std::runtime_error("template winding is inconsistent");
    for (const Vec3& v : m.vertices())
        if (v.cwiseAbs().maxCoeff() > 1.0 + 1e-12)
            throw std::runtime_error("template must lie in [-1,1]^3");
    if (m.units() != Units::normalized)
        throw std::runtime_error("template must be in normalized units");
    return m;
}

}  // namespace meshfit
