#pragma once

#include "meshfit/energy.hpp"
#include "meshfit/fit.hpp"
#include "meshfit/metrics.hpp"
#include "meshfit/nn.hpp"
#include "meshfit/trimesh.hpp"
#include "meshfit/validity.hpp"
#include "meshfit/volume.hpp"

#include <optional>
#include <string>

namespace meshfit {

/// Volume on disk: a text header plus a raw little-endian float64 blob at
/// <path>.raw. Round trips are bit-exact.
void write_volume(const Volume& v, const std::string& path);
Volume read_volume(const std::string& path);

/// Indexed-triangle text format with explicit vertex/face sections; vertex
/// coordinates printed at 17 significant digits (bit-exact round trip). The
/// optional frame line records the normalized->mm affine map.
void write_mesh(const TriMesh& m, const std::string& path,
                const NormMap* frame = nullptr);
struct MeshFile {
    TriMesh mesh;
    std::optional<NormMap> frame;
};
MeshFile read_mesh(const std::string& path);

/// Binary triangle-soup export (little-endian STL layout) for CFD consumers,
/// plus a material-metadata sidecar at <path>.materials.txt.
void write_stl(const TriMesh& m, const std::string& path);
void write_material_sidecar(const std::string& stl_path);

struct RunConfig {
    std::uint64_t seed = 7;
    std::string units = "mm";

    SynthParams synth;
    IsoConfig iso;
    RecWeights weights;
    ExtWeights ext_weights;
    NormalLossForm normal_form = NormalLossForm::cross_product;
    FitSchedule fit;
    VFThresholds vf;
    SampleConfig metric_sampling;
    AuditOptions validity;
    ModelConfig model;
    int train_epochs = 200;
    double train_lr = 2e-3;
    double train_early_stop_dice = 0.0;
    int train_count = 20;
    int test_count = 5;

    std::string to_json() const;
    static RunConfig from_json(const std::string& text);  // unknown keys rejected
};

RunConfig read_config(const std::string& path);
void write_config(const RunConfig& cfg, const std::string& path);

std::string sha256_file(const std::string& path);
std::string sha256_bytes(const void* data, std::size_t n);

struct ManifestEntry {
    std::string path;
    std::string digest;
};

struct RunManifest {
    std::string tool_version;
    std::string config_json;
    std::vector<ManifestEntry> inputs;
    std::vector<ManifestEntry> outputs;
    std::vector<std::pair<std::string, double>> wall_times;

    std::string to_json() const;
    void add_input(const std::string& path);
    void add_output(const std::string& path);
};

void write_manifest(const RunManifest& m, const std::string& path);

/// Named-tensor archive: <path> text manifest + <path>.blob raw
/// little-endian float64 values.
void write_params(const ParamStore& ps, const std::string& path);
void read_params(ParamStore& ps, const std::string& path);

int cli_main(int argc, char** argv);

}  // namespace meshfit
