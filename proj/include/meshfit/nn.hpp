#pragma once

#include "meshfit/energy.hpp"
#include "meshfit/isosurface.hpp"
#include "meshfit/trimesh.hpp"
#include "meshfit/volume.hpp"

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace meshfit {

/// Dense channel-major tensor, [c][z][y][x] with x fastest.
struct Tensor {
    int c = 0, z = 0, y = 0, x = 0;
    std::vector<double> v;

    static Tensor zeros(int c, int z, int y, int x) {
        Tensor t;
        t.c = c;
        t.z = z;
        t.y = y;
        t.x = x;
        t.v.assign(static_cast<std::size_t>(c) * z * y * x, 0.0);
        return t;
    }
    std::size_t spatial() const { return static_cast<std::size_t>(z) * y * x; }
    std::size_t size() const { return v.size(); }
    double* channel(int ch) { return v.data() + ch * spatial(); }
    const double* channel(int ch) const { return v.data() + ch * spatial(); }
    double& at(int ch, int k, int j, int i) {
        return v[(static_cast<std::size_t>(ch) * z + k) * y * x + static_cast<std::size_t>(j) * x + i];
    }
    double at(int ch, int k, int j, int i) const {
        return v[(static_cast<std::size_t>(ch) * z + k) * y * x + static_cast<std::size_t>(j) * x + i];
    }
    bool same_shape(const Tensor& o) const {
        return c == o.c && z == o.z && y == o.y && x == o.x;
    }
};

using FeatMatrix = Eigen::MatrixXd;  // vertices x channels

struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<double> w;
    std::vector<double> g;
    bool trainable = true;

    std::size_t count() const { return w.size(); }
};

class ParamStore {
public:
    Param* add(std::string name, std::vector<int> shape, bool trainable = true);
    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;
    void zero_grad();
    const std::vector<std::unique_ptr<Param>>& all() const { return params_; }

private:
    std::vector<std::unique_ptr<Param>> params_;
};

// ---------------------------------------------------------------------------
// Differentiable primitives

/// Trilinear, corner-aligned sample of a multi-channel tensor at normalized
/// points in [-1,1]^3 (border padding outside). align_corners semantics:
/// (-1,-1,-1) maps to the first voxel center and (1,1,1) to the last.
FeatMatrix grid_sample(const Tensor& feat, const std::vector<Vec3>& points);
/// Backward: accumulates into d_feat (same shape as feat) and returns
/// per-point coordinate gradients.
std::vector<Vec3> grid_sample_backward(const Tensor& feat, const std::vector<Vec3>& points,
                                       const FeatMatrix& d_out, Tensor& d_feat);

/// Parameter-free self-attention: A_mn = cosine similarity of rows,
/// g_m = sum_n A_mn f_n. Reference O(N^2) double loop.
FeatMatrix self_attention_reference(const FeatMatrix& f);
/// Reassociated evaluation g = fhat (fhat^T f); equal within 1e-9.
FeatMatrix self_attention(const FeatMatrix& f);
FeatMatrix self_attention_backward(const FeatMatrix& f, const FeatMatrix& d_out);

// ---------------------------------------------------------------------------
// Layers (own their parameters inside a ParamStore; forward caches enough
// state for one backward pass)

class Conv3 {
public:
    Conv3() = default;
    Conv3(ParamStore& ps, const std::string& name, int c_in, int c_out, Rng& rng);
    Tensor forward(const Tensor& in);
    Tensor backward(const Tensor& d_out);

private:
    Param* w_ = nullptr;
    Param* b_ = nullptr;
    int cin_ = 0, cout_ = 0;
    Tensor in_;
};

class Conv1 {
public:
    Conv1() = default;
    Conv1(ParamStore& ps, const std::string& name, int c_in, int c_out, Rng& rng,
          bool zero_init = false);
    Tensor forward(const Tensor& in);
    Tensor backward(const Tensor& d_out);

private:
    Param* w_ = nullptr;
    Param* b_ = nullptr;
    int cin_ = 0, cout_ = 0;
    Tensor in_;
};

class UpConv2 {
public:
    UpConv2() = default;
    UpConv2(ParamStore& ps, const std::string& name, int c_in, int c_out, Rng& rng);
    Tensor forward(const Tensor& in);
    Tensor backward(const Tensor& d_out);

private:
    Param* w_ = nullptr;
    Param* b_ = nullptr;
    int cin_ = 0, cout_ = 0;
    Tensor in_;
};

/// Per-channel normalization over the spatial extent (batch-size-1
/// semantics); keeps running statistics for eval mode.
class ChannelNorm {
public:
    ChannelNorm() = default;
    ChannelNorm(ParamStore& ps, const std::string& name, int channels);
    Tensor forward(const Tensor& in, bool train);
    Tensor backward(const Tensor& d_out);

private:
    Param* gamma_ = nullptr;
    Param* beta_ = nullptr;
    Param* run_mean_ = nullptr;
    Param* run_var_ = nullptr;
    int c_ = 0;
    Tensor xhat_;
    std::vector<double> inv_std_;
    double momentum_ = 0.1;
    bool train_ = true;
};

class Relu {
public:
    Tensor forward(const Tensor& in);
    Tensor backward(const Tensor& d_out);

private:
    Tensor out_;
};

class MaxPool2 {
public:
    Tensor forward(const Tensor& in);
    Tensor backward(const Tensor& d_out);

private:
    std::vector<int> argmax_;
    int c_ = 0, z_ = 0, y_ = 0, x_ = 0;
};

/// Two 3x3x3 conv + norm + relu with a residual shortcut (1x1x1 projection
/// when channel counts differ).
class ResBlock {
public:
    ResBlock() = default;
    ResBlock(ParamStore& ps, const std::string& name, int c_in, int c_out, Rng& rng);
    Tensor forward(const Tensor& in, bool train);
    Tensor backward(const Tensor& d_out);

private:
    Conv3 conv1_, conv2_;
    ChannelNorm n1_, n2_;
    Relu r1_, r2_;
    Conv1 proj_;
    bool has_proj_ = false;
    Tensor in_;
};

class Linear {
public:
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int c_in, int c_out, Rng& rng,
           bool zero_init = false);
    FeatMatrix forward(const FeatMatrix& in);
    FeatMatrix backward(const FeatMatrix& d_out);

private:
    Param* w_ = nullptr;
    Param* b_ = nullptr;
    int cin_ = 0, cout_ = 0;
    FeatMatrix in_;
};

/// h' = W0 h + W1 mean_{c in N(p)} h_c + b over a fixed adjacency.
class GraphConv {
public:
    GraphConv() = default;
    GraphConv(ParamStore& ps, const std::string& name, int c_in, int c_out, Rng& rng,
              bool zero_init = false);
    FeatMatrix forward(const FeatMatrix& h, const std::vector<std::vector<int>>& neigh);
    FeatMatrix backward(const FeatMatrix& d_out);

private:
    Param* w0_ = nullptr;
    Param* w1_ = nullptr;
    Param* b_ = nullptr;
    int cin_ = 0, cout_ = 0;
    FeatMatrix h_, hmean_;
    const std::vector<std::vector<int>>* neigh_ = nullptr;
};

/// Per-channel normalization over vertices.
class VertexNorm {
public:
    VertexNorm() = default;
    VertexNorm(ParamStore& ps, const std::string& name, int channels);
    FeatMatrix forward(const FeatMatrix& in, bool train);
    FeatMatrix backward(const FeatMatrix& d_out);

private:
    Param* gamma_ = nullptr;
    Param* beta_ = nullptr;
    Param* run_mean_ = nullptr;
    Param* run_var_ = nullptr;
    int c_ = 0;
    FeatMatrix xhat_;
    std::vector<double> inv_std_;
    double momentum_ = 0.1;
    bool train_ = true;
};

class ReluRows {
public:
    FeatMatrix forward(const FeatMatrix& in);
    FeatMatrix backward(const FeatMatrix& d_out);

private:
    FeatMatrix out_;
};

/// 27-tap learnable-offset sampler: per vertex, samples feat at
/// p + offset[t] and combines taps with a shared linear kernel. Offsets are
/// initialized to the +-h lattice (h = one voxel in normalized units) and
/// taps to uniform averaging.
class OffsetSample {
public:
    OffsetSample() = default;
    OffsetSample(ParamStore& ps, const std::string& name, double voxel_step);
    FeatMatrix forward(const Tensor& feat, const std::vector<Vec3>& points);
    /// Returns per-point coordinate gradients; accumulates d_feat.
    std::vector<Vec3> backward(const FeatMatrix& d_out, Tensor& d_feat);

private:
    Param* offsets_ = nullptr;  // 27 x 3
    Param* taps_ = nullptr;     // 27
    const Tensor* feat_ = nullptr;
    std::vector<Vec3> points_;
    std::vector<FeatMatrix> tap_samples_;
};

// ---------------------------------------------------------------------------
// Full model: volumetric feature extractor + per-stage samplers + graph
// deformation stages with unpool (and optional midpoint filtering) between
// stages.

struct ModelConfig {
    int input_dim = 32;
    std::array<int, 3> channels{16, 32, 64};  // fine, mid, coarse (bottleneck)
    int gcn_dim = 32;
    int n_stages = 3;
    int unpools = 2;           // unpool after stages 1..unpools
    bool use_attention = true;
    bool use_vertex_filter = false;  // midpoint pruning between stages
    VFThresholds vf;
    int template_level = 2;    // icosphere subdivision level (162 vertices)
    double template_radius = 0.45;
    std::uint64_t seed = 1;
};

struct FemOut {
    std::vector<Tensor> pyramid;   // coarse -> fine (bottleneck, mid, fine)
    std::vector<Volume> seg_prob;  // coarse -> fine, sigmoid probabilities
};

class DeformNet;

/// Encoder-decoder feature extractor with deep-supervision heads.
class Fem {
public:
    Fem() = default;
    Fem(ParamStore& ps, const ModelConfig& cfg, Rng& rng);
    FemOut forward(const Volume& img, bool train);
    /// d_pyramid / d_logits match the forward outputs (gradients w.r.t.
    /// pyramid tensors and pre-sigmoid head outputs are combined inside).
    void backward(const std::vector<Tensor>& d_pyramid,
                  const std::vector<std::vector<double>>& d_prob);

private:
    friend class DeformNet;
    ModelConfig cfg_;
    ResBlock enc1_, enc2_, bott_, dec2_, dec1_;
    MaxPool2 pool1_, pool2_;
    UpConv2 up1_, up2_;
    Conv1 head_bott_, head_mid_, head_fine_;
    Tensor enc1_out_, enc2_out_;
    std::vector<Volume> probs_;
    std::array<int, 3> dims_{};
};

/// One displacement-estimation stage: offset sampling, optional attention,
/// three graph convolutions, zero-initialized linear head.
class DeStage {
public:
    DeStage() = default;
    DeStage(ParamStore& ps, const std::string& name, int feat_channels, int gcn_dim,
            double voxel_step, bool attention, Rng& rng);
    /// Returns per-vertex displacements.
    std::vector<Vec3> forward(const Tensor& feat, const TriMesh& mesh, bool train);
    /// d_disp -> gradient w.r.t. input vertex positions; accumulates d_feat.
    std::vector<Vec3> backward(const std::vector<Vec3>& d_disp, Tensor& d_feat);

private:
    OffsetSample sampler_;
    bool attention_ = true;
    GraphConv gc1_, gc2_, gc3_;
    VertexNorm vn1_, vn2_, vn3_;
    ReluRows r1_, r2_, r3_;
    Linear head_;
    FeatMatrix sampled_, attended_;
    std::vector<Vec3> points_;
    const Tensor* feat_ = nullptr;
    std::vector<std::vector<int>> neigh_;
    int feat_c_ = 0;
};

struct NetForward {
    FemOut fem;
    std::vector<TriMesh> stage_meshes;  // P_1..P_S
    TriMesh input_template;
    // Internal bookkeeping for backward:
    std::vector<TriMesh> stage_inputs;
    std::vector<ParentMap> parent_maps;        // per inter-stage unpool
    std::vector<std::vector<int>> vf_survivors;  // per inter-stage filter (empty = none)
    bool train = false;
};

class DeformNet {
public:
    explicit DeformNet(const ModelConfig& cfg);

    NetForward forward(const Volume& img, const TriMesh& template_mesh, bool train);
    /// d_stage_meshes[i] = dL/d(vertices of stage_meshes[i]).
    void backward(NetForward& fwd, const std::vector<std::vector<Vec3>>& d_stage_meshes,
                  const std::vector<std::vector<double>>& d_seg_prob);

    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const ModelConfig& config() const { return cfg_; }
    TriMesh make_template() const;

private:
    ModelConfig cfg_;
    ParamStore store_;
    Fem fem_;
    std::vector<DeStage> stages_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainSample {
    Volume image;    // z-scored intensity
    Volume mask;     // gold mask
    TriMesh target;  // pseudo-gold mesh, normalized coords
};

struct TrainConfig {
    ModelConfig model;
    int epochs = 200;
    double lr = 2e-3;
    int lr_decay_every = 60;     // halve the rate every N epochs (0 = off)
    double lr_decay_factor = 0.5;
    double grad_clip = 5.0;
    RecWeights rec;
    ExtWeights ext;
    NormalLossForm normal_form = NormalLossForm::cross_product;
    double early_stop_dice = 0.0;  // stop once held-out dice reaches this (0 = off)
    int eval_every = 5;
    std::uint64_t seed = 7;
};

struct TrainReport {
    std::vector<double> epoch_loss;
    std::vector<std::pair<int, double>> dice_trace;  // epoch, held-out mean dice
    double final_dice = 0.0;
    int epochs_run = 0;
    bool reached_target = false;
    bool diverged = false;
};

TrainReport train_toy(DeformNet& net, const std::vector<TrainSample>& train_set,
                      const std::vector<TrainSample>& test_set, const TrainConfig& cfg);

/// Rasterized overlap of the net's final-stage prediction against the gold
/// mask of one sample.
double eval_sample_dice(DeformNet& net, const TrainSample& sample);

/// Builds a deterministic synthetic dataset at the given resolution.
std::vector<TrainSample> make_synthetic_dataset(int count, int dim, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Finite-difference checking

/// Worst relative error between an analytic gradient and central finite
/// differences of the scalar function f at x0.
double grad_check(const std::function<double(const std::vector<double>&)>& f,
                  const std::vector<double>& analytic, const std::vector<double>& x0,
                  double h = 1e-5);

/// Named randomized checks over the registered differentiable ops
/// ("linear", "grid_sample", "offset_sample", "self_attention", "graph_conv",
/// "de_stage"); returns the worst relative error over the trials.
double grad_check_op(const std::string& op, int trials, std::uint64_t seed);

}  // namespace meshfit
