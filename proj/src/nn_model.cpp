#include "meshfit/nn.hpp"
#include "meshfit/rasterize.hpp"
#include "meshfit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace meshfit {

namespace {

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    Tensor out = Tensor::zeros(a.c + b.c, a.z, a.y, a.x);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
    return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& d, int c_a, int c_b) {
    Tensor da = Tensor::zeros(c_a, d.z, d.y, d.x);
    Tensor db = Tensor::zeros(c_b, d.z, d.y, d.x);
    std::copy(d.v.begin(), d.v.begin() + da.v.size(), da.v.begin());
    std::copy(d.v.begin() + da.v.size(), d.v.end(), db.v.begin());
    return {std::move(da), std::move(db)};
}

Volume sigmoid_volume(const Tensor& logits, std::array<int, 3> dims) {
    Volume out = Volume::zeros(dims, VolumeKind::intensity);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = 1.0 / (1.0 + std::exp(-logits.v[i]));
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Fem

Fem::Fem(ParamStore& ps, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int c1 = cfg.channels[0], c2 = cfg.channels[1], c3 = cfg.channels[2];
    enc1_ = ResBlock(ps, "fem.enc1", 1, c1, rng);
    enc2_ = ResBlock(ps, "fem.enc2", c1, c2, rng);
    bott_ = ResBlock(ps, "fem.bott", c2, c3, rng);
    up1_ = UpConv2(ps, "fem.up1", c3, c2, rng);
    dec2_ = ResBlock(ps, "fem.dec2", 2 * c2, c2, rng);
    up2_ = UpConv2(ps, "fem.up2", c2, c1, rng);
    dec1_ = ResBlock(ps, "fem.dec1", 2 * c1, c1, rng);
    head_bott_ = Conv1(ps, "fem.head_bott", c3, 1, rng, /*zero_init=*/true);
    head_mid_ = Conv1(ps, "fem.head_mid", c2, 1, rng, /*zero_init=*/true);
    head_fine_ = Conv1(ps, "fem.head_fine", c1, 1, rng, /*zero_init=*/true);
}

FemOut Fem::forward(const Volume& img, bool train) {
    if (img.dims[0] != img.dims[1] || img.dims[1] != img.dims[2])
        throw std::invalid_argument("fem_forward: input volume must be cubic");
    dims_ = img.dims;
    const int n = img.dims[0];
    Tensor x = Tensor::zeros(1, n, n, n);
    std::copy(img.data.begin(), img.data.end(), x.v.begin());

    enc1_out_ = enc1_.forward(x, train);
    const Tensor p1 = pool1_.forward(enc1_out_);
    enc2_out_ = enc2_.forward(p1, train);
    const Tensor p2 = pool2_.forward(enc2_out_);
    Tensor bott = bott_.forward(p2, train);

    const Tensor u1 = up1_.forward(bott);
    Tensor dec2 = dec2_.forward(concat_channels(u1, enc2_out_), train);
    const Tensor u2 = up2_.forward(dec2);
    Tensor dec1 = dec1_.forward(concat_channels(u2, enc1_out_), train);

    FemOut out;
    const Tensor lb = head_bott_.forward(bott);
    const Tensor lm = head_mid_.forward(dec2);
    const Tensor lf = head_fine_.forward(dec1);
    out.seg_prob.push_back(sigmoid_volume(lb, {n / 4, n / 4, n / 4}));
    out.seg_prob.push_back(sigmoid_volume(lm, {n / 2, n / 2, n / 2}));
    out.seg_prob.push_back(sigmoid_volume(lf, {n, n, n}));
    probs_ = out.seg_prob;
    out.pyramid.push_back(std::move(bott));
    out.pyramid.push_back(std::move(dec2));
    out.pyramid.push_back(std::move(dec1));
    return out;
}

void Fem::backward(const std::vector<Tensor>& d_pyramid,
                   const std::vector<std::vector<double>>& d_prob) {
    auto logit_grad = [&](int level, int c, int nz, int ny, int nx) {
        Tensor g = Tensor::zeros(1, nz, ny, nx);
        if (level < static_cast<int>(d_prob.size()) && !d_prob[level].empty()) {
            const Volume& p = probs_[level];
            for (std::size_t i = 0; i < g.v.size(); ++i)
                g.v[i] = d_prob[level][i] * p.data[i] * (1.0 - p.data[i]);
        }
        (void)c;
        return g;
    };
    const int n = dims_[0];

    Tensor d_dec1 = d_pyramid[2];
    d_dec1 = [&] {
        Tensor sum = d_dec1;
        const Tensor dh = head_fine_.backward(logit_grad(2, 1, n, n, n));
        for (std::size_t i = 0; i < sum.v.size(); ++i) sum.v[i] += dh.v[i];
        return sum;
    }();
    const Tensor d_cat2 = dec1_.backward(d_dec1);
    auto [d_u2, d_enc1_partial] = split_channels(d_cat2, cfg_.channels[0], cfg_.channels[0]);

    Tensor d_dec2 = up2_.backward(d_u2);
    for (std::size_t i = 0; i < d_dec2.v.size(); ++i) d_dec2.v[i] += d_pyramid[1].v[i];
    {
        const Tensor dh = head_mid_.backward(logit_grad(1, 1, n / 2, n / 2, n / 2));
        for (std::size_t i = 0; i < d_dec2.v.size(); ++i) d_dec2.v[i] += dh.v[i];
    }
    const Tensor d_cat1 = dec2_.backward(d_dec2);
    auto [d_u1, d_enc2_partial] = split_channels(d_cat1, cfg_.channels[1], cfg_.channels[1]);

    Tensor d_bott = up1_.backward(d_u1);
    for (std::size_t i = 0; i < d_bott.v.size(); ++i) d_bott.v[i] += d_pyramid[0].v[i];
    {
        const Tensor dh = head_bott_.backward(logit_grad(0, 1, n / 4, n / 4, n / 4));
        for (std::size_t i = 0; i < d_bott.v.size(); ++i) d_bott.v[i] += dh.v[i];
    }

    const Tensor d_p2 = bott_.backward(d_bott);
    Tensor d_enc2 = pool2_.backward(d_p2);
    for (std::size_t i = 0; i < d_enc2.v.size(); ++i) d_enc2.v[i] += d_enc2_partial.v[i];
    const Tensor d_p1 = enc2_.backward(d_enc2);
    Tensor d_enc1 = pool1_.backward(d_p1);
    for (std::size_t i = 0; i < d_enc1.v.size(); ++i) d_enc1.v[i] += d_enc1_partial.v[i];
    enc1_.backward(d_enc1);
}

// ---------------------------------------------------------------------------
// DeStage

DeStage::DeStage(ParamStore& ps, const std::string& name, int feat_channels, int gcn_dim,
                 double voxel_step, bool attention, Rng& rng)
    : sampler_(ps, name + ".sampler", voxel_step),
      attention_(attention),
      gc1_(ps, name + ".gc1", feat_channels + 3, gcn_dim, rng),
      gc2_(ps, name + ".gc2", gcn_dim, gcn_dim, rng),
      gc3_(ps, name + ".gc3", gcn_dim, gcn_dim, rng),
      vn1_(ps, name + ".vn1", gcn_dim),
      vn2_(ps, name + ".vn2", gcn_dim),
      vn3_(ps, name + ".vn3", gcn_dim),
      head_(ps, name + ".head", gcn_dim, 3, rng, /*zero_init=*/true),
      feat_c_(feat_channels) {}

std::vector<Vec3> DeStage::forward(const Tensor& feat, const TriMesh& mesh, bool train) {
    feat_ = &feat;
    points_ = mesh.vertices();
    neigh_ = mesh.vertex_neighbors();

    sampled_ = sampler_.forward(feat, points_);
    attended_ = attention_ ? self_attention(sampled_) : sampled_;

    const Eigen::Index n = attended_.rows();
    FeatMatrix h(n, feat_c_ + 3);
    h.leftCols(feat_c_) = attended_;
    for (Eigen::Index i = 0; i < n; ++i)
        h.row(i).tail(3) = points_[static_cast<std::size_t>(i)].transpose();

    FeatMatrix h1 = r1_.forward(vn1_.forward(gc1_.forward(h, neigh_), train));
    FeatMatrix h2 = r2_.forward(vn2_.forward(gc2_.forward(h1, neigh_), train));
    FeatMatrix h3 = r3_.forward(vn3_.forward(gc3_.forward(h2, neigh_), train));
    const FeatMatrix d = head_.forward(h3);

    std::vector<Vec3> disp(points_.size());
    for (std::size_t i = 0; i < disp.size(); ++i)
        disp[i] = d.row(static_cast<Eigen::Index>(i)).transpose();
    return disp;
}

std::vector<Vec3> DeStage::backward(const std::vector<Vec3>& d_disp, Tensor& d_feat) {
    const Eigen::Index n = static_cast<Eigen::Index>(d_disp.size());
    FeatMatrix dd(n, 3);
    for (Eigen::Index i = 0; i < n; ++i)
        dd.row(i) = d_disp[static_cast<std::size_t>(i)].transpose();

    FeatMatrix dh3 = head_.backward(dd);
    FeatMatrix dh2 = gc3_.backward(vn3_.backward(r3_.backward(dh3)));
    FeatMatrix dh1 = gc2_.backward(vn2_.backward(r2_.backward(dh2)));
    FeatMatrix dh = gc1_.backward(vn1_.backward(r1_.backward(dh1)));

    const FeatMatrix d_attended = dh.leftCols(feat_c_);
    std::vector<Vec3> d_points(d_disp.size(), Vec3::Zero());
    for (Eigen::Index i = 0; i < n; ++i)
        d_points[static_cast<std::size_t>(i)] = dh.row(i).tail(3).transpose();

    const FeatMatrix d_sampled =
        attention_ ? self_attention_backward(sampled_, d_attended) : d_attended;
    const std::vector<Vec3> d_sample_points = sampler_.backward(d_sampled, d_feat);
    for (std::size_t i = 0; i < d_points.size(); ++i) d_points[i] += d_sample_points[i];
    return d_points;
}

// ---------------------------------------------------------------------------
// DeformNet

DeformNet::DeformNet(const ModelConfig& cfg) : cfg_(cfg) {
    Rng rng(cfg.seed);
    fem_ = Fem(store_, cfg, rng);
    const int n = cfg.input_dim;
    const int level_res[3] = {n / 4, n / 2, n};
    const int level_ch[3] = {cfg.channels[2], cfg.channels[1], cfg.channels[0]};
    for (int s = 0; s < cfg.n_stages; ++s) {
        const int lvl = std::min(s, 2);
        const double step = 2.0 / std::max(level_res[lvl] - 1, 1);
        stages_.emplace_back(store_, "stage" + std::to_string(s + 1), level_ch[lvl],
                             cfg.gcn_dim, step, cfg.use_attention, rng);
    }
}

TriMesh DeformNet::make_template() const {
    TriMesh ico = icosphere(cfg_.template_level);
    std::vector<Vec3> v = ico.vertices();
    for (Vec3& p : v) p *= cfg_.template_radius;
    return ico.with_vertices(std::move(v), Units::normalized);
}

NetForward DeformNet::forward(const Volume& img, const TriMesh& template_mesh, bool train) {
    NetForward fwd;
    fwd.train = train;
    fwd.input_template = template_mesh;
    fwd.fem = fem_.forward(img, train);

    TriMesh mesh = template_mesh;
    bool unpooled_before = false;
    for (int s = 0; s < cfg_.n_stages; ++s) {
        const int lvl = std::min(s, 2);
        fwd.stage_inputs.push_back(mesh);
        const std::vector<Vec3> disp = stages_[s].forward(fwd.fem.pyramid[lvl], mesh, train);
        std::vector<Vec3> moved = mesh.vertices();
        for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += disp[i];
        TriMesh p = mesh.with_vertices(std::move(moved));

        std::vector<int> survivors;
        if (unpooled_before && cfg_.use_vertex_filter) {
            const ParentMap& pm = fwd.parent_maps.back();
            TriMesh filtered = vertex_filter(p, disp, pm, cfg_.vf);
            if (filtered.vertex_count() != p.vertex_count()) {
                survivors.reserve(filtered.vertex_count());
                for (int i = 0; i < pm.base_vertex_count; ++i) survivors.push_back(i);
                for (int i = pm.base_vertex_count; i < p.vertex_count(); ++i) {
                    const double dn = disp[i].norm();
                    const double len = pm.parent_length[i - pm.base_vertex_count];
                    if (dn >= cfg_.vf.t_lo * len && dn <= cfg_.vf.t_hi * len)
                        survivors.push_back(i);
                }
                p = std::move(filtered);
            }
        }
        fwd.vf_survivors.push_back(std::move(survivors));
        fwd.stage_meshes.push_back(p);

        unpooled_before = false;
        if (s + 1 < cfg_.n_stages && s < cfg_.unpools) {
            auto [up, pm] = uniform_unpool(p);
            mesh = std::move(up);
            fwd.parent_maps.push_back(std::move(pm));
            unpooled_before = true;
        } else {
            mesh = p;
            fwd.parent_maps.emplace_back();  // placeholder, no unpool
        }
    }
    return fwd;
}

void DeformNet::backward(NetForward& fwd, const std::vector<std::vector<Vec3>>& d_stage_meshes,
                         const std::vector<std::vector<double>>& d_seg_prob) {
    std::vector<Tensor> d_pyramid(3);
    for (int l = 0; l < 3; ++l) {
        const Tensor& f = fwd.fem.pyramid[l];
        d_pyramid[l] = Tensor::zeros(f.c, f.z, f.y, f.x);
    }

    std::vector<Vec3> carry;  // dL/d(vertices of stage s mesh, post-filter)
    for (int s = cfg_.n_stages - 1; s >= 0; --s) {
        std::vector<Vec3> d_p(fwd.stage_meshes[s].vertex_count(), Vec3::Zero());
        if (s < static_cast<int>(d_stage_meshes.size()) && !d_stage_meshes[s].empty())
            for (std::size_t i = 0; i < d_p.size(); ++i) d_p[i] += d_stage_meshes[s][i];
        if (!carry.empty())
            for (std::size_t i = 0; i < d_p.size(); ++i) d_p[i] += carry[i];

        // Undo the vertex filter: survivors carry gradient, pruned midpoints
        // are out of the downstream graph.
        const std::vector<int>& survivors = fwd.vf_survivors[s];
        std::vector<Vec3> d_unfiltered;
        if (!survivors.empty()) {
            d_unfiltered.assign(fwd.stage_inputs[s].vertex_count(), Vec3::Zero());
            for (std::size_t k = 0; k < survivors.size(); ++k)
                d_unfiltered[survivors[k]] = d_p[k];
        } else {
            d_unfiltered = std::move(d_p);
        }

        // P = input + disp: both receive d_unfiltered; the stage adds the
        // sampling-coordinate and coordinate-feature paths.
        const int lvl = std::min(s, 2);
        const std::vector<Vec3> d_in_stage =
            stages_[s].backward(d_unfiltered, d_pyramid[lvl]);
        std::vector<Vec3> d_input(fwd.stage_inputs[s].vertex_count());
        for (std::size_t i = 0; i < d_input.size(); ++i)
            d_input[i] = d_unfiltered[i] + d_in_stage[i];

        if (s == 0) {
            carry.clear();
            break;
        }
        // Undo the unpool between stage s-1 and s (if any).
        const ParentMap& pm = fwd.parent_maps[s - 1];
        if (!pm.parent.empty() || pm.base_vertex_count > 0) {
            carry.assign(pm.base_vertex_count, Vec3::Zero());
            for (int i = 0; i < pm.base_vertex_count; ++i) carry[i] = d_input[i];
            for (std::size_t mIdx = 0; mIdx < pm.parent.size(); ++mIdx) {
                const Vec3 g = 0.5 * d_input[pm.base_vertex_count + mIdx];
                carry[pm.parent[mIdx][0]] += g;
                carry[pm.parent[mIdx][1]] += g;
            }
        } else {
            carry = std::move(d_input);
        }
    }

    fem_.backward(d_pyramid, d_seg_prob);
}

// ---------------------------------------------------------------------------
// training

namespace {

struct Adam {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long t = 0;
    std::vector<std::vector<double>> m, v;

    void init(const ParamStore& ps) {
        m.clear();
        v.clear();
        for (const auto& p : ps.all()) {
            m.emplace_back(p->w.size(), 0.0);
            v.emplace_back(p->w.size(), 0.0);
        }
    }
    void step(ParamStore& ps, double grad_scale) {
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        std::size_t k = 0;
        for (const auto& p : ps.all()) {
            if (p->trainable) {
                for (std::size_t i = 0; i < p->w.size(); ++i) {
                    const double g = p->g[i] * grad_scale;
                    m[k][i] = beta1 * m[k][i] + (1.0 - beta1) * g;
                    v[k][i] = beta2 * v[k][i] + (1.0 - beta2) * g * g;
                    p->w[i] -= lr * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + eps);
                }
            }
            ++k;
        }
    }
};

double global_grad_norm(const ParamStore& ps) {
    double s = 0.0;
    for (const auto& p : ps.all())
        if (p->trainable)
            for (double g : p->g) s += g * g;
    return std::sqrt(s);
}

std::vector<std::vector<double>> snapshot(const ParamStore& ps) {
    std::vector<std::vector<double>> snap;
    for (const auto& p : ps.all()) snap.push_back(p->w);
    return snap;
}

void restore(ParamStore& ps, const std::vector<std::vector<double>>& snap) {
    std::size_t k = 0;
    for (const auto& p : ps.all()) p->w = snap[k++];
}

NormMap grid_frame(const Volume& v) {
    NormMap f;
    for (int a = 0; a < 3; ++a) {
        f.scale[a] = (v.dims[a] - 1) * v.spacing[a] / 2.0;
        f.offset[a] = v.origin[a] + f.scale[a];
    }
    return f;
}

}  // namespace

double eval_sample_dice(DeformNet& net, const TrainSample& sample) {
    const NetForward fwd = net.forward(sample.image, net.make_template(), /*train=*/false);
    const TriMesh& mesh = fwd.stage_meshes.back();
    const NormMap frame = grid_frame(sample.mask);
    std::vector<Vec3> mm = mesh.vertices();
    for (Vec3& p : mm) p = frame.to_mm(p);
    const TriMesh mesh_mm = mesh.with_vertices(std::move(mm), Units::mm);
    const Volume pred =
        rasterize(mesh_mm, sample.mask.dims, sample.mask.spacing, sample.mask.origin);
    return dice_jaccard(pred, sample.mask).dice;
}

TrainReport train_toy(DeformNet& net, const std::vector<TrainSample>& train_set,
                      const std::vector<TrainSample>& test_set, const TrainConfig& cfg) {
    if (train_set.size() < 10)
        throw std::invalid_argument("train_toy: need at least 10 training volumes");

    TrainReport report;
    Adam adam;
    adam.lr = cfg.lr;
    adam.init(net.params());
    Rng order_rng(cfg.seed);

    std::vector<TargetContext> targets;
    targets.reserve(train_set.size());
    for (const auto& s : train_set) targets.emplace_back(s.target);

    const TriMesh tmpl = net.make_template();
    std::vector<std::vector<double>> last_good = snapshot(net.params());

    auto evaluate = [&]() {
        double sum = 0.0;
        for (const auto& s : test_set) sum += eval_sample_dice(net, s);
        return test_set.empty() ? 0.0 : sum / static_cast<double>(test_set.size());
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.lr_decay_every > 0 && epoch > 0 && epoch % cfg.lr_decay_every == 0)
            adam.lr *= cfg.lr_decay_factor;
        std::vector<int> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), order_rng);

        double epoch_loss = 0.0;
        for (int idx : order) {
            const TrainSample& s = train_set[idx];
            net.params().zero_grad();
            NetForward fwd = net.forward(s.image, tmpl, /*train=*/true);

            const ExtResult ext = ext_loss(fwd.fem.seg_prob, s.mask, cfg.ext);
            double loss = ext.value;
            std::vector<std::vector<Vec3>> d_meshes(fwd.stage_meshes.size());
            for (std::size_t st = 0; st < fwd.stage_meshes.size(); ++st) {
                const EnergyReport rep =
                    rec_energy(fwd.stage_meshes[st], targets[idx], cfg.rec, cfg.normal_form);
                loss += rep.total;
                d_meshes[st] = rep.total_grad;
            }
            if (!std::isfinite(loss)) {
                restore(net.params(), last_good);
                report.diverged = true;
                report.epochs_run = epoch;
                report.final_dice = evaluate();
                return report;
            }
            net.backward(fwd, d_meshes, ext.grads);

            double scale = 1.0;
            if (cfg.grad_clip > 0.0) {
                const double norm = global_grad_norm(net.params());
                if (norm > cfg.grad_clip) scale = cfg.grad_clip / norm;
            }
            adam.step(net.params(), scale);
            epoch_loss += loss;
        }
        report.epoch_loss.push_back(epoch_loss / static_cast<double>(train_set.size()));
        report.epochs_run = epoch + 1;

        const bool last_epoch = epoch + 1 == cfg.epochs;
        if ((epoch + 1) % cfg.eval_every == 0 || last_epoch) {
            const double dice = evaluate();
            report.dice_trace.emplace_back(epoch + 1, dice);
            report.final_dice = dice;
            last_good = snapshot(net.params());
            if (cfg.early_stop_dice > 0.0 && dice >= cfg.early_stop_dice) {
                report.reached_target = true;
                return report;
            }
        }
    }
    report.reached_target =
        cfg.early_stop_dice > 0.0 && report.final_dice >= cfg.early_stop_dice;
    return report;
}

std::vector<TrainSample> make_synthetic_dataset(int count, int dim, std::uint64_t seed) {
    std::vector<TrainSample> out;
    out.reserve(count);
    Rng rng(seed);
    std::uniform_int_distribution<int> blobs(1, 2);
    for (int i = 0; i < count; ++i) {
        SynthParams p;
        p.seed = seed * 1000003ull + static_cast<std::uint64_t>(i);
        p.dims = {dim, dim, dim};
        p.n_blobs = blobs(rng);
        p.radius_min = 0.24;
        p.radius_max = 0.40;
        p.neck_width = 0.10;
        p.noise_sigma = 0.02;
        auto [sdf, mask] = synth_shape(p);
        TrainSample s;
        s.image = zscore_normalize(render_intensity(sdf, p));
        s.mask = std::move(mask);
        IsoConfig iso;
        iso.min_component_voxels = dim >= 64 ? 50 : 10;
        s.target = pseudo_gold(s.mask, iso).mesh;
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// finite differences

double grad_check(const std::function<double(const std::vector<double>&)>& f,
                  const std::vector<double>& analytic, const std::vector<double>& x0,
                  double h) {
    double worst = 0.0;
    std::vector<double> x = x0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        x[i] = x0[i] + h;
        const double fp = f(x);
        x[i] = x0[i] - h;
        const double fm = f(x);
        x[i] = x0[i];
        const double fd = (fp - fm) / (2.0 * h);
        const double rel = std::abs(fd - analytic[i]) /
                           std::max(std::abs(fd) + std::abs(analytic[i]), 1e-6);
        worst = std::max(worst, rel);
    }
    return worst;
}

namespace {

Tensor random_tensor(int c, int n, Rng& rng) {
    Tensor t = Tensor::zeros(c, n, n, n);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : t.v) v = dist(rng);
    return t;
}

std::vector<Vec3> random_interior_points(int n, Rng& rng) {
    std::uniform_real_distribution<double> uni(-0.8, 0.8);
    std::vector<Vec3> pts(n);
    for (auto& p : pts) p = Vec3(uni(rng), uni(rng), uni(rng));
    return pts;
}

FeatMatrix random_mat(int r, int c, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    FeatMatrix m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = dist(rng);
    return m;
}

double check_grid_sample(Rng& rng) {
    const Tensor feat = random_tensor(2, 4, rng);
    const std::vector<Vec3> pts = random_interior_points(5, rng);
    const FeatMatrix cot = random_mat(5, 2, rng);

    Tensor d_feat;
    const std::vector<Vec3> d_pts = grid_sample_backward(feat, pts, cot, d_feat);

    // Pack [feat | point coords] into one parameter vector.
    std::vector<double> x0 = feat.v;
    std::vector<double> analytic = d_feat.v;
    for (const Vec3& p : pts)
        for (int a = 0; a < 3; ++a) x0.push_back(p[a]);
    for (const Vec3& g : d_pts)
        for (int a = 0; a < 3; ++a) analytic.push_back(g[a]);

    auto f = [&](const std::vector<double>& x) {
        Tensor ft = feat;
        std::copy(x.begin(), x.begin() + ft.v.size(), ft.v.begin());
        std::vector<Vec3> p(pts.size());
        for (std::size_t i = 0; i < p.size(); ++i)
            p[i] = Vec3(x[ft.v.size() + 3 * i], x[ft.v.size() + 3 * i + 1],
                        x[ft.v.size() + 3 * i + 2]);
        return (grid_sample(ft, p).array() * cot.array()).sum();
    };
    return grad_check(f, analytic, x0);
}

double check_offset_sample(Rng& rng) {
    ParamStore ps;
    OffsetSample sampler(ps, "os", 0.25);
    const Tensor feat = random_tensor(2, 4, rng);
    const std::vector<Vec3> pts = random_interior_points(4, rng);
    const FeatMatrix cot = random_mat(4, 2, rng);

    ps.zero_grad();
    sampler.forward(feat, pts);
    Tensor d_feat;
    const std::vector<Vec3> d_pts = sampler.backward(cot, d_feat);

    Param* off = ps.find("os.offsets");
    Param* taps = ps.find("os.taps");
    std::vector<double> x0 = off->w;
    x0.insert(x0.end(), taps->w.begin(), taps->w.end());
    std::vector<double> analytic = off->g;
    analytic.insert(analytic.end(), taps->g.begin(), taps->g.end());
    for (const Vec3& g : d_pts)
        for (int a = 0; a < 3; ++a) analytic.push_back(g[a]);
    for (const Vec3& p : pts)
        for (int a = 0; a < 3; ++a) x0.push_back(p[a]);

    auto f = [&](const std::vector<double>& x) {
        ParamStore ps2;
        OffsetSample s2(ps2, "os", 0.25);
        Param* off2 = ps2.find("os.offsets");
        Param* taps2 = ps2.find("os.taps");
        std::copy(x.begin(), x.begin() + 81, off2->w.begin());
        std::copy(x.begin() + 81, x.begin() + 81 + 27, taps2->w.begin());
        std::vector<Vec3> p(pts.size());
        for (std::size_t i = 0; i < p.size(); ++i)
            p[i] = Vec3(x[108 + 3 * i], x[108 + 3 * i + 1], x[108 + 3 * i + 2]);
        return (s2.forward(feat, p).array() * cot.array()).sum();
    };
    return grad_check(f, analytic, x0);
}

double check_self_attention(Rng& rng) {
    const FeatMatrix f0 = random_mat(8, 4, rng);
    const FeatMatrix cot = random_mat(8, 4, rng);
    const FeatMatrix d_f = self_attention_backward(f0, cot);

    std::vector<double> x0, analytic;
    for (int i = 0; i < f0.rows(); ++i)
        for (int j = 0; j < f0.cols(); ++j) {
            x0.push_back(f0(i, j));
            analytic.push_back(d_f(i, j));
        }
    auto f = [&](const std::vector<double>& x) {
        FeatMatrix m(f0.rows(), f0.cols());
        std::size_t k = 0;
        for (int i = 0; i < m.rows(); ++i)
            for (int j = 0; j < m.cols(); ++j) m(i, j) = x[k++];
        return (self_attention(m).array() * cot.array()).sum();
    };
    return grad_check(f, analytic, x0);
}

double check_graph_conv(Rng& rng) {
    const TriMesh ico = icosphere(0);
    const auto& neigh = ico.vertex_neighbors();
    const int n = ico.vertex_count();
    const FeatMatrix h0 = random_mat(n, 3, rng);
    const FeatMatrix cot = random_mat(n, 4, rng);

    ParamStore ps;
    Rng init_rng(12345);
    GraphConv gc(ps, "gc", 3, 4, init_rng);
    ps.zero_grad();
    gc.forward(h0, neigh);
    const FeatMatrix d_h = gc.backward(cot);

    Param* w0 = ps.find("gc.w0");
    Param* w1 = ps.find("gc.w1");
    Param* b = ps.find("gc.b");
    std::vector<double> x0 = w0->w;
    x0.insert(x0.end(), w1->w.begin(), w1->w.end());
    x0.insert(x0.end(), b->w.begin(), b->w.end());
    std::vector<double> analytic = w0->g;
    analytic.insert(analytic.end(), w1->g.begin(), w1->g.end());
    analytic.insert(analytic.end(), b->g.begin(), b->g.end());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < 3; ++j) {
            x0.push_back(h0(i, j));
            analytic.push_back(d_h(i, j));
        }

    auto f = [&](const std::vector<double>& x) {
        ParamStore ps2;
        Rng r2(12345);
        GraphConv g2(ps2, "gc", 3, 4, r2);
        Param* w0b = ps2.find("gc.w0");
        Param* w1b = ps2.find("gc.w1");
        Param* bb = ps2.find("gc.b");
        std::size_t k = 0;
        for (double& v : w0b->w) v = x[k++];
        for (double& v : w1b->w) v = x[k++];
        for (double& v : bb->w) v = x[k++];
        FeatMatrix h(n, 3);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 3; ++j) h(i, j) = x[k++];
        return (g2.forward(h, neigh).array() * cot.array()).sum();
    };
    return grad_check(f, analytic, x0);
}

double check_de_stage(Rng& rng) {
    const TriMesh ico = icosphere(0);
    const int n = ico.vertex_count();
    const Tensor feat = random_tensor(3, 4, rng);
    FeatMatrix cot = 0.1 * random_mat(n, 3, rng);

    // Perturb the head away from zero so the displacement path is active.
    const std::uint64_t stage_seed = rng();
    auto build = [&](ParamStore& ps) {
        Rng r(stage_seed);
        DeStage st(ps, "st", 3, 6, 0.3, true, r);
        Param* hw = ps.find("st.head.w");
        Rng hr(stage_seed ^ 0xabcdef);
        std::normal_distribution<double> dist(0.0, 0.05);
        for (double& v : hw->w) v = dist(hr);
        return st;
    };

    ParamStore ps;
    DeStage st = build(ps);
    std::vector<Vec3> verts = ico.vertices();
    for (Vec3& v : verts) v *= 0.5;
    const TriMesh mesh = ico.with_vertices(verts, Units::normalized);

    ps.zero_grad();
    st.forward(feat, mesh, /*train=*/true);
    std::vector<Vec3> d_disp(n);
    for (int i = 0; i < n; ++i) d_disp[i] = cot.row(i).transpose();
    Tensor d_feat;
    const std::vector<Vec3> d_pts = st.backward(d_disp, d_feat);

    // Check against positions and the feature volume jointly.
    std::vector<double> x0, analytic;
    for (const Vec3& v : mesh.vertices())
        for (int a = 0; a < 3; ++a) x0.push_back(v[a]);
    for (const Vec3& g : d_pts)
        for (int a = 0; a < 3; ++a) analytic.push_back(g[a]);
    x0.insert(x0.end(), feat.v.begin(), feat.v.end());
    analytic.insert(analytic.end(), d_feat.v.begin(), d_feat.v.end());

    auto f = [&](const std::vector<double>& x) {
        ParamStore ps2;
        DeStage st2 = build(ps2);
        std::vector<Vec3> v(n);
        for (int i = 0; i < n; ++i) v[i] = Vec3(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
        Tensor ft = feat;
        std::copy(x.begin() + 3 * n, x.end(), ft.v.begin());
        const TriMesh m2 = ico.with_vertices(v, Units::normalized);
        const std::vector<Vec3> disp = st2.forward(ft, m2, /*train=*/true);
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += disp[i].dot(cot.row(i).transpose());
        return s;
    };
    return grad_check(f, analytic, x0);
}

double check_linear(Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> a(10), x0(10);
    for (double& v : a) v = dist(rng);
    for (double& v : x0) v = dist(rng);
    auto f = [&](const std::vector<double>& x) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += a[i] * x[i];
        return s;
    };
    return grad_check(f, a, x0);
}

}  // namespace

double grad_check_op(const std::string& op, int trials, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        double err;
        if (op == "linear") err = check_linear(rng);
        else if (op == "grid_sample") err = check_grid_sample(rng);
        else if (op == "offset_sample") err = check_offset_sample(rng);
        else if (op == "self_attention") err = check_self_attention(rng);
        else if (op == "graph_conv") err = check_graph_conv(rng);
        else if (op == "de_stage") err = check_de_stage(rng);
        else throw std::invalid_argument("grad_check_op: unknown op '" + op + "'");
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace meshfit
