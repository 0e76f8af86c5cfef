#include "meshfit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace meshfit {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

double he_sigma(int fan_in) { return std::sqrt(2.0 / std::max(fan_in, 1)); }

void fill_normal(std::vector<double>& w, double sigma, Rng& rng) {
    std::normal_distribution<double> dist(0.0, sigma);
    for (double& x : w) x = dist(rng);
}

}  // namespace

Param* ParamStore::add(std::string name, std::vector<int> shape, bool trainable) {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    auto p = std::make_unique<Param>();
    p->name = std::move(name);
    p->shape = std::move(shape);
    p->w.assign(n, 0.0);
    p->g.assign(n, 0.0);
    p->trainable = trainable;
    params_.push_back(std::move(p));
    return params_.back().get();
}

Param* ParamStore::find(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

const Param* ParamStore::find(const std::string& name) const {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) std::fill(p->g.begin(), p->g.end(), 0.0);
}

// ---------------------------------------------------------------------------
// grid sampling

namespace {

struct AxisSample {
    int i0, i1;
    double t;
    double dfdq;  // lattice-coordinate derivative; 0 when border-clamped
};

AxisSample axis_sample(double q, int n) {
    AxisSample s;
    if (n == 1) {
        s.i0 = s.i1 = 0;
        s.t = 0.0;
        s.dfdq = 0.0;
        return s;
    }
    const double half = (n - 1) / 2.0;
    double f = (q + 1.0) * half;
    double dfdq = half;
    if (f <= 0.0) {
        f = 0.0;
        dfdq = 0.0;
    } else if (f >= n - 1) {
        f = n - 1;
        dfdq = 0.0;
    }
    int i0 = static_cast<int>(f);
    if (i0 > n - 2) i0 = n - 2;
    s.i0 = i0;
    s.i1 = i0 + 1;
    s.t = f - i0;
    s.dfdq = dfdq;
    return s;
}

}  // namespace

FeatMatrix grid_sample(const Tensor& feat, const std::vector<Vec3>& points) {
    const int n = static_cast<int>(points.size());
    FeatMatrix out(n, feat.c);
    for (int p = 0; p < n; ++p) {
        const AxisSample sx = axis_sample(points[p].x(), feat.x);
        const AxisSample sy = axis_sample(points[p].y(), feat.y);
        const AxisSample sz = axis_sample(points[p].z(), feat.z);
        const double wx[2] = {1.0 - sx.t, sx.t};
        const double wy[2] = {1.0 - sy.t, sy.t};
        const double wz[2] = {1.0 - sz.t, sz.t};
        const int ix[2] = {sx.i0, sx.i1};
        const int iy[2] = {sy.i0, sy.i1};
        const int iz[2] = {sz.i0, sz.i1};
        for (int ch = 0; ch < feat.c; ++ch) {
            double acc = 0.0;
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                    for (int c = 0; c < 2; ++c)
                        acc += wz[a] * wy[b] * wx[c] * feat.at(ch, iz[a], iy[b], ix[c]);
            out(p, ch) = acc;
        }
    }
    return out;
}

std::vector<Vec3> grid_sample_backward(const Tensor& feat, const std::vector<Vec3>& points,
                                       const FeatMatrix& d_out, Tensor& d_feat) {
    if (!d_feat.same_shape(feat)) d_feat = Tensor::zeros(feat.c, feat.z, feat.y, feat.x);
    const int n = static_cast<int>(points.size());
    std::vector<Vec3> d_points(n, Vec3::Zero());
    for (int p = 0; p < n; ++p) {
        const AxisSample sx = axis_sample(points[p].x(), feat.x);
        const AxisSample sy = axis_sample(points[p].y(), feat.y);
        const AxisSample sz = axis_sample(points[p].z(), feat.z);
        const double wx[2] = {1.0 - sx.t, sx.t};
        const double wy[2] = {1.0 - sy.t, sy.t};
        const double wz[2] = {1.0 - sz.t, sz.t};
        const double dsign[2] = {-1.0, 1.0};
        const int ix[2] = {sx.i0, sx.i1};
        const int iy[2] = {sy.i0, sy.i1};
        const int iz[2] = {sz.i0, sz.i1};
        for (int ch = 0; ch < feat.c; ++ch) {
            const double go = d_out(p, ch);
            if (go == 0.0) continue;
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                    for (int c = 0; c < 2; ++c) {
                        const double val = feat.at(ch, iz[a], iy[b], ix[c]);
                        d_feat.at(ch, iz[a], iy[b], ix[c]) += go * wz[a] * wy[b] * wx[c];
                        d_points[p].x() += go * wz[a] * wy[b] * dsign[c] * val * sx.dfdq;
                        d_points[p].y() += go * wz[a] * dsign[b] * wx[c] * val * sy.dfdq;
                        d_points[p].z() += go * dsign[a] * wy[b] * wx[c] * val * sz.dfdq;
                    }
        }
    }
    return d_points;
}

// ---------------------------------------------------------------------------
// self attention

namespace {
constexpr double kAttnGuard2 = 1e-24;

Eigen::VectorXd row_norms_guarded(const FeatMatrix& f) {
    Eigen::VectorXd r(f.rows());
    for (Eigen::Index i = 0; i < f.rows(); ++i)
        r(i) = std::sqrt(f.row(i).squaredNorm() + kAttnGuard2);
    return r;
}
}  // namespace

FeatMatrix self_attention_reference(const FeatMatrix& f) {
    const Eigen::Index n = f.rows();
    const Eigen::VectorXd r = row_norms_guarded(f);
    FeatMatrix g = FeatMatrix::Zero(n, f.cols());
    for (Eigen::Index m = 0; m < n; ++m) {
        for (Eigen::Index k = 0; k < n; ++k) {
            const double a = f.row(m).dot(f.row(k)) / (r(m) * r(k));
            g.row(m) += a * f.row(k);
        }
    }
    return g;
}

FeatMatrix self_attention(const FeatMatrix& f) {
    const Eigen::VectorXd r = row_norms_guarded(f);
    const FeatMatrix fhat = r.cwiseInverse().asDiagonal() * f;
    const FeatMatrix s = fhat.transpose() * f;  // C x C
    return fhat * s;
}

FeatMatrix self_attention_backward(const FeatMatrix& f, const FeatMatrix& d_out) {
    const Eigen::VectorXd r = row_norms_guarded(f);
    const FeatMatrix fhat = r.cwiseInverse().asDiagonal() * f;
    const FeatMatrix s = fhat.transpose() * f;
    const FeatMatrix d_s = fhat.transpose() * d_out;

    FeatMatrix d_f = fhat * d_s;
    const FeatMatrix d_fhat = d_out * s.transpose() + f * d_s.transpose();
    for (Eigen::Index m = 0; m < f.rows(); ++m) {
        const double rm = r(m);
        const double proj = f.row(m).dot(d_fhat.row(m));
        d_f.row(m) += d_fhat.row(m) / rm - f.row(m) * (proj / (rm * rm * rm));
    }
    return d_f;
}

// ---------------------------------------------------------------------------
// convolution layers

Conv3::Conv3(ParamStore& ps, const std::string& name, int c_in, int c_out, Rng& rng)
    : cin_(c_in), cout_(c_out) {
    w_ = ps.add(name + ".w", {c_out, c_in, 3, 3, 3});
    b_ = ps.add(name + ".b", {c_out});
    fill_normal(w_->w, he_sigma(c_in * 27), rng);
}

Tensor Conv3::forward(const Tensor& in) {
    in_ = in;
    Tensor out = Tensor::zeros(cout_, in.z, in.y, in.x);
    const int Z = in.z, Y = in.y, X = in.x;
    for (int co = 0; co < cout_; ++co) {
        double* oc = out.channel(co);
        const double bias = b_->w[co];
        for (std::size_t i = 0; i < out.spatial(); ++i) oc[i] = bias;
        for (int ci = 0; ci < cin_; ++ci) {
            const double* ic = in.channel(ci);
            const double* wk = &w_->w[(static_cast<std::size_t>(co) * cin_ + ci) * 27];
            for (int dz = 0; dz < 3; ++dz) {
                const int oz = dz - 1;
                const int z0 = std::max(0, -oz), z1 = std::min(Z, Z - oz);
                for (int dy = 0; dy < 3; ++dy) {
                    const int oy = dy - 1;
                    const int y0 = std::max(0, -oy), y1 = std::min(Y, Y - oy);
                    for (int dx = 0; dx < 3; ++dx) {
                        const double w = wk[(dz * 3 + dy) * 3 + dx];
                        const int ox = dx - 1;
                        const int x0 = std::max(0, -ox), x1 = std::min(X, X - ox);
                        for (int z = z0; z < z1; ++z) {
                            for (int y = y0; y < y1; ++y) {
                                const double* s =
                                    ic + (static_cast<std::size_t>(z + oz) * Y + (y + oy)) * X + ox;
                                double* d = oc + (static_cast<std::size_t>(z) * Y + y) * X;
                                for (int x = x0; x < x1; ++x) d[x] += w * s[x];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor Conv3::backward(const Tensor& d_out) {
    Tensor d_in = Tensor::zeros(cin_, in_.z, in_.y, in_.x);
    const int Z = in_.z, Y = in_.y, X = in_.x;
    for (int co = 0; co < cout_; ++co) {
        const double* go = d_out.channel(co);
        double acc_b = 0.0;
        for (std::size_t i = 0; i < d_out.spatial(); ++i) acc_b += go[i];
        b_->g[co] += acc_b;
        for (int ci = 0; ci < cin_; ++ci) {
            const double* ic = in_.channel(ci);
            double* gic = d_in.channel(ci);
            const std::size_t wbase = (static_cast<std::size_t>(co) * cin_ + ci) * 27;
            for (int dz = 0; dz < 3; ++dz) {
                const int oz = dz - 1;
                const int z0 = std::max(0, -oz), z1 = std::min(Z, Z - oz);
                for (int dy = 0; dy < 3; ++dy) {
                    const int oy = dy - 1;
                    const int y0 = std::max(0, -oy), y1 = std::min(Y, Y - oy);
                    for (int dx = 0; dx < 3; ++dx) {
                        const int ox = dx - 1;
                        const int x0 = std::max(0, -ox), x1 = std::min(X, X - ox);
                        const double w = w_->w[wbase + (dz * 3 + dy) * 3 + dx];
                        // Split axpy and reduction so both vectorize; the
                        // reduction uses four lanes to break the dependence.
                        double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                        for (int z = z0; z < z1; ++z) {
                            for (int y = y0; y < y1; ++y) {
                                const double* s =
                                    ic + (static_cast<std::size_t>(z + oz) * Y + (y + oy)) * X + ox;
                                double* gs =
                                    gic + (static_cast<std::size_t>(z + oz) * Y + (y + oy)) * X + ox;
                                const double* g = go + (static_cast<std::size_t>(z) * Y + y) * X;
                                for (int x = x0; x < x1; ++x) gs[x] += w * g[x];
                                int x = x0;
                                for (; x + 4 <= x1; x += 4) {
                                    a0 += s[x] * g[x];
                                    a1 += s[x + 1] * g[x + 1];
                                    a2 += s[x + 2] * g[x + 2];
                                    a3 += s[x + 3] * g[x + 3];
                                }
                                for (; x < x1; ++x) a0 += s[x] * g[x];
                            }
                        }
                        w_->g[wbase + (dz * 3 + dy) * 3 + dx] += (a0 + a1) + (a2 + a3);
                    }
                }
            }
        }
    }
    return d_in;
}

Conv1::Conv1(ParamStore& ps, const std::string& name, int c_in, int c_out, Rng& rng,
             bool zero_init)
    : cin_(c_in), cout_(c_out) {
    w_ = ps.add(name + ".w", {c_out, c_in});
    b_ = ps.add(name + ".b", {c_out});
    if (!zero_init) fill_normal(w_->w, he_sigma(c_in), rng);
}

Tensor Conv1::forward(const Tensor& in) {
    in_ = in;
    Tensor out = Tensor::zeros(cout_, in.z, in.y, in.x);
    const std::size_t sp = in.spatial();
    for (int co = 0; co < cout_; ++co) {
        double* oc = out.channel(co);
        const double bias = b_->w[co];
        for (std::size_t i = 0; i < sp; ++i) oc[i] = bias;
        for (int ci = 0; ci < cin_; ++ci) {
            const double w = w_->w[static_cast<std::size_t>(co) * cin_ + ci];
            const double* ic = in.channel(ci);
            for (std::size_t i = 0; i < sp; ++i) oc[i] += w * ic[i];
        }
    }
    return out;
}

Tensor Conv1::backward(const Tensor& d_out) {
    Tensor d_in = Tensor::zeros(cin_, in_.z, in_.y, in_.x);
    const std::size_t sp = in_.spatial();
    for (int co = 0; co < cout_; ++co) {
        const double* go = d_out.channel(co);
        double acc_b = 0.0;
        for (std::size_t i = 0; i < sp; ++i) acc_b += go[i];
        b_->g[co] += acc_b;
        for (int ci = 0; ci < cin_; ++ci) {
            const double w = w_->w[static_cast<std::size_t>(co) * cin_ + ci];
            const double* ic = in_.channel(ci);
            double* gi = d_in.channel(ci);
            double acc_w = 0.0;
            for (std::size_t i = 0; i < sp; ++i) {
                acc_w += ic[i] * go[i];
                gi[i] += w * go[i];
            }
            w_->g[static_cast<std::size_t>(co) * cin_ + ci] += acc_w;
        }
    }
    return d_in;
}

UpConv2::UpConv2(ParamStore& ps, const std::string& name, int c_in, int c_out, Rng& rng)
    : cin_(c_in), cout_(c_out) {
    w_ = ps.add(name + ".w", {c_in, c_out, 2, 2, 2});
    b_ = ps.add(name + ".b", {c_out});
    fill_normal(w_->w, he_sigma(c_in), rng);
}

Tensor UpConv2::forward(const Tensor& in) {
    in_ = in;
    Tensor out = Tensor::zeros(cout_, in.z * 2, in.y * 2, in.x * 2);
    for (int co = 0; co < cout_; ++co) {
        double* oc = out.channel(co);
        const double bias = b_->w[co];
        for (std::size_t i = 0; i < out.spatial(); ++i) oc[i] = bias;
    }
    for (int ci = 0; ci < cin_; ++ci) {
        for (int co = 0; co < cout_; ++co) {
            const double* wk = &w_->w[(static_cast<std::size_t>(ci) * cout_ + co) * 8];
            for (int z = 0; z < in.z; ++z)
                for (int y = 0; y < in.y; ++y)
                    for (int x = 0; x < in.x; ++x) {
                        const double v = in.at(ci, z, y, x);
                        for (int dz = 0; dz < 2; ++dz)
                            for (int dy = 0; dy < 2; ++dy)
                                for (int dx = 0; dx < 2; ++dx)
                                    out.at(co, 2 * z + dz, 2 * y + dy, 2 * x + dx) +=
                                        wk[(dz * 2 + dy) * 2 + dx] * v;
                    }
        }
    }
    return out;
}

Tensor UpConv2::backward(const Tensor& d_out) {
    Tensor d_in = Tensor::zeros(cin_, in_.z, in_.y, in_.x);
    for (int co = 0; co < cout_; ++co) {
        const double* go = d_out.channel(co);
        double acc_b = 0.0;
        for (std::size_t i = 0; i < d_out.spatial(); ++i) acc_b += go[i];
        b_->g[co] += acc_b;
    }
    for (int ci = 0; ci < cin_; ++ci) {
        for (int co = 0; co < cout_; ++co) {
            const std::size_t wbase = (static_cast<std::size_t>(ci) * cout_ + co) * 8;
            for (int z = 0; z < in_.z; ++z)
                for (int y = 0; y < in_.y; ++y)
                    for (int x = 0; x < in_.x; ++x) {
                        const double v = in_.at(ci, z, y, x);
                        double acc = 0.0;
                        for (int dz = 0; dz < 2; ++dz)
                            for (int dy = 0; dy < 2; ++dy)
                                for (int dx = 0; dx < 2; ++dx) {
                                    const double g =
                                        d_out.at(co, 2 * z + dz, 2 * y + dy, 2 * x + dx);
                                    acc += w_->w[wbase + (dz * 2 + dy) * 2 + dx] * g;
                                    w_->g[wbase + (dz * 2 + dy) * 2 + dx] += v * g;
                                }
                        d_in.at(ci, z, y, x) += acc;
                    }
        }
    }
    return d_in;
}

// ---------------------------------------------------------------------------
// normalization / activation / pooling

ChannelNorm::ChannelNorm(ParamStore& ps, const std::string& name, int channels) : c_(channels) {
    gamma_ = ps.add(name + ".gamma", {channels});
    beta_ = ps.add(name + ".beta", {channels});
    run_mean_ = ps.add(name + ".running_mean", {channels}, false);
    run_var_ = ps.add(name + ".running_var", {channels}, false);
    std::fill(gamma_->w.begin(), gamma_->w.end(), 1.0);
    std::fill(run_var_->w.begin(), run_var_->w.end(), 1.0);
}

Tensor ChannelNorm::forward(const Tensor& in, bool train) {
    constexpr double kEps = 1e-5;
    Tensor out = in;
    xhat_ = Tensor::zeros(in.c, in.z, in.y, in.x);
    inv_std_.assign(c_, 0.0);
    train_ = train;
    const std::size_t sp = in.spatial();
    for (int ch = 0; ch < c_; ++ch) {
        const double* ic = in.channel(ch);
        // Batch-size-1 semantics: normalize by the current sample in both
        // modes (running stats are tracked but would not match any single
        // sample at inference).
        double mean = 0.0;
        for (std::size_t i = 0; i < sp; ++i) mean += ic[i];
        mean /= static_cast<double>(sp);
        double var = 0.0;
        for (std::size_t i = 0; i < sp; ++i) var += (ic[i] - mean) * (ic[i] - mean);
        var /= static_cast<double>(sp);
        if (train) {
            run_mean_->w[ch] = (1.0 - momentum_) * run_mean_->w[ch] + momentum_ * mean;
            run_var_->w[ch] = (1.0 - momentum_) * run_var_->w[ch] + momentum_ * var;
        }
        const double inv = 1.0 / std::sqrt(var + kEps);
        inv_std_[ch] = inv;
        double* xc = xhat_.channel(ch);
        double* oc = out.channel(ch);
        const double g = gamma_->w[ch], b = beta_->w[ch];
        for (std::size_t i = 0; i < sp; ++i) {
            xc[i] = (ic[i] - mean) * inv;
            oc[i] = g * xc[i] + b;
        }
    }
    return out;
}

Tensor ChannelNorm::backward(const Tensor& d_out) {
    Tensor d_in = Tensor::zeros(d_out.c, d_out.z, d_out.y, d_out.x);
    const std::size_t sp = d_out.spatial();
    for (int ch = 0; ch < c_; ++ch) {
        const double* go = d_out.channel(ch);
        const double* xc = xhat_.channel(ch);
        double* gi = d_in.channel(ch);
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t i = 0; i < sp; ++i) {
            sum_g += go[i];
            sum_gx += go[i] * xc[i];
        }
        gamma_->g[ch] += sum_gx;
        beta_->g[ch] += sum_g;
        const double scale = gamma_->w[ch] * inv_std_[ch];
        const double mg = sum_g / static_cast<double>(sp);
        const double mgx = sum_gx / static_cast<double>(sp);
        for (std::size_t i = 0; i < sp; ++i) gi[i] = scale * (go[i] - mg - xc[i] * mgx);
    }
    return d_in;
}

Tensor Relu::forward(const Tensor& in) {
    out_ = in;
    for (double& v : out_.v) v = v > 0.0 ? v : 0.0;
    return out_;
}

Tensor Relu::backward(const Tensor& d_out) {
    Tensor d_in = d_out;
    for (std::size_t i = 0; i < d_in.v.size(); ++i)
        if (out_.v[i] <= 0.0) d_in.v[i] = 0.0;
    return d_in;
}

Tensor MaxPool2::forward(const Tensor& in) {
    if (in.z % 2 || in.y % 2 || in.x % 2)
        throw std::invalid_argument("MaxPool2: dims must be even");
    c_ = in.c;
    z_ = in.z;
    y_ = in.y;
    x_ = in.x;
    Tensor out = Tensor::zeros(in.c, in.z / 2, in.y / 2, in.x / 2);
    argmax_.assign(out.size(), 0);
    std::size_t o = 0;
    for (int ch = 0; ch < in.c; ++ch)
        for (int z = 0; z < out.z; ++z)
            for (int y = 0; y < out.y; ++y)
                for (int x = 0; x < out.x; ++x, ++o) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const std::size_t idx =
                                    ((static_cast<std::size_t>(ch) * z_ + (2 * z + dz)) * y_ +
                                     (2 * y + dy)) *
                                        x_ +
                                    (2 * x + dx);
                                if (in.v[idx] > best) {
                                    best = in.v[idx];
                                    best_idx = idx;
                                }
                            }
                    out.v[o] = best;
                    argmax_[o] = static_cast<int>(best_idx);
                }
    return out;
}

Tensor MaxPool2::backward(const Tensor& d_out) {
    Tensor d_in = Tensor::zeros(c_, z_, y_, x_);
    for (std::size_t o = 0; o < d_out.v.size(); ++o) d_in.v[argmax_[o]] += d_out.v[o];
    return d_in;
}

// ---------------------------------------------------------------------------
// residual block

ResBlock::ResBlock(ParamStore& ps, const std::string& name, int c_in, int c_out, Rng& rng)
    : conv1_(ps, name + ".conv1", c_in, c_out, rng),
      conv2_(ps, name + ".conv2", c_out, c_out, rng),
      n1_(ps, name + ".n1", c_out),
      n2_(ps, name + ".n2", c_out),
      has_proj_(c_in != c_out) {
    if (has_proj_) proj_ = Conv1(ps, name + ".proj", c_in, c_out, rng);
}

Tensor ResBlock::forward(const Tensor& in, bool train) {
    in_ = in;
    const Tensor y = r1_.forward(n1_.forward(conv1_.forward(in), train));
    Tensor z = n2_.forward(conv2_.forward(y), train);
    if (has_proj_) {
        const Tensor sc = proj_.forward(in);
        for (std::size_t i = 0; i < z.v.size(); ++i) z.v[i] += sc.v[i];
    } else {
        for (std::size_t i = 0; i < z.v.size(); ++i) z.v[i] += in.v[i];
    }
    return r2_.forward(z);
}

Tensor ResBlock::backward(const Tensor& d_out) {
    const Tensor dz = r2_.backward(d_out);
    Tensor d_in =
        conv1_.backward(n1_.backward(r1_.backward(conv2_.backward(n2_.backward(dz)))));
    if (has_proj_) {
        const Tensor d_sc = proj_.backward(dz);
        for (std::size_t i = 0; i < d_in.v.size(); ++i) d_in.v[i] += d_sc.v[i];
    } else {
        for (std::size_t i = 0; i < d_in.v.size(); ++i) d_in.v[i] += dz.v[i];
    }
    return d_in;
}

// ---------------------------------------------------------------------------
// vertex-feature layers

Linear::Linear(ParamStore& ps, const std::string& name, int c_in, int c_out, Rng& rng,
               bool zero_init)
    : cin_(c_in), cout_(c_out) {
    w_ = ps.add(name + ".w", {c_out, c_in});
    b_ = ps.add(name + ".b", {c_out});
    if (!zero_init) fill_normal(w_->w, std::sqrt(2.0 / (c_in + c_out)), rng);
}

FeatMatrix Linear::forward(const FeatMatrix& in) {
    in_ = in;
    ConstRowMap w(w_->w.data(), cout_, cin_);
    FeatMatrix out = in * w.transpose();
    for (int c = 0; c < cout_; ++c) out.col(c).array() += b_->w[c];
    return out;
}

FeatMatrix Linear::backward(const FeatMatrix& d_out) {
    ConstRowMap w(w_->w.data(), cout_, cin_);
    RowMap gw(w_->g.data(), cout_, cin_);
    gw += d_out.transpose() * in_;
    for (int c = 0; c < cout_; ++c) b_->g[c] += d_out.col(c).sum();
    return d_out * w;
}

GraphConv::GraphConv(ParamStore& ps, const std::string& name, int c_in, int c_out, Rng& rng,
                     bool zero_init)
    : cin_(c_in), cout_(c_out) {
    w0_ = ps.add(name + ".w0", {c_out, c_in});
    w1_ = ps.add(name + ".w1", {c_out, c_in});
    b_ = ps.add(name + ".b", {c_out});
    if (!zero_init) {
        const double sigma = std::sqrt(2.0 / (c_in + c_out));
        fill_normal(w0_->w, sigma, rng);
        fill_normal(w1_->w, sigma, rng);
    }
}

FeatMatrix GraphConv::forward(const FeatMatrix& h, const std::vector<std::vector<int>>& neigh) {
    h_ = h;
    neigh_ = &neigh;
    hmean_ = FeatMatrix::Zero(h.rows(), h.cols());
    for (Eigen::Index p = 0; p < h.rows(); ++p) {
        const auto& nb = neigh[static_cast<std::size_t>(p)];
        if (nb.empty()) continue;
        for (int c : nb) hmean_.row(p) += h.row(c);
        hmean_.row(p) /= static_cast<double>(nb.size());
    }
    ConstRowMap w0(w0_->w.data(), cout_, cin_);
    ConstRowMap w1(w1_->w.data(), cout_, cin_);
    FeatMatrix out = h * w0.transpose() + hmean_ * w1.transpose();
    for (int c = 0; c < cout_; ++c) out.col(c).array() += b_->w[c];
    return out;
}

FeatMatrix GraphConv::backward(const FeatMatrix& d_out) {
    ConstRowMap w0(w0_->w.data(), cout_, cin_);
    ConstRowMap w1(w1_->w.data(), cout_, cin_);
    RowMap gw0(w0_->g.data(), cout_, cin_);
    RowMap gw1(w1_->g.data(), cout_, cin_);
    gw0 += d_out.transpose() * h_;
    gw1 += d_out.transpose() * hmean_;
    for (int c = 0; c < cout_; ++c) b_->g[c] += d_out.col(c).sum();

    FeatMatrix d_h = d_out * w0;
    const FeatMatrix d_mean = d_out * w1;
    for (Eigen::Index p = 0; p < d_h.rows(); ++p) {
        const auto& nb = (*neigh_)[static_cast<std::size_t>(p)];
        if (nb.empty()) continue;
        const double inv = 1.0 / static_cast<double>(nb.size());
        for (int c : nb) d_h.row(c) += inv * d_mean.row(p);
    }
    return d_h;
}

VertexNorm::VertexNorm(ParamStore& ps, const std::string& name, int channels) : c_(channels) {
    gamma_ = ps.add(name + ".gamma", {channels});
    beta_ = ps.add(name + ".beta", {channels});
    run_mean_ = ps.add(name + ".running_mean", {channels}, false);
    run_var_ = ps.add(name + ".running_var", {channels}, false);
    std::fill(gamma_->w.begin(), gamma_->w.end(), 1.0);
    std::fill(run_var_->w.begin(), run_var_->w.end(), 1.0);
}

FeatMatrix VertexNorm::forward(const FeatMatrix& in, bool train) {
    constexpr double kEps = 1e-5;
    const Eigen::Index n = in.rows();
    xhat_.resize(n, c_);
    inv_std_.assign(c_, 0.0);
    train_ = train;
    FeatMatrix out(n, c_);
    for (int ch = 0; ch < c_; ++ch) {
        const double mean = in.col(ch).mean();
        const double var = (in.col(ch).array() - mean).square().mean();
        if (train) {
            run_mean_->w[ch] = (1.0 - momentum_) * run_mean_->w[ch] + momentum_ * mean;
            run_var_->w[ch] = (1.0 - momentum_) * run_var_->w[ch] + momentum_ * var;
        }
        const double inv = 1.0 / std::sqrt(var + kEps);
        inv_std_[ch] = inv;
        xhat_.col(ch) = (in.col(ch).array() - mean) * inv;
        out.col(ch) = gamma_->w[ch] * xhat_.col(ch).array() + beta_->w[ch];
    }
    return out;
}

FeatMatrix VertexNorm::backward(const FeatMatrix& d_out) {
    const Eigen::Index n = d_out.rows();
    FeatMatrix d_in(n, c_);
    for (int ch = 0; ch < c_; ++ch) {
        const double sum_g = d_out.col(ch).sum();
        const double sum_gx = d_out.col(ch).dot(xhat_.col(ch));
        gamma_->g[ch] += sum_gx;
        beta_->g[ch] += sum_g;
        const double scale = gamma_->w[ch] * inv_std_[ch];
        const double mg = sum_g / static_cast<double>(n);
        const double mgx = sum_gx / static_cast<double>(n);
        d_in.col(ch) = scale * (d_out.col(ch).array() - mg - xhat_.col(ch).array() * mgx);
    }
    return d_in;
}

FeatMatrix ReluRows::forward(const FeatMatrix& in) {
    out_ = in.cwiseMax(0.0);
    return out_;
}

FeatMatrix ReluRows::backward(const FeatMatrix& d_out) {
    FeatMatrix d_in = d_out;
    for (Eigen::Index i = 0; i < d_in.rows(); ++i)
        for (Eigen::Index j = 0; j < d_in.cols(); ++j)
            if (out_(i, j) <= 0.0) d_in(i, j) = 0.0;
    return d_in;
}

// ---------------------------------------------------------------------------
// offset sampling

OffsetSample::OffsetSample(ParamStore& ps, const std::string& name, double voxel_step) {
    offsets_ = ps.add(name + ".offsets", {27, 3});
    taps_ = ps.add(name + ".taps", {27});
    int t = 0;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx, ++t) {
                offsets_->w[t * 3 + 0] = dx * voxel_step;
                offsets_->w[t * 3 + 1] = dy * voxel_step;
                offsets_->w[t * 3 + 2] = dz * voxel_step;
            }
    std::fill(taps_->w.begin(), taps_->w.end(), 1.0 / 27.0);
}

FeatMatrix OffsetSample::forward(const Tensor& feat, const std::vector<Vec3>& points) {
    feat_ = &feat;
    points_ = points;
    tap_samples_.assign(27, FeatMatrix());
    FeatMatrix out = FeatMatrix::Zero(static_cast<Eigen::Index>(points.size()), feat.c);
    std::vector<Vec3> shifted(points.size());
    for (int t = 0; t < 27; ++t) {
        const Vec3 off(offsets_->w[t * 3], offsets_->w[t * 3 + 1], offsets_->w[t * 3 + 2]);
        for (std::size_t p = 0; p < points.size(); ++p) shifted[p] = points_[p] + off;
        tap_samples_[t] = grid_sample(feat, shifted);
        out += taps_->w[t] * tap_samples_[t];
    }
    return out;
}

std::vector<Vec3> OffsetSample::backward(const FeatMatrix& d_out, Tensor& d_feat) {
    std::vector<Vec3> d_points(points_.size(), Vec3::Zero());
    std::vector<Vec3> shifted(points_.size());
    for (int t = 0; t < 27; ++t) {
        taps_->g[t] += (d_out.array() * tap_samples_[t].array()).sum();
        const Vec3 off(offsets_->w[t * 3], offsets_->w[t * 3 + 1], offsets_->w[t * 3 + 2]);
        for (std::size_t p = 0; p < points_.size(); ++p) shifted[p] = points_[p] + off;
        const FeatMatrix d_tap = taps_->w[t] * d_out;
        const std::vector<Vec3> g = grid_sample_backward(*feat_, shifted, d_tap, d_feat);
        Vec3 sum = Vec3::Zero();
        for (std::size_t p = 0; p < points_.size(); ++p) {
            d_points[p] += g[p];
            sum += g[p];
        }
        for (int a = 0; a < 3; ++a) offsets_->g[t * 3 + a] += sum[a];
    }
    return d_points;
}

}  // namespace meshfit
