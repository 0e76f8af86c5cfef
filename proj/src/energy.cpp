#include "meshfit/energy.hpp"

#include <cmath>
#include <stdexcept>

namespace meshfit {

namespace {

/// Routes dL/dn of a raw face normal n = (v1-v0) x (v2-v0) onto the vertices.
void add_normal_grad(const Vec3& v0, const Vec3& v1, const Vec3& v2, const Vec3& g,
                     Vec3& g0, Vec3& g1, Vec3& g2) {
    const Vec3 e1 = v1 - v0;
    const Vec3 e2 = v2 - v0;
    g1 += e2.cross(g);
    g2 += g.cross(e1);
    g0 += (e1 - e2).cross(g);
}

}  // namespace

TermGrad chamfer(std::span<const Vec3> p_pts, std::span<const Vec3> q_pts,
                 const PointKdTree& q_tree, ChamferMatch* match) {
    if (p_pts.empty() || q_pts.empty())
        throw std::invalid_argument("chamfer: empty point set");

    TermGrad out;
    out.grad.assign(p_pts.size(), Vec3::Zero());
    ChamferMatch local;
    ChamferMatch& m = match ? *match : local;
    m.p_to_q.resize(p_pts.size());
    m.q_to_p.resize(q_pts.size());

    for (std::size_t i = 0; i < p_pts.size(); ++i) {
        const auto hit = q_tree.nearest(p_pts[i]);
        m.p_to_q[i] = hit.index;
        out.value += hit.d2;
        out.grad[i] += 2.0 * (p_pts[i] - q_pts[hit.index]);
    }
    PointKdTree p_tree(std::vector<Vec3>(p_pts.begin(), p_pts.end()));
    for (std::size_t j = 0; j < q_pts.size(); ++j) {
        const auto hit = p_tree.nearest(q_pts[j]);
        m.q_to_p[j] = hit.index;
        out.value += hit.d2;
        out.grad[hit.index] += 2.0 * (p_pts[hit.index] - q_pts[j]);
    }
    return out;
}

TermGrad chamfer(std::span<const Vec3> p_pts, std::span<const Vec3> q_pts, ChamferMatch* match) {
    if (p_pts.empty() || q_pts.empty())
        throw std::invalid_argument("chamfer: empty point set");
    PointKdTree q_tree(std::vector<Vec3>(q_pts.begin(), q_pts.end()));
    return chamfer(p_pts, q_pts, q_tree, match);
}

double chamfer_fixed(std::span<const Vec3> p_pts, std::span<const Vec3> q_pts,
                     const ChamferMatch& match) {
    double v = 0.0;
    for (std::size_t i = 0; i < p_pts.size(); ++i) v += dist2(p_pts[i], q_pts[match.p_to_q[i]]);
    for (std::size_t j = 0; j < q_pts.size(); ++j) v += dist2(q_pts[j], p_pts[match.q_to_p[j]]);
    return v;
}

TermGrad laplacian_loss(const TriMesh& m) {
    const auto& v = m.vertices();
    const auto& nb = m.vertex_neighbors();
    const int n = m.vertex_count();
    std::vector<Vec3> diff(n);
    for (int i = 0; i < n; ++i) {
        if (nb[i].empty()) throw std::invalid_argument("laplacian_loss: isolated vertex");
        Vec3 mean = Vec3::Zero();
        for (int c : nb[i]) mean += v[c];
        mean /= static_cast<double>(nb[i].size());
        diff[i] = v[i] - mean;
    }
    TermGrad out;
    out.grad.assign(n, Vec3::Zero());
    for (int i = 0; i < n; ++i) {
        out.value += diff[i].squaredNorm();
        out.grad[i] += 2.0 * diff[i];
        // i also appears in each neighbor's mean.
        for (int c : nb[i]) out.grad[i] -= (2.0 / nb[c].size()) * diff[c];
    }
    return out;
}

TermGrad edge_loss(const TriMesh& m) {
    TermGrad out;
    out.grad.assign(m.vertex_count(), Vec3::Zero());
    for (const TriMesh::Edge& e : m.edges()) {
        const Vec3 d = m.vertices()[e.u] - m.vertices()[e.v];
        out.value += 2.0 * d.squaredNorm();  // both directions of the double sum
        out.grad[e.u] += 4.0 * d;
        out.grad[e.v] -= 4.0 * d;
    }
    return out;
}

TermGrad area_loss(const TriMesh& m) {
    if (m.face_count() == 0) throw std::invalid_argument("area_loss: no faces");
    TermGrad out;
    out.grad.assign(m.vertex_count(), Vec3::Zero());
    const double inv_f = 1.0 / m.face_count();
    for (int f = 0; f < m.face_count(); ++f) {
        const Face& face = m.faces()[f];
        const Vec3& v0 = m.vertices()[face[0]];
        const Vec3& v1 = m.vertices()[face[1]];
        const Vec3& v2 = m.vertices()[face[2]];
        const Vec3 n = (v1 - v0).cross(v2 - v0);
        out.value += 0.5 * inv_f * n.squaredNorm();
        const Vec3 g = inv_f * n;  // d(0.5|n|^2)/dn
        add_normal_grad(v0, v1, v2, g, out.grad[face[0]], out.grad[face[1]], out.grad[face[2]]);
    }
    return out;
}

TermGrad normal_loss(const TriMesh& m, std::span<const Vec3> q_normals,
                     std::span<const int> nearest_q, NormalLossForm form) {
    if (nearest_q.size() != static_cast<std::size_t>(m.vertex_count()))
        throw std::invalid_argument("normal_loss: correspondence size mismatch");
    TermGrad out;
    out.grad.assign(m.vertex_count(), Vec3::Zero());
    const auto& v = m.vertices();

    if (form == NormalLossForm::edge_tangency) {
        for (int p = 0; p < m.vertex_count(); ++p) {
            const Vec3& nq = q_normals[nearest_q[p]];
            for (int c : m.vertex_neighbors()[p]) {
                const double dot = (v[p] - v[c]).dot(nq);
                out.value += dot * dot;
                const Vec3 g = 2.0 * dot * nq;
                out.grad[p] += g;
                out.grad[c] -= g;
            }
        }
        return out;
    }

    for (int p = 0; p < m.vertex_count(); ++p) {
        const Vec3& nq = q_normals[nearest_q[p]];
        for (int f : m.vertex_faces()[p]) {
            const Face& face = m.faces()[f];
            const Vec3& v0 = v[face[0]];
            const Vec3& v1 = v[face[1]];
            const Vec3& v2 = v[face[2]];
            const Vec3 n = (v1 - v0).cross(v2 - v0);
            const double dot = n.dot(nq);
            out.value += dot * dot;
            add_normal_grad(v0, v1, v2, 2.0 * dot * nq, out.grad[face[0]],
                            out.grad[face[1]], out.grad[face[2]]);
        }
    }
    return out;
}

double seal_eps_area(const TriMesh& m) {
    if (m.edge_count() == 0) return 1e-3;
    double mean = 0.0;
    for (const TriMesh::Edge& e : m.edges())
        mean += (m.vertices()[e.u] - m.vertices()[e.v]).norm();
    mean /= m.edge_count();
    return 1e-3 * mean * mean;
}

TermGrad seal_loss(const TriMesh& m, double lambda, std::optional<double> eps_area) {
    const double eps = eps_area.value_or(seal_eps_area(m));
    const double eps4 = 4.0 * eps * eps;  // in units of |n|^2 = 4 A^2
    const auto& v = m.vertices();

    // Raw face normals and the squashes s = u / (u + 4 eps^2), u = |n|^2.
    const int nf = m.face_count();
    std::vector<Vec3> n(nf);
    std::vector<double> u(nf), s(nf), ds_du(nf);
    for (int f = 0; f < nf; ++f) {
        const Face& face = m.faces()[f];
        n[f] = (v[face[1]] - v[face[0]]).cross(v[face[2]] - v[face[0]]);
        u[f] = n[f].squaredNorm();
        const double denom = u[f] + eps4;
        s[f] = u[f] / denom;
        ds_du[f] = eps4 / (denom * denom);
    }

    TermGrad out;
    out.grad.assign(m.vertex_count(), Vec3::Zero());
    std::vector<Vec3> dn(nf, Vec3::Zero());  // accumulate dL/dn per face

    const double inv_e = m.edge_count() > 0 ? 1.0 / m.edge_count() : 0.0;
    double closure = 0.0, normal_term = 0.0;
    for (const TriMesh::Edge& e : m.edges()) {
        if (e.n_faces != 2) {
            closure += 1.0;  // unsupported edge: delta = 0, no gradient
            continue;
        }
        const int fi = e.f0, fj = e.f1;
        closure += 1.0 - s[fi] * s[fj];
        dn[fi] -= s[fj] * ds_du[fi] * 2.0 * n[fi] * inv_e;
        dn[fj] -= s[fi] * ds_du[fj] * 2.0 * n[fj] * inv_e;

        // Normal consistency with an eps-guarded normalization.
        const double ri = std::sqrt(u[fi] + eps * eps);
        const double rj = std::sqrt(u[fj] + eps * eps);
        const double dot = n[fi].dot(n[fj]);
        normal_term += 1.0 - dot / (ri * rj);
        dn[fi] -= lambda * (n[fj] / (ri * rj) - dot / (ri * ri * ri * rj) * n[fi]);
        dn[fj] -= lambda * (n[fi] / (ri * rj) - dot / (rj * rj * rj * ri) * n[fj]);
    }
    out.value = closure * inv_e + lambda * normal_term;

    for (int f = 0; f < nf; ++f) {
        if (dn[f].isZero(0.0)) continue;
        const Face& face = m.faces()[f];
        add_normal_grad(v[face[0]], v[face[1]], v[face[2]], dn[f], out.grad[face[0]],
                        out.grad[face[1]], out.grad[face[2]]);
    }
    return out;
}

std::pair<double, double> seal_loss_parts(const TriMesh& m, double lambda,
                                          std::optional<double> eps_area) {
    const double eps = eps_area.value_or(seal_eps_area(m));
    const double eps4 = 4.0 * eps * eps;
    const auto& v = m.vertices();
    auto squash = [&](int f) {
        const Face& face = m.faces()[f];
        const double u =
            (v[face[1]] - v[face[0]]).cross(v[face[2]] - v[face[0]]).squaredNorm();
        return u / (u + eps4);
    };
    double closure = 0.0, normal_term = 0.0;
    for (const TriMesh::Edge& e : m.edges()) {
        if (e.n_faces != 2) {
            closure += 1.0;
            continue;
        }
        closure += 1.0 - squash(e.f0) * squash(e.f1);
        const Vec3 ni = face_normal_raw(m, e.f0);
        const Vec3 nj = face_normal_raw(m, e.f1);
        const double ri = std::sqrt(ni.squaredNorm() + eps * eps);
        const double rj = std::sqrt(nj.squaredNorm() + eps * eps);
        normal_term += 1.0 - ni.dot(nj) / (ri * rj);
    }
    const double inv_e = m.edge_count() > 0 ? 1.0 / m.edge_count() : 0.0;
    return {closure * inv_e, lambda * normal_term};
}

TargetContext::TargetContext(const TriMesh& q, int samples_per_face,
                             std::uint64_t sample_seed)
    : points(q.vertices()), normals(vertex_normals(q)), tree([&] {
          if (samples_per_face > 0) {
              const std::vector<Vec3> face_norms = face_normals(q);
              Rng rng(sample_seed);
              std::uniform_real_distribution<double> uni(0.0, 1.0);
              for (int f = 0; f < q.face_count(); ++f) {
                  const Face& face = q.faces()[f];
                  const Vec3& a = q.vertices()[face[0]];
                  const Vec3& b = q.vertices()[face[1]];
                  const Vec3& c = q.vertices()[face[2]];
                  for (int t = 0; t < samples_per_face; ++t) {
                      double u = uni(rng), v = uni(rng);
                      if (u + v > 1.0) {
                          u = 1.0 - u;
                          v = 1.0 - v;
                      }
                      points.push_back(a + u * (b - a) + v * (c - a));
                      normals.push_back(face_norms[f]);
                  }
              }
          }
          return PointKdTree(points);
      }()) {}

EnergyReport rec_energy(const TriMesh& p, const TargetContext& q, const RecWeights& w,
                        NormalLossForm form) {
    for (double a : w.alpha)
        if (a < 0.0) throw std::invalid_argument("rec_energy: negative weight");

    EnergyReport rep;
    ChamferMatch match;
    const TermGrad cham = chamfer(p.vertices(), q.points, q.tree, &match);
    const TermGrad lap = laplacian_loss(p);
    const TermGrad nrm = normal_loss(p, q.normals, match.p_to_q, form);
    const TermGrad edg = edge_loss(p);
    const TermGrad are = area_loss(p);
    const TermGrad sea = seal_loss(p, w.lambda_seal);

    const TermGrad* terms[6] = {&cham, &lap, &nrm, &edg, &are, &sea};
    rep.total_grad.assign(p.vertex_count(), Vec3::Zero());
    for (int t = 0; t < 6; ++t) {
        rep.term[t] = terms[t]->value;
        rep.term_grad[t] = terms[t]->grad;
        rep.total += w.alpha[t] * terms[t]->value;
        for (int i = 0; i < p.vertex_count(); ++i)
            rep.total_grad[i] += w.alpha[t] * terms[t]->grad[i];
    }
    return rep;
}

std::vector<EnergyReport> rec_energy(std::span<const TriMesh> stages, const TriMesh& q,
                                     const RecWeights& w, NormalLossForm form) {
    TargetContext ctx(q);
    std::vector<EnergyReport> out;
    out.reserve(stages.size());
    for (const TriMesh& p : stages) out.push_back(rec_energy(p, ctx, w, form));
    return out;
}

VolTerm dice_loss(const Volume& pred, const Volume& gold) {
    if (pred.dims != gold.dims) throw std::invalid_argument("dice_loss: shape mismatch");
    double sum_pm = 0.0, sum_p = 0.0, sum_m = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        sum_pm += pred.data[i] * gold.data[i];
        sum_p += pred.data[i];
        sum_m += gold.data[i];
    }
    VolTerm out;
    out.grad.assign(pred.data.size(), 0.0);
    const double denom = sum_p + sum_m;
    if (denom == 0.0) return out;  // both empty: perfect agreement
    out.value = 1.0 - 2.0 * sum_pm / denom;
    const double inv2 = 1.0 / (denom * denom);
    for (std::size_t i = 0; i < pred.data.size(); ++i)
        out.grad[i] = -2.0 * (gold.data[i] * denom - sum_pm) * inv2;
    return out;
}

VolTerm ce_loss(const Volume& pred, const Volume& gold) {
    if (pred.dims != gold.dims) throw std::invalid_argument("ce_loss: shape mismatch");
    constexpr double kClamp = 1e-7;
    VolTerm out;
    out.grad.assign(pred.data.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(pred.data.size());
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double p = std::clamp(pred.data[i], kClamp, 1.0 - kClamp);
        const double m = gold.data[i];
        out.value -= inv_n * (m * std::log(p) + (1.0 - m) * std::log(1.0 - p));
        if (pred.data[i] > kClamp && pred.data[i] < 1.0 - kClamp)
            out.grad[i] = -inv_n * (m / p - (1.0 - m) / (1.0 - p));
    }
    return out;
}

Volume resample_nearest(const Volume& v, std::array<int, 3> dims) {
    Volume out = Volume::zeros(dims, v.kind);
    for (int a = 0; a < 3; ++a)
        out.spacing[a] = dims[a] > 1 ? (v.dims[a] - 1) * v.spacing[a] / (dims[a] - 1) : v.spacing[a];
    out.origin = v.origin;
    for (int k = 0; k < dims[2]; ++k)
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i) {
                auto src = [&](int idx, int axis) {
                    if (dims[axis] == 1) return 0;
                    const double t = static_cast<double>(idx) * (v.dims[axis] - 1) / (dims[axis] - 1);
                    return std::min(static_cast<int>(std::lround(t)), v.dims[axis] - 1);
                };
                out.at(i, j, k) = v.at(src(i, 0), src(j, 1), src(k, 2));
            }
    return out;
}

ExtResult ext_loss(std::span<const Volume> preds, const Volume& gold, const ExtWeights& w) {
    if (preds.empty() || preds.size() > 3)
        throw std::invalid_argument("ext_loss: expected 1..3 scales");
    ExtResult out;
    out.grads.resize(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const Volume gold_i = resample_nearest(gold, preds[i].dims);
        const VolTerm d = dice_loss(preds[i], gold_i);
        const VolTerm c = ce_loss(preds[i], gold_i);
        const double g = w.gamma[i];
        out.value += g * (w.rho[0] * d.value + w.rho[1] * c.value);
        out.grads[i].assign(preds[i].data.size(), 0.0);
        for (std::size_t n = 0; n < preds[i].data.size(); ++n)
            out.grads[i][n] = g * (w.rho[0] * d.grad[n] + w.rho[1] * c.grad[n]);
    }
    return out;
}

}  // namespace meshfit
