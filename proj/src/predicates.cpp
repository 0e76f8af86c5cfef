#include "meshfit/predicates.hpp"

#include <gmpxx.h>

#include <algorithm>
#include <array>
#include <cmath>

namespace meshfit {

namespace {

// Forward error bounds after Shewchuk's static filters.
constexpr double kOrient3dBound = 7.7715611723760958e-16;  // (7 + 56 eps) eps
constexpr double kOrient2dBound = 3.3306690738754706e-16;  // (3 + 16 eps) eps

int sign_of(const mpq_class& v) { return sgn(v); }

int orient3d_exact(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    mpq_class ax(a.x()), ay(a.y()), az(a.z());
    mpq_class bx(b.x()), by(b.y()), bz(b.z());
    mpq_class cx(c.x()), cy(c.y()), cz(c.z());
    mpq_class dx(d.x()), dy(d.y()), dz(d.z());
    mpq_class m00 = ax - dx, m01 = ay - dy, m02 = az - dz;
    mpq_class m10 = bx - dx, m11 = by - dy, m12 = bz - dz;
    mpq_class m20 = cx - dx, m21 = cy - dy, m22 = cz - dz;
    mpq_class det = m00 * (m11 * m22 - m12 * m21) - m01 * (m10 * m22 - m12 * m20) +
                    m02 * (m10 * m21 - m11 * m20);
    return sign_of(det);
}

}  // namespace

int orient3d_sign(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    const double adx = a.x() - d.x(), ady = a.y() - d.y(), adz = a.z() - d.z();
    const double bdx = b.x() - d.x(), bdy = b.y() - d.y(), bdz = b.z() - d.z();
    const double cdx = c.x() - d.x(), cdy = c.y() - d.y(), cdz = c.z() - d.z();

    const double bdxcdy = bdx * cdy, cdxbdy = cdx * bdy;
    const double cdxady = cdx * ady, adxcdy = adx * cdy;
    const double adxbdy = adx * bdy, bdxady = bdx * ady;

    const double det = adz * (bdxcdy - cdxbdy) + bdz * (cdxady - adxcdy) + cdz * (adxbdy - bdxady);
    const double permanent = (std::abs(bdxcdy) + std::abs(cdxbdy)) * std::abs(adz) +
                             (std::abs(cdxady) + std::abs(adxcdy)) * std::abs(bdz) +
                             (std::abs(adxbdy) + std::abs(bdxady)) * std::abs(cdz);
    const double errbound = kOrient3dBound * permanent;
    if (det > errbound) return 1;
    if (det < -errbound) return -1;
    return orient3d_exact(a, b, c, d);
}

int orient2d_sign(double ax, double ay, double bx, double by, double cx, double cy) {
    const double detleft = (ax - cx) * (by - cy);
    const double detright = (ay - cy) * (bx - cx);
    const double det = detleft - detright;
    const double errbound = kOrient2dBound * (std::abs(detleft) + std::abs(detright));
    if (det > errbound) return 1;
    if (det < -errbound) return -1;
    mpq_class l = (mpq_class(ax) - cx) * (mpq_class(by) - cy);
    mpq_class r = (mpq_class(ay) - cy) * (mpq_class(bx) - cx);
    return sign_of(static_cast<mpq_class>(l - r));
}

namespace {

struct P2 {
    double x, y;
};

int orient2d(const P2& a, const P2& b, const P2& c) {
    return orient2d_sign(a.x, a.y, b.x, b.y, c.x, c.y);
}

bool on_segment_collinear(const P2& a, const P2& b, const P2& p) {
    // Assumes p collinear with (a,b); closed containment.
    return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
           std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

bool seg_seg_2d(const P2& a, const P2& b, const P2& c, const P2& d) {
    const int o1 = orient2d(a, b, c);
    const int o2 = orient2d(a, b, d);
    const int o3 = orient2d(c, d, a);
    const int o4 = orient2d(c, d, b);
    if (o1 * o2 < 0 && o3 * o4 < 0) return true;
    if (o1 == 0 && on_segment_collinear(a, b, c)) return true;
    if (o2 == 0 && on_segment_collinear(a, b, d)) return true;
    if (o3 == 0 && on_segment_collinear(c, d, a)) return true;
    if (o4 == 0 && on_segment_collinear(c, d, b)) return true;
    return false;
}

bool point_in_tri_2d(const P2& p, const P2& a, const P2& b, const P2& c) {
    const int s = orient2d(a, b, c);
    if (s == 0) {
        // Degenerate triangle: fall back to the three edges.
        return (orient2d(a, b, p) == 0 && on_segment_collinear(a, b, p)) ||
               (orient2d(b, c, p) == 0 && on_segment_collinear(b, c, p)) ||
               (orient2d(c, a, p) == 0 && on_segment_collinear(c, a, p));
    }
    return s * orient2d(a, b, p) >= 0 && s * orient2d(b, c, p) >= 0 &&
           s * orient2d(c, a, p) >= 0;
}

bool seg_tri_2d(const P2& a, const P2& b, const P2& p, const P2& q, const P2& r) {
    if (point_in_tri_2d(a, p, q, r) || point_in_tri_2d(b, p, q, r)) return true;
    return seg_seg_2d(a, b, p, q) || seg_seg_2d(a, b, q, r) || seg_seg_2d(a, b, r, p);
}

P2 project(const Vec3& v, int drop_axis) {
    switch (drop_axis) {
        case 0: return {v.y(), v.z()};
        case 1: return {v.z(), v.x()};
        default: return {v.x(), v.y()};
    }
}

int pick_projection_axis(const Vec3& p, const Vec3& q, const Vec3& r) {
    const Vec3 n = (q - p).cross(r - p);
    int best = 0;
    if (std::abs(n.y()) > std::abs(n[best])) best = 1;
    if (std::abs(n.z()) > std::abs(n[best])) best = 2;
    // The dropped axis must not collapse the triangle; verify exactly.
    for (int k = 0; k < 3; ++k) {
        const int axis = (best + k) % 3;
        if (orient2d(project(p, axis), project(q, axis), project(r, axis)) != 0) return axis;
    }
    return best;
}

/// Segment [a,b] against closed triangle (p,q,r); both coplanar and crossing
/// configurations handled through orientation signs only.
bool seg_tri_3d(const Vec3& a, const Vec3& b, const Vec3& p, const Vec3& q, const Vec3& r) {
    const int sa = orient3d_sign(p, q, r, a);
    const int sb = orient3d_sign(p, q, r, b);
    if (sa > 0 && sb > 0) return false;
    if (sa < 0 && sb < 0) return false;
    if (sa == 0 && sb == 0) {
        const int axis = pick_projection_axis(p, q, r);
        return seg_tri_2d(project(a, axis), project(b, axis), project(p, axis),
                          project(q, axis), project(r, axis));
    }
    // Line (a,b) passes through the triangle's plane within the segment;
    // it meets the closed triangle iff the three line-vs-edge orientations
    // agree in sign (zeros allowed).
    const int u = orient3d_sign(a, b, p, q);
    const int v = orient3d_sign(a, b, q, r);
    const int w = orient3d_sign(a, b, r, p);
    return (u >= 0 && v >= 0 && w >= 0) || (u <= 0 && v <= 0 && w <= 0);
}

}  // namespace

bool tri_tri_intersect(const Vec3& p1, const Vec3& q1, const Vec3& r1,
                       const Vec3& p2, const Vec3& q2, const Vec3& r2) {
    // If the triangles meet, some edge of one meets the other (this covers
    // coplanar containment through the coplanar segment test).
    if (seg_tri_3d(p1, q1, p2, q2, r2)) return true;
    if (seg_tri_3d(q1, r1, p2, q2, r2)) return true;
    if (seg_tri_3d(r1, p1, p2, q2, r2)) return true;
    if (seg_tri_3d(p2, q2, p1, q1, r1)) return true;
    if (seg_tri_3d(q2, r2, p1, q1, r1)) return true;
    if (seg_tri_3d(r2, p2, p1, q1, r1)) return true;
    return false;
}

}  // namespace meshfit
