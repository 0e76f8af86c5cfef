#pragma once

#include "meshfit/geometry.hpp"

namespace meshfit {

/// Sign of the orientation determinant of d relative to plane (a,b,c):
/// +1 when d lies on the positive side, -1 negative, 0 coplanar.
/// Double evaluation with a forward error bound, exact rational fallback.
int orient3d_sign(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

/// 2D orientation sign of (a,b,c) given coordinates (x,y).
int orient2d_sign(double ax, double ay, double bx, double by, double cx, double cy);

/// Closed triangle-triangle intersection test (touching counts). Exact: built
/// from orientation predicates only, no distance epsilons.
bool tri_tri_intersect(const Vec3& p1, const Vec3& q1, const Vec3& r1,
                       const Vec3& p2, const Vec3& q2, const Vec3& r2);

}  // namespace meshfit
