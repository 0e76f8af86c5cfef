#include "meshfit/kdtree.hpp"

#include <algorithm>
#include <stdexcept>

namespace meshfit {

namespace {
constexpr int kLeafSize = 8;
}

PointKdTree::PointKdTree(std::vector<Vec3> points) : points_(std::move(points)) {
    if (points_.empty()) throw std::invalid_argument("PointKdTree: empty point set");
    order_.resize(points_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    root_ = build_node(0, static_cast<int>(points_.size()));
}

int PointKdTree::build_node(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    if (end - begin <= kLeafSize) {
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }
    Vec3 lo = points_[order_[begin]], hi = lo;
    for (int i = begin + 1; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    Vec3 extent = hi - lo;
    if (extent[1] > extent[axis]) axis = 1;
    if (extent[2] > extent[axis]) axis = 2;

    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                         const double pa = points_[a][axis], pb = points_[b][axis];
                         return pa < pb || (pa == pb && a < b);
                     });
    const double split = points_[order_[mid]][axis];
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    const int l = build_node(begin, mid);
    const int r = build_node(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
}

void PointKdTree::search(int node, const Vec3& q, Hit& best) const {
    const Node& n = nodes_[node];
    if (n.axis < 0) {
        for (int i = n.begin; i < n.end; ++i) {
            const int idx = order_[i];
            const double d2 = dist2(q, points_[idx]);
            if (d2 < best.d2 || (d2 == best.d2 && idx < best.index)) {
                best.d2 = d2;
                best.index = idx;
            }
        }
        return;
    }
    const double delta = q[n.axis] - n.split;
    const int near = delta < 0.0 ? n.left : n.right;
    const int far = delta < 0.0 ? n.right : n.left;
    search(near, q, best);
    // Equal plane distance may still hide an equally close lower index.
    if (delta * delta <= best.d2) search(far, q, best);
}

PointKdTree::Hit PointKdTree::nearest(const Vec3& q) const {
    Hit best;
    best.index = order_[0];
    best.d2 = dist2(q, points_[best.index]);
    search(root_, q, best);
    return best;
}

}  // namespace meshfit
