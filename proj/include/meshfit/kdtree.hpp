#pragma once

#include "meshfit/geometry.hpp"

#include <vector>

namespace meshfit {

/// Exact nearest-neighbor search over a point set. Ties in distance resolve
/// to the lowest original index, matching a linear scan bit for bit.
class PointKdTree {
public:
    PointKdTree() = default;
    explicit PointKdTree(std::vector<Vec3> points);

    struct Hit {
        int index = -1;
        double d2 = 0.0;
    };
    Hit nearest(const Vec3& query) const;

    int size() const { return static_cast<int>(points_.size()); }
    const std::vector<Vec3>& points() const { return points_; }

private:
    struct Node {
        int axis = -1;          // -1 marks a leaf
        double split = 0.0;
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf range into order_
    };

    int build_node(int begin, int end);
    void search(int node, const Vec3& q, Hit& best) const;

    std::vector<Vec3> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace meshfit
