#pragma once

#include <vector>

#include "ove6d/geometry.hpp"

namespace ove6d {

/// Static 3-d tree over a point set for exact nearest-neighbour queries.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);

  struct Hit {
    int index = -1;
    double dist2 = 0;
  };
  /// Exact nearest point; ties go to the lower input index.
  Hit nearest(const Vec3& q) const;
  const std::vector<Vec3>& points() const { return points_; }

 private:
  struct Node {
    int point;
    int axis;
    int left = -1, right = -1;
  };
  int build(std::vector<int>& idx, int lo, int hi);
  void search(int node, const Vec3& q, Hit& best) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace ove6d
