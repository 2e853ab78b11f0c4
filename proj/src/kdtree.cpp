#include "ove6d/kdtree.hpp"

#include <algorithm>
#include <limits>

#include "ove6d/error.hpp"

namespace ove6d {

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  if (points_.empty()) throw InvalidArgument("kd-tree needs at least one point");
  std::vector<int> idx(points_.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  nodes_.reserve(points_.size());
  root_ = build(idx, 0, static_cast<int>(idx.size()));
}

int KdTree::build(std::vector<int>& idx, int lo, int hi) {
  if (lo >= hi) return -1;
  // Split on the widest extent.
  Vec3 mn = Vec3::Constant(std::numeric_limits<double>::infinity()), mx = -mn;
  for (int i = lo; i < hi; ++i) {
    mn = mn.cwiseMin(points_[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
    mx = mx.cwiseMax(points_[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
  }
  int axis = 0;
  (mx - mn).maxCoeff(&axis);
  const int mid = lo + (hi - lo) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi, [&](int a, int b) {
    const double pa = points_[static_cast<std::size_t>(a)][axis], pb = points_[static_cast<std::size_t>(b)][axis];
    return pa < pb || (pa == pb && a < b);
  });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({idx[static_cast<std::size_t>(mid)], axis});
  const int l = build(idx, lo, mid);
  const int r = build(idx, mid + 1, hi);
  nodes_[static_cast<std::size_t>(id)].left = l;
  nodes_[static_cast<std::size_t>(id)].right = r;
  return id;
}

void KdTree::search(int node, const Vec3& q, Hit& best) const {
  if (node < 0) return;
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  const Vec3& p = points_[static_cast<std::size_t>(n.point)];
  const double d2 = (p - q).squaredNorm();
  if (d2 < best.dist2 || (d2 == best.dist2 && n.point < best.index)) best = {n.point, d2};
  const double diff = q[n.axis] - p[n.axis];
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best);
  if (diff * diff <= best.dist2) search(far, q, best);
}

KdTree::Hit KdTree::nearest(const Vec3& q) const {
  Hit best{-1, std::numeric_limits<double>::infinity()};
  search(root_, q, best);
  return best;
}

}  // namespace ove6d
