#include "telepresence/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace telepresence {

namespace {
constexpr std::uint32_t kLeafSize = 12;

bool closer(const KdTree::Neighbor& a, const KdTree::Neighbor& b) {
  return a.squared_distance < b.squared_distance ||
         (a.squared_distance == b.squared_distance && a.index < b.index);
}
}  // namespace

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<std::uint32_t>(points_.size()));
  }
}

std::uint32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.emplace_back();
  if (end - begin <= kLeafSize) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  Vec3 lo = points_[order_[begin]], hi = lo;
  for (auto i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const auto mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const auto left = build(begin, mid);
  const auto right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search_nearest(std::uint32_t node, const Vec3& q, Neighbor& best) const {
  const Node& n = nodes_[node];
  if (n.axis < 0) {
    for (auto i = n.begin; i < n.end; ++i) {
      const Neighbor cand{order_[i], (points_[order_[i]] - q).squaredNorm()};
      if (closer(cand, best)) best = cand;
    }
    return;
  }
  const double diff = q[n.axis] - n.split;
  const auto near_child = diff < 0.0 ? n.left : n.right;
  const auto far_child = diff < 0.0 ? n.right : n.left;
  search_nearest(near_child, q, best);
  if (diff * diff <= best.squared_distance) search_nearest(far_child, q, best);
}

std::optional<KdTree::Neighbor> KdTree::nearest(const Vec3& query, double max_distance) const {
  if (points_.empty()) return std::nullopt;
  const double bound = max_distance * max_distance;
  Neighbor best{std::numeric_limits<std::size_t>::max(),
                std::isinf(bound) ? std::numeric_limits<double>::infinity()
                                  : std::nextafter(bound, std::numeric_limits<double>::infinity())};
  search_nearest(0, query, best);
  if (best.index == std::numeric_limits<std::size_t>::max() || best.squared_distance > bound) {
    return std::nullopt;
  }
  return best;
}

void KdTree::search_knn(std::uint32_t node, const Vec3& q, std::size_t k,
                        std::vector<Neighbor>& heap) const {
  const Node& n = nodes_[node];
  if (n.axis < 0) {
    for (auto i = n.begin; i < n.end; ++i) {
      const Neighbor cand{order_[i], (points_[order_[i]] - q).squaredNorm()};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), closer);
      } else if (closer(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), closer);
      }
    }
    return;
  }
  const double diff = q[n.axis] - n.split;
  const auto near_child = diff < 0.0 ? n.left : n.right;
  const auto far_child = diff < 0.0 ? n.right : n.left;
  search_knn(near_child, q, k, heap);
  if (heap.size() < k || diff * diff <= heap.front().squared_distance) {
    search_knn(far_child, q, k, heap);
  }
}

std::vector<KdTree::Neighbor> KdTree::knn(const Vec3& query, std::size_t k) const {
  std::vector<Neighbor> heap;
  if (points_.empty() || k == 0) return heap;
  heap.reserve(k + 1);
  search_knn(0, query, k, heap);
  std::sort_heap(heap.begin(), heap.end(), closer);
  return heap;
}

}  // namespace telepresence
