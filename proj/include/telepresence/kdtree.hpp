#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "telepresence/geometry.hpp"

namespace telepresence {

/// Static 3-d tree over a copy of the input points. Splits on the widest
/// axis at the median; queries are exact and deterministic (ties resolve to
/// the lower index).
class KdTree {
 public:
  struct Neighbor {
    std::size_t index;
    double squared_distance;
  };

  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points);

  std::size_t size() const { return points_.size(); }

  /// Nearest point within `max_distance` (inclusive), if any.
  std::optional<Neighbor> nearest(const Vec3& query,
                                  double max_distance = std::numeric_limits<double>::infinity()) const;
  /// The k nearest points sorted by distance (fewer if the tree is smaller).
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;

 private:
  struct Node {
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    std::uint32_t begin = 0, end = 0;  // leaf range into order_
    std::uint32_t left = 0, right = 0;
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end);
  void search_nearest(std::uint32_t node, const Vec3& q, Neighbor& best) const;
  void search_knn(std::uint32_t node, const Vec3& q, std::size_t k,
                  std::vector<Neighbor>& heap) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace telepresence
