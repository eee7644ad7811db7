#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "telepresence/geometry.hpp"
#include "telepresence/point_cloud.hpp"

namespace telepresence {

/// (source index, destination index)
using Correspondence = std::pair<std::size_t, std::size_t>;

/// sum(w_i p_i) / sum(w_i); uniform weights when `weights` is empty.
Vec3 weighted_centroid(const PointCloud& cloud, std::span<const double> weights = {});

/// Closed-form rigid alignment (Kabsch). The returned pose maps source points
/// onto their destination partners, minimizing sum w_k |dst_j - (R src_i + t)|^2.
/// A reflection solution is corrected by flipping the last column of U.
Pose procrustes_align(const PointCloud& src, const PointCloud& dst,
                      std::span<const Correspondence> correspondences,
                      std::span<const double> weights = {});

/// Per-point normal from the smallest eigenvector of the k-neighborhood
/// covariance, flipped to face `viewpoint`.
PointCloud estimate_normals(const PointCloud& cloud, std::size_t k_neighbors,
                            const Vec3& viewpoint = Vec3::Zero());

enum class IcpVariant { PointToPoint, PointToPlane };

struct IcpParams {
  IcpVariant variant = IcpVariant::PointToPoint;
  std::vector<double> schedule{0.5, 0.25, 0.1};  // strictly decreasing, meters
  int max_iters = 30;                             // per schedule stage
  double rel_tol = 1e-6;
};

struct RegistrationResult {
  Pose pose;  // maps source into the destination frame
  double fitness = 0.0;      // valid matches / source size
  double inlier_rmse = 0.0;  // over matches within the final distance
  std::size_t valid_matches = 0;
  int iterations = 0;
  bool converged = false;
  /// Truncated objective sum(min(d^2, tau^2)) after every accepted update,
  /// one entry per iteration; restarts at each stage.
  std::vector<std::vector<double>> objective_trace;
};

/// Coarse-to-fine ICP. Each stage alternates nearest-neighbor matching within
/// the stage distance and a closed-form (point-to-point) or linearized
/// (point-to-plane) update; an update that would raise the stage objective
/// ends the stage instead.
RegistrationResult icp(const PointCloud& src, const PointCloud& dst, const Pose& init,
                       const IcpParams& params = {});

/// Matches of `src` transformed by `pose` within `max_distance` of `dst`.
std::size_t count_matches(const PointCloud& src, const PointCloud& dst, const Pose& pose,
                          double max_distance);

}  // namespace telepresence
