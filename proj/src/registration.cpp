#include "telepresence/registration.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "telepresence/error.hpp"
#include "telepresence/kdtree.hpp"

namespace telepresence {

Vec3 weighted_centroid(const PointCloud& cloud, std::span<const double> weights) {
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "centroid of empty cloud");
  if (weights.empty()) {
    Vec3 sum = Vec3::Zero();
    for (const auto& p : cloud.points) sum += p;
    return sum / static_cast<double>(cloud.size());
  }
  if (weights.size() != cloud.size()) {
    throw Error(ErrorCode::InvalidArgument, "weight count differs from point count");
  }
  Vec3 sum = Vec3::Zero();
  double total = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!(weights[i] >= 0.0)) throw Error(ErrorCode::InvalidArgument, "negative weight");
    sum += weights[i] * cloud.points[i];
    total += weights[i];
  }
  if (!(total > 0.0)) throw Error(ErrorCode::ZeroWeights, "all weights are zero");
  return sum / total;
}

namespace {

// Rank test on the centered 3xN matrix: the second singular value must not
// vanish relative to the first.
bool rank_at_least_two(const Eigen::Matrix3d& scatter) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(scatter);
  const Vec3 ev = es.eigenvalues().cwiseMax(0.0);  // ascending
  return ev(2) > 0.0 && ev(1) > 1e-18 * ev(2) && ev(1) > 1e-24;
}

Pose kabsch(std::span<const Vec3> from, std::span<const Vec3> to, std::span<const double> w) {
  const std::size_t n = from.size();
  if (n < 3) throw Error(ErrorCode::DegenerateConfiguration, "fewer than 3 correspondences");
  double total = 0.0;
  Vec3 cf = Vec3::Zero(), ct = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    cf += wi * from[i];
    ct += wi * to[i];
    total += wi;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::ZeroWeights, "all weights are zero");
  cf /= total;
  ct /= total;
  Mat3 cov = Mat3::Zero();
  Mat3 scatter_from = Mat3::Zero(), scatter_to = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    const Vec3 a = from[i] - cf, b = to[i] - ct;
    cov += wi * b * a.transpose();
    scatter_from += wi * a * a.transpose();
    scatter_to += wi * b * b.transpose();
  }
  if (!rank_at_least_two(scatter_from) || !rank_at_least_two(scatter_to)) {
    throw Error(ErrorCode::DegenerateConfiguration, "correspondences are collinear");
  }
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  const Mat3 r = u * v.transpose();
  return Pose(r, ct - r * cf);
}

}  // namespace

Pose procrustes_align(const PointCloud& src, const PointCloud& dst,
                      std::span<const Correspondence> correspondences,
                      std::span<const double> weights) {
  if (!weights.empty() && weights.size() != correspondences.size()) {
    throw Error(ErrorCode::InvalidArgument, "weight count differs from correspondence count");
  }
  std::vector<Vec3> from, to;
  from.reserve(correspondences.size());
  to.reserve(correspondences.size());
  for (const auto& [i, j] : correspondences) {
    from.push_back(src.points.at(i));
    to.push_back(dst.points.at(j));
  }
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error(ErrorCode::InvalidArgument, "negative weight");
  }
  return kabsch(from, to, weights);
}

PointCloud estimate_normals(const PointCloud& cloud, std::size_t k_neighbors,
                            const Vec3& viewpoint) {
  if (k_neighbors < 3 || cloud.size() <= k_neighbors) {
    throw Error(ErrorCode::TooFewPoints, "need more than k >= 3 points");
  }
  const KdTree tree(cloud.points);
  PointCloud out = cloud;
  out.normals.emplace(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto nbrs = tree.knn(cloud.points[i], k_neighbors);
    Vec3 mean = Vec3::Zero();
    for (const auto& nb : nbrs) mean += cloud.points[nb.index];
    mean /= static_cast<double>(nbrs.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& nb : nbrs) {
      const Vec3 d = cloud.points[nb.index] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    Vec3 n = es.eigenvectors().col(0).normalized();
    if (n.dot(viewpoint - cloud.points[i]) < 0.0) n = -n;
    (*out.normals)[i] = n;
  }
  return out;
}

namespace {

struct Matching {
  std::vector<Correspondence> pairs;
  std::vector<double> squared;  // per pair
  double truncated_cost = 0.0;  // sum over all source points of min(d^2, tau^2)
  double plane_cost = 0.0;      // point-to-plane analogue
  double inlier_sq_sum = 0.0;
};

Matching match(const std::vector<Vec3>& src_t, const KdTree& tree, const PointCloud& dst,
               double tau, bool with_plane) {
  Matching m;
  const double tau2 = tau * tau;
  for (std::size_t i = 0; i < src_t.size(); ++i) {
    auto nb = tree.nearest(src_t[i], tau);
    if (!nb) {
      m.truncated_cost += tau2;
      m.plane_cost += tau2;
      continue;
    }
    m.pairs.emplace_back(i, nb->index);
    m.squared.push_back(nb->squared_distance);
    m.truncated_cost += nb->squared_distance;
    m.inlier_sq_sum += nb->squared_distance;
    if (with_plane) {
      const double r = (*dst.normals)[nb->index].dot(src_t[i] - dst.points[nb->index]);
      m.plane_cost += r * r;
    }
  }
  return m;
}

std::vector<Vec3> transform_points(const std::vector<Vec3>& pts, const Pose& pose) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(pose.apply(p));
  return out;
}

Pose point_to_plane_step(const std::vector<Vec3>& src_t, const PointCloud& dst,
                         const std::vector<Correspondence>& pairs) {
  Mat6 a = Mat6::Zero();
  Vec6 b = Vec6::Zero();
  for (const auto& [i, j] : pairs) {
    const Vec3& p = src_t[i];
    const Vec3& n = (*dst.normals)[j];
    Vec6 row;
    row.head<3>() = n;
    row.tail<3>() = p.cross(n);
    const double r = n.dot(p - dst.points[j]);
    a += row * row.transpose();
    b -= row * r;
  }
  const Vec6 delta = a.ldlt().solve(b);
  if (!delta.allFinite()) return Pose::identity();
  return se3_exp(delta);
}

}  // namespace

RegistrationResult icp(const PointCloud& src, const PointCloud& dst, const Pose& init,
                       const IcpParams& params) {
  if (src.empty() || dst.empty()) throw Error(ErrorCode::EmptyCloud, "icp needs two clouds");
  if (params.schedule.empty()) throw Error(ErrorCode::InvalidArgument, "empty schedule");
  for (std::size_t s = 1; s < params.schedule.size(); ++s) {
    if (!(params.schedule[s] < params.schedule[s - 1])) {
      throw Error(ErrorCode::InvalidArgument, "schedule must be strictly decreasing");
    }
  }
  const bool plane = params.variant == IcpVariant::PointToPlane && dst.has_normals();
  const KdTree tree(dst.points);

  RegistrationResult result;
  Pose pose = init;
  Matching current;
  for (std::size_t stage = 0; stage < params.schedule.size(); ++stage) {
    const double tau = params.schedule[stage];
    auto src_t = transform_points(src.points, pose);
    current = match(src_t, tree, dst, tau, plane);
    if (stage == 0 && current.pairs.empty()) {
      throw Error(ErrorCode::NoCorrespondences, "no pair within the coarsest distance");
    }
    auto& trace = result.objective_trace.emplace_back();
    trace.push_back(plane ? current.plane_cost : current.truncated_cost);
    result.converged = false;

    for (int it = 0; it < params.max_iters; ++it) {
      if (current.pairs.size() < 3) break;
      Pose candidate = pose;
      try {
        if (plane) {
          candidate = compose(point_to_plane_step(src_t, dst, current.pairs), pose);
        } else {
          candidate = procrustes_align(src, dst, current.pairs);
        }
      } catch (const Error& e) {
        if (e.code() == ErrorCode::DegenerateConfiguration) break;
        throw;
      }
      auto cand_t = transform_points(src.points, candidate);
      Matching next = match(cand_t, tree, dst, tau, plane);
      const double before = plane ? current.plane_cost : current.truncated_cost;
      const double after = plane ? next.plane_cost : next.truncated_cost;
      if (after > before) {
        result.converged = true;
        break;
      }
      const double rmse_before =
          std::sqrt(current.inlier_sq_sum / std::max<std::size_t>(current.pairs.size(), 1));
      const double rmse_after =
          std::sqrt(next.inlier_sq_sum / std::max<std::size_t>(next.pairs.size(), 1));
      pose = candidate;
      src_t = std::move(cand_t);
      current = std::move(next);
      trace.push_back(after);
      ++result.iterations;
      if (std::abs(rmse_before - rmse_after) <= params.rel_tol * std::max(rmse_before, 1e-300) &&
          current.pairs.size() >= 3) {
        result.converged = true;
        break;
      }
    }
  }

  result.pose = pose;
  result.valid_matches = current.pairs.size();
  result.fitness = static_cast<double>(current.pairs.size()) / static_cast<double>(src.size());
  result.inlier_rmse =
      current.pairs.empty() ? 0.0 : std::sqrt(current.inlier_sq_sum / current.pairs.size());
  return result;
}

std::size_t count_matches(const PointCloud& src, const PointCloud& dst, const Pose& pose,
                          double max_distance) {
  if (src.empty() || dst.empty()) return 0;
  const KdTree tree(dst.points);
  std::size_t n = 0;
  for (const auto& p : src.points) {
    if (tree.nearest(pose.apply(p), max_distance)) ++n;
  }
  return n;
}

}  // namespace telepresence
