#include "telepresence/marker_tracker.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "telepresence/error.hpp"

namespace telepresence {

std::array<Vec3, 4> MarkerConfig::corners() const {
  const double h = 0.5 * side_length;
  return {Vec3(-h, -h, 0.0), Vec3(h, -h, 0.0), Vec3(h, h, 0.0), Vec3(-h, h, 0.0)};
}

namespace {

constexpr int kMaxGaussNewtonIterations = 50;
constexpr double kStepTolerance = 1e-10;

double triangle_area(const Vec2& a, const Vec2& b, const Vec2& c) {
  return 0.5 * std::abs((b - a).x() * (c - a).y() - (b - a).y() * (c - a).x());
}

// Similarity that moves the centroid to the origin and the mean distance to sqrt(2).
Mat3 normalizing_transform(const std::array<Vec2, 4>& pts) {
  Vec2 c = Vec2::Zero();
  for (const auto& p : pts) c += p;
  c /= 4.0;
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - c).norm();
  mean_dist /= 4.0;
  const double s = std::sqrt(2.0) / mean_dist;
  Mat3 t;
  t << s, 0.0, -s * c.x(),
       0.0, s, -s * c.y(),
       0.0, 0.0, 1.0;
  return t;
}

Vec2 apply_h(const Mat3& h, const Vec2& p) {
  const Vec3 q = h * Vec3(p.x(), p.y(), 1.0);
  return q.head<2>() / q.z();
}

Pose planar_dlt(const std::array<Vec2, 4>& plane, const std::array<Vec2, 4>& image_norm) {
  const Mat3 ts = normalizing_transform(plane);
  const Mat3 td = normalizing_transform(image_norm);
  Eigen::Matrix<double, 8, 9> a;
  for (int i = 0; i < 4; ++i) {
    const Vec2 x = apply_h(ts, plane[i]);
    const Vec2 y = apply_h(td, image_norm[i]);
    a.row(2 * i) << x.x(), x.y(), 1.0, 0.0, 0.0, 0.0, -y.x() * x.x(), -y.x() * x.y(), -y.x();
    a.row(2 * i + 1) << 0.0, 0.0, 0.0, x.x(), x.y(), 1.0, -y.y() * x.x(), -y.y() * x.y(), -y.y();
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 8, 9>> svd(a, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
  Mat3 hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Mat3 hm = td.inverse() * hn * ts;

  const double lambda = 2.0 / (hm.col(0).norm() + hm.col(1).norm());
  Vec3 r1 = lambda * hm.col(0);
  Vec3 r2 = lambda * hm.col(1);
  Vec3 t = lambda * hm.col(2);
  if (t.z() < 0.0) {
    r1 = -r1;
    r2 = -r2;
    t = -t;
  }
  Mat3 r;
  r.col(0) = r1;
  r.col(1) = r2;
  r.col(2) = r1.cross(r2);
  return Pose(nearest_rotation(r), t);
}

}  // namespace

double reprojection_rms(const MarkerObservation& obs, const MarkerConfig& cfg,
                        const CameraIntrinsics& k, const Pose& marker_in_camera) {
  const auto corners = cfg.corners();
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Vec3 pc = marker_in_camera.apply(corners[i]);
    auto px = k.project(pc);
    if (!px) return std::numeric_limits<double>::infinity();
    sum += (*px - obs.corners[i]).squaredNorm();
  }
  return std::sqrt(sum / 4.0);
}

Pose solve_marker_pose(const MarkerObservation& obs, const MarkerConfig& cfg,
                       const CameraIntrinsics& k) {
  if (!(cfg.side_length > 0.0)) throw Error(ErrorCode::InvalidArgument, "marker side must be > 0");
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      for (int l = j + 1; l < 4; ++l) {
        if (triangle_area(obs.corners[i], obs.corners[j], obs.corners[l]) < 1e-6) {
          throw Error(ErrorCode::DegenerateCorners, "three corners are collinear");
        }
      }
    }
  }

  const auto corners3 = cfg.corners();
  std::array<Vec2, 4> plane;
  std::array<Vec2, 4> normalized;
  for (int i = 0; i < 4; ++i) {
    plane[i] = corners3[i].head<2>();
    normalized[i] = Vec2((obs.corners[i].x() - k.center_x) / k.focal_x,
                         (obs.corners[i].y() - k.center_y) / k.focal_y);
  }
  Pose pose = planar_dlt(plane, normalized);

  // Gauss-Newton with left perturbation T <- exp(xi) T.
  for (int iter = 0; iter < kMaxGaussNewtonIterations; ++iter) {
    Eigen::Matrix<double, 8, 6> jac;
    Eigen::Matrix<double, 8, 1> res;
    for (int i = 0; i < 4; ++i) {
      const Vec3 p = pose.apply(corners3[i]);
      if (p.z() <= 0.0) throw Error(ErrorCode::BehindCamera, "corner behind camera");
      const double iz = 1.0 / p.z();
      res(2 * i) = k.focal_x * p.x() * iz + k.center_x - obs.corners[i].x();
      res(2 * i + 1) = k.focal_y * p.y() * iz + k.center_y - obs.corners[i].y();
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << k.focal_x * iz, 0.0, -k.focal_x * p.x() * iz * iz,
               0.0, k.focal_y * iz, -k.focal_y * p.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> dp;
      dp.leftCols<3>() = Mat3::Identity();
      dp.rightCols<3>() = -skew(p);
      jac.middleRows<2>(2 * i) = dproj * dp;
    }
    const Vec6 step = (jac.transpose() * jac).ldlt().solve(-jac.transpose() * res);
    if (!step.allFinite()) break;
    pose = compose(se3_exp(step), pose);
    if (step.norm() < kStepTolerance) break;
  }

  if (!(pose.translation().z() > 0.0)) {
    throw Error(ErrorCode::BehindCamera, "solution has negative depth");
  }
  for (const auto& c : corners3) {
    if (!(pose.apply(c).z() > 0.0)) throw Error(ErrorCode::BehindCamera, "corner behind camera");
  }
  return Pose(nearest_rotation(pose.rotation()), pose.translation(), obs.timestamp);
}

Pose transform_to_target(const Pose& pose_i, const Pose& rel) { return compose(pose_i, rel); }

Pose average_poses(std::span<const Pose> poses) {
  if (poses.empty()) throw Error(ErrorCode::EmptyInput, "no poses to average");
  Vec3 t = Vec3::Zero();
  const Eigen::Quaterniond ref = poses.front().quaternion();
  Eigen::Vector4d q_sum = Eigen::Vector4d::Zero();
  for (const auto& p : poses) {
    t += p.translation();
    Eigen::Quaterniond q = p.quaternion();
    if (q.dot(ref) < 0.0) q.coeffs() *= -1.0;
    q_sum += q.coeffs();
  }
  t /= static_cast<double>(poses.size());
  Eigen::Quaterniond q_mean;
  q_mean.coeffs() = q_sum.normalized();
  return Pose(q_mean.toRotationMatrix(), t, poses.front().timestamp());
}

Pose ransac_average(std::span<const Pose> poses, double inlier_trans_tol, double inlier_rot_tol) {
  if (poses.empty()) throw Error(ErrorCode::EmptyInput, "no poses to average");
  if (poses.size() < 3) return average_poses(poses);

  std::vector<std::size_t> best;
  double best_residual = std::numeric_limits<double>::infinity();
  for (std::size_t h = 0; h < poses.size(); ++h) {
    std::vector<std::size_t> members;
    double residual = 0.0;
    for (std::size_t j = 0; j < poses.size(); ++j) {
      const double dt = translation_distance(poses[h], poses[j]);
      const double dr = rotation_angle(poses[h], poses[j]);
      if (dt <= inlier_trans_tol && dr <= inlier_rot_tol) {
        members.push_back(j);
        residual += dt / inlier_trans_tol + dr / inlier_rot_tol;
      }
    }
    if (members.size() > best.size() ||
        (members.size() == best.size() && residual < best_residual)) {
      best = std::move(members);
      best_residual = residual;
    }
  }
  std::vector<Pose> inliers;
  inliers.reserve(best.size());
  for (auto idx : best) inliers.push_back(poses[idx]);
  return average_poses(inliers);
}

Pose slam_integrate(const SlamEstimate& slam_now, const SlamEstimate& slam_prev,
                    const Pose& target_prev) {
  if (!(slam_now.timestamp > slam_prev.timestamp)) {
    throw Error(ErrorCode::TimestampOrder, "SLAM estimates out of order");
  }
  const Pose motion = compose(inverse(slam_now.pose_cam_in_world), slam_prev.pose_cam_in_world);
  return compose(motion, target_prev).with_timestamp(slam_now.timestamp);
}

Pose extrapolate_camera(const SlamEstimate& slam, double dt) {
  const Pose& p = slam.pose_cam_in_world;
  return Pose::from_approximate(so3_exp(slam.angular_velocity * dt) * p.rotation(),
                                p.translation() + slam.linear_velocity * dt)
      .with_timestamp(slam.timestamp + dt);
}

Pose delay_compensate(const TrackerState& state, const SlamEstimate& slam) {
  if (state.delay < 0.0) throw Error(ErrorCode::NegativeDelay, "delay must be >= 0");
  if (!state.last_target_pose) throw Error(ErrorCode::NotInitialized, "no target pose yet");
  if (state.delay == 0.0) return state.last_target_pose->with_timestamp(slam.timestamp);
  const Pose future = extrapolate_camera(slam, state.delay);
  return compose(compose(inverse(future), slam.pose_cam_in_world), *state.last_target_pose)
      .with_timestamp(slam.timestamp + state.delay);
}

namespace {

const MarkerConfig& target_config(const MarkerLayout& layout) {
  const MarkerConfig* target = nullptr;
  for (const auto& [id, cfg] : layout) {
    if (cfg.target) {
      if (target) throw Error(ErrorCode::InvalidArgument, "more than one target marker");
      target = &cfg;
    }
  }
  if (!target) throw Error(ErrorCode::InvalidArgument, "layout has no target marker");
  return *target;
}

// Marker poses keyed by id; markers absent from the layout or whose pose
// cannot be solved count as not detected.
std::map<int, Pose> solve_all(std::span<const MarkerObservation> detections,
                              const MarkerLayout& layout, const CameraIntrinsics& k) {
  std::map<int, Pose> out;
  for (const auto& obs : detections) {
    auto it = layout.find(obs.marker_id);
    if (it == layout.end() || out.count(obs.marker_id)) continue;
    try {
      out.emplace(obs.marker_id, solve_marker_pose(obs, it->second, k));
    } catch (const Error&) {
    }
  }
  return out;
}

}  // namespace

TrackerState tracker_init(std::span<const MarkerObservation> detections, const SlamEstimate& slam,
                          const MarkerLayout& layout, const CameraIntrinsics& k, double delay) {
  if (delay < 0.0) throw Error(ErrorCode::NegativeDelay, "delay must be >= 0");
  const MarkerConfig& target = target_config(layout);
  const auto solved = solve_all(detections, layout, k);
  if (solved.size() != layout.size()) {
    throw Error(ErrorCode::NotInitialized, "initialization needs every marker in view");
  }
  TrackerState state;
  state.target_id = target.marker_id;
  state.delay = delay;
  const Pose& target_pose = solved.at(target.marker_id);
  for (const auto& [id, pose] : solved) {
    state.relative_poses[id] =
        id == target.marker_id ? Pose::identity() : compose(inverse(pose), target_pose);
  }
  state.last_target_pose = target_pose.with_timestamp(slam.timestamp);
  state.last_slam = slam;
  return state;
}

TrackOutput track_step(const TrackerState& state, std::span<const MarkerObservation> detections,
                       const SlamEstimate& slam, const MarkerLayout& layout,
                       const CameraIntrinsics& k, const TrackerOptions& options) {
  if (!state.last_target_pose || !state.last_slam || state.relative_poses.empty()) {
    throw Error(ErrorCode::NotInitialized, "tracker_init has not run");
  }
  TrackOutput out;
  out.state = state;
  const auto solved = solve_all(detections, layout, k);

  std::optional<Pose> estimate;
  if (!solved.empty()) {
    std::vector<Pose> candidates;
    for (const auto& [id, pose] : solved) {
      auto rel = state.relative_poses.find(id);
      if (rel == state.relative_poses.end()) continue;
      candidates.push_back(transform_to_target(pose, rel->second));
    }
    if (!candidates.empty()) {
      estimate = ransac_average(candidates, options.inlier_translation, options.inlier_rotation)
                     .with_timestamp(slam.timestamp);
      if (solved.size() == layout.size()) {
        out.branch = TrackBranch::AllMarkers;
        for (const auto& [id, pose] : solved) {
          out.state.relative_poses[id] =
              id == state.target_id ? Pose::identity() : compose(inverse(pose), *estimate);
        }
      } else {
        out.branch = TrackBranch::SomeMarkers;
      }
    }
  }
  if (!estimate) {
    out.branch = TrackBranch::NoMarkers;
    if (options.slam_integration) {
      estimate = slam_integrate(slam, *state.last_slam, *state.last_target_pose);
    }
  }

  out.state.last_slam = slam;
  if (!estimate) return out;
  out.state.last_target_pose = *estimate;
  out.pose = options.delay_compensation ? delay_compensate(out.state, slam) : *estimate;
  return out;
}

}  // namespace telepresence
