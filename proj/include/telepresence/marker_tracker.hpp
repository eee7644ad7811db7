#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "telepresence/geometry.hpp"

namespace telepresence {

/// Square planar marker. Corners in the marker frame, in detection order:
/// (-s/2,-s/2,0), (s/2,-s/2,0), (s/2,s/2,0), (-s/2,s/2,0).
struct MarkerConfig {
  int marker_id = 0;
  double side_length = 0.0;
  bool target = false;

  std::array<Vec3, 4> corners() const;
};

struct MarkerObservation {
  int marker_id = 0;
  std::array<Vec2, 4> corners;
  double timestamp = 0.0;
};

/// Camera pose in the SLAM world frame plus world-frame velocities
/// (d/dt R = [angular_velocity]x R).
struct SlamEstimate {
  Pose pose_cam_in_world;
  Vec3 linear_velocity = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();
  double timestamp = 0.0;
};

struct TrackerState {
  int target_id = 0;
  std::map<int, Pose> relative_poses;  // target-in-marker_i, identity for the target
  std::optional<Pose> last_target_pose;  // target-in-camera at last_slam.timestamp
  std::optional<SlamEstimate> last_slam;
  double delay = 0.05;
};

struct TrackerOptions {
  bool slam_integration = true;
  bool delay_compensation = true;
  double inlier_translation = 0.02;  // m
  double inlier_rotation = 0.0872664626;  // rad (5 deg)
};

enum class TrackBranch { AllMarkers, SomeMarkers, NoMarkers };

struct TrackOutput {
  /// Empty only when SLAM integration is disabled and no marker was seen.
  std::optional<Pose> pose;
  TrackerState state;
  TrackBranch branch = TrackBranch::NoMarkers;
};

using MarkerLayout = std::map<int, MarkerConfig>;

/// Marker-in-camera pose from four corner pixels: DLT seed on the planar
/// homography, then Gauss-Newton on the pixel reprojection error.
Pose solve_marker_pose(const MarkerObservation& obs, const MarkerConfig& cfg,
                       const CameraIntrinsics& k);

double reprojection_rms(const MarkerObservation& obs, const MarkerConfig& cfg,
                        const CameraIntrinsics& k, const Pose& marker_in_camera);

/// target-in-camera = marker_i-in-camera ∘ target-in-marker_i
Pose transform_to_target(const Pose& pose_i, const Pose& rel);

/// Arithmetic translation mean and normalized quaternion mean (hemisphere of
/// the first pose).
Pose average_poses(std::span<const Pose> poses);

/// Exhaustive consensus: every pose is tried as hypothesis, the largest
/// inlier set wins (ties go to the lowest summed normalized residual), and its
/// members are averaged. Fewer than three poses are averaged directly.
Pose ransac_average(std::span<const Pose> poses, double inlier_trans_tol, double inlier_rot_tol);

/// Static-object propagation through the camera's relative motion.
Pose slam_integrate(const SlamEstimate& slam_now, const SlamEstimate& slam_prev,
                    const Pose& target_prev);

/// First-order extrapolation of the camera pose `dt` seconds ahead.
Pose extrapolate_camera(const SlamEstimate& slam, double dt);

/// Target pose predicted `state.delay` seconds after `slam.timestamp`.
Pose delay_compensate(const TrackerState& state, const SlamEstimate& slam);

/// Requires every marker of `layout` in `detections`.
TrackerState tracker_init(std::span<const MarkerObservation> detections, const SlamEstimate& slam,
                          const MarkerLayout& layout, const CameraIntrinsics& k,
                          double delay = 0.05);

TrackOutput track_step(const TrackerState& state, std::span<const MarkerObservation> detections,
                       const SlamEstimate& slam, const MarkerLayout& layout,
                       const CameraIntrinsics& k, const TrackerOptions& options = {});

}  // namespace telepresence
