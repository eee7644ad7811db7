#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "telepresence/geometry.hpp"
#include "telepresence/point_cloud.hpp"
#include "telepresence/pose_graph.hpp"
#include "telepresence/registration.hpp"

namespace telepresence {

/// Detector output: class, score and pixel box (top-left, bottom-right).
struct BBox2D {
  std::string class_label;
  double score = 1.0;
  double u1 = 0.0, v1 = 0.0, u2 = 0.0, v2 = 0.0;

  void validate() const;
};

nlohmann::json to_json(const BBox2D& box);
BBox2D bbox_from_json(const nlohmann::json& j);

/// Box of a dynamic object in the LiDAR xy-plane, margin already included.
struct BBox3DXY {
  std::string class_label;
  double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;
  int missed = 0;  // consecutive frames without a matching detection

  bool contains(double x, double y) const {
    return x >= min_x && x <= max_x && y >= min_y && y <= max_y;
  }
};

struct Projection {
  std::size_t index = 0;
  double u = 0.0;
  double v = 0.0;
};

/// Pinhole projections of the points with positive depth. `lidar_to_camera`
/// maps LiDAR coordinates into the camera frame.
std::vector<Projection> project_to_image(const PointCloud& cloud, const Pose& lidar_to_camera,
                                         const CameraIntrinsics& k);

/// Points whose projection lies inside the image and inside the box
/// (inclusive), in cloud order.
PointCloud crop_by_bbox(const PointCloud& cloud, std::span<const Projection> projections,
                        const BBox2D& box, const CameraIntrinsics& k);

/// Keeps the points whose range from the sensor origin is within `band` of
/// the near edge of the crop (5th percentile range). A box crop also holds
/// whatever lies behind the object; this drops it.
PointCloud depth_gate(const PointCloud& crop, double band);

struct ObjectModel {
  PointCloud cloud;          // centered at its own centroid
  Vec3 origin = Vec3::Zero();  // that centroid in the frame of the crop
};

/// Voxel-deduplicated crop shifted to its centroid. Throws EmptyCrop.
ObjectModel make_object_model(const PointCloud& crop, double voxel);

PointCloud build_object_model(const PointCloud& scan, const BBox2D& box,
                              const Pose& lidar_to_camera, const CameraIntrinsics& k,
                              double voxel,
                              double depth_band = std::numeric_limits<double>::infinity());

struct DynamicBoxParams {
  double alpha = 0.3;       // weight of the new measurement in the moving average
  double margin = 0.1;      // m
  int expiry = 10;          // missed frames before a box is dropped
  double depth_band = 0.6;  // m, see depth_gate
};

/// One box per detection of a non-target class. Detections are matched to
/// existing boxes of the same class by nearest center; matched boxes are
/// smoothed, unmatched ones age and expire.
std::vector<BBox3DXY> update_dynamic_boxes(std::vector<BBox3DXY> boxes, const PointCloud& scan,
                                           std::span<const BBox2D> detections,
                                           const Pose& lidar_to_camera,
                                           const CameraIntrinsics& k,
                                           const DynamicBoxParams& params = {},
                                           const std::string& target_label = "target");

/// Removes the points whose (x, y) falls inside any box.
PointCloud mask_dynamic(const PointCloud& scan, std::span<const BBox3DXY> boxes);

/// Drops returns outside [min_range, max_range].
PointCloud range_gate(const PointCloud& scan, double min_range = 0.9, double max_range = 100.0);

IcpParams default_odometry_icp();  // point-to-plane, 1.0/0.5/0.25 m
IcpParams default_local_icp();     // point-to-plane, 0.3/0.15/0.05 m

/// Pose of `cur` in the frame of `prev`, identity init. `prev` gets normals
/// when the variant is point-to-plane and it has none.
RegistrationResult odometry_step(const PointCloud& prev, const PointCloud& cur,
                                 const IcpParams& params = default_odometry_icp());

/// Registers the object crop of a scan against the model. `init` and the
/// returned pose are the object pose in the LiDAR frame; fitness is the
/// matched fraction of the crop.
RegistrationResult local_object_pose(const PointCloud& crop, const PointCloud& model,
                                     const Pose& init,
                                     const IcpParams& params = default_local_icp());

enum class PipelineMode { Odom, Backend, Comb, All, PIcp };

std::string to_string(PipelineMode mode);
PipelineMode pipeline_mode_from_string(const std::string& s);

struct PipelineConfig {
  Pose lidar_to_camera;
  CameraIntrinsics intrinsics;
  PipelineMode mode = PipelineMode::All;
  std::string target_label = "target";
  double confidence_threshold = 0.6;
  double model_voxel = 0.02;
  double scan_voxel = 0.1;
  double target_depth_band = 1.0;
  /// The model only grows once the view has turned this far since it last did.
  double model_growth_angle = 0.1;  // rad
  /// Target crop returns below this LiDAR-frame height are dropped. A floor
  /// patch left in the crop is invariant to rotation about the vertical and
  /// pins the object yaw to the sensor.
  double crop_min_z = -std::numeric_limits<double>::infinity();
  bool masking = true;
  int detector_stride = 1;
  DynamicBoxParams boxes;
  IcpParams odometry_icp = default_odometry_icp();
  IcpParams local_icp = default_local_icp();
  double lambda = 2.0;
  /// Backend loop edges register each scan against the one this many frames back.
  int loop_stride = 5;
  double loop_fitness = 0.6;
  /// Synthetic odometry error added to every scan-to-scan estimate.
  double odometry_noise_translation = 0.0;  // m per step
  double odometry_noise_rotation = 0.0;     // rad per step
  std::uint64_t seed = 0;
};

struct PipelineState {
  bool initialized = false;
  PipelineConfig config;
  PointCloud object_model;  // model frame, normals attached
  Pose last_growth;         // object in LiDAR when the model last grew
  ObjectModel initial_model;
  Pose object_in_world;  // world = LiDAR frame of the first scan
  Pose global_pose;      // object in the current LiDAR frame
  PointCloud last_scan;  // masked, downsampled, with normals
  std::vector<PointCloud> keyframes;
  PoseGraph graph;       // LiDAR poses in the world frame
  double confidence_threshold = 0.6;
  std::vector<BBox3DXY> dynamic_boxes;
  long frame = 0;
  std::mt19937_64 rng;
};

struct StepOutput {
  Pose pose;  // object in the LiDAR frame
  double fitness = 0.0;
  std::string source;  // "odom" or "reset"
  std::size_t valid_matches = 0;
};

/// Builds the model from the target detection of the first scan. Throws
/// EmptyCrop when there is no target box or it holds no points.
PipelineState pipeline_init(const PointCloud& scan, std::span<const BBox2D> detections,
                            const PipelineConfig& config);

/// Throws NotInitialized on a default state.
std::pair<StepOutput, PipelineState> pipeline_step(PipelineState state, const PointCloud& scan,
                                                   std::span<const BBox2D> detections);

}  // namespace telepresence
