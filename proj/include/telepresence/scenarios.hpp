#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "telepresence/geometry.hpp"
#include "telepresence/marker_tracker.hpp"
#include "telepresence/object_pipeline.hpp"
#include "telepresence/point_cloud.hpp"
#include "telepresence/streams.hpp"

namespace telepresence {

enum class TrajectoryKind { Static, Oscillating, Orbit, ConstantTwist };

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::Static;
  Pose start;  // sensor in world at t = 0 (Orbit: at angle 0)
  double duration = 1.0;
  // Oscillating: a sum of `components` sinusoids per channel with random
  // directions, phases and frequencies; the amplitudes bound the excursion.
  double translation_amplitude = 0.0;  // m
  double rotation_amplitude = 0.0;     // rad
  double min_frequency = 0.5;          // Hz
  double max_frequency = 2.0;          // Hz
  int components = 4;
  std::uint64_t seed = 0;
  // Orbit: rotation about `orbit_axis` through `orbit_center` from
  // `orbit_start` to `orbit_start + orbit_sweep` at constant rate.
  Vec3 orbit_center = Vec3::Zero();
  Vec3 orbit_axis = Vec3::UnitZ();
  double orbit_start = 0.0;
  double orbit_sweep = 0.0;
  // ConstantTwist: world-frame velocities.
  Vec3 linear_velocity = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();
};

struct TrajectorySample {
  double time = 0.0;
  Pose pose;  // sensor in world
  Vec3 linear_velocity = Vec3::Zero();   // world frame
  Vec3 angular_velocity = Vec3::Zero();  // world frame, dR/dt = [w]x R
};

/// Closed-form trajectory with analytic velocities.
class Trajectory {
 public:
  explicit Trajectory(const TrajectorySpec& spec);

  TrajectorySample at(double t) const;
  const TrajectorySpec& spec() const { return spec_; }

 private:
  struct Wave {
    Vec3 direction;
    double frequency;
    double phase;
  };
  TrajectorySpec spec_;
  std::vector<Wave> translation_waves_;
  std::vector<Wave> rotation_waves_;
};

/// Grid times k / rate for k = 0 .. floor(duration * rate).
std::vector<double> rate_grid(double rate, double duration);

std::vector<TrajectorySample> generate_trajectory(const Trajectory& traj, double rate);

struct NoiseConfig {
  double pixel_sigma = 0.0;           // px, marker corners
  double range_sigma = 0.0;           // m, LiDAR
  double slam_drift = 0.0;            // m/s
  double slam_linear_sigma = 0.0;     // m/s on reported velocities
  double slam_angular_sigma = 0.0;    // rad/s
  double marker_dropout = 0.0;        // per marker and frame
  double detector_false_negative = 0.0;  // per box
  double box_sigma = 0.0;             // px on detector box corners
  double odometry_translation = 0.0;  // m per LiDAR step, handed to the pipeline
  double odometry_rotation = 0.0;     // rad per LiDAR step
  std::vector<std::pair<double, double>> dropout_windows;  // s, marker camera blind on [start, end)
};

/// Named evaluation setup. `name` picks the motion: nominal, occlusion,
/// night_proxy and dropout hold the sensor still (dropout shakes so the
/// blind interval has motion to bridge), shaking oscillates, rotation and
/// rotation_occlusion orbit the object.
struct Scenario {
  std::string name = "nominal";
  double duration = 10.0;
  double camera_rate = 25.0;
  double slam_rate = 200.0;
  double lidar_rate = 10.0;
  std::uint64_t seed = 0;
  NoiseConfig noise;
  double shaking_translation = 0.05;
  double shaking_rotation = 0.05235987755982988;  // 3 deg
  double orbit_sweep = 2.0943951023931953;        // 120 deg
  bool occluder = false;
  double tracker_delay = 0.05;  // s, marker pipeline latency t_d

  void validate() const;
};

const std::vector<std::string>& scenario_names();
/// Preset for a name from scenario_names(); throws InvalidArgument otherwise.
Scenario make_scenario(const std::string& name, std::uint64_t seed = 0);
/// A preset named by "name", then any field present overrides it.
Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Scenario& s);

// ---- marker camera world ----

struct MarkerWorld {
  MarkerLayout layout;
  std::map<int, Pose> marker_in_object;
  Pose object_in_world;
  CameraIntrinsics intrinsics;
  Pose camera_start;  // camera in world before any motion
};

/// Five coplanar markers (10, 6.25 and three 2.5 cm) facing a 1280x960
/// camera 0.6 m away; marker 0 is the target.
MarkerWorld default_marker_world();

TrajectorySpec camera_trajectory(const Scenario& s, const MarkerWorld& w);

struct MarkerFrame {
  double time = 0.0;
  std::vector<MarkerObservation> observations;
};

/// One frame per grid sample. Markers seen from behind, with a corner
/// outside the image or behind the camera, inside a dropout window or
/// randomly dropped are omitted; corners get Gaussian pixel noise.
std::vector<MarkerFrame> render_markers(const std::vector<TrajectorySample>& samples,
                                        const MarkerWorld& w, const NoiseConfig& noise,
                                        std::mt19937_64& rng);

/// Ground-truth pose plus a translational random walk whose steps have
/// length drift * dt, and noisy analytic velocities.
std::vector<SlamEstimate> render_slam(const std::vector<TrajectorySample>& samples,
                                      double drift, const NoiseConfig& noise,
                                      std::mt19937_64& rng);

struct MarkerSequence {
  std::vector<MarkerFrame> frames;      // camera grid
  std::vector<SlamEstimate> slam;       // SLAM grid
  std::vector<GroundTruthRecord> truth;  // target in camera, SLAM grid
};

MarkerSequence simulate_marker_sequence(const Scenario& s, const MarkerWorld& w);

// ---- LiDAR world ----

struct Solid {
  enum class Shape { Cylinder, Box, Plane } shape = Shape::Box;
  Pose pose;  // solid frame in world at t_on; cylinder axis and plane normal are local z
  /// Cylinder: (radius, length, -). Box: full extents. Plane: half extents
  /// in x and y, infinite when <= 0.
  Vec3 size = Vec3::Zero();
  std::string label = "static";
  Vec3 velocity = Vec3::Zero();  // world frame
  double t_on = -std::numeric_limits<double>::infinity();
  double t_off = std::numeric_limits<double>::infinity();

  bool active(double t) const { return t >= t_on && t <= t_off; }
  Pose pose_at(double t) const;
  /// Distance along a world ray to the first hit, if any.
  std::optional<double> intersect(const Vec3& origin, const Vec3& dir, double t) const;
};

struct LidarModel {
  int rings = 16;
  double min_elevation = -0.2617993877991494;  // -15 deg
  double max_elevation = 0.2617993877991494;
  double azimuth_step = 0.003490658503988659;  // 0.2 deg
  double min_range = 0.9;
  double max_range = 100.0;
};

struct LidarScan {
  PointCloud cloud;              // LiDAR frame
  std::vector<int> solid_index;  // hit solid per point
};

LidarScan render_lidar(const std::vector<Solid>& scene, const Pose& lidar_in_world, double t,
                       const LidarModel& model, double range_sigma, std::mt19937_64& rng);

/// Oracle detector: per labelled solid group ("target" and any non-static
/// label) the pixel bounds of its returns, with corner noise and random
/// misses. Groups with fewer than `min_points` visible returns are skipped.
std::vector<BBox2D> render_detections(const LidarScan& scan, const std::vector<Solid>& scene,
                                      const Pose& lidar_to_camera, const CameraIntrinsics& k,
                                      const NoiseConfig& noise, std::mt19937_64& rng,
                                      std::size_t min_points = 5);

struct LidarWorld {
  std::vector<Solid> scene;
  LidarModel model;
  Pose camera_in_lidar;
  CameraIntrinsics intrinsics;
  Pose object_in_world;  // frame of the pipe
  Pose lidar_start;
};

/// A vertical pipe with a side branch and a valve box, surrounded by walls,
/// crates and platforms; the LiDAR starts 3 m away facing it.
LidarWorld default_lidar_world();

TrajectorySpec lidar_trajectory(const Scenario& s, const LidarWorld& w);

/// A person-sized box walking across the line of sight 1 m in front of the
/// object, in the middle of the run and against the sweep of the sensor.
Solid make_occluder(const Scenario& s, const LidarWorld& w);

struct LidarSequence {
  std::vector<double> times;
  std::vector<PointCloud> scans;
  std::vector<std::vector<BBox2D>> detections;
  std::vector<Pose> lidar_in_world;
  std::vector<GroundTruthRecord> truth;  // object in LiDAR
};

LidarSequence simulate_lidar_sequence(const Scenario& s, const LidarWorld& w);

}  // namespace telepresence
