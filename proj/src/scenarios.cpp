#include "telepresence/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "telepresence/error.hpp"

namespace telepresence {

using nlohmann::json;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    stream};
  return std::mt19937_64(seq);
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const Vec3 v(n(rng), n(rng), n(rng));
    const double len = v.norm();
    if (len > 1e-9) return v / len;
  }
}

double gaussian(std::mt19937_64& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  std::normal_distribution<double> n(0.0, sigma);
  return n(rng);
}

bool bernoulli(std::mt19937_64& rng, double p) {
  if (p <= 0.0) return false;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng) < p;
}

}  // namespace

Trajectory::Trajectory(const TrajectorySpec& spec) : spec_(spec) {
  if (spec_.kind != TrajectoryKind::Oscillating) return;
  if (spec_.components < 1) throw Error(ErrorCode::InvalidArgument, "components must be >= 1");
  if (spec_.min_frequency <= 0.0 || spec_.max_frequency < spec_.min_frequency) {
    throw Error(ErrorCode::InvalidArgument, "bad oscillation band");
  }
  auto rng = stream_rng(spec_.seed, 0x7a11);
  std::uniform_real_distribution<double> freq(spec_.min_frequency, spec_.max_frequency);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  for (int i = 0; i < spec_.components; ++i) {
    const Vec3 d = random_unit(rng);
    const double f = freq(rng);
    translation_waves_.push_back({d, f, phase(rng)});
  }
  for (int i = 0; i < spec_.components; ++i) {
    const Vec3 d = random_unit(rng);
    const double f = freq(rng);
    rotation_waves_.push_back({d, f, phase(rng)});
  }
}

TrajectorySample Trajectory::at(double t) const {
  TrajectorySample s;
  s.time = t;
  const Mat3& r0 = spec_.start.rotation();
  const Vec3& p0 = spec_.start.translation();
  switch (spec_.kind) {
    case TrajectoryKind::Static:
      s.pose = spec_.start;
      break;
    case TrajectoryKind::Oscillating: {
      // Each component gets amplitude / n, so the excursion never exceeds
      // the configured amplitude.
      const double at = spec_.translation_amplitude / spec_.components;
      const double ar = spec_.rotation_amplitude / spec_.components;
      Vec3 dp = Vec3::Zero(), vp = Vec3::Zero(), th = Vec3::Zero(), dth = Vec3::Zero();
      for (const auto& w : translation_waves_) {
        const double arg = kTwoPi * w.frequency * t + w.phase;
        dp += at * std::sin(arg) * w.direction;
        vp += at * kTwoPi * w.frequency * std::cos(arg) * w.direction;
      }
      for (const auto& w : rotation_waves_) {
        const double arg = kTwoPi * w.frequency * t + w.phase;
        th += ar * std::sin(arg) * w.direction;
        dth += ar * kTwoPi * w.frequency * std::cos(arg) * w.direction;
      }
      s.pose = Pose(so3_exp(th) * r0, p0 + dp);
      s.linear_velocity = vp;
      s.angular_velocity = so3_left_jacobian(th) * dth;
      break;
    }
    case TrajectoryKind::Orbit: {
      const Vec3 axis = spec_.orbit_axis.normalized();
      const double rate = spec_.orbit_sweep / spec_.duration;
      const double alpha = spec_.orbit_start + rate * t;
      const Mat3 ra = so3_exp(alpha * axis);
      const Vec3 c = spec_.orbit_center + ra * (p0 - spec_.orbit_center);
      s.pose = Pose(ra * r0, c);
      s.angular_velocity = rate * axis;
      s.linear_velocity = s.angular_velocity.cross(c - spec_.orbit_center);
      break;
    }
    case TrajectoryKind::ConstantTwist:
      s.pose = Pose(so3_exp(spec_.angular_velocity * t) * r0, p0 + spec_.linear_velocity * t);
      s.linear_velocity = spec_.linear_velocity;
      s.angular_velocity = spec_.angular_velocity;
      break;
  }
  s.pose = s.pose.with_timestamp(t);
  return s;
}

std::vector<double> rate_grid(double rate, double duration) {
  if (rate <= 0.0 || duration < 0.0) throw Error(ErrorCode::InvalidArgument, "bad rate grid");
  const auto n = static_cast<long>(std::floor(duration * rate + 1e-9));
  std::vector<double> out;
  out.reserve(n + 1);
  for (long k = 0; k <= n; ++k) out.push_back(static_cast<double>(k) / rate);
  return out;
}

std::vector<TrajectorySample> generate_trajectory(const Trajectory& traj, double rate) {
  std::vector<TrajectorySample> out;
  for (double t : rate_grid(rate, traj.spec().duration)) out.push_back(traj.at(t));
  return out;
}

// ---- scenario presets ----

void Scenario::validate() const {
  auto bad = [](const char* what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (!(duration > 0.0)) bad("duration must be positive");
  if (!(camera_rate > 0.0 && slam_rate > 0.0 && lidar_rate > 0.0)) bad("rates must be positive");
  const auto& n = noise;
  if (n.pixel_sigma < 0 || n.range_sigma < 0 || n.slam_drift < 0 || n.slam_linear_sigma < 0 ||
      n.slam_angular_sigma < 0 || n.box_sigma < 0 || n.odometry_translation < 0 ||
      n.odometry_rotation < 0) {
    bad("noise levels must be non-negative");
  }
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(n.marker_dropout) || !prob(n.detector_false_negative)) bad("probabilities in [0,1]");
  for (const auto& [a, b] : n.dropout_windows) {
    if (!(a >= 0.0 && a < b && b <= duration)) bad("dropout window outside the run");
  }
  if (shaking_translation < 0 || shaking_rotation < 0) bad("shaking amplitudes must be >= 0");
  if (tracker_delay < 0) bad("tracker delay must be >= 0");
}

const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"nominal",     "shaking", "rotation",
                                              "occlusion",   "night_proxy", "dropout",
                                              "rotation_occlusion"};
  return names;
}

Scenario make_scenario(const std::string& name, std::uint64_t seed) {
  Scenario s;
  s.name = name;
  s.seed = seed;
  s.duration = 8.0;
  s.noise.pixel_sigma = 0.5;
  s.noise.range_sigma = 0.01;
  s.noise.box_sigma = 2.0;
  s.noise.odometry_translation = 0.004;
  s.noise.odometry_rotation = 0.003;
  if (name == "nominal" || name == "shaking" || name == "rotation") {
  } else if (name == "occlusion") {
    s.occluder = true;
  } else if (name == "night_proxy") {
    s.noise.pixel_sigma = 1.0;
    s.noise.marker_dropout = 0.5;
    s.noise.detector_false_negative = 0.4;
  } else if (name == "dropout") {
    // Camera blind for 5 s while shaking; exact pixels so that every error
    // during the gap comes from the propagation alone.
    s.duration = 9.0;
    s.noise.pixel_sigma = 0.0;
    s.noise.dropout_windows = {{2.0, 7.0}};
    s.tracker_delay = 0.0;
  } else if (name == "rotation_occlusion") {
    s.occluder = true;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown scenario '" + name + "'");
  }
  return s;
}

json to_json(const Scenario& s) {
  json windows = json::array();
  for (const auto& [a, b] : s.noise.dropout_windows) windows.push_back({a, b});
  const auto& n = s.noise;
  return json{{"name", s.name},
              {"duration", s.duration},
              {"camera_rate", s.camera_rate},
              {"slam_rate", s.slam_rate},
              {"lidar_rate", s.lidar_rate},
              {"seed", s.seed},
              {"noise",
               {{"pixel_sigma", n.pixel_sigma},
                {"range_sigma", n.range_sigma},
                {"slam_drift", n.slam_drift},
                {"slam_linear_sigma", n.slam_linear_sigma},
                {"slam_angular_sigma", n.slam_angular_sigma},
                {"marker_dropout", n.marker_dropout},
                {"detector_false_negative", n.detector_false_negative},
                {"box_sigma", n.box_sigma},
                {"odometry_translation", n.odometry_translation},
                {"odometry_rotation", n.odometry_rotation},
                {"dropout_windows", windows}}},
              {"shaking_translation", s.shaking_translation},
              {"shaking_rotation", s.shaking_rotation},
              {"orbit_sweep", s.orbit_sweep},
              {"occluder", s.occluder},
              {"tracker_delay", s.tracker_delay}};
}

Scenario scenario_from_json(const json& j) {
  try {
    Scenario s = make_scenario(j.value("name", std::string("nominal")),
                               j.value("seed", std::uint64_t{0}));
    auto take = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("duration", s.duration);
    take("camera_rate", s.camera_rate);
    take("slam_rate", s.slam_rate);
    take("lidar_rate", s.lidar_rate);
    take("shaking_translation", s.shaking_translation);
    take("shaking_rotation", s.shaking_rotation);
    take("orbit_sweep", s.orbit_sweep);
    take("occluder", s.occluder);
    take("tracker_delay", s.tracker_delay);
    if (j.contains("noise")) {
      const auto& nj = j.at("noise");
      auto& n = s.noise;
      auto takeo = [&nj](const char* key, double& field) {
        if (nj.contains(key)) field = nj.at(key).get<double>();
      };
      takeo("pixel_sigma", n.pixel_sigma);
      takeo("range_sigma", n.range_sigma);
      takeo("slam_drift", n.slam_drift);
      takeo("slam_linear_sigma", n.slam_linear_sigma);
      takeo("slam_angular_sigma", n.slam_angular_sigma);
      takeo("marker_dropout", n.marker_dropout);
      takeo("detector_false_negative", n.detector_false_negative);
      takeo("box_sigma", n.box_sigma);
      takeo("odometry_translation", n.odometry_translation);
      takeo("odometry_rotation", n.odometry_rotation);
      if (nj.contains("dropout_windows")) {
        n.dropout_windows.clear();
        for (const auto& w : nj.at("dropout_windows")) {
          if (w.size() != 2) throw Error(ErrorCode::InvalidArgument, "window needs [start, end]");
          n.dropout_windows.emplace_back(w.at(0).get<double>(), w.at(1).get<double>());
        }
      }
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("scenario: ") + e.what());
  }
}

// ---- marker world ----

MarkerWorld default_marker_world() {
  MarkerWorld w;
  w.intrinsics = {1000.0, 1000.0, 640.0, 480.0, 1280, 960};
  w.camera_start = Pose::from_translation(Vec3(0.0, 0.0, -0.6));
  const struct {
    int id;
    double side;
    Vec3 at;
  } markers[] = {{0, 0.10, {0.0, 0.0, 0.0}},
                 {1, 0.0625, {0.13, 0.0, 0.0}},
                 {2, 0.025, {-0.10, 0.07, 0.0}},
                 {3, 0.025, {-0.10, -0.07, 0.0}},
                 {4, 0.025, {0.0, 0.10, 0.0}}};
  for (const auto& m : markers) {
    w.layout[m.id] = MarkerConfig{m.id, m.side, m.id == 0};
    w.marker_in_object[m.id] = Pose::from_translation(m.at);
  }
  return w;
}

namespace {

TrajectorySpec base_spec(const Scenario& s, const Pose& start) {
  TrajectorySpec t;
  t.start = start;
  t.duration = s.duration;
  t.seed = s.seed;
  const bool orbit = s.name == "rotation" || s.name == "rotation_occlusion";
  const bool shake = s.name == "shaking" || s.name == "dropout";
  if (orbit) {
    t.kind = TrajectoryKind::Orbit;
    t.orbit_sweep = s.orbit_sweep;
  } else if (shake) {
    t.kind = TrajectoryKind::Oscillating;
    t.translation_amplitude = s.shaking_translation;
    t.rotation_amplitude = s.shaking_rotation;
  }
  return t;
}

bool in_dropout(const NoiseConfig& noise, double t) {
  for (const auto& [a, b] : noise.dropout_windows) {
    if (t >= a && t < b) return true;
  }
  return false;
}

}  // namespace

TrajectorySpec camera_trajectory(const Scenario& s, const MarkerWorld& w) {
  TrajectorySpec t = base_spec(s, w.camera_start);
  // Orbit about the vertical (camera y) axis, centered on the frontal view.
  t.orbit_axis = Vec3::UnitY();
  t.orbit_center = w.object_in_world.translation();
  t.orbit_start = -0.5 * s.orbit_sweep;
  return t;
}

std::vector<MarkerFrame> render_markers(const std::vector<TrajectorySample>& samples,
                                        const MarkerWorld& w, const NoiseConfig& noise,
                                        std::mt19937_64& rng) {
  std::vector<MarkerFrame> frames;
  frames.reserve(samples.size());
  for (const auto& s : samples) {
    MarkerFrame f;
    f.time = s.time;
    const Pose world_to_cam = inverse(s.pose);
    for (const auto& [id, cfg] : w.layout) {
      const Pose m_in_c = world_to_cam * w.object_in_world * w.marker_in_object.at(id);
      // Printed side faces -z of the marker frame.
      if (inverse(m_in_c).translation().z() >= 0.0) continue;
      MarkerObservation obs;
      obs.marker_id = id;
      obs.timestamp = s.time;
      bool visible = true;
      const auto corners = cfg.corners();
      for (int i = 0; i < 4; ++i) {
        const auto px = w.intrinsics.project(m_in_c.apply(corners[i]));
        if (!px || !w.intrinsics.in_image(*px)) {
          visible = false;
          break;
        }
        obs.corners[i] = *px;
      }
      if (!visible) continue;
      for (auto& c : obs.corners) {
        c.x() += gaussian(rng, noise.pixel_sigma);
        c.y() += gaussian(rng, noise.pixel_sigma);
      }
      if (bernoulli(rng, noise.marker_dropout)) continue;
      if (in_dropout(noise, s.time)) continue;
      f.observations.push_back(obs);
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<SlamEstimate> render_slam(const std::vector<TrajectorySample>& samples, double drift,
                                      const NoiseConfig& noise, std::mt19937_64& rng) {
  std::vector<SlamEstimate> out;
  out.reserve(samples.size());
  Vec3 offset = Vec3::Zero();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    if (k > 0 && drift > 0.0) offset += drift * (s.time - samples[k - 1].time) * random_unit(rng);
    SlamEstimate e;
    e.timestamp = s.time;
    e.pose_cam_in_world = Pose(s.pose.rotation(), s.pose.translation() + offset, s.time);
    e.linear_velocity = s.linear_velocity;
    e.angular_velocity = s.angular_velocity;
    for (int i = 0; i < 3; ++i) {
      e.linear_velocity(i) += gaussian(rng, noise.slam_linear_sigma);
      e.angular_velocity(i) += gaussian(rng, noise.slam_angular_sigma);
    }
    out.push_back(e);
  }
  return out;
}

MarkerSequence simulate_marker_sequence(const Scenario& s, const MarkerWorld& w) {
  s.validate();
  const Trajectory traj(camera_trajectory(s, w));
  auto marker_rng = stream_rng(s.seed, 1);
  auto slam_rng = stream_rng(s.seed, 2);
  MarkerSequence seq;
  seq.frames = render_markers(generate_trajectory(traj, s.camera_rate), w, s.noise, marker_rng);
  const auto slam_samples = generate_trajectory(traj, s.slam_rate);
  seq.slam = render_slam(slam_samples, s.noise.slam_drift, s.noise, slam_rng);
  const int target = [&] {
    for (const auto& [id, cfg] : w.layout)
      if (cfg.target) return id;
    throw Error(ErrorCode::InvalidArgument, "layout has no target marker");
  }();
  const Pose target_in_world = w.object_in_world * w.marker_in_object.at(target);
  for (const auto& smp : slam_samples) {
    seq.truth.push_back({smp.time, "target_in_camera",
                         (inverse(smp.pose) * target_in_world).with_timestamp(smp.time)});
  }
  return seq;
}

// ---- LiDAR world ----

Pose Solid::pose_at(double t) const {
  const double dt = std::isfinite(t_on) ? t - t_on : t;
  if (velocity.isZero()) return pose;
  return Pose(pose.rotation(), pose.translation() + velocity * dt);
}

namespace {

constexpr double kHitEpsilon = 1e-9;

std::optional<double> intersect_local(Solid::Shape shape, const Vec3& size, const Vec3& o,
                                      const Vec3& d) {
  double best = std::numeric_limits<double>::infinity();
  switch (shape) {
    case Solid::Shape::Box: {
      const Vec3 h = 0.5 * size;
      double tmin = -std::numeric_limits<double>::infinity();
      double tmax = std::numeric_limits<double>::infinity();
      for (int i = 0; i < 3; ++i) {
        if (std::abs(d(i)) < 1e-12) {
          if (std::abs(o(i)) > h(i)) return std::nullopt;
          continue;
        }
        double t1 = (-h(i) - o(i)) / d(i);
        double t2 = (h(i) - o(i)) / d(i);
        if (t1 > t2) std::swap(t1, t2);
        tmin = std::max(tmin, t1);
        tmax = std::min(tmax, t2);
      }
      // Origins inside a box see nothing of it.
      if (tmax < tmin || tmin <= kHitEpsilon) return std::nullopt;
      return tmin;
    }
    case Solid::Shape::Cylinder: {
      const double r = size.x();
      const double half = 0.5 * size.y();
      const double a = d.x() * d.x() + d.y() * d.y();
      if (a > 1e-12) {
        const double b = 2.0 * (o.x() * d.x() + o.y() * d.y());
        const double c = o.x() * o.x() + o.y() * o.y() - r * r;
        const double disc = b * b - 4.0 * a * c;
        if (disc >= 0.0) {
          const double sq = std::sqrt(disc);
          for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
            if (t > kHitEpsilon && std::abs(o.z() + t * d.z()) <= half) best = std::min(best, t);
          }
        }
      }
      if (std::abs(d.z()) > 1e-12) {
        for (double z : {-half, half}) {
          const double t = (z - o.z()) / d.z();
          const double x = o.x() + t * d.x();
          const double y = o.y() + t * d.y();
          if (t > kHitEpsilon && x * x + y * y <= r * r) best = std::min(best, t);
        }
      }
      break;
    }
    case Solid::Shape::Plane: {
      if (std::abs(d.z()) < 1e-12) return std::nullopt;
      const double t = -o.z() / d.z();
      if (t <= kHitEpsilon) return std::nullopt;
      const double x = o.x() + t * d.x();
      const double y = o.y() + t * d.y();
      if (size.x() > 0.0 && std::abs(x) > size.x()) return std::nullopt;
      if (size.y() > 0.0 && std::abs(y) > size.y()) return std::nullopt;
      best = t;
      break;
    }
  }
  if (!std::isfinite(best)) return std::nullopt;
  return best;
}

}  // namespace

std::optional<double> Solid::intersect(const Vec3& origin, const Vec3& dir, double t) const {
  if (!active(t)) return std::nullopt;
  const Pose inv = inverse(pose_at(t));
  return intersect_local(shape, size, inv.apply(origin), inv.rotation() * dir);
}

LidarScan render_lidar(const std::vector<Solid>& scene, const Pose& lidar_in_world, double t,
                       const LidarModel& model, double range_sigma, std::mt19937_64& rng) {
  struct Local {
    int index;
    Pose world_to_solid;
  };
  std::vector<Local> active;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (scene[i].active(t)) active.push_back({static_cast<int>(i), inverse(scene[i].pose_at(t))});
  }
  LidarScan scan;
  scan.cloud.frame_id = "lidar";
  const Vec3 origin = lidar_in_world.translation();
  const Mat3& rot = lidar_in_world.rotation();
  const int n_az = static_cast<int>(std::lround(kTwoPi / model.azimuth_step));
  for (int ring = 0; ring < model.rings; ++ring) {
    const double elev =
        model.rings == 1 ? model.min_elevation
                         : model.min_elevation + ring * (model.max_elevation - model.min_elevation) /
                                                     (model.rings - 1);
    for (int a = 0; a < n_az; ++a) {
      const double az = a * model.azimuth_step;
      const Vec3 dir_l(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
                       std::sin(elev));
      const Vec3 dir_w = rot * dir_l;
      double best = std::numeric_limits<double>::infinity();
      int hit = -1;
      for (const auto& s : active) {
        const auto& solid = scene[s.index];
        const auto d = intersect_local(solid.shape, solid.size, s.world_to_solid.apply(origin),
                                       s.world_to_solid.rotation() * dir_w);
        if (d && *d < best) {
          best = *d;
          hit = s.index;
        }
      }
      if (hit < 0) continue;
      const double range = best + gaussian(rng, range_sigma);
      if (range < model.min_range || range > model.max_range) continue;
      scan.cloud.points.push_back(range * dir_l);
      scan.solid_index.push_back(hit);
    }
  }
  return scan;
}

std::vector<BBox2D> render_detections(const LidarScan& scan, const std::vector<Solid>& scene,
                                      const Pose& lidar_to_camera, const CameraIntrinsics& k,
                                      const NoiseConfig& noise, std::mt19937_64& rng,
                                      std::size_t min_points) {
  struct Extent {
    double u1 = std::numeric_limits<double>::infinity(), v1 = u1;
    double u2 = -std::numeric_limits<double>::infinity(), v2 = u2;
    std::size_t count = 0;
  };
  // Non-static solids sharing a label form one object.
  std::map<std::string, Extent> groups;
  for (const auto& p : project_to_image(scan.cloud, lidar_to_camera, k)) {
    const auto& solid = scene.at(scan.solid_index.at(p.index));
    if (solid.label == "static") continue;
    if (!k.in_image(Vec2(p.u, p.v))) continue;
    auto& e = groups[solid.label];
    e.u1 = std::min(e.u1, p.u);
    e.v1 = std::min(e.v1, p.v);
    e.u2 = std::max(e.u2, p.u);
    e.v2 = std::max(e.v2, p.v);
    ++e.count;
  }
  std::vector<BBox2D> out;
  for (const auto& [label, e] : groups) {
    if (e.count < min_points) continue;
    BBox2D b;
    b.class_label = label;
    b.score = 0.9;
    b.u1 = e.u1 + gaussian(rng, noise.box_sigma);
    b.v1 = e.v1 + gaussian(rng, noise.box_sigma);
    b.u2 = e.u2 + gaussian(rng, noise.box_sigma);
    b.v2 = e.v2 + gaussian(rng, noise.box_sigma);
    const bool missed = bernoulli(rng, noise.detector_false_negative);
    b.u1 = std::clamp(b.u1, 0.0, k.image_width - 1.0);
    b.u2 = std::clamp(b.u2, 0.0, k.image_width - 1.0);
    b.v1 = std::clamp(b.v1, 0.0, k.image_height - 1.0);
    b.v2 = std::clamp(b.v2, 0.0, k.image_height - 1.0);
    if (missed || b.u2 <= b.u1 || b.v2 <= b.v1) continue;
    out.push_back(b);
  }
  return out;
}

LidarWorld default_lidar_world() {
  LidarWorld w;
  w.intrinsics = {1000.0, 1000.0, 640.0, 480.0, 1280, 960};
  Mat3 cam;
  cam.col(0) = Vec3(0.0, -1.0, 0.0);  // image right
  cam.col(1) = Vec3(0.0, 0.0, -1.0);  // image down
  cam.col(2) = Vec3(1.0, 0.0, 0.0);   // optical axis along LiDAR x
  w.camera_in_lidar = Pose(cam, Vec3(0.05, 0.0, -0.1));
  w.object_in_world = Pose::from_translation(Vec3(0.0, 0.0, 1.0));
  w.lidar_start = Pose::from_translation(Vec3(-3.0, 0.0, 0.8));

  auto cyl = [](const Pose& p, double r, double len, const char* label) {
    Solid s;
    s.shape = Solid::Shape::Cylinder;
    s.pose = p;
    s.size = Vec3(r, len, 0.0);
    s.label = label;
    return s;
  };
  auto box = [](const Pose& p, const Vec3& size, const char* label) {
    Solid s;
    s.shape = Solid::Shape::Box;
    s.pose = p;
    s.size = size;
    s.label = label;
    return s;
  };
  // The pipe alone is symmetric about its axis; the valve body and the
  // branch make its yaw observable from every viewpoint of the orbit.
  w.scene.push_back(cyl(Pose::from_translation(Vec3(0.0, 0.0, 1.0)), 0.12, 1.6, "target"));
  w.scene.push_back(box(Pose(rot_z(0.5), Vec3(0.0, 0.0, 1.0)), Vec3(0.45, 0.35, 0.4), "target"));
  w.scene.push_back(cyl(Pose(rot_x(-std::numbers::pi / 2), Vec3(0.0, 0.45, 1.45)), 0.07, 0.7,
                        "target"));

  w.scene.push_back(box(Pose::from_translation(Vec3(0.0, -7.0, 1.5)), Vec3(16.0, 0.3, 3.0),
                        "static"));
  w.scene.push_back(box(Pose::from_translation(Vec3(-8.0, 0.0, 1.5)), Vec3(0.3, 14.0, 3.0),
                        "static"));
  w.scene.push_back(box(Pose::from_translation(Vec3(-5.0, 6.0, 1.5)), Vec3(6.0, 0.3, 3.0),
                        "static"));
  w.scene.push_back(box(Pose(rot_z(0.3), Vec3(-4.0, 3.0, 0.4)), Vec3(1.0, 1.0, 0.8), "static"));
  w.scene.push_back(box(Pose(rot_z(-0.4), Vec3(2.5, -4.5, 0.5)), Vec3(1.5, 1.0, 1.0), "static"));
  w.scene.push_back(box(Pose::from_translation(Vec3(-5.0, -3.0, 0.2)), Vec3(3.0, 3.0, 0.4),
                        "static"));
  w.scene.push_back(cyl(Pose::from_translation(Vec3(-2.5, -3.5, 1.5)), 0.2, 3.0, "static"));
  return w;
}

TrajectorySpec lidar_trajectory(const Scenario& s, const LidarWorld& w) {
  TrajectorySpec t = base_spec(s, w.lidar_start);
  t.orbit_axis = Vec3::UnitZ();
  t.orbit_center = Vec3(w.object_in_world.translation().x(), w.object_in_world.translation().y(),
                        0.0);
  return t;
}

Solid make_occluder(const Scenario& s, const LidarWorld& w) {
  const Trajectory traj(lidar_trajectory(s, w));
  const double t_mid = 0.5 * s.duration;
  const auto mid = traj.at(t_mid);
  const Vec3 obj = w.object_in_world.translation();
  Vec3 toward = mid.pose.translation() - obj;
  toward.z() = 0.0;
  toward.normalize();
  Vec3 across = Vec3::UnitZ().cross(toward);
  const double standoff = 1.0;
  // Walk against the sweep of the line of sight so the crossing stays short.
  if (across.dot(mid.angular_velocity.cross(standoff * toward)) > 0.0) across = -across;
  const double speed = 1.2;
  Vec3 crossing = obj + standoff * toward;
  crossing.z() = 0.9;
  Solid o;
  o.shape = Solid::Shape::Box;
  o.size = Vec3(0.5, 0.5, 1.8);
  o.label = "occluder";
  o.t_on = 0.0;
  o.pose = Pose::from_translation(crossing - across * speed * t_mid);
  o.velocity = across * speed;
  return o;
}

LidarSequence simulate_lidar_sequence(const Scenario& s, const LidarWorld& w) {
  s.validate();
  const Trajectory traj(lidar_trajectory(s, w));
  auto scene = w.scene;
  if (s.occluder) scene.push_back(make_occluder(s, w));
  auto range_rng = stream_rng(s.seed, 3);
  auto detector_rng = stream_rng(s.seed, 4);
  const Pose lidar_to_camera = inverse(w.camera_in_lidar);
  LidarSequence seq;
  for (double t : rate_grid(s.lidar_rate, s.duration)) {
    const auto smp = traj.at(t);
    auto scan = render_lidar(scene, smp.pose, t, w.model, s.noise.range_sigma, range_rng);
    seq.detections.push_back(
        render_detections(scan, scene, lidar_to_camera, w.intrinsics, s.noise, detector_rng));
    seq.times.push_back(t);
    seq.scans.push_back(std::move(scan.cloud));
    seq.lidar_in_world.push_back(smp.pose);
    seq.truth.push_back(
        {t, "object_in_lidar", (inverse(smp.pose) * w.object_in_world).with_timestamp(t)});
  }
  return seq;
}

}  // namespace telepresence
