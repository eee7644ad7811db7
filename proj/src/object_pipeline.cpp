#include "telepresence/object_pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "telepresence/error.hpp"
#include "telepresence/kdtree.hpp"

namespace telepresence {

using nlohmann::json;

void BBox2D::validate() const {
  if (!(u1 < u2 && v1 < v2)) throw Error(ErrorCode::InvalidArgument, "box corners out of order");
  if (!(score >= 0.0 && score <= 1.0)) throw Error(ErrorCode::InvalidArgument, "score outside [0,1]");
}

json to_json(const BBox2D& b) {
  return json{{"class", b.class_label}, {"score", b.score}, {"box", {b.u1, b.v1, b.u2, b.v2}}};
}

BBox2D bbox_from_json(const json& j) {
  try {
    BBox2D b;
    b.class_label = j.at("class").get<std::string>();
    b.score = j.at("score").get<double>();
    const auto& box = j.at("box");
    if (box.size() != 4) throw Error(ErrorCode::ParseError, "box needs 4 numbers");
    b.u1 = box.at(0).get<double>();
    b.v1 = box.at(1).get<double>();
    b.u2 = box.at(2).get<double>();
    b.v2 = box.at(3).get<double>();
    b.validate();
    return b;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("detection: ") + e.what());
  }
}

std::vector<Projection> project_to_image(const PointCloud& cloud, const Pose& lidar_to_camera,
                                         const CameraIntrinsics& k) {
  k.validate();
  std::vector<Projection> out;
  out.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto px = k.project(lidar_to_camera.apply(cloud.points[i]));
    if (px) out.push_back({i, px->x(), px->y()});
  }
  return out;
}

PointCloud crop_by_bbox(const PointCloud& cloud, std::span<const Projection> projections,
                        const BBox2D& box, const CameraIntrinsics& k) {
  std::vector<std::size_t> keep;
  for (const auto& p : projections) {
    if (!k.in_image(Vec2(p.u, p.v))) continue;
    if (p.u >= box.u1 && p.u <= box.u2 && p.v >= box.v1 && p.v <= box.v2) keep.push_back(p.index);
  }
  std::sort(keep.begin(), keep.end());
  return cloud.subset(keep);
}

PointCloud depth_gate(const PointCloud& crop, double band) {
  if (crop.empty() || !std::isfinite(band)) return crop;
  std::vector<double> ranges;
  ranges.reserve(crop.size());
  for (const auto& p : crop.points) ranges.push_back(p.norm());
  auto sorted = ranges;
  const auto q = static_cast<std::size_t>(0.05 * static_cast<double>(sorted.size() - 1));
  std::nth_element(sorted.begin(), sorted.begin() + q, sorted.end());
  const double limit = sorted[q] + band;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    if (ranges[i] <= limit) keep.push_back(i);
  }
  return crop.subset(keep);
}

ObjectModel make_object_model(const PointCloud& crop, double voxel) {
  if (crop.empty()) throw Error(ErrorCode::EmptyCrop, "no points inside the target box");
  ObjectModel m;
  m.cloud = voxel_downsample(crop, voxel);
  Vec3 c = Vec3::Zero();
  for (const auto& p : m.cloud.points) c += p;
  c /= static_cast<double>(m.cloud.size());
  for (auto& p : m.cloud.points) p -= c;
  m.origin = c;
  m.cloud.frame_id = "object";
  return m;
}

PointCloud build_object_model(const PointCloud& scan, const BBox2D& box,
                              const Pose& lidar_to_camera, const CameraIntrinsics& k, double voxel,
                              double depth_band) {
  const auto proj = project_to_image(scan, lidar_to_camera, k);
  return make_object_model(depth_gate(crop_by_bbox(scan, proj, box, k), depth_band), voxel).cloud;
}

std::vector<BBox3DXY> update_dynamic_boxes(std::vector<BBox3DXY> boxes, const PointCloud& scan,
                                           std::span<const BBox2D> detections,
                                           const Pose& lidar_to_camera,
                                           const CameraIntrinsics& k,
                                           const DynamicBoxParams& params,
                                           const std::string& target_label) {
  constexpr double kMatchGate = 2.0;  // m between box centers
  const auto proj = project_to_image(scan, lidar_to_camera, k);
  std::vector<BBox3DXY> raw;
  for (const auto& det : detections) {
    if (det.class_label == target_label) continue;
    const auto crop = depth_gate(crop_by_bbox(scan, proj, det, k), params.depth_band);
    if (crop.empty()) continue;
    BBox3DXY b;
    b.class_label = det.class_label;
    b.min_x = b.min_y = std::numeric_limits<double>::infinity();
    b.max_x = b.max_y = -std::numeric_limits<double>::infinity();
    for (const auto& p : crop.points) {
      b.min_x = std::min(b.min_x, p.x());
      b.min_y = std::min(b.min_y, p.y());
      b.max_x = std::max(b.max_x, p.x());
      b.max_y = std::max(b.max_y, p.y());
    }
    b.min_x -= params.margin;
    b.min_y -= params.margin;
    b.max_x += params.margin;
    b.max_y += params.margin;
    raw.push_back(b);
  }

  auto center = [](const BBox3DXY& b) {
    return Vec2(0.5 * (b.min_x + b.max_x), 0.5 * (b.min_y + b.max_y));
  };
  std::vector<bool> matched(boxes.size(), false);
  std::vector<BBox3DXY> added;
  for (const auto& r : raw) {
    std::size_t best = boxes.size();
    double best_d = kMatchGate;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (matched[i] || boxes[i].class_label != r.class_label) continue;
      const double d = (center(boxes[i]) - center(r)).norm();
      if (d <= best_d) {
        best_d = d;
        best = i;
      }
    }
    if (best == boxes.size()) {
      added.push_back(r);
      continue;
    }
    auto& b = boxes[best];
    const double a = params.alpha;
    b.min_x = a * r.min_x + (1.0 - a) * b.min_x;
    b.min_y = a * r.min_y + (1.0 - a) * b.min_y;
    b.max_x = a * r.max_x + (1.0 - a) * b.max_x;
    b.max_y = a * r.max_y + (1.0 - a) * b.max_y;
    b.missed = 0;
    matched[best] = true;
  }
  std::vector<BBox3DXY> out;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (!matched[i] && ++boxes[i].missed > params.expiry) continue;
    out.push_back(boxes[i]);
  }
  out.insert(out.end(), added.begin(), added.end());
  return out;
}

PointCloud mask_dynamic(const PointCloud& scan, std::span<const BBox3DXY> boxes) {
  if (boxes.empty()) return scan;
  std::vector<std::size_t> keep;
  keep.reserve(scan.size());
  for (std::size_t i = 0; i < scan.size(); ++i) {
    const auto& p = scan.points[i];
    const bool inside =
        std::any_of(boxes.begin(), boxes.end(), [&](const auto& b) { return b.contains(p.x(), p.y()); });
    if (!inside) keep.push_back(i);
  }
  return scan.subset(keep);
}

PointCloud range_gate(const PointCloud& scan, double min_range, double max_range) {
  std::vector<std::size_t> keep;
  keep.reserve(scan.size());
  for (std::size_t i = 0; i < scan.size(); ++i) {
    const double r = scan.points[i].norm();
    if (r >= min_range && r <= max_range) keep.push_back(i);
  }
  return scan.subset(keep);
}

IcpParams default_odometry_icp() {
  return {IcpVariant::PointToPlane, {1.0, 0.5, 0.25}, 30, 1e-6};
}

IcpParams default_local_icp() {
  return {IcpVariant::PointToPlane, {0.3, 0.15, 0.05}, 30, 1e-6};
}

namespace {

constexpr std::size_t kNormalNeighbors = 12;

PointCloud with_normals(const PointCloud& cloud, const Vec3& viewpoint = Vec3::Zero()) {
  if (cloud.has_normals() || cloud.size() < 4) return cloud;
  return estimate_normals(cloud, std::min(kNormalNeighbors, cloud.size() - 1), viewpoint);
}

}  // namespace

RegistrationResult odometry_step(const PointCloud& prev, const PointCloud& cur,
                                 const IcpParams& params) {
  if (prev.empty() || cur.empty()) throw Error(ErrorCode::EmptyCloud, "odometry needs two scans");
  if (params.variant == IcpVariant::PointToPlane) {
    return icp(cur, with_normals(prev), Pose::identity(), params);
  }
  return icp(cur, prev, Pose::identity(), params);
}

RegistrationResult local_object_pose(const PointCloud& crop, const PointCloud& model,
                                     const Pose& init, const IcpParams& params) {
  const PointCloud& dst =
      params.variant == IcpVariant::PointToPlane && !model.has_normals() ? with_normals(model)
                                                                          : model;
  auto r = icp(crop, dst, inverse(init), params);
  r.pose = inverse(r.pose);
  return r;
}

std::string to_string(PipelineMode mode) {
  switch (mode) {
    case PipelineMode::Odom: return "odom";
    case PipelineMode::Backend: return "backend";
    case PipelineMode::Comb: return "comb";
    case PipelineMode::All: return "all";
    case PipelineMode::PIcp: return "pICP";
  }
  return "?";
}

PipelineMode pipeline_mode_from_string(const std::string& s) {
  for (auto m : {PipelineMode::Odom, PipelineMode::Backend, PipelineMode::Comb, PipelineMode::All,
                 PipelineMode::PIcp}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorCode::UnknownMethod, "unknown pipeline mode '" + s + "'");
}

namespace {

bool uses_graph(PipelineMode m) { return m == PipelineMode::Backend || m == PipelineMode::All; }
bool uses_local(PipelineMode m) { return m == PipelineMode::Comb || m == PipelineMode::All; }

const BBox2D* target_box(std::span<const BBox2D> detections, const std::string& label) {
  const BBox2D* best = nullptr;
  for (const auto& d : detections) {
    if (d.class_label == label && (!best || d.score > best->score)) best = &d;
  }
  return best;
}

PointCloud prepare_scan(const PointCloud& masked, double voxel) {
  return with_normals(voxel_downsample(masked, voxel));
}

struct Masked {
  PointCloud cloud;
  bool detector_ran = false;
};

Masked preprocess(PipelineState& st, const PointCloud& scan, std::span<const BBox2D> detections) {
  const auto& cfg = st.config;
  Masked m;
  PointCloud gated = range_gate(scan);
  m.detector_ran = cfg.detector_stride <= 1 || st.frame % cfg.detector_stride == 0;
  if (!cfg.masking) {
    m.cloud = std::move(gated);
    return m;
  }
  if (m.detector_ran) {
    st.dynamic_boxes = update_dynamic_boxes(std::move(st.dynamic_boxes), gated, detections,
                                            cfg.lidar_to_camera, cfg.intrinsics, cfg.boxes,
                                            cfg.target_label);
  }
  m.cloud = mask_dynamic(gated, st.dynamic_boxes);
  return m;
}

PointCloud target_crop(const PipelineState& st, const PointCloud& masked,
                       std::span<const BBox2D> detections) {
  const auto& cfg = st.config;
  const BBox2D* box = target_box(detections, cfg.target_label);
  if (!box) return {};
  const auto proj = project_to_image(masked, cfg.lidar_to_camera, cfg.intrinsics);
  const PointCloud crop = crop_by_bbox(masked, proj, *box, cfg.intrinsics);
  std::vector<std::size_t> above;
  for (std::size_t i = 0; i < crop.size(); ++i) {
    if (crop.points[i].z() >= cfg.crop_min_z) above.push_back(i);
  }
  return depth_gate(crop.subset(above), cfg.target_depth_band);
}

// Adds the parts of a confidently registered crop that the model does not
// cover yet; surfaces already in the model stay as they are. Re-averaging
// them with every new view lets small registration errors smear the shape
// and feed back into the next registration.
void grow_model(PipelineState& st, const PointCloud& crop, const Pose& object_in_lidar) {
  const double voxel = st.config.model_voxel;
  const KdTree tree(st.object_model.points);
  const Pose to_model = inverse(object_in_lidar);
  PointCloud novel;
  for (const auto& p : crop.points) {
    const Vec3 q = to_model.apply(p);
    if (!tree.nearest(q, 2.0 * voxel)) novel.points.push_back(q);
  }
  if (novel.empty()) return;
  novel = with_normals(voxel_downsample(novel, voxel), to_model.translation());
  if (!novel.has_normals()) return;
  st.object_model.points.insert(st.object_model.points.end(), novel.points.begin(),
                                novel.points.end());
  st.object_model.normals->insert(st.object_model.normals->end(), novel.normals->begin(),
                                  novel.normals->end());
}

// A crop too far from the model to find any partner counts as no estimate.
std::optional<RegistrationResult> try_local(const PointCloud& crop, const PointCloud& model,
                                            const Pose& init, const IcpParams& params) {
  if (crop.empty()) return std::nullopt;
  try {
    return local_object_pose(crop, model, init, params);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoCorrespondences) throw;
    return std::nullopt;
  }
}

}  // namespace

PipelineState pipeline_init(const PointCloud& scan, std::span<const BBox2D> detections,
                            const PipelineConfig& config) {
  if (!(config.confidence_threshold > 0.0 && config.confidence_threshold < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "confidence threshold must be in (0,1)");
  }
  PipelineState st;
  st.config = config;
  st.confidence_threshold = config.confidence_threshold;
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                    static_cast<std::uint32_t>(config.seed >> 32), 0x0d0u};
  st.rng.seed(seq);

  const auto masked = preprocess(st, scan, detections);
  const auto crop = target_crop(st, masked.cloud, detections);
  st.initial_model = make_object_model(crop, config.model_voxel);
  st.initial_model.cloud = with_normals(st.initial_model.cloud, -st.initial_model.origin);
  st.object_model = st.initial_model.cloud;
  st.object_in_world = Pose::from_translation(st.initial_model.origin);
  st.global_pose = st.object_in_world;
  st.last_growth = st.object_in_world;
  st.last_scan = prepare_scan(masked.cloud, config.scan_voxel);
  st.keyframes = {st.last_scan};
  st.graph.lambda = config.lambda;
  st.graph.vertices = {Pose::identity()};
  st.initialized = true;
  return st;
}

std::pair<StepOutput, PipelineState> pipeline_step(PipelineState st, const PointCloud& scan,
                                                   std::span<const BBox2D> detections) {
  if (!st.initialized) throw Error(ErrorCode::NotInitialized, "pipeline_step before init");
  const auto& cfg = st.config;
  ++st.frame;
  const auto masked = preprocess(st, scan, detections);
  const PointCloud cur = prepare_scan(masked.cloud, cfg.scan_voxel);
  const PointCloud crop =
      masked.detector_ran ? target_crop(st, masked.cloud, detections) : PointCloud{};

  StepOutput out;
  if (cfg.mode == PipelineMode::PIcp) {
    out.source = "odom";
    if (const auto r = try_local(crop, st.initial_model.cloud, st.global_pose, cfg.local_icp)) {
      st.global_pose = r->pose;
      out.fitness = r->fitness;
      out.valid_matches = r->valid_matches;
      out.source = "reset";
    }
    out.pose = st.global_pose;
    st.last_scan = cur;
    return {out, std::move(st)};
  }

  auto odo = odometry_step(st.last_scan, cur, cfg.odometry_icp);
  Pose z = odo.pose;
  if (cfg.odometry_noise_translation > 0.0 || cfg.odometry_noise_rotation > 0.0) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec6 xi;
    for (int i = 0; i < 3; ++i) xi(i) = cfg.odometry_noise_translation * n(st.rng);
    for (int i = 3; i < 6; ++i) xi(i) = cfg.odometry_noise_rotation * n(st.rng);
    z = z * se3_exp(xi);
  }
  const std::size_t n = st.graph.vertices.size();
  st.graph.vertices.push_back(st.graph.vertices.back() * z);
  st.graph = add_edge(std::move(st.graph), n - 1, n, z, EdgeKind::Consecutive);
  out.fitness = odo.fitness;
  out.valid_matches = odo.valid_matches;
  out.source = "odom";

  bool new_loops = false;
  if (uses_graph(cfg.mode) && cfg.loop_stride > 1 && n >= static_cast<std::size_t>(cfg.loop_stride)) {
    const std::size_t j = n - cfg.loop_stride;
    const Pose guess = inverse(st.graph.vertices[j]) * st.graph.vertices[n];
    const auto r = icp(cur, st.keyframes[j], guess, cfg.odometry_icp);
    if (r.fitness >= cfg.loop_fitness) {
      st.graph = add_edge(std::move(st.graph), j, n, r.pose, EdgeKind::Loop, 1.0,
                          RobustKernel::huber(0.1));
      new_loops = true;
    }
  }
  st.keyframes.push_back(cur);

  std::optional<Pose> reset;
  PointCloud confident_crop;
  if (uses_local(cfg.mode)) {
    // Track from the last output moved by this step's odometry. The smoothed
    // vertex mixes the model frame with the world frame, and the model frame
    // drifts, so starting ICP there biases it.
    const Pose predicted = inverse(z) * st.global_pose;
    const auto r = try_local(crop, st.object_model, predicted, cfg.local_icp);
    if (r && r->fitness >= st.confidence_threshold) {
      reset = r->pose;
      out.fitness = r->fitness;
      const Pose lidar_in_world = st.object_in_world * inverse(r->pose);
      if (cfg.mode == PipelineMode::All) {
        st.graph = add_edge(std::move(st.graph), 0, n, lidar_in_world, EdgeKind::Loop, 1.0,
                            RobustKernel::huber(0.1));
        new_loops = true;
      } else {
        st.graph.vertices[n] = lidar_in_world;
      }
      confident_crop = crop;
    }
  }

  if (uses_graph(cfg.mode) && new_loops) {
    st.graph = optimize(st.graph, {20, 1e-10}).graph;
  }
  // The model grows with the fused pose, so odometry damps the drift of a
  // model that is registered against itself.
  if (!confident_crop.empty()) {
    const Pose fused = inverse(st.graph.vertices[n]) * st.object_in_world;
    if (rotation_angle(fused, st.last_growth) >= cfg.model_growth_angle) {
      grow_model(st, confident_crop, fused);
      st.last_growth = fused;
    }
  }

  if (reset) {
    out.pose = *reset;
    out.source = "reset";
  } else {
    out.pose = inverse(st.graph.vertices[n]) * st.object_in_world;
  }
  st.global_pose = out.pose;
  st.last_scan = cur;
  return {out, std::move(st)};
}

}  // namespace telepresence
