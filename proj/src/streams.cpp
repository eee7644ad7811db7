#include "telepresence/streams.hpp"

#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "telepresence/error.hpp"

namespace telepresence {

using nlohmann::json;

json pose_to_json(const Pose& p) {
  json r = json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(p.rotation()(i, j));
  json j{{"r", r}, {"t", {p.translation().x(), p.translation().y(), p.translation().z()}}};
  if (p.timestamp()) j["time"] = *p.timestamp();
  return j;
}

Pose pose_from_json(const json& j) {
  try {
    const auto& r = j.at("r");
    const auto& t = j.at("t");
    if (r.size() != 9 || t.size() != 3) throw Error(ErrorCode::ParseError, "pose needs r[9], t[3]");
    Mat3 rot;
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) rot(i, k) = r.at(3 * i + k).get<double>();
    const Vec3 tr(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
    std::optional<double> stamp;
    if (j.contains("time")) stamp = j.at("time").get<double>();
    return Pose(rot, tr, stamp);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("pose: ") + e.what());
  }
}

json to_json(const MarkerObservation& obs) {
  json corners = json::array();
  for (const auto& c : obs.corners) corners.push_back({c.x(), c.y()});
  return json{{"type", "marker"},
              {"marker_id", obs.marker_id},
              {"corners", corners},
              {"timestamp", obs.timestamp}};
}

json to_json(const SlamEstimate& s) {
  const auto& v = s.linear_velocity;
  const auto& w = s.angular_velocity;
  return json{{"type", "slam"},
              {"pose_cam_in_world", pose_to_json(s.pose_cam_in_world.with_timestamp(std::nullopt))},
              {"linear_velocity", {v.x(), v.y(), v.z()}},
              {"angular_velocity", {w.x(), w.y(), w.z()}},
              {"timestamp", s.timestamp}};
}

namespace {
Vec3 vec3_from_json(const json& j) {
  if (j.size() != 3) throw Error(ErrorCode::ParseError, "expected 3-vector");
  return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}
}  // namespace

MarkerObservation marker_from_json(const json& j) {
  try {
    MarkerObservation obs;
    obs.marker_id = j.at("marker_id").get<int>();
    const auto& c = j.at("corners");
    if (c.size() != 4) throw Error(ErrorCode::ParseError, "marker needs 4 corners");
    for (int i = 0; i < 4; ++i) {
      obs.corners[i] = Vec2(c.at(i).at(0).get<double>(), c.at(i).at(1).get<double>());
    }
    obs.timestamp = j.at("timestamp").get<double>();
    return obs;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("marker: ") + e.what());
  }
}

SlamEstimate slam_from_json(const json& j) {
  try {
    SlamEstimate s;
    s.pose_cam_in_world = pose_from_json(j.at("pose_cam_in_world"));
    s.linear_velocity = vec3_from_json(j.at("linear_velocity"));
    s.angular_velocity = vec3_from_json(j.at("angular_velocity"));
    s.timestamp = j.at("timestamp").get<double>();
    if (!s.linear_velocity.allFinite() || !s.angular_velocity.allFinite()) {
      throw Error(ErrorCode::ParseError, "non-finite velocity");
    }
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("slam: ") + e.what());
  }
}

void write_sensor_stream(std::ostream& out, const std::vector<SensorRecord>& records) {
  for (const auto& r : records) {
    std::visit([&](const auto& rec) { out << to_json(rec).dump() << '\n'; }, r);
  }
}

std::vector<SensorRecord> read_sensor_stream(std::istream& in) {
  std::vector<SensorRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, fmt::format("line {}: {}", lineno, e.what()));
    }
    const auto type = j.value("type", std::string{});
    if (type == "marker") {
      out.emplace_back(marker_from_json(j));
    } else if (type == "slam") {
      out.emplace_back(slam_from_json(j));
    } else {
      throw Error(ErrorCode::ParseError, fmt::format("line {}: unknown type '{}'", lineno, type));
    }
  }
  return out;
}

void write_ground_truth(std::ostream& out, const std::vector<GroundTruthRecord>& records) {
  for (const auto& r : records) {
    out << json{{"time", r.time}, {"frame", r.frame},
                {"pose", pose_to_json(r.pose.with_timestamp(std::nullopt))}}
               .dump()
        << '\n';
  }
}

std::vector<GroundTruthRecord> read_ground_truth(std::istream& in) {
  std::vector<GroundTruthRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      const double t = j.at("time").get<double>();
      out.push_back({t, j.at("frame").get<std::string>(),
                     pose_from_json(j.at("pose")).with_timestamp(t)});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, std::string("ground truth: ") + e.what());
    }
  }
  return out;
}

std::string format_double(double x) { return fmt::format("{}", x); }

}  // namespace telepresence
