#pragma once

#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "telepresence/geometry.hpp"
#include "telepresence/marker_tracker.hpp"

namespace telepresence {

/// {"r": [9 row-major], "t": [3]} plus "time" when the pose carries one.
nlohmann::json pose_to_json(const Pose& p);
Pose pose_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MarkerObservation& obs);
nlohmann::json to_json(const SlamEstimate& s);
MarkerObservation marker_from_json(const nlohmann::json& j);
SlamEstimate slam_from_json(const nlohmann::json& j);

/// One record of the marker/SLAM JSON-lines stream, tagged by "type".
using SensorRecord = std::variant<MarkerObservation, SlamEstimate>;

void write_sensor_stream(std::ostream& out, const std::vector<SensorRecord>& records);
std::vector<SensorRecord> read_sensor_stream(std::istream& in);

struct GroundTruthRecord {
  double time = 0.0;
  std::string frame;  // what the pose describes, e.g. "target_in_camera"
  Pose pose;
};

void write_ground_truth(std::ostream& out, const std::vector<GroundTruthRecord>& records);
std::vector<GroundTruthRecord> read_ground_truth(std::istream& in);

/// Shortest round-trip decimal text of a double, for byte-stable output.
std::string format_double(double x);

}  // namespace telepresence
