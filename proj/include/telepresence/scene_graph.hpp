#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "telepresence/geometry.hpp"

namespace telepresence {

enum class NodeKind { Root, Sensor, Object, Arm };
enum class EdgeSource { Calibration, Kinematics, Estimator };

std::string to_string(NodeKind kind);
std::string to_string(EdgeSource source);
NodeKind node_kind_from_string(const std::string& s);
EdgeSource edge_source_from_string(const std::string& s);

struct SceneNode {
  std::string id;
  NodeKind kind = NodeKind::Object;
  std::optional<std::string> model_ref;
};

/// Every edge hangs off the root: the pose is node-in-root.
struct SceneEdge {
  Pose pose;
  double time = 0.0;
  EdgeSource source = EdgeSource::Estimator;
};

/// Flat-hierarchy scene graph: one root, every other node carries at most one
/// edge to the root. Sensor nodes and calibration edges are fixed once added.
class SceneGraph {
 public:
  explicit SceneGraph(std::string root_id = "root");

  const std::string& root() const { return root_; }
  const std::map<std::string, SceneNode>& nodes() const { return nodes_; }
  const std::map<std::string, SceneEdge>& edges() const { return edges_; }

  bool has_node(const std::string& id) const { return nodes_.count(id) != 0; }
  const SceneNode& node(const std::string& id) const;
  std::optional<SceneEdge> edge(const std::string& id) const;

  /// Adds a node, optionally with its initial edge. Throws InvalidArgument on
  /// duplicate ids or a second root.
  void add_node(SceneNode node, std::optional<SceneEdge> edge = std::nullopt);

  /// Pose of `target` expressed in the frame of `reference` through the root.
  Pose relative_pose(const std::string& reference, const std::string& target) const;

  std::string to_json() const;
  static SceneGraph from_json(const std::string& text);

  friend bool operator==(const SceneGraph& a, const SceneGraph& b);

 private:
  friend SceneGraph graph_update(const SceneGraph& g, const std::string& node, const Pose& pose,
                                 double t);

  std::string root_;
  std::map<std::string, SceneNode> nodes_;
  std::map<std::string, SceneEdge> edges_;
};

/// Returns a copy of `g` whose edge for `node` is replaced by `pose` at time
/// `t`. Only object and arm nodes are updatable.
SceneGraph graph_update(const SceneGraph& g, const std::string& node, const Pose& pose, double t);

}  // namespace telepresence
