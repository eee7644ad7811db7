#include "telepresence/scene_graph.hpp"

#include <json.hpp>

#include "telepresence/error.hpp"
#include "telepresence/streams.hpp"

namespace telepresence {

using nlohmann::json;

std::string to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Root: return "root";
    case NodeKind::Sensor: return "sensor";
    case NodeKind::Object: return "object";
    case NodeKind::Arm: return "arm";
  }
  return "object";
}

std::string to_string(EdgeSource source) {
  switch (source) {
    case EdgeSource::Calibration: return "calibration";
    case EdgeSource::Kinematics: return "kinematics";
    case EdgeSource::Estimator: return "estimator";
  }
  return "estimator";
}

NodeKind node_kind_from_string(const std::string& s) {
  if (s == "root") return NodeKind::Root;
  if (s == "sensor") return NodeKind::Sensor;
  if (s == "object") return NodeKind::Object;
  if (s == "arm") return NodeKind::Arm;
  throw Error(ErrorCode::ParseError, "unknown node kind '" + s + "'");
}

EdgeSource edge_source_from_string(const std::string& s) {
  if (s == "calibration") return EdgeSource::Calibration;
  if (s == "kinematics") return EdgeSource::Kinematics;
  if (s == "estimator") return EdgeSource::Estimator;
  throw Error(ErrorCode::ParseError, "unknown edge source '" + s + "'");
}

SceneGraph::SceneGraph(std::string root_id) : root_(std::move(root_id)) {
  nodes_.emplace(root_, SceneNode{root_, NodeKind::Root, std::nullopt});
}

const SceneNode& SceneGraph::node(const std::string& id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(ErrorCode::UnknownNode, id);
  return it->second;
}

std::optional<SceneEdge> SceneGraph::edge(const std::string& id) const {
  if (!has_node(id)) throw Error(ErrorCode::UnknownNode, id);
  auto it = edges_.find(id);
  if (it == edges_.end()) return std::nullopt;
  return it->second;
}

void SceneGraph::add_node(SceneNode node, std::optional<SceneEdge> edge) {
  if (node.kind == NodeKind::Root) {
    throw Error(ErrorCode::InvalidArgument, "graph already has a root");
  }
  if (has_node(node.id)) throw Error(ErrorCode::InvalidArgument, "duplicate node " + node.id);
  const std::string id = node.id;
  nodes_.emplace(id, std::move(node));
  if (edge) edges_.emplace(id, *edge);
}

Pose SceneGraph::relative_pose(const std::string& reference, const std::string& target) const {
  auto in_root = [&](const std::string& id) {
    if (id == root_) return Pose::identity();
    auto e = edge(id);
    if (!e) throw Error(ErrorCode::UnknownNode, "node " + id + " has no edge");
    return e->pose;
  };
  return compose(inverse(in_root(reference)), in_root(target));
}

SceneGraph graph_update(const SceneGraph& g, const std::string& node, const Pose& pose, double t) {
  const SceneNode& n = g.node(node);
  if (n.kind != NodeKind::Object && n.kind != NodeKind::Arm) {
    throw Error(ErrorCode::ImmutableEdge, "node " + node + " is not updatable");
  }
  auto it = g.edges_.find(node);
  if (it != g.edges_.end()) {
    if (it->second.source == EdgeSource::Calibration) {
      throw Error(ErrorCode::ImmutableEdge, "calibration edge of " + node);
    }
    if (t < it->second.time) {
      throw Error(ErrorCode::StaleUpdate, "update at t=" + std::to_string(t) + " older than " +
                                              std::to_string(it->second.time));
    }
  }
  SceneGraph out = g;
  const EdgeSource source = n.kind == NodeKind::Arm ? EdgeSource::Kinematics : EdgeSource::Estimator;
  out.edges_[node] = SceneEdge{pose.with_timestamp(t), t, source};
  return out;
}

std::string SceneGraph::to_json() const {
  json doc;
  doc["root"] = root_;
  json nodes = json::array();
  for (const auto& [id, n] : nodes_) {
    json jn{{"id", id}, {"kind", to_string(n.kind)}};
    if (n.model_ref) jn["model_ref"] = *n.model_ref;
    nodes.push_back(jn);
  }
  doc["nodes"] = nodes;
  json edges = json::array();
  for (const auto& [id, e] : edges_) {
    edges.push_back({{"node", id},
                     {"pose", pose_to_json(e.pose)},
                     {"time", e.time},
                     {"source", to_string(e.source)}});
  }
  doc["edges"] = edges;
  return doc.dump();
}

SceneGraph SceneGraph::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
    SceneGraph g(doc.at("root").get<std::string>());
    std::map<std::string, SceneEdge> edges;
    for (const auto& je : doc.at("edges")) {
      edges.emplace(je.at("node").get<std::string>(),
                    SceneEdge{pose_from_json(je.at("pose")), je.at("time").get<double>(),
                              edge_source_from_string(je.at("source").get<std::string>())});
    }
    for (const auto& jn : doc.at("nodes")) {
      SceneNode n{jn.at("id").get<std::string>(),
                  node_kind_from_string(jn.at("kind").get<std::string>()), std::nullopt};
      if (n.kind == NodeKind::Root) {
        if (n.id != g.root_) throw Error(ErrorCode::ParseError, "second root " + n.id);
        continue;
      }
      if (jn.contains("model_ref")) n.model_ref = jn.at("model_ref").get<std::string>();
      std::optional<SceneEdge> e;
      if (auto it = edges.find(n.id); it != edges.end()) {
        e = it->second;
        edges.erase(it);
      }
      g.add_node(std::move(n), e);
    }
    if (!edges.empty()) {
      throw Error(ErrorCode::ParseError, "edge for unknown node " + edges.begin()->first);
    }
    return g;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::ParseError, ex.what());
  }
}

bool operator==(const SceneGraph& a, const SceneGraph& b) {
  if (a.root_ != b.root_ || a.nodes_.size() != b.nodes_.size() ||
      a.edges_.size() != b.edges_.size()) {
    return false;
  }
  for (const auto& [id, n] : a.nodes_) {
    auto it = b.nodes_.find(id);
    if (it == b.nodes_.end() || it->second.kind != n.kind || it->second.model_ref != n.model_ref) {
      return false;
    }
  }
  for (const auto& [id, e] : a.edges_) {
    auto it = b.edges_.find(id);
    if (it == b.edges_.end()) return false;
    const SceneEdge& f = it->second;
    if (f.time != e.time || f.source != e.source || f.pose.rotation() != e.pose.rotation() ||
        f.pose.translation() != e.pose.translation()) {
      return false;
    }
  }
  return true;
}

}  // namespace telepresence
