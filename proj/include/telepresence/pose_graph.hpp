#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "telepresence/geometry.hpp"

namespace telepresence {

enum class EdgeKind { Consecutive, Loop };

std::string to_string(EdgeKind kind);
EdgeKind edge_kind_from_string(const std::string& s);

struct RobustKernel {
  enum class Type { L2, Huber } type = Type::L2;
  double delta = 1.0;  // Huber threshold on the residual norm

  static RobustKernel l2() { return {}; }
  static RobustKernel huber(double delta) { return {Type::Huber, delta}; }

  /// rho(s) of the residual norm. L2 is s^2; Huber switches to
  /// 2*delta*s - delta^2 once s exceeds delta.
  double cost(double s) const;
};

struct GraphEdge {
  std::size_t i = 0;
  std::size_t j = 0;
  Pose measurement;  // T_i^-1 T_j as observed
  double weight = 1.0;
  EdgeKind kind = EdgeKind::Consecutive;
  RobustKernel kernel;  // consecutive edges are always squared
};

struct PoseGraph {
  std::vector<Pose> vertices;
  std::vector<GraphEdge> edges;
  double lambda = 2.0;  // default weight of consecutive edges
};

/// Appends an edge. A negative weight selects the default: lambda for
/// consecutive edges, 1 for loops. Throws BadEndpoints unless i < j, both
/// vertices exist and consecutive edges satisfy j = i + 1.
PoseGraph add_edge(PoseGraph g, std::size_t i, std::size_t j, const Pose& rel, EdgeKind kind,
                   double weight = -1.0, RobustKernel kernel = {});

/// log(Z^-1 T_i^-1 T_j) as (rho, phi).
Vec6 edge_residual(const PoseGraph& g, const GraphEdge& e);

/// sum over edges of weight * rho(|r|) (rho = s^2 for consecutive edges).
double graph_cost(const PoseGraph& g);

bool is_connected(const PoseGraph& g);

struct OptimizeOptions {
  int max_iters = 100;
  double tol = 1e-10;  // on the gradient norm
};

struct OptimizeResult {
  PoseGraph graph;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
};

/// Levenberg-Marquardt over right perturbations T_i <- T_i exp(d_i), vertex 0
/// held fixed. Steps are only accepted when the exact cost decreases, so the
/// final cost never exceeds the initial one.
OptimizeResult optimize(const PoseGraph& g, const OptimizeOptions& options = {});

/// "VERTEX_SE3 id tx ty tz qx qy qz qw" and
/// "EDGE_SE3 i j tx ty tz qx qy qz qw weight kind" lines.
void write_g2o(std::ostream& out, const PoseGraph& g);
PoseGraph read_g2o(std::istream& in);

}  // namespace telepresence
