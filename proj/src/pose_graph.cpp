#include "telepresence/pose_graph.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <queue>
#include <sstream>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "telepresence/error.hpp"

namespace telepresence {

std::string to_string(EdgeKind kind) {
  return kind == EdgeKind::Loop ? "loop" : "consecutive";
}

EdgeKind edge_kind_from_string(const std::string& s) {
  if (s == "loop") return EdgeKind::Loop;
  if (s == "consecutive") return EdgeKind::Consecutive;
  throw Error(ErrorCode::ParseError, "unknown edge kind '" + s + "'");
}

double RobustKernel::cost(double s) const {
  if (type == Type::Huber && s > delta) return 2.0 * delta * s - delta * delta;
  return s * s;
}

PoseGraph add_edge(PoseGraph g, std::size_t i, std::size_t j, const Pose& rel, EdgeKind kind,
                   double weight, RobustKernel kernel) {
  if (i >= j || j >= g.vertices.size()) {
    throw Error(ErrorCode::BadEndpoints, "edge needs i < j and existing vertices");
  }
  if (kind == EdgeKind::Consecutive && j != i + 1) {
    throw Error(ErrorCode::BadEndpoints, "consecutive edge must join i and i+1");
  }
  if (weight < 0.0) weight = kind == EdgeKind::Consecutive ? g.lambda : 1.0;
  if (kind == EdgeKind::Consecutive) kernel = RobustKernel::l2();
  g.edges.push_back(GraphEdge{i, j, rel, weight, kind, kernel});
  return g;
}

Vec6 edge_residual(const PoseGraph& g, const GraphEdge& e) {
  return se3_log(inverse(e.measurement) * inverse(g.vertices[e.i]) * g.vertices[e.j]);
}

namespace {

double edge_cost(const GraphEdge& e, const Vec6& r) {
  return e.weight * e.kernel.cost(r.norm());
}

double total_cost(const std::vector<Pose>& vertices, const std::vector<GraphEdge>& edges) {
  double c = 0.0;
  for (const auto& e : edges) {
    const Vec6 r = se3_log(inverse(e.measurement) * inverse(vertices[e.i]) * vertices[e.j]);
    c += edge_cost(e, r);
  }
  return c;
}

// Small-twist approximation of the inverse right Jacobian, I + ad(xi)/2.
Mat6 inv_right_jacobian_approx(const Vec6& xi) {
  Mat6 ad = Mat6::Zero();
  const Mat3 phi = skew(xi.tail<3>());
  ad.topLeftCorner<3, 3>() = phi;
  ad.topRightCorner<3, 3>() = skew(xi.head<3>());
  ad.bottomRightCorner<3, 3>() = phi;
  return Mat6::Identity() + 0.5 * ad;
}

}  // namespace

double graph_cost(const PoseGraph& g) { return total_cost(g.vertices, g.edges); }

bool is_connected(const PoseGraph& g) {
  const std::size_t n = g.vertices.size();
  if (n <= 1) return true;
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& e : g.edges) {
    adj[e.i].push_back(e.j);
    adj[e.j].push_back(e.i);
  }
  std::vector<bool> seen(n, false);
  std::queue<std::size_t> q;
  q.push(0);
  seen[0] = true;
  std::size_t count = 1;
  while (!q.empty()) {
    const auto v = q.front();
    q.pop();
    for (auto w : adj[v]) {
      if (!seen[w]) {
        seen[w] = true;
        ++count;
        q.push(w);
      }
    }
  }
  return count == n;
}

OptimizeResult optimize(const PoseGraph& g, const OptimizeOptions& options) {
  for (const auto& e : g.edges) {
    if (e.i >= e.j || e.j >= g.vertices.size()) {
      throw Error(ErrorCode::BadEndpoints, "edge endpoints out of range");
    }
  }
  if (!is_connected(g)) throw Error(ErrorCode::Disconnected, "pose graph is not connected");

  OptimizeResult result;
  result.graph = g;
  result.initial_cost = graph_cost(g);
  result.final_cost = result.initial_cost;
  const std::size_t n = g.vertices.size();
  if (n <= 1 || g.edges.empty()) return result;

  const Eigen::Index dim = static_cast<Eigen::Index>(6 * (n - 1));
  auto& verts = result.graph.vertices;
  double cost = result.initial_cost;
  double damping = 0.0;
  int rejected = 0;

  for (int iter = 0; iter < options.max_iters; ++iter) {
    // Normal equations in block-triplet form.
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(g.edges.size() * 4 * 36);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
    auto block_index = [](std::size_t v) { return static_cast<Eigen::Index>(6 * (v - 1)); };

    for (const auto& e : g.edges) {
      const Pose rel = inverse(verts[e.j]) * verts[e.i];
      const Vec6 r = se3_log(inverse(e.measurement) * inverse(verts[e.i]) * verts[e.j]);
      const Mat6 jr_inv = inv_right_jacobian_approx(r);
      const Mat6 ji = -jr_inv * adjoint(rel);
      const Mat6 jj = jr_inv;

      // Robust kernels enter as iteratively reweighted least squares.
      double w = e.weight;
      const double s = r.norm();
      if (e.kernel.type == RobustKernel::Type::Huber && s > e.kernel.delta) w *= e.kernel.delta / s;

      const bool free_i = e.i != 0, free_j = e.j != 0;
      auto add_block = [&](Eigen::Index row, Eigen::Index col, const Mat6& m) {
        for (int a = 0; a < 6; ++a)
          for (int b = 0; b < 6; ++b)
            if (m(a, b) != 0.0) trip.emplace_back(row + a, col + b, m(a, b));
      };
      if (free_i) {
        const auto bi = block_index(e.i);
        add_block(bi, bi, w * ji.transpose() * ji);
        grad.segment<6>(bi) += w * ji.transpose() * r;
      }
      if (free_j) {
        const auto bj = block_index(e.j);
        add_block(bj, bj, w * jj.transpose() * jj);
        grad.segment<6>(bj) += w * jj.transpose() * r;
      }
      if (free_i && free_j) {
        const auto bi = block_index(e.i), bj = block_index(e.j);
        const Mat6 cross = w * ji.transpose() * jj;
        add_block(bi, bj, cross);
        add_block(bj, bi, cross.transpose());
      }
    }
    result.gradient_norm = grad.norm();
    if (result.gradient_norm < options.tol) break;

    Eigen::SparseMatrix<double> h(dim, dim);
    h.setFromTriplets(trip.begin(), trip.end());
    double max_diag = 0.0;
    for (Eigen::Index k = 0; k < dim; ++k) max_diag = std::max(max_diag, h.coeff(k, k));
    const double base_damping = 1e-6 * std::max(max_diag, 1e-12);

    Eigen::VectorXd delta;
    int singular_retries = 0;
    while (true) {
      Eigen::SparseMatrix<double> a = h;
      if (damping > 0.0) {
        for (Eigen::Index k = 0; k < dim; ++k) a.coeffRef(k, k) += damping;
      }
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(a);
      if (solver.info() == Eigen::Success) {
        delta = solver.solve(-grad);
        if (solver.info() == Eigen::Success && delta.allFinite()) break;
      }
      if (++singular_retries > 5) {
        throw Error(ErrorCode::SingularNormalEquations, "normal equations stay singular");
      }
      damping = damping > 0.0 ? damping * 10.0 : base_damping;
    }

    std::vector<Pose> trial = verts;
    for (std::size_t v = 1; v < n; ++v) {
      trial[v] = trial[v] * se3_exp(delta.segment<6>(block_index(v)));
    }
    const double trial_cost = total_cost(trial, g.edges);
    ++result.iterations;
    if (trial_cost < cost) {
      const double drop = cost - trial_cost;
      verts = std::move(trial);
      cost = trial_cost;
      rejected = 0;
      damping = damping / 10.0 < base_damping * 1e-6 ? 0.0 : damping / 10.0;
      if (drop <= 1e-15 * std::max(cost, 1e-300) || cost <= 1e-30) break;
    } else {
      damping = damping > 0.0 ? damping * 10.0 : base_damping;
      if (++rejected > 10) break;
    }
  }
  result.final_cost = cost;
  return result;
}

void write_g2o(std::ostream& out, const PoseGraph& g) {
  char buf[512];
  for (std::size_t v = 0; v < g.vertices.size(); ++v) {
    const auto& p = g.vertices[v];
    const auto q = p.quaternion();
    std::snprintf(buf, sizeof buf, "VERTEX_SE3 %zu %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", v,
                  p.translation().x(), p.translation().y(), p.translation().z(), q.x(), q.y(),
                  q.z(), q.w());
    out << buf;
  }
  for (const auto& e : g.edges) {
    const auto& p = e.measurement;
    const auto q = p.quaternion();
    std::snprintf(buf, sizeof buf,
                  "EDGE_SE3 %zu %zu %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %s\n", e.i, e.j,
                  p.translation().x(), p.translation().y(), p.translation().z(), q.x(), q.y(),
                  q.z(), q.w(), e.weight, to_string(e.kind).c_str());
    out << buf;
  }
}

PoseGraph read_g2o(std::istream& in) {
  PoseGraph g;
  std::string line;
  int lineno = 0;
  auto read_pose = [&](std::istringstream& ss) {
    double tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw Error(ErrorCode::ParseError, "bad pose on g2o line " + std::to_string(lineno));
    }
    return Pose::from_quaternion(Eigen::Quaterniond(qw, qx, qy, qz), Vec3(tx, ty, tz));
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "VERTEX_SE3") {
      std::size_t id;
      if (!(ss >> id) || id != g.vertices.size()) {
        throw Error(ErrorCode::ParseError, "vertex ids must be dense and ordered");
      }
      g.vertices.push_back(read_pose(ss));
    } else if (tag == "EDGE_SE3") {
      std::size_t i, j;
      if (!(ss >> i >> j)) throw Error(ErrorCode::ParseError, "bad edge line " + std::to_string(lineno));
      const Pose z = read_pose(ss);
      double weight;
      std::string kind;
      if (!(ss >> weight >> kind)) {
        throw Error(ErrorCode::ParseError, "bad edge line " + std::to_string(lineno));
      }
      g = add_edge(std::move(g), i, j, z, edge_kind_from_string(kind), weight);
    } else {
      throw Error(ErrorCode::ParseError, "unknown g2o tag '" + tag + "'");
    }
  }
  return g;
}

}  // namespace telepresence
