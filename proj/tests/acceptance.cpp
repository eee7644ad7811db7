// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "telepresence/active_learning.hpp"
#include "telepresence/bench.hpp"
#include "telepresence/passivity.hpp"
#include "telepresence/pose_graph.hpp"
#include "telepresence/registration.hpp"
#include "telepresence/scenarios.hpp"
#include "test_util.hpp"

using namespace telepresence;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<std::uint64_t> seed_range(std::uint64_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::uint64_t i = 0; i < n; ++i) s[i] = i;
  return s;
}

std::string reports_csv(std::span<const RunReport> r) {
  std::ostringstream o;
  write_reports_csv(o, r);
  return o.str();
}

// Kept between criteria so the determinism check can rerun single seeds.
std::vector<RunReport> lidar_reports;
std::vector<AlCurvePoint> al_curves;
std::vector<TdpaReport> tdpa_on;

Outcome marker_continuity() {
  const auto t0 = Clock::now();
  const auto w = default_marker_world();
  double worst_proposed = 0.0;
  double weakest_baseline = std::numeric_limits<double>::infinity();
  std::size_t window_ticks = 0;
  bool covered = true;
  for (const auto seed : seed_range(5)) {
    const auto s = make_scenario("dropout", seed);
    if (s.noise.slam_drift != 0.0 || s.noise.dropout_windows.size() != 1) return {false, "bad preset"};
    const auto [a, b] = s.noise.dropout_windows[0];
    const auto seq = simulate_marker_sequence(s, w);
    const auto proposed = track_marker_sequence(s, w, seq, marker_method_options("proposed"));
    const auto baseline = track_marker_sequence(s, w, seq, marker_method_options("ap3"));
    for (std::size_t k = 0; k < seq.slam.size(); ++k) {
      const double t = seq.slam[k].timestamp;
      if (t < a || t >= b) continue;
      // With t_d = 0 each estimate lines up with the truth sample of its tick.
      if (std::abs(seq.truth[k].time - proposed[k].time) > 1e-9) return {false, "misaligned truth"};
      ++window_ticks;
      if (!proposed[k].pose) {
        covered = false;
        continue;
      }
      worst_proposed = std::max(worst_proposed, translation_distance(*proposed[k].pose, seq.truth[k].pose));
      // A missing estimate counts as failing to track.
      if (baseline[k].pose) {
        weakest_baseline =
            std::min(weakest_baseline, translation_distance(*baseline[k].pose, seq.truth[k].pose));
      }
    }
  }
  const double secs = since(t0);
  const bool ok = covered && window_ticks > 0 && worst_proposed <= 1e-6 && weakest_baseline > 0.1 &&
                  secs < 10.0;
  return {ok, fmt::format("{} blind ticks, proposed max error {:.2e} m, baseline {}, {:.2f} s",
                          window_ticks, worst_proposed,
                          std::isinf(weakest_baseline) ? std::string("never reports")
                                                       : fmt::format("min error {:.3g} m", weakest_baseline),
                          secs)};
}

Outcome delay_compensation() {
  const auto w = default_marker_world();
  const double td = 0.05;
  TrajectorySpec spec;
  spec.kind = TrajectoryKind::ConstantTwist;
  spec.start = w.camera_start;
  spec.duration = 1.0;
  spec.linear_velocity = Vec3(0.2, 0.0, 0.0);
  // 1 rad/s about the optical axis keeps every marker in view.
  spec.angular_velocity = w.camera_start.rotation() * Vec3(0.0, 0.0, 1.0);
  const Trajectory traj(spec);
  const Pose target_in_world = compose(w.object_in_world, w.marker_in_object.at(0));

  double worst_t = 0.0, worst_r = 0.0, least_raw = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(0);
  int instants = 0;
  for (double t = 0.0; t <= 0.5 + 1e-9; t += 0.05) {
    const auto now = traj.at(t);
    const auto frames = render_markers({now}, w, NoiseConfig{}, rng);
    if (frames.empty() || frames[0].observations.size() != w.layout.size()) {
      return {false, fmt::format("markers lost at t = {}", t)};
    }
    const SlamEstimate slam{now.pose, now.linear_velocity, now.angular_velocity, t};
    const auto st = tracker_init(frames[0].observations, slam, w.layout, w.intrinsics, td);
    const Pose truth = compose(inverse(traj.at(t + td).pose), target_in_world);
    const Pose comp = delay_compensate(st, slam);
    worst_t = std::max(worst_t, translation_distance(comp, truth));
    worst_r = std::max(worst_r, rotation_angle(comp, truth));
    least_raw = std::min(least_raw, translation_distance(*st.last_target_pose, truth));
    ++instants;
  }
  const bool ok = worst_t <= 1e-6 && worst_r <= 1e-6 && least_raw >= 0.009;
  return {ok, fmt::format("{} instants, compensated max {:.2e} m / {:.2e} rad, uncompensated min {:.4f} m",
                          instants, worst_t, worst_r, least_raw)};
}

Outcome procrustes_oracle() {
  const auto t0 = Clock::now();
  double worst_t = 0.0, worst_r = 0.0;
  std::vector<Correspondence> pairs;
  for (std::size_t i = 0; i < 5; ++i) pairs.emplace_back(i, i);
  for (const auto seed : seed_range(100)) {
    std::mt19937_64 rng(1000 + seed);
    const Pose truth = testutil::random_pose(rng, std::numbers::pi, 1.0);
    PointCloud src, dst;
    for (int i = 0; i < 5; ++i) {
      const Vec3 p = testutil::gaussian3(rng);
      src.points.push_back(p);
      dst.points.push_back(truth.apply(p));
    }
    const Pose est = procrustes_align(src, dst, pairs);
    const Pose oracle = testutil::brute_force_align(src.points, dst.points);
    worst_t = std::max(worst_t, translation_distance(est, oracle));
    worst_r = std::max(worst_r, rotation_angle(est, oracle));
  }
  const double secs = since(t0);
  return {worst_t <= 1e-6 && worst_r <= 1e-6 && secs < 30.0,
          fmt::format("100 instances, max gap {:.2e} m / {:.2e} rad, {:.1f} s", worst_t, worst_r, secs)};
}

Outcome icp_recovery() {
  int recovered = 0;
  std::vector<double> times;
  for (const auto seed : seed_range(20)) {
    const auto cs = testutil::perturbed_cylinder(seed);
    const auto t0 = Clock::now();
    const auto r = icp(cs.source, cs.target, Pose::identity());
    times.push_back(since(t0));
    if (translation_distance(r.pose, cs.truth) <= 0.01 && rotation_angle(r.pose, cs.truth) <= testutil::deg(1)) {
      ++recovered;
    }
  }
  const double med = median(times);
  return {recovered >= 18 && med < 0.05,
          fmt::format("{}/20 recovered, median {:.1f} ms", recovered, 1e3 * med)};
}

Outcome drift_correction() {
  int corrected = 0;
  double worst_ratio = 0.0, worst_gauge = 0.0;
  std::mt19937_64 rng(5);
  for (const auto seed : seed_range(10)) {
    const auto c = testutil::noisy_circle_chain(seed);
    PoseGraph g;
    g.vertices = c.dead_reckoning;
    for (std::size_t i = 0; i < c.odometry.size(); ++i) {
      g = add_edge(g, i, i + 1, c.odometry[i], EdgeKind::Consecutive);
    }
    const std::size_t last = c.truth.size() - 1;
    g = add_edge(g, 0, last, compose(inverse(c.truth[0]), c.truth[last]), EdgeKind::Loop);
    const auto r = optimize(g);
    const double raw = translation_distance(c.dead_reckoning.back(), c.truth.back());
    const double post = translation_distance(r.graph.vertices.back(), c.truth.back());
    worst_ratio = std::max(worst_ratio, post / raw);
    if (post <= 0.1 * raw) ++corrected;

    PoseGraph moved = g;
    const Pose gauge = testutil::random_pose(rng, std::numbers::pi, 5.0);
    for (auto& v : moved.vertices) v = compose(gauge, v);
    worst_gauge = std::max(worst_gauge, std::abs(optimize(moved).final_cost - r.final_cost));
  }
  return {corrected == 10 && worst_gauge <= 1e-9,
          fmt::format("{}/10 corrected, worst post/raw {:.3f}, gauge cost gap {:.1e}", corrected,
                      worst_ratio, worst_gauge)};
}

Outcome pipeline_ablation() {
  const auto seeds = seed_range(10);
  lidar_reports = run_lidar_bench(make_scenario("rotation_occlusion"), lidar_methods(), seeds);
  const auto summary = summarize(lidar_reports);
  std::map<std::string, const MethodSummary*> by;
  for (const auto& m : summary) by[m.method] = &m;
  const double all = by["all"]->median_rmse_t, comb = by["comb"]->median_rmse_t;
  const double backend = by["backend"]->median_rmse_t, odom = by["odom"]->median_rmse_t;
  const bool ok = all <= comb && comb <= backend && backend <= odom &&
                  by["all"]->mean_valid_matches > by["pICP"]->mean_valid_matches;
  return {ok, fmt::format("median rmse_t all {:.4f} comb {:.4f} backend {:.4f} odom {:.4f} (pICP {:.4f}); "
                          "valid matches all {:.0f} vs pICP {:.0f}",
                          all, comb, backend, odom, by["pICP"]->median_rmse_t,
                          by["all"]->mean_valid_matches, by["pICP"]->mean_valid_matches)};
}

Outcome fusion_analytics() {
  auto iso = [](const Vec4& mean, double var) {
    GaussianBox g;
    g.mean = mean;
    g.covariance = var * Mat4::Identity();
    return g;
  };
  const Categorical half{{0.5, 0.5}};

  DetectionCluster twin;
  twin.center = {half, iso(Vec4(10, 20, 50, 80), 6.0)};
  twin.members = {twin.center};
  const double twin_gap =
      (fuse_cluster_regression(twin).covariance - 3.0 * Mat4::Identity()).cwiseAbs().maxCoeff();

  DetectionCluster uni;
  uni.center = {Categorical{{0.6, 0.25, 0.1, 0.05}}, iso(Vec4::Zero(), 1.0)};
  uni.members = {{Categorical{{0.25, 0.25, 0.25, 0.25}}, iso(Vec4::Zero(), 1.0)}};
  const auto u = fuse_cluster_classification(uni);
  double uni_gap = 0.0;
  for (std::size_t c = 0; c < 4; ++c) uni_gap = std::max(uni_gap, std::abs(u.p[c] - uni.center.first.p[c]));

  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 3.0);
  auto spd = [&] {
    Mat4 a;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) a(i, j) = n(rng);
    return Mat4(a * a.transpose() + 0.5 * Mat4::Identity());
  };
  double precision_gap = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    DetectionCluster c;
    c.center = {half, GaussianBox{Vec4::Zero(), spd()}};
    Mat4 info = c.center.second.covariance.inverse();
    for (int m = 0; m < 3; ++m) {
      c.members.push_back({half, GaussianBox{Vec4::Zero(), spd()}});
      info += c.members.back().second.covariance.inverse();
    }
    const Mat4 fused = fuse_cluster_regression(c).covariance.inverse();
    precision_gap = std::max(precision_gap, (fused - info).cwiseAbs().maxCoeff() / info.cwiseAbs().maxCoeff());
  }
  return {twin_gap <= 1e-12 && uni_gap <= 1e-12 && precision_gap <= 1e-9,
          fmt::format("half covariance gap {:.1e}, uniform member gap {:.1e}, precision sum rel gap {:.1e}",
                      twin_gap, uni_gap, precision_gap)};
}

Outcome al_dominance() {
  const auto t0 = Clock::now();
  const AlConfig cfg;
  const auto seeds = seed_range(3);
  al_curves = run_al_bench(cfg, seeds);
  std::map<std::string, std::map<int, double>> mean;
  std::map<int, double> fraction;
  for (const auto& p : al_curves) {
    mean[p.strategy][p.step] += p.metric / static_cast<double>(seeds.size());
    fraction[p.step] = p.fraction_labeled;
  }
  double full = 0.0;
  for (const auto seed : seeds) {
    const auto pool = make_synthetic_pool(cfg.pool, seed);
    std::vector<Vec2> all;
    for (const auto& s : pool.pool) all.push_back(s.latent);
    full += test_metric(pool, all, cfg) / static_cast<double>(seeds.size());
  }
  auto needed = [&](const std::string& strategy) {
    for (const auto& [step, m] : mean[strategy]) {
      if (m >= 0.95 * full) return fraction[step];
    }
    return std::numeric_limits<double>::infinity();
  };
  const double ent = needed("entropy"), rnd = needed("random");
  int behind = 0;
  for (const auto& [step, m] : mean["entropy"]) {
    if (step >= 1 && m < mean["random"][step]) ++behind;
  }
  const double secs = since(t0);
  return {ent <= 0.5 * rnd && behind == 0 && secs < 60.0,
          fmt::format("95% of full data at {:.3f} labeled (entropy) vs {:.3f} (random), "
                      "{} steps behind, {:.1f} s",
                      ent, rnd, behind, secs)};
}

Outcome tdpa_contract() {
  SessionConfig cfg;
  cfg.channel.delay_samples = 100;
  cfg.channel.loss_probability = 0.01;
  double worst_margin = std::numeric_limits<double>::infinity(), slowest = 0.0;
  double least_growth = std::numeric_limits<double>::infinity(), highest_W = -std::numeric_limits<double>::infinity();
  tdpa_on.clear();
  for (const auto seed : seed_range(10)) {
    cfg.seed = seed;
    cfg.pc_enabled = true;
    auto t0 = Clock::now();
    tdpa_on.push_back(summarize_session(cfg, simulate_session(cfg)));
    slowest = std::max(slowest, since(t0));
    worst_margin = std::min(worst_margin, tdpa_on.back().passivity_margin);

    cfg.pc_enabled = false;
    t0 = Clock::now();
    const auto off = summarize_session(cfg, simulate_session(cfg));
    slowest = std::max(slowest, since(t0));
    highest_W = std::max(highest_W, off.min_W);
    least_growth = std::min(least_growth, off.first_contact >= 0
                                              ? off.oscillation_late / off.oscillation_early
                                              : 0.0);
  }
  return {worst_margin >= 0.0 && highest_W < 0.0 && least_growth >= 2.0 && slowest < 10.0,
          fmt::format("PC on: min margin {:.2e}; PC off: min W <= {:.3g}, oscillation growth >= {:.2f}x; "
                      "slowest session {:.1f} ms",
                      worst_margin, highest_W, least_growth, 1e3 * slowest)};
}

Outcome determinism() {
  std::vector<std::string> differs;
  {
    auto s = make_scenario("dropout");
    const std::uint64_t seeds[] = {0, 1};
    if (reports_csv(run_marker_bench(s, marker_methods(), seeds)) !=
        reports_csv(run_marker_bench(s, marker_methods(), seeds))) {
      differs.push_back("marker");
    }
  }
  {
    const std::uint64_t seed[] = {3};
    std::vector<RunReport> earlier;
    for (const auto& r : lidar_reports) {
      if (r.seed == 3) earlier.push_back(r);
    }
    if (earlier.empty() ||
        reports_csv(earlier) != reports_csv(run_lidar_bench(make_scenario("rotation_occlusion"),
                                                            lidar_methods(), seed))) {
      differs.push_back("lidar");
    }
  }
  {
    const std::uint64_t seed[] = {1};
    std::vector<AlCurvePoint> earlier;
    for (const auto& p : al_curves) {
      if (p.seed == 1) earlier.push_back(p);
    }
    std::ostringstream a, b;
    write_curves_csv(a, earlier);
    write_curves_csv(b, run_al_bench(AlConfig{}, seed));
    if (earlier.empty() || a.str() != b.str()) differs.push_back("al");
  }
  {
    SessionConfig cfg;
    cfg.channel.delay_samples = 100;
    cfg.channel.loss_probability = 0.01;
    const auto seeds = seed_range(10);
    std::ostringstream a, b;
    write_tdpa_csv(a, tdpa_on);
    write_tdpa_csv(b, run_tdpa_bench(cfg, seeds));
    if (tdpa_on.empty() || a.str() != b.str()) differs.push_back("tdpa");
  }
  std::string which;
  for (const auto& d : differs) which += " " + d;
  return {differs.empty(), differs.empty() ? "marker, lidar, al and tdpa reruns byte-identical"
                                           : "reruns differ:" + which};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"AC1 marker continuity through a 5 s dropout", marker_continuity},
      {"AC2 delay compensation exactness", delay_compensation},
      {"AC3 closed-form alignment equals brute force", procrustes_oracle},
      {"AC4 ICP recovery on a perturbed cylinder", icp_recovery},
      {"AC5 pose-graph drift correction", drift_correction},
      {"AC6 pipeline ablation ordering", pipeline_ablation},
      {"AC7 detection fusion analytics", fusion_analytics},
      {"AC8 active learning dominance", al_dominance},
      {"AC9 TDPA passivity contract", tdpa_contract},
      {"AC10 determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << fmt::format("{} {}: {} [{:.1f} s]\n", o.pass ? "PASS" : "FAIL", name, o.detail, since(t0))
              << std::flush;
  }
  std::cout << fmt::format("{}/{} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
