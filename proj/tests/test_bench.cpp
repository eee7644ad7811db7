#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "telepresence/bench.hpp"
#include "telepresence/error.hpp"

using namespace telepresence;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvalidArgument;
}

Pose tr(double x, double y, double z) { return Pose::from_translation(Vec3(x, y, z)); }

std::string csv(const std::vector<RunReport>& r) {
  std::ostringstream o;
  write_reports_csv(o, r);
  return o.str();
}

}  // namespace

TEST_CASE("score_trajectory on a hand-built trace") {
  const std::vector<GroundTruthRecord> truth{
      {0.0, "t", Pose::identity()}, {0.1, "t", tr(1, 0, 0)}, {0.2, "t", tr(2, 0, 0)}};
  // Errors (0.1 m, 0.1 rad), (0.2 m, 0), (0.2 m, 0.2 rad); each stamp is
  // slightly off the grid but within tolerance.
  const std::vector<TimedPose> est{
      {0.004, Pose(rot_z(0.1), Vec3(0.1, 0, 0))},
      {0.097, tr(1, 0.2, 0)},
      {0.2, Pose(rot_x(-0.2), Vec3(2, 0, 0.2))},
      {0.15, std::nullopt},       // no estimate
      {0.4, Pose::identity()},    // no truth nearby
  };
  const auto e = score_trajectory(est, truth, 0.05);
  CHECK(e.frames == 3);
  CHECK(e.unmatched == 2);
  CHECK(e.rmse_t == doctest::Approx(std::sqrt((0.01 + 0.04 + 0.04) / 3.0)).epsilon(1e-12));
  CHECK(e.rmse_r == doctest::Approx(std::sqrt((0.01 + 0.0 + 0.04) / 3.0)).epsilon(1e-12));
  CHECK(e.max_t == doctest::Approx(0.2).epsilon(1e-12));

  // Nearest sample wins: 0.06 pairs with 0.1, not 0.0.
  const std::vector<TimedPose> mid{{0.06, tr(1, 0, 0)}};
  CHECK(score_trajectory(mid, truth, 0.05).rmse_t == 0.0);

  const auto none = score_trajectory({}, truth, 0.05);
  CHECK(none.frames == 0);
  CHECK(none.rmse_t == 0.0);
}

TEST_CASE("summarize groups by scenario and method") {
  std::vector<RunReport> r;
  for (double v : {0.1, 0.3, 0.2}) {
    RunReport x{"s", "a", 0};
    x.rmse_t = v;
    x.rmse_r = 2 * v;
    x.valid_matches = 10 * v;
    r.push_back(x);
  }
  RunReport b{"s", "b", 0};
  b.rmse_t = 1.0;
  r.push_back(b);
  const auto s = summarize(r);
  REQUIRE(s.size() == 2);
  CHECK(s[0].method == "a");
  CHECK(s[0].runs == 3);
  CHECK(s[0].mean_rmse_t == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(s[0].sd_rmse_t == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(s[0].median_rmse_t == 0.2);
  CHECK(s[0].mean_rmse_r == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(s[0].mean_valid_matches == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(s[1].sd_rmse_t == 0.0);
  CHECK(s[1].median_rmse_t == 1.0);
}

TEST_CASE("method lists") {
  const std::uint64_t seeds[] = {0};
  const auto s = make_scenario("nominal");
  CHECK(run_marker_bench(s, {}, seeds).empty());
  CHECK(run_lidar_bench(s, {}, seeds).empty());
  const std::vector<std::string> bad{"proposed", "kalman"};
  CHECK(code_of([&] { run_marker_bench(s, bad, seeds); }) == ErrorCode::UnknownMethod);
  const std::vector<std::string> bad_lidar{"all", "gicp"};
  CHECK(code_of([&] { run_lidar_bench(s, bad_lidar, seeds); }) == ErrorCode::UnknownMethod);
  CHECK(marker_method_options("art").delay_compensation == false);
  CHECK(marker_method_options("ap3").delay_compensation == true);
}

TEST_CASE("proposed tracker is exact on a noiseless nominal run") {
  auto s = make_scenario("nominal", 2);
  s.noise.pixel_sigma = 0.0;
  const auto r = run_marker(s, default_marker_world(), "proposed");
  CHECK(r.frames > 1000);
  CHECK(r.rmse_t <= 1e-6);
  CHECK(r.rmse_r <= 1e-6);
  CHECK(r.held == 0);
}

TEST_CASE("without SLAM integration the dropout costs accuracy") {
  const std::vector<std::string> methods{"proposed", "ap3"};
  const std::uint64_t seeds[] = {0, 1, 2, 3, 4};
  const auto reports = run_marker_bench(make_scenario("dropout"), methods, seeds);
  REQUIRE(reports.size() == 10);
  for (std::size_t i = 0; i < reports.size(); i += 2) {
    const auto& p = reports[i];
    const auto& a = reports[i + 1];
    CAPTURE(p.seed);
    CHECK(p.method == "proposed");
    CHECK(a.method == "ap3");
    CHECK(a.rmse_t > p.rmse_t);
    CHECK(a.held > p.held);
    CHECK(p.frames == a.frames);
  }
}

TEST_CASE("a single scan leaves nothing for the back end to add") {
  auto s = make_scenario("rotation_occlusion", 1);
  s.duration = 0.05;
  const auto w = default_lidar_world();
  const auto seq = simulate_lidar_sequence(s, w);
  REQUIRE(seq.scans.size() == 1);
  const auto odom = run_lidar(s, seq, w, "odom");
  const auto all = run_lidar(s, seq, w, "all");
  CHECK(odom.frames == 1);
  CHECK(all.rmse_t == odom.rmse_t);
  CHECK(all.rmse_r == odom.rmse_r);
}

TEST_CASE("report CSV is byte reproducible") {
  auto s = make_scenario("shaking");
  s.duration = 2.0;
  const std::uint64_t seeds[] = {3, 4};
  const auto a = run_marker_bench(s, marker_methods(), seeds);
  const auto b = run_marker_bench(s, marker_methods(), seeds);
  CHECK(csv(a) == csv(b));
  CHECK(csv(a).rfind("scenario,method,seed,rmse_t,rmse_r,max_t,valid_matches,frames,unmatched,held\n",
                     0) == 0);
  std::ostringstream with;
  write_reports_csv(with, a, true);
  CHECK(with.str().find(",runtime\n") != std::string::npos);
  for (const auto& r : a) CHECK(r.runtime > 0.0);

  const std::uint64_t other[] = {5, 4};
  CHECK(csv(run_marker_bench(s, marker_methods(), other)) != csv(a));
}

TEST_CASE("al bench emits one row per seed and strategy at every step") {
  AlConfig cfg;
  cfg.steps = 4;
  const std::uint64_t seeds[] = {0, 1, 2};
  const auto curves = run_al_bench(cfg, seeds);
  std::map<int, int> rows;
  for (const auto& p : curves) ++rows[p.step];
  REQUIRE_FALSE(rows.empty());
  for (const auto& [step, n] : rows) {
    CAPTURE(step);
    CHECK(n == 3 * 2);
  }
  std::ostringstream a, b;
  write_curves_csv(a, curves);
  write_curves_csv(b, run_al_bench(cfg, seeds));
  CHECK(a.str() == b.str());

  cfg.k = 0;
  CHECK_THROWS_AS(run_al_bench(cfg, seeds), Error);
}

TEST_CASE("tdpa bench keeps the passivity bound with the controller on") {
  SessionConfig cfg;
  cfg.channel.delay_samples = 100;
  cfg.channel.loss_probability = 0.01;
  const std::uint64_t seeds[] = {0, 1};
  const auto reports = run_tdpa_bench(cfg, seeds);
  REQUIRE(reports.size() == 2);
  for (const auto& r : reports) {
    CHECK(r.pc_enabled);
    CHECK(r.passivity_margin >= 0.0);
    CHECK(r.first_contact >= 0);
  }
  std::ostringstream a, b;
  write_tdpa_csv(a, reports);
  write_tdpa_csv(b, run_tdpa_bench(cfg, seeds));
  CHECK(a.str() == b.str());

  cfg.gains.T_s = 0.0;
  CHECK_THROWS_AS(run_tdpa_bench(cfg, seeds), Error);
}
