#include <doctest.h>

#include <algorithm>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include "telepresence/error.hpp"
#include "telepresence/kdtree.hpp"
#include "telepresence/point_cloud.hpp"
#include "telepresence/registration.hpp"
#include "test_util.hpp"

using namespace telepresence;
using testutil::gaussian3;
using testutil::random_pose;

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

PointCloud cloud_of(std::vector<Vec3> pts) {
  PointCloud c;
  c.points = std::move(pts);
  return c;
}

std::vector<Correspondence> identity_pairs(std::size_t n) {
  std::vector<Correspondence> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(i, i);
  return out;
}

}  // namespace

TEST_CASE("weighted_centroid") {
  CHECK((weighted_centroid(cloud_of({Vec3(1, 2, 3)})) - Vec3(1, 2, 3)).norm() == 0.0);
  std::vector<Vec3> cube;
  for (int i = 0; i < 8; ++i) cube.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
  CHECK((weighted_centroid(cloud_of(cube)) - Vec3(0.5, 0.5, 0.5)).norm() < 1e-15);
  const std::vector<double> w{1.0, 3.0};
  CHECK((weighted_centroid(cloud_of({Vec3(0, 0, 0), Vec3(1, 0, 0)}), w) - Vec3(0.75, 0, 0)).norm() <
        1e-15);

  CHECK(code_of([] { weighted_centroid(PointCloud{}); }) == ErrorCode::EmptyCloud);
  const std::vector<double> zeros{0.0, 0.0};
  CHECK(code_of([&] { weighted_centroid(cloud_of({Vec3(0, 0, 0), Vec3(1, 0, 0)}), zeros); }) ==
        ErrorCode::ZeroWeights);
}

TEST_CASE("procrustes_align on exact rigid data") {
  std::mt19937_64 rng(21);
  PointCloud src;
  for (int i = 0; i < 30; ++i) src.points.push_back(gaussian3(rng));
  const auto pairs = identity_pairs(src.size());
  const Pose id = procrustes_align(src, src, pairs);
  CHECK(rotation_angle(id, Pose::identity()) < 1e-9);
  CHECK(id.translation().norm() < 1e-12);

  for (int trial = 0; trial < 100; ++trial) {
    const Pose truth = random_pose(rng, std::numbers::pi, 2.0);
    const Pose est = procrustes_align(src, src.transformed(truth), pairs);
    CHECK(rotation_angle(est, truth) < 1e-9);
    CHECK(translation_distance(est, truth) < 1e-9);
  }
}

TEST_CASE("procrustes_align never returns a reflection") {
  std::mt19937_64 rng(22);
  // A mirror image: the unconstrained orthogonal optimum has det -1.
  PointCloud src, dst;
  for (int i = 0; i < 5; ++i) {
    const Vec3 p = gaussian3(rng);
    src.points.push_back(p);
    dst.points.push_back(Vec3(-p.x(), p.y(), p.z()));
  }
  const auto pairs = identity_pairs(5);
  const Pose est = procrustes_align(src, dst, pairs);
  CHECK(est.rotation().determinant() == doctest::Approx(1.0).epsilon(1e-12));
  const Pose oracle = testutil::brute_force_align(src.points, dst.points);
  CHECK(rotation_angle(est, oracle) < 1e-6);
  CHECK(translation_distance(est, oracle) < 1e-6);

  // Noisy planar points where the reflection wins without the sign fix.
  std::normal_distribution<double> n(0.0, 1e-3);
  PointCloud plane_src, plane_dst;
  for (int i = 0; i < 20; ++i) {
    const Vec3 p(gaussian3(rng).x(), gaussian3(rng).y(), 0.0);
    plane_src.points.push_back(p);
    plane_dst.points.push_back(Vec3(p.x(), p.y(), n(rng)));
  }
  const Pose plane = procrustes_align(plane_src, plane_dst, identity_pairs(20));
  CHECK(plane.rotation().determinant() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("procrustes_align matches the brute-force minimizer") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n(0.0, 0.05);
  for (int trial = 0; trial < 10; ++trial) {
    const Pose truth = random_pose(rng, std::numbers::pi, 1.0);
    PointCloud src, dst;
    for (int i = 0; i < 5; ++i) {
      const Vec3 p = gaussian3(rng);
      src.points.push_back(p);
      dst.points.push_back(truth.apply(p) + Vec3(n(rng), n(rng), n(rng)));
    }
    const Pose est = procrustes_align(src, dst, identity_pairs(5));
    const Pose oracle = testutil::brute_force_align(src.points, dst.points);
    CHECK(rotation_angle(est, oracle) < 1e-6);
    CHECK(translation_distance(est, oracle) < 1e-6);
  }
}

TEST_CASE("procrustes_align contracts") {
  const PointCloud line = cloud_of({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)});
  CHECK(code_of([&] { procrustes_align(line, line, identity_pairs(3)); }) ==
        ErrorCode::DegenerateConfiguration);
}

TEST_CASE("estimate_normals") {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud plane;
  for (int i = 0; i < 300; ++i) plane.points.emplace_back(u(rng), u(rng), 2.0);
  const PointCloud pn = estimate_normals(plane, 10);
  REQUIRE(pn.has_normals());
  for (const auto& nrm : *pn.normals) CHECK((nrm - Vec3(0, 0, -1)).norm() < 1e-9);

  // The viewpoint sits on the axis, so normals face inward.
  auto radial_error = [](const PointCloud& c, std::size_t i) {
    const Vec3 radial = Vec3(c.points[i].x(), c.points[i].y(), 0).normalized();
    return std::acos(std::min(1.0, (*c.normals)[i].dot(-radial)));
  };
  // 2000 samples on a regular 40 x 50 grid.
  PointCloud grid;
  for (int a = 0; a < 40; ++a)
    for (int z = 0; z < 50; ++z) {
      const double th = 2.0 * std::numbers::pi * a / 40;
      grid.points.emplace_back(0.15 * std::cos(th), 0.15 * std::sin(th), 0.6 * z / 49 - 0.3);
    }
  const PointCloud gn = estimate_normals(grid, 10);
  for (std::size_t i = 0; i < grid.size(); ++i) CHECK(radial_error(gn, i) <= testutil::deg(5));

  // Random samples: a lopsided neighborhood fits a secant of the arc, so a
  // few normals tilt by up to the arc's half angle.
  const PointCloud cyl = testutil::cylinder_cloud(rng, 2000, 0.15, 0.6);
  const PointCloud cn = estimate_normals(cyl, 10);
  std::vector<double> errs;
  for (std::size_t i = 0; i < cyl.size(); ++i) errs.push_back(radial_error(cn, i));
  std::sort(errs.begin(), errs.end());
  CHECK(errs[errs.size() / 2] < testutil::deg(2));
  CHECK(errs[errs.size() * 95 / 100] < testutil::deg(5));
  CHECK(errs.back() < testutil::deg(10));

  const PointCloud small = cloud_of({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)});
  CHECK(code_of([&] { estimate_normals(small, 3); }) == ErrorCode::TooFewPoints);
}

TEST_CASE("icp identity") {
  std::mt19937_64 rng(25);
  const PointCloud c = testutil::cylinder_cloud(rng, 1000, 0.15, 0.6);
  const auto r = icp(c, c, Pose::identity());
  CHECK(rotation_angle(r.pose, Pose::identity()) < 1e-9);
  CHECK(r.pose.translation().norm() < 1e-12);
  CHECK(r.fitness == 1.0);
  CHECK(r.inlier_rmse <= 1e-12);
}

TEST_CASE("icp recovers a perturbed cylinder") {
  int recovered = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto cs = testutil::perturbed_cylinder(seed);
    const auto r = icp(cs.source, cs.target, Pose::identity());
    if (translation_distance(r.pose, cs.truth) <= 0.01 &&
        rotation_angle(r.pose, cs.truth) <= testutil::deg(1))
      ++recovered;
  }
  CHECK(recovered >= 18);
}

TEST_CASE("icp objective never increases within a stage") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto cs = testutil::perturbed_cylinder(seed);
    for (auto variant : {IcpVariant::PointToPoint, IcpVariant::PointToPlane}) {
      IcpParams p;
      p.variant = variant;
      const PointCloud dst =
          variant == IcpVariant::PointToPlane ? estimate_normals(cs.target, 10) : cs.target;
      const auto r = icp(cs.source, dst, Pose::identity(), p);
      CHECK_FALSE(r.objective_trace.empty());
      for (const auto& stage : r.objective_trace)
        for (std::size_t i = 1; i < stage.size(); ++i) CHECK(stage[i] <= stage[i - 1] + 1e-12);
    }
  }
}

TEST_CASE("icp is left-invariant") {
  std::mt19937_64 rng(26);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto cs = testutil::perturbed_cylinder(seed);
    const Pose g = random_pose(rng, std::numbers::pi, 3.0);
    const auto base = icp(cs.source, cs.target, Pose::identity());
    // The init has to move with the frame as well: G * I * G^-1 = I.
    const auto moved = icp(cs.source.transformed(g), cs.target.transformed(g), Pose::identity());
    const Pose expected = compose(compose(g, base.pose), inverse(g));
    CHECK(rotation_angle(moved.pose, expected) < 1e-6);
    CHECK(translation_distance(moved.pose, expected) < 1e-6);
  }
}

TEST_CASE("icp fitness counts matches within the final distance") {
  const auto cs = testutil::perturbed_cylinder(3);
  PointCloud src = cs.source;
  // Far-away points can never match.
  for (int i = 0; i < 500; ++i) src.points.push_back(Vec3(5.0 + 0.01 * i, 5.0, 5.0));
  IcpParams p;
  const auto r = icp(src, cs.target, Pose::identity(), p);
  const double tau = p.schedule.back();
  std::size_t brute = 0;
  for (const auto& q : src.points) {
    const Vec3 x = r.pose.apply(q);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& d : cs.target.points) best = std::min(best, (d - x).norm());
    if (best <= tau) ++brute;
  }
  CHECK(r.valid_matches == brute);
  CHECK(r.fitness == doctest::Approx(static_cast<double>(brute) / src.size()).epsilon(1e-15));
  CHECK(count_matches(src, cs.target, r.pose, tau) == brute);
  CHECK(r.fitness < 0.81);
}

TEST_CASE("icp contracts") {
  const PointCloud a = cloud_of({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)});
  const PointCloud b = a.transformed(Pose::from_translation(Vec3(10, 0, 0)));
  CHECK(code_of([&] { icp(a, b, Pose::identity()); }) == ErrorCode::NoCorrespondences);
  IcpParams bad;
  bad.schedule = {0.1, 0.2};
  CHECK(code_of([&] { icp(a, a, Pose::identity(), bad); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("kd-tree agrees with brute force") {
  std::mt19937_64 rng(27);
  std::vector<Vec3> pts;
  for (int i = 0; i < 500; ++i) pts.push_back(gaussian3(rng));
  const KdTree tree(pts);
  for (int q = 0; q < 200; ++q) {
    const Vec3 x = gaussian3(rng);
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < pts.size(); ++i) all.emplace_back((pts[i] - x).squaredNorm(), i);
    std::sort(all.begin(), all.end());
    const auto nn = tree.nearest(x);
    REQUIRE(nn);
    CHECK(nn->index == all[0].second);
    const auto k = tree.knn(x, 7);
    REQUIRE(k.size() == 7);
    for (int i = 0; i < 7; ++i) CHECK(k[i].index == all[i].second);
    CHECK_FALSE(tree.nearest(x, std::sqrt(all[0].first) * 0.999));
  }
}

TEST_CASE("point cloud file formats round trip") {
  std::mt19937_64 rng(28);
  PointCloud c = estimate_normals(testutil::cylinder_cloud(rng, 100, 0.15, 0.6), 10);
  std::stringstream bin;
  write_pcb(bin, c);
  const PointCloud back = read_pcb(bin);
  REQUIRE(back.size() == c.size());
  REQUIRE(back.has_normals());
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK((back.points[i] - c.points[i]).norm() < 1e-6);
    CHECK(((*back.normals)[i] - (*c.normals)[i]).norm() < 1e-6);
  }
  std::stringstream bad("PCB0xxxx");
  CHECK(code_of([&] { read_pcb(bad); }) == ErrorCode::ParseError);

  std::stringstream xyz("# comment\n1 2 3\n\n4 5 6\n");
  const PointCloud x = read_xyz(xyz);
  REQUIRE(x.size() == 2);
  CHECK((x.points[1] - Vec3(4, 5, 6)).norm() == 0.0);

  PointCloud grid;
  for (int i = 0; i < 10; ++i) grid.points.emplace_back(0.01 * i, 0, 0);
  CHECK(voxel_downsample(grid, 1.0).size() == 1);
  CHECK((voxel_downsample(grid, 1.0).points[0] - Vec3(0.045, 0, 0)).norm() < 1e-12);
}
