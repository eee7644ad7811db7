#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "telepresence/active_learning.hpp"
#include "telepresence/bench.hpp"
#include "telepresence/error.hpp"
#include "test_util.hpp"

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

Categorical cat(std::vector<double> p) { return Categorical{std::move(p)}; }

GaussianBox iso(const Vec4& mean, double var) {
  GaussianBox g;
  g.mean = mean;
  g.covariance = var * Mat4::Identity();
  return g;
}

Mat4 random_spd(std::mt19937_64& rng, double scale = 3.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat4 a;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) a(i, j) = n(rng);
  return a * a.transpose() + 0.5 * Mat4::Identity();
}

Vec4 random_mean(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  return Vec4(u(rng), u(rng), u(rng), u(rng));
}

Categorical random_categorical(std::mt19937_64& rng, int k) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> p(k);
  for (auto& x : p) x = u(rng);
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& x : p) x /= s;
  return cat(p);
}

}  // namespace

TEST_CASE("mc_average_categorical") {
  const std::vector<Categorical> one{cat({0.2, 0.8})};
  CHECK(mc_average_categorical(one).p == one[0].p);
  const std::vector<Categorical> two{cat({1.0, 0.0}), cat({0.0, 1.0})};
  const auto m = mc_average_categorical(two);
  CHECK(m.p[0] == 0.5);
  CHECK(m.p[1] == 0.5);

  std::mt19937_64 rng(40);
  std::vector<Categorical> many;
  for (int i = 0; i < 30; ++i) many.push_back(random_categorical(rng, 4));
  const auto avg = mc_average_categorical(many);
  for (int c = 0; c < 4; ++c) {
    double s = 0.0;
    for (const auto& x : many) s += x.p[c];
    CHECK(std::abs(avg.p[c] - s / 30.0) <= 1e-12);
  }
  CHECK(code_of([] { mc_average_categorical({}); }) == ErrorCode::EmptyInput);
}

TEST_CASE("mc_moments_box") {
  const std::vector<Vec4> same(5, Vec4(1, 2, 3, 4));
  const auto g = mc_moments_box(same);
  CHECK((g.mean - Vec4(1, 2, 3, 4)).norm() == 0.0);
  CHECK((g.covariance - 1e-6 * Mat4::Identity()).norm() <= 1e-18);

  // (0,0,0,0) and (2,0,0,0): mean 1, unbiased variance ((-1)^2 + 1^2) / 1 = 2.
  const std::vector<Vec4> pair{Vec4(0, 0, 0, 0), Vec4(2, 0, 0, 0)};
  const auto h = mc_moments_box(pair, 0.0);
  CHECK(h.mean(0) == 1.0);
  Mat4 expect = Mat4::Zero();
  expect(0, 0) = 2.0;
  CHECK((h.covariance - expect).norm() <= 1e-15);

  std::mt19937_64 rng(41);
  const Mat4 cov = random_spd(rng);
  const Mat4 l = cov.llt().matrixL();
  const Vec4 mu(10, -5, 3, 7);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<Vec4> draws;
  for (int i = 0; i < 1000; ++i) {
    Vec4 z;
    for (int k = 0; k < 4; ++k) z(k) = n01(rng);
    draws.push_back(mu + l * z);
  }
  const auto est = mc_moments_box(draws, 0.0);
  Vec4 mean = Vec4::Zero();
  for (const auto& d : draws) mean += d;
  mean /= 1000.0;
  Mat4 scatter = Mat4::Zero();
  for (const auto& d : draws) scatter += (d - mean) * (d - mean).transpose();
  scatter /= 999.0;
  CHECK((est.mean - mean).norm() <= 1e-12 * mean.norm());
  CHECK((est.covariance - scatter).norm() <= 1e-12 * scatter.norm());
  // Single variances of 1000 draws scatter by about 4.5%, so the whole
  // matrix is compared.
  CHECK((est.covariance - cov).norm() <= 0.05 * cov.norm());
  CHECK((est.mean - mu).norm() <= 0.05 * std::sqrt(cov.trace()));

  CHECK(code_of([] { mc_moments_box(std::vector<Vec4>{Vec4::Zero()}); }) ==
        ErrorCode::TooFewSamples);
}

TEST_CASE("fuse_cluster_classification") {
  DetectionCluster solo;
  solo.center = {cat({0.6, 0.4}), iso(Vec4::Zero(), 1.0)};
  CHECK(fuse_cluster_classification(solo).p == solo.center.first.p);

  DetectionCluster twin = solo;
  twin.members.push_back(solo.center);
  const auto f = fuse_cluster_classification(twin);
  CHECK(f.p[0] == doctest::Approx(0.36 / 0.52).epsilon(1e-12));
  CHECK(f.p[0] == doctest::Approx(0.6923).epsilon(1e-4));
  CHECK(f.p[1] == doctest::Approx(0.16 / 0.52).epsilon(1e-12));

  DetectionCluster uni;
  uni.center = {cat({0.5, 0.3, 0.2}), iso(Vec4::Zero(), 1.0)};
  uni.members.push_back({cat({1.0 / 3, 1.0 / 3, 1.0 / 3}), iso(Vec4::Zero(), 1.0)});
  const auto u = fuse_cluster_classification(uni);
  for (int c = 0; c < 3; ++c) CHECK(std::abs(u.p[c] - uni.center.first.p[c]) <= 1e-12);
}

TEST_CASE("classification fusion is permutation invariant and associative") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    DetectionCluster c;
    c.center = {random_categorical(rng, 4), iso(Vec4::Zero(), 1.0)};
    for (int m = 0; m < 4; ++m) c.members.push_back({random_categorical(rng, 4), iso(Vec4::Zero(), 1.0)});
    const auto base = fuse_cluster_classification(c, 0.0);
    DetectionCluster shuffled = c;
    std::shuffle(shuffled.members.begin(), shuffled.members.end(), rng);
    const auto perm = fuse_cluster_classification(shuffled, 0.0);

    // Fuse the first two members first, then the rest.
    DetectionCluster left;
    left.center = c.center;
    left.members = {c.members[0], c.members[1]};
    DetectionCluster right;
    right.center = {fuse_cluster_classification(left, 0.0), c.center.second};
    right.members = {c.members[2], c.members[3]};
    const auto assoc = fuse_cluster_classification(right, 0.0);
    for (int k = 0; k < 4; ++k) {
      CHECK(std::abs(perm.p[k] - base.p[k]) <= 1e-12);
      CHECK(std::abs(assoc.p[k] - base.p[k]) <= 1e-12);
    }
  }
}

TEST_CASE("fuse_cluster_regression") {
  DetectionCluster solo;
  solo.center = {cat({0.5, 0.5}), iso(Vec4(1, 2, 3, 4), 2.0)};
  const auto s = fuse_cluster_regression(solo);
  CHECK((s.mean - solo.center.second.mean).norm() == 0.0);
  CHECK((s.covariance - solo.center.second.covariance).norm() <= 1e-15);

  DetectionCluster twin = solo;
  twin.members.push_back(solo.center);
  const auto t = fuse_cluster_regression(twin);
  CHECK((t.covariance - 1.0 * Mat4::Identity()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((t.mean - Vec4(1, 2, 3, 4)).norm() <= 1e-12);

  // Scalar conjugate product per axis: means 0 and 1 with variances 1 and 4
  // give (0 * 1 + 1 * 0.25) / 1.25 = 0.2, variance 0.8.
  DetectionCluster off;
  off.center = {cat({0.5, 0.5}), iso(Vec4::Zero(), 1.0)};
  off.members.push_back({cat({0.5, 0.5}), iso(Vec4::Ones(), 4.0)});
  const auto o = fuse_cluster_regression(off);
  CHECK((o.mean - Vec4::Constant(0.2)).norm() <= 1e-12);
  CHECK((o.covariance - 0.8 * Mat4::Identity()).norm() <= 1e-12);

  DetectionCluster bad = solo;
  bad.members.push_back({cat({0.5, 0.5}), iso(Vec4::Zero(), 0.0)});
  CHECK(code_of([&] { fuse_cluster_regression(bad); }) == ErrorCode::SingularCovariance);
}

TEST_CASE("regression fusion adds precisions and never loses information") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    DetectionCluster c;
    c.center = {cat({0.5, 0.5}), GaussianBox{random_mean(rng), random_spd(rng)}};
    Mat4 info = c.center.second.covariance.inverse();
    for (int m = 0; m < 3; ++m) {
      c.members.push_back({cat({0.5, 0.5}), GaussianBox{random_mean(rng), random_spd(rng)}});
      info += c.members.back().second.covariance.inverse();
    }
    const auto f = fuse_cluster_regression(c);
    const Mat4 fused_info = f.covariance.inverse();
    CHECK((fused_info - info).cwiseAbs().maxCoeff() <= 1e-9 * info.cwiseAbs().maxCoeff());
    // Center minus fused covariance is positive semidefinite.
    const Mat4 gap = c.center.second.covariance - f.covariance;
    const Eigen::SelfAdjointEigenSolver<Mat4> es(0.5 * (gap + gap.transpose()));
    CHECK(es.eigenvalues().minCoeff() >= -1e-9);
    const Eigen::SelfAdjointEigenSolver<Mat4> fe(f.covariance), ce(c.center.second.covariance);
    CHECK(fe.eigenvalues().maxCoeff() <= ce.eigenvalues().maxCoeff() + 1e-9);
  }
}

TEST_CASE("entropies") {
  CHECK(entropy_categorical(cat({1.0, 0.0, 0.0})) == 0.0);
  CHECK(entropy_categorical(cat({1.0 / 3, 1.0 / 3, 1.0 / 3})) == doctest::Approx(std::log(3.0)));
  CHECK(entropy_categorical(cat({0.7, 0.2, 0.1})) == doctest::Approx(0.80182).epsilon(1e-5));

  GaussianBox g = iso(Vec4::Zero(), 1.0);
  const double two_pi_e = 2.0 * std::numbers::pi * std::numbers::e;
  CHECK(entropy_gaussian(g) == doctest::Approx(2.0 * std::log(two_pi_e)).epsilon(1e-12));
  CHECK(entropy_gaussian(g) == doctest::Approx(5.6758).epsilon(1e-4));
  g.covariance *= 4.0;
  CHECK(entropy_gaussian(g) == doctest::Approx(2.0 * std::log(two_pi_e) + 2.0 * std::log(4.0)));

  std::mt19937_64 rng(44);
  for (int i = 0; i < 20; ++i) {
    GaussianBox r{Vec4::Zero(), random_spd(rng)};
    const Eigen::SelfAdjointEigenSolver<Mat4> es(r.covariance);
    double logdet = 0.0;
    for (int k = 0; k < 4; ++k) logdet += std::log(es.eigenvalues()(k));
    CHECK(std::abs(entropy_gaussian(r) - 0.5 * (4.0 * std::log(two_pi_e) + logdet)) <= 1e-9);
  }
  CHECK(code_of([] { entropy_gaussian(iso(Vec4::Zero(), 0.0)); }) == ErrorCode::SingularCovariance);

  // Binary entropies of the marginals: 2 * H_b(0.5) = 2 ln 2.
  CHECK(per_class_entropy(cat({0.5, 0.5})) == doctest::Approx(2.0 * std::log(2.0)));
}

TEST_CASE("uniform distribution uniquely maximizes the categorical entropy") {
  std::mt19937_64 rng(45);
  std::normal_distribution<double> n(0.0, 0.05);
  for (int k = 2; k <= 6; ++k) {
    const double hmax = entropy_categorical(cat(std::vector<double>(k, 1.0 / k)));
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> p(k, 1.0 / k);
      double mean = 0.0;
      std::vector<double> d(k);
      for (auto& x : d) mean += (x = n(rng));
      mean /= k;
      for (int i = 0; i < k; ++i) p[i] += d[i] - mean;
      if (*std::min_element(p.begin(), p.end()) <= 0.0) continue;
      CHECK(entropy_categorical(cat(p)) < hmax);
    }
  }
}

TEST_CASE("image_score") {
  AcquisitionConfig ws;
  const std::vector<DetectionUncertainty> one{{1.0, 3.0}};
  CHECK(image_score(one, ws) == 2.0);
  AcquisitionConfig mx;
  mx.comb = AcquisitionConfig::Comb::Max;
  CHECK(image_score(one, mx) == 3.0);

  // Weighted sums 2.0 and 5.0.
  const std::vector<DetectionUncertainty> two{{1.0, 3.0}, {4.0, 6.0}};
  CHECK(image_score(two, ws) == 7.0);
  AcquisitionConfig avg;
  avg.agg = AcquisitionConfig::Agg::Average;
  CHECK(image_score(two, avg) == 3.5);

  CHECK(image_score({}, ws) == -std::numeric_limits<double>::infinity());

  std::mt19937_64 rng(46);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<DetectionUncertainty> a(3), b(4);
    for (auto& d : a) d = {u(rng), u(rng)};
    for (auto& d : b) d = {u(rng), u(rng)};
    std::vector<DetectionUncertainty> ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    CHECK(image_score(ab, ws) == doctest::Approx(image_score(a, ws) + image_score(b, ws)));
  }
}

TEST_CASE("acquisition config json") {
  const auto cfg = acquisition_from_json(nlohmann::json::parse(
      R"({"comb": {"kind": "weighted_sum", "w": 0.25}, "agg": "average"})"));
  CHECK(cfg.comb == AcquisitionConfig::Comb::WeightedSum);
  CHECK(cfg.w == 0.25);
  CHECK(cfg.agg == AcquisitionConfig::Agg::Average);
  const auto back = acquisition_from_json(to_json(cfg));
  CHECK(back.w == cfg.w);
  CHECK(back.agg == cfg.agg);
  const auto m = acquisition_from_json(nlohmann::json::parse(R"({"comb": {"kind": "max"}, "agg": "sum"})"));
  CHECK(m.comb == AcquisitionConfig::Comb::Max);
  CHECK_THROWS_AS(acquisition_from_json(nlohmann::json::parse(R"({"comb": {"kind": "min"}})")), Error);
}

TEST_CASE("query_top_k") {
  const std::vector<double> s{0.3, 0.9, 0.1, 0.7, 0.5};
  CHECK(query_top_k(s, 5).size() == 5);
  CHECK(query_top_k(s, 2) == std::vector<std::size_t>{1, 3});
  const std::vector<double> flat(6, 1.0);
  CHECK(query_top_k(flat, 3) == std::vector<std::size_t>{0, 1, 2});
  CHECK(code_of([&] { query_top_k(s, 6); }) == ErrorCode::KTooLarge);

  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(50);
    for (auto& x : v) x = u(rng);
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] > v[b]; });
    idx.resize(7);
    auto got = query_top_k(v, 7);
    std::sort(got.begin(), got.end());
    std::sort(idx.begin(), idx.end());
    CHECK(got == idx);
  }
}

namespace {

struct CurveSummary {
  std::vector<double> entropy, random;  // mean over seeds per step
  std::vector<double> fraction;
};

CurveSummary mean_curves(const std::vector<AlCurvePoint>& curves) {
  CurveSummary s;
  int steps = 0;
  for (const auto& c : curves) steps = std::max(steps, c.step + 1);
  s.entropy.assign(steps, 0.0);
  s.random.assign(steps, 0.0);
  s.fraction.assign(steps, 0.0);
  std::vector<int> ne(steps, 0), nr(steps, 0);
  for (const auto& c : curves) {
    if (c.strategy == "entropy") {
      s.entropy[c.step] += c.metric;
      ++ne[c.step];
    } else {
      s.random[c.step] += c.metric;
      ++nr[c.step];
    }
    s.fraction[c.step] = c.fraction_labeled;
  }
  for (int i = 0; i < steps; ++i) {
    s.entropy[i] /= ne[i];
    s.random[i] /= nr[i];
  }
  return s;
}

}  // namespace

TEST_CASE("exhausting the pool in one step makes both strategies equal") {
  AlConfig cfg;
  cfg.pool.easy_clusters = 2;
  cfg.pool.easy_size = 20;
  cfg.pool.hard_size = 10;
  cfg.initial = 5;
  cfg.k = 45;
  cfg.steps = 1;
  const auto pool = make_synthetic_pool(cfg.pool, 7);
  const std::vector<std::uint64_t> seeds{7};
  const auto curves = al_loop(pool, cfg, seeds);
  REQUIRE(curves.size() == 4);
  CHECK(curves[1].fraction_labeled == 1.0);
  CHECK(curves[1].metric == curves[3].metric);
  std::vector<Vec2> all;
  for (const auto& s : pool.pool) all.push_back(s.latent);
  CHECK(curves[1].metric == test_metric(pool, all, cfg));
}

TEST_CASE("al_loop is reproducible") {
  AlConfig cfg;
  cfg.steps = 5;
  const auto pool = make_synthetic_pool(cfg.pool, 11);
  const std::vector<std::uint64_t> seeds{11, 12};
  std::ostringstream a, b;
  write_curves_csv(a, al_loop(pool, cfg, seeds));
  write_curves_csv(b, al_loop(pool, cfg, seeds));
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("step,fraction_labeled,strategy,seed,metric\n", 0) == 0);
}

TEST_CASE("entropy acquisition needs at most half the labels of random sampling") {
  const AlConfig cfg;
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  const auto mean = mean_curves(run_al_bench(cfg, seeds));
  // Both strategies end on the full pool.
  CHECK(mean.entropy.back() == doctest::Approx(mean.random.back()).epsilon(1e-12));
  const double target = 0.95 * mean.random.back();
  auto reach = [&](const std::vector<double>& curve) {
    for (std::size_t s = 0; s < curve.size(); ++s)
      if (curve[s] >= target) return mean.fraction[s];
    return std::numeric_limits<double>::infinity();
  };
  const double ent = reach(mean.entropy), rnd = reach(mean.random);
  CAPTURE(ent);
  CAPTURE(rnd);
  CHECK(ent <= 0.5 * rnd);
  for (std::size_t s = 1; s < mean.entropy.size(); ++s) {
    CAPTURE(s);
    CHECK(mean.entropy[s] >= mean.random[s]);
  }
}
