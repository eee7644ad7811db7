#include "telepresence/active_learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>

#include <fmt/format.h>

#include "telepresence/error.hpp"

namespace telepresence {

using nlohmann::json;

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    stream};
  return std::mt19937_64(seq);
}

// Cholesky that refuses anything not symmetric positive definite.
Eigen::LLT<Mat4> spd_factor(const Mat4& cov) {
  if (!cov.allFinite() || (cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
    throw Error(ErrorCode::SingularCovariance, "covariance is not symmetric");
  }
  Eigen::LLT<Mat4> llt(cov);
  if (llt.info() != Eigen::Success || llt.matrixL().toDenseMatrix().diagonal().minCoeff() <= 0.0) {
    throw Error(ErrorCode::SingularCovariance, "covariance is not positive definite");
  }
  return llt;
}

Categorical softmax(const std::vector<double>& logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  Categorical c;
  c.p.resize(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += c.p[i] = std::exp(logits[i] - top);
  for (auto& x : c.p) x /= sum;
  return c;
}

}  // namespace

void Categorical::validate() const {
  require(p.size() >= 2, "categorical needs at least two classes");
  double sum = 0.0;
  for (double x : p) {
    require(std::isfinite(x) && x >= 0.0, "probabilities must be >= 0");
    sum += x;
  }
  require(std::abs(sum - 1.0) <= 1e-9, "probabilities must sum to 1");
}

void GaussianBox::validate() const {
  require(mean.allFinite(), "box mean must be finite");
  spd_factor(covariance);
}

Categorical mc_average_categorical(std::span<const Categorical> samples) {
  if (samples.empty()) throw Error(ErrorCode::EmptyInput, "no samples to average");
  const std::size_t n = samples.front().p.size();
  std::vector<double> mean(n, 0.0);
  for (const auto& s : samples) {
    s.validate();
    if (s.p.size() != n) throw Error(ErrorCode::InvalidArgument, "samples differ in class count");
    for (std::size_t i = 0; i < n; ++i) mean[i] += s.p[i];
  }
  const double total = std::accumulate(mean.begin(), mean.end(), 0.0);
  for (auto& x : mean) x /= total;
  return {mean};
}

GaussianBox mc_moments_box(std::span<const Vec4> samples, double eps) {
  if (samples.size() < 2) throw Error(ErrorCode::TooFewSamples, "need two box samples");
  Vec4 mean = Vec4::Zero();
  for (const auto& s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  Mat4 cov = Mat4::Zero();
  for (const auto& s : samples) cov += (s - mean) * (s - mean).transpose();
  cov /= static_cast<double>(samples.size() - 1);
  cov = 0.5 * (cov + cov.transpose()) + eps * Mat4::Identity();
  return {mean, cov};
}

Categorical fuse_cluster_classification(const DetectionCluster& cluster, double floor) {
  const auto& center = cluster.center.first;
  center.validate();
  std::vector<double> log_p(center.p.size());
  auto add = [&](const Categorical& c) {
    if (c.p.size() != log_p.size()) {
      throw Error(ErrorCode::InvalidArgument, "cluster members differ in class count");
    }
    for (std::size_t i = 0; i < log_p.size(); ++i) log_p[i] += std::log(std::max(c.p[i], floor));
  };
  add(center);
  for (const auto& m : cluster.members) {
    m.first.validate();
    add(m.first);
  }
  return softmax(log_p);
}

GaussianBox fuse_cluster_regression(const DetectionCluster& cluster) {
  if (cluster.members.empty()) return cluster.center.second;
  Mat4 info = Mat4::Zero();
  Vec4 weighted = Vec4::Zero();
  auto add = [&](const GaussianBox& g) {
    const Mat4 precision = spd_factor(g.covariance).solve(Mat4::Identity());
    info += precision;
    weighted += precision * g.mean;
  };
  add(cluster.center.second);
  for (const auto& m : cluster.members) add(m.second);
  const auto llt = spd_factor(0.5 * (info + info.transpose()));
  Mat4 cov = llt.solve(Mat4::Identity());
  cov = 0.5 * (cov + cov.transpose());
  return {cov * weighted, cov};
}

double entropy_categorical(const Categorical& c) {
  c.validate();
  double h = 0.0;
  for (double x : c.p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

double per_class_entropy(const Categorical& c) {
  c.validate();
  double h = 0.0;
  for (double x : c.p) {
    if (x > 0.0) h -= x * std::log(x);
    if (x < 1.0) h -= (1.0 - x) * std::log1p(-x);
  }
  return h;
}

double entropy_gaussian(const GaussianBox& g) {
  const auto llt = spd_factor(g.covariance);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return 0.5 * (4.0 * std::log(2.0 * std::numbers::pi * std::numbers::e) + log_det);
}

void AcquisitionConfig::validate() const {
  require(std::isfinite(w) && w >= 0.0 && w <= 1.0, "weighted-sum weight must be in [0,1]");
}

AcquisitionConfig acquisition_from_json(const json& j) {
  AcquisitionConfig cfg;
  try {
    if (j.contains("comb")) {
      const auto& c = j.at("comb");
      const auto kind = c.at("kind").get<std::string>();
      if (kind == "weighted_sum") {
        cfg.comb = AcquisitionConfig::Comb::WeightedSum;
        cfg.w = c.value("w", cfg.w);
      } else if (kind == "max") {
        cfg.comb = AcquisitionConfig::Comb::Max;
      } else {
        throw Error(ErrorCode::InvalidArgument, "unknown comb kind '" + kind + "'");
      }
    }
    if (j.contains("agg")) {
      const auto agg = j.at("agg").get<std::string>();
      if (agg == "sum") {
        cfg.agg = AcquisitionConfig::Agg::Sum;
      } else if (agg == "average") {
        cfg.agg = AcquisitionConfig::Agg::Average;
      } else {
        throw Error(ErrorCode::InvalidArgument, "unknown agg '" + agg + "'");
      }
    }
    cfg.per_class = j.value("per_class", cfg.per_class);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  cfg.validate();
  return cfg;
}

json to_json(const AcquisitionConfig& cfg) {
  json comb = cfg.comb == AcquisitionConfig::Comb::Max
                  ? json{{"kind", "max"}}
                  : json{{"kind", "weighted_sum"}, {"w", cfg.w}};
  return {{"comb", comb},
          {"agg", cfg.agg == AcquisitionConfig::Agg::Sum ? "sum" : "average"},
          {"per_class", cfg.per_class}};
}

double image_score(std::span<const DetectionUncertainty> detections,
                   const AcquisitionConfig& cfg) {
  if (detections.empty()) return -std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (const auto& d : detections) {
    total += cfg.comb == AcquisitionConfig::Comb::Max ? std::max(d.u_cls, d.u_reg)
                                                      : cfg.w * d.u_cls + (1.0 - cfg.w) * d.u_reg;
  }
  return cfg.agg == AcquisitionConfig::Agg::Sum ? total
                                                : total / static_cast<double>(detections.size());
}

std::vector<std::size_t> query_top_k(std::span<const double> scores, std::size_t k) {
  if (k > scores.size()) {
    throw Error(ErrorCode::KTooLarge,
                fmt::format("query of {} from a pool of {}", k, scores.size()));
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  return idx;
}

// ---- synthetic pool ----

void SyntheticPoolConfig::validate() const {
  require(easy_clusters >= 1 && easy_size >= 1 && hard_size >= 0, "pool sizes must be positive");
  require(easy_spread > 0.0 && hard_spread > 0.0, "cluster spreads must be > 0");
  require(hard_difficulty > 0.0, "hard difficulty must be > 0");
  require(extent > 0.0 && test_fraction > 0.0, "extent and test fraction must be > 0");
  require(classes >= 2, "need at least two classes");
}

SyntheticPool make_synthetic_pool(const SyntheticPoolConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto rng = stream_rng(seed, 0xa1);
  std::uniform_real_distribution<double> where(0.0, cfg.extent);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, cfg.classes - 1);
  std::uniform_int_distribution<int> count(1, 3);

  struct Component {
    Vec2 center;
    double spread, difficulty;
    int size;
  };
  std::vector<Component> comps;
  for (int c = 0; c < cfg.easy_clusters; ++c) {
    comps.push_back({Vec2(where(rng), where(rng)), cfg.easy_spread, 1.0, cfg.easy_size});
  }
  if (cfg.hard_size > 0) {
    comps.push_back({Vec2(where(rng), where(rng)), cfg.hard_spread, cfg.hard_difficulty,
                     cfg.hard_size});
  }

  auto draw = [&](const Component& c) {
    SyntheticSample s;
    s.latent = c.center + c.spread * Vec2(n01(rng), n01(rng));
    s.difficulty = c.difficulty;
    const int objects = count(rng);
    for (int o = 0; o < objects; ++o) s.objects.push_back(cls(rng));
    return s;
  };
  SyntheticPool out;
  out.classes = cfg.classes;
  for (const auto& c : comps) {
    for (int i = 0; i < c.size; ++i) out.pool.push_back(draw(c));
  }
  for (const auto& c : comps) {
    const int m = static_cast<int>(std::lround(cfg.test_fraction * c.size));
    for (int i = 0; i < m; ++i) out.test.push_back(draw(c));
  }
  return out;
}

void AlConfig::validate() const {
  acquisition.validate();
  pool.validate();
  require(k >= 1, "query size must be >= 1");
  require(steps >= 0, "steps must be >= 0");
  require(mc_samples >= 2, "need at least two Monte-Carlo samples");
  require(length_scale > 0.0 && sharpness > 0.0, "length scale and sharpness must be > 0");
  require(logit_noise >= 0.0 && box_sigma > 0.0 && box_growth >= 0.0,
          "detector noise parameters must be >= 0");
}

AlConfig al_config_from_json(const json& j) {
  AlConfig cfg;
  try {
    if (j.contains("acquisition")) cfg.acquisition = acquisition_from_json(j.at("acquisition"));
    cfg.initial = j.value("initial", cfg.initial);
    cfg.k = j.value("k", cfg.k);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.mc_samples = j.value("mc_samples", cfg.mc_samples);
    cfg.length_scale = j.value("length_scale", cfg.length_scale);
    cfg.sharpness = j.value("sharpness", cfg.sharpness);
    cfg.logit_noise = j.value("logit_noise", cfg.logit_noise);
    cfg.box_sigma = j.value("box_sigma", cfg.box_sigma);
    cfg.box_growth = j.value("box_growth", cfg.box_growth);
    if (j.contains("pool")) {
      const auto& p = j.at("pool");
      auto& q = cfg.pool;
      q.easy_clusters = p.value("easy_clusters", q.easy_clusters);
      q.easy_size = p.value("easy_size", q.easy_size);
      q.easy_spread = p.value("easy_spread", q.easy_spread);
      q.hard_size = p.value("hard_size", q.hard_size);
      q.hard_spread = p.value("hard_spread", q.hard_spread);
      q.hard_difficulty = p.value("hard_difficulty", q.hard_difficulty);
      q.extent = p.value("extent", q.extent);
      q.test_fraction = p.value("test_fraction", q.test_fraction);
      q.classes = p.value("classes", q.classes);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  cfg.validate();
  return cfg;
}

json to_json(const AlConfig& cfg) {
  const auto& q = cfg.pool;
  return {{"acquisition", to_json(cfg.acquisition)},
          {"initial", cfg.initial},
          {"k", cfg.k},
          {"steps", cfg.steps},
          {"mc_samples", cfg.mc_samples},
          {"length_scale", cfg.length_scale},
          {"sharpness", cfg.sharpness},
          {"logit_noise", cfg.logit_noise},
          {"box_sigma", cfg.box_sigma},
          {"box_growth", cfg.box_growth},
          {"pool",
           {{"easy_clusters", q.easy_clusters},
            {"easy_size", q.easy_size},
            {"easy_spread", q.easy_spread},
            {"hard_size", q.hard_size},
            {"hard_spread", q.hard_spread},
            {"hard_difficulty", q.hard_difficulty},
            {"extent", q.extent},
            {"test_fraction", q.test_fraction},
            {"classes", q.classes}}}};
}

double coverage_gap(const SyntheticSample& s, std::span<const Vec2> labeled,
                    double length_scale) {
  double d2 = std::numeric_limits<double>::infinity();
  for (const auto& l : labeled) d2 = std::min(d2, (s.latent - l).squaredNorm());
  if (!std::isfinite(d2)) return 1.0;
  const double ell = length_scale * s.difficulty;
  return 1.0 - std::exp(-0.5 * d2 / (ell * ell));
}

namespace {

std::vector<double> class_logits(int true_class, int classes, double gap, double sharpness) {
  std::vector<double> logits(classes, 0.0);
  logits[true_class] = sharpness * (1.0 - gap);
  return logits;
}

// Monte-Carlo predictive samples of the simulated detector for one image,
// reduced to per-object uncertainties.
std::vector<DetectionUncertainty> simulate_uncertainty(const SyntheticSample& s, int classes,
                                                       double gap, const AlConfig& cfg,
                                                       std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  const Vec4 box(100.0, 100.0, 200.0, 180.0);
  const double box_spread = cfg.box_sigma + cfg.box_growth * gap;
  std::vector<DetectionUncertainty> out;
  std::vector<Categorical> cls(cfg.mc_samples);
  std::vector<Vec4> boxes(cfg.mc_samples);
  for (int c : s.objects) {
    for (int m = 0; m < cfg.mc_samples; ++m) {
      auto logits = class_logits(c, classes, gap, cfg.sharpness);
      for (auto& l : logits) l += cfg.logit_noise * gap * n01(rng);
      cls[m] = softmax(logits);
      for (int i = 0; i < 4; ++i) boxes[m](i) = box(i) + box_spread * n01(rng);
    }
    const auto mean = mc_average_categorical(cls);
    out.push_back({cfg.acquisition.per_class ? per_class_entropy(mean) : entropy_categorical(mean),
                   entropy_gaussian(mc_moments_box(boxes))});
  }
  return out;
}

}  // namespace

double test_metric(const SyntheticPool& pool, std::span<const Vec2> labeled, const AlConfig& cfg) {
  const double h_max = std::log(static_cast<double>(pool.classes));
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : pool.test) {
    const double gap = coverage_gap(s, labeled, cfg.length_scale);
    for (int c : s.objects) {
      sum += entropy_categorical(softmax(class_logits(c, pool.classes, gap, cfg.sharpness))) / h_max;
      ++n;
    }
  }
  return n == 0 ? 1.0 : 1.0 - sum / static_cast<double>(n);
}

std::vector<AlCurvePoint> al_loop(const SyntheticPool& pool, const AlConfig& cfg,
                                  std::span<const std::uint64_t> seeds) {
  cfg.validate();
  const std::size_t n = pool.pool.size();
  if (cfg.initial > n) throw Error(ErrorCode::KTooLarge, "initial set larger than the pool");
  std::vector<AlCurvePoint> curves;
  for (const auto seed : seeds) {
    auto init_rng = stream_rng(seed, 0xa2);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), init_rng);
    const std::vector<std::size_t> initial(order.begin(), order.begin() + cfg.initial);

    for (const std::string strategy : {"entropy", "random"}) {
      auto rng = stream_rng(seed, strategy == "entropy" ? 0xa3 : 0xa4);
      std::vector<char> is_labeled(n, 0);
      std::vector<Vec2> labeled;
      auto label = [&](std::size_t i) {
        is_labeled[i] = 1;
        labeled.push_back(pool.pool[i].latent);
      };
      for (auto i : initial) label(i);
      auto record = [&](int step) {
        curves.push_back({step, static_cast<double>(labeled.size()) / static_cast<double>(n),
                          strategy, seed, test_metric(pool, labeled, cfg)});
      };
      record(0);
      for (int step = 1; step <= cfg.steps && labeled.size() < n; ++step) {
        std::vector<std::size_t> unlabeled;
        for (std::size_t i = 0; i < n; ++i) {
          if (!is_labeled[i]) unlabeled.push_back(i);
        }
        const std::size_t k = std::min(cfg.k, unlabeled.size());
        std::vector<std::size_t> picked;
        if (strategy == "entropy") {
          std::vector<double> scores;
          scores.reserve(unlabeled.size());
          for (auto i : unlabeled) {
            const auto& s = pool.pool[i];
            const double gap = coverage_gap(s, labeled, cfg.length_scale);
            const auto u = simulate_uncertainty(s, pool.classes, gap, cfg, rng);
            scores.push_back(image_score(u, cfg.acquisition));
          }
          for (auto j : query_top_k(scores, k)) picked.push_back(unlabeled[j]);
        } else {
          std::shuffle(unlabeled.begin(), unlabeled.end(), rng);
          picked.assign(unlabeled.begin(), unlabeled.begin() + k);
        }
        for (auto i : picked) label(i);
        record(step);
      }
    }
  }
  return curves;
}

void write_curves_csv(std::ostream& out, std::span<const AlCurvePoint> curves) {
  out << "step,fraction_labeled,strategy,seed,metric\n";
  for (const auto& c : curves) {
    out << fmt::format("{},{:.6f},{},{},{:.9g}\n", c.step, c.fraction_labeled, c.strategy, c.seed,
                       c.metric);
  }
}

}  // namespace telepresence
