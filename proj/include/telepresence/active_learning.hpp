#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "telepresence/geometry.hpp"

namespace telepresence {

/// Class probabilities, at least two, non-negative and summing to 1.
struct Categorical {
  std::vector<double> p;

  void validate() const;
};

/// Box (u1, v1, u2, v2) in pixels with its covariance in px^2.
struct GaussianBox {
  Vec4 mean = Vec4::Zero();
  Mat4 covariance = Mat4::Identity();

  void validate() const;
};

struct DetectionCluster {
  std::pair<Categorical, GaussianBox> center;  // highest-score anchor
  std::vector<std::pair<Categorical, GaussianBox>> members;
};

/// Mean of the per-sample distributions. Throws EmptyInput.
Categorical mc_average_categorical(std::span<const Categorical> samples);

/// Sample mean and unbiased covariance plus eps I. Throws TooFewSamples
/// below two samples.
GaussianBox mc_moments_box(std::span<const Vec4> samples, double eps = 1e-6);

/// Normalized product of the center and member distributions, in log space.
/// Probabilities are floored at `floor` first; 0 disables the floor.
Categorical fuse_cluster_classification(const DetectionCluster& cluster, double floor = 1e-12);

/// Gaussian product: precisions add, the mean is precision weighted.
/// Throws SingularCovariance.
GaussianBox fuse_cluster_regression(const DetectionCluster& cluster);

/// Shannon entropy in nats, 0 ln 0 = 0.
double entropy_categorical(const Categorical& c);
/// Sum over classes of the binary entropy of each marginal p_i.
double per_class_entropy(const Categorical& c);
/// 0.5 ln((2 pi e)^4 det S). Throws SingularCovariance.
double entropy_gaussian(const GaussianBox& g);

struct AcquisitionConfig {
  enum class Comb { WeightedSum, Max } comb = Comb::WeightedSum;
  double w = 0.5;  // weight of U_cls in the weighted sum
  enum class Agg { Sum, Average } agg = Agg::Sum;
  bool per_class = false;  // U_cls as per-class marginal entropies instead of the total

  void validate() const;
};

AcquisitionConfig acquisition_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AcquisitionConfig& cfg);

struct DetectionUncertainty {
  double u_cls = 0.0;
  double u_reg = 0.0;
};

/// Aggregate of the combined per-detection scores; -inf without detections
/// so such images are queried last.
double image_score(std::span<const DetectionUncertainty> detections, const AcquisitionConfig& cfg);

/// Indices of the k largest scores, ties to the lower index. Throws KTooLarge.
std::vector<std::size_t> query_top_k(std::span<const double> scores, std::size_t k);

// ---- synthetic pool ----

struct SyntheticPoolConfig {
  int easy_clusters = 5;
  int easy_size = 70;
  double easy_spread = 0.3;  // std of the cluster in latent units
  int hard_size = 50;
  double hard_spread = 0.5;
  double hard_difficulty = 0.25;  // relative length scale, < 1 is harder
  double extent = 10.0;           // cluster centers in [0, extent]^2
  double test_fraction = 1.0;     // held-out samples per pool sample
  int classes = 3;

  void validate() const;
};

struct SyntheticSample {
  Vec2 latent = Vec2::Zero();
  double difficulty = 1.0;  // scales the length scale of the coverage kernel
  std::vector<int> objects;  // class of each object in the image
};

struct SyntheticPool {
  std::vector<SyntheticSample> pool;
  std::vector<SyntheticSample> test;
  int classes = 3;
};

/// Redundant easy clusters plus one rare hard cluster, test set drawn from
/// the same mixture.
SyntheticPool make_synthetic_pool(const SyntheticPoolConfig& cfg, std::uint64_t seed);

struct AlConfig {
  AcquisitionConfig acquisition;
  SyntheticPoolConfig pool;
  std::size_t initial = 20;  // randomly labeled before the first query
  std::size_t k = 5;         // query size per step
  int steps = 76;            // Q
  int mc_samples = 30;
  double length_scale = 0.8;  // coverage kernel of the simulated detector
  double sharpness = 6.0;     // logit of the true class when fully covered
  double logit_noise = 3.0;   // MC logit spread when uncovered
  double box_sigma = 1.0;     // px, box sample spread when covered
  double box_growth = 20.0;   // extra px of spread when uncovered

  void validate() const;
};

AlConfig al_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AlConfig& cfg);

/// How unfamiliar a sample is to a detector trained on `labeled`: 0 on a
/// labeled sample, tending to 1 far from all of them.
double coverage_gap(const SyntheticSample& s, std::span<const Vec2> labeled,
                    double length_scale);

/// 1 - mean normalized entropy of the expected class distribution over the
/// test set.
double test_metric(const SyntheticPool& pool, std::span<const Vec2> labeled, const AlConfig& cfg);

struct AlCurvePoint {
  int step = 0;
  double fraction_labeled = 0.0;
  std::string strategy;  // "entropy" or "random"
  std::uint64_t seed = 0;
  double metric = 0.0;
};

/// Runs the query loop for entropy acquisition and uniform-random selection
/// from the same initial set, per seed. The seed drives the initial set, the
/// random picks and the detector's Monte-Carlo samples.
std::vector<AlCurvePoint> al_loop(const SyntheticPool& pool, const AlConfig& cfg,
                                  std::span<const std::uint64_t> seeds);

void write_curves_csv(std::ostream& out, std::span<const AlCurvePoint> curves);

}  // namespace telepresence
