#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "telepresence/active_learning.hpp"
#include "telepresence/geometry.hpp"
#include "telepresence/passivity.hpp"
#include "telepresence/scenarios.hpp"
#include "telepresence/streams.hpp"

namespace telepresence {

struct RunReport {
  std::string scenario;
  std::string method;
  std::uint64_t seed = 0;
  double rmse_t = 0.0;  // m
  double rmse_r = 0.0;  // rad
  double max_t = 0.0;   // m, largest matched translation error
  double valid_matches = 0.0;  // mean per frame
  std::size_t frames = 0;      // matched frames
  std::size_t unmatched = 0;   // frames without estimate or ground truth
  std::size_t held = 0;        // frames scored on the last estimate, tracker had none
  double runtime = 0.0;        // s per frame, median
};

/// One estimate to score; `time` is when the estimate claims to be valid.
struct TimedPose {
  double time = 0.0;
  std::optional<Pose> pose;
};

struct ErrorSummary {
  double rmse_t = 0.0;
  double rmse_r = 0.0;
  double max_t = 0.0;
  std::size_t frames = 0;
  std::size_t unmatched = 0;
};

/// Pairs each estimate with the nearest ground-truth sample within
/// `tolerance` seconds. Missing estimates and unpaired ones count as
/// unmatched; the RMSE runs over the rest (0 when none match).
ErrorSummary score_trajectory(std::span<const TimedPose> estimates,
                              std::span<const GroundTruthRecord> truth, double tolerance);

/// "proposed": SLAM integration and delay compensation; "ap3": no SLAM
/// integration; "art": neither.
TrackerOptions marker_method_options(const std::string& method);
const std::vector<std::string>& marker_methods();

/// Raw tracker output per SLAM sample, stamped t_d after it. Empty until
/// every marker has been seen once, and wherever the tracker gives nothing.
std::vector<TimedPose> track_marker_sequence(const Scenario& s, const MarkerWorld& w,
                                             const MarkerSequence& seq,
                                             const TrackerOptions& options,
                                             std::vector<double>* step_times = nullptr);

/// Target pose per SLAM sample, compared with the ground truth t_d later.
/// When the tracker gives nothing the previous output is held and scored.
RunReport run_marker(const Scenario& s, const MarkerWorld& w, const std::string& method);
std::vector<RunReport> run_marker_bench(const Scenario& base, std::span<const std::string> methods,
                                        std::span<const std::uint64_t> seeds,
                                        const MarkerWorld& w = default_marker_world());

const std::vector<std::string>& lidar_methods();
PipelineConfig lidar_pipeline_config(const Scenario& s, const LidarWorld& w, PipelineMode mode);

RunReport run_lidar(const Scenario& s, const LidarSequence& seq, const LidarWorld& w,
                    const std::string& method);
std::vector<RunReport> run_lidar_bench(const Scenario& base, std::span<const std::string> methods,
                                       std::span<const std::uint64_t> seeds,
                                       const LidarWorld& w = default_lidar_world());

struct MethodSummary {
  std::string scenario;
  std::string method;
  std::size_t runs = 0;
  double mean_rmse_t = 0.0, sd_rmse_t = 0.0;
  double median_rmse_t = 0.0;
  double mean_rmse_r = 0.0, sd_rmse_r = 0.0;
  double mean_valid_matches = 0.0;
};

/// Per (scenario, method) in order of first appearance.
std::vector<MethodSummary> summarize(std::span<const RunReport> reports);

/// Runtime is left out unless asked for, so reruns give identical bytes.
void write_reports_csv(std::ostream& out, std::span<const RunReport> reports,
                       bool with_runtime = false);
void write_summary_csv(std::ostream& out, std::span<const MethodSummary> summary);

/// One pool per seed, built from cfg.pool.
std::vector<AlCurvePoint> run_al_bench(const AlConfig& cfg, std::span<const std::uint64_t> seeds);

struct TdpaReport {
  std::uint64_t seed = 0;
  bool pc_enabled = true;
  double passivity_margin = 0.0;  // min W + T_s |f v|, both ports
  double min_W = 0.0;             // lowest W in the trace, both ports
  double oscillation_early = 0.0;  // N peak-to-peak, first second of contact
  double oscillation_late = 0.0;   // N peak-to-peak, last second
  long first_contact = -1;
};

TdpaReport summarize_session(const SessionConfig& cfg, const SessionTrace& trace);
std::vector<TdpaReport> run_tdpa_bench(const SessionConfig& cfg,
                                       std::span<const std::uint64_t> seeds);
void write_tdpa_csv(std::ostream& out, std::span<const TdpaReport> reports);

}  // namespace telepresence
