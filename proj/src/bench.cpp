#include "telepresence/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

#include <fmt/format.h>

#include "telepresence/error.hpp"

namespace telepresence {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<long>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

}  // namespace

ErrorSummary score_trajectory(std::span<const TimedPose> estimates,
                              std::span<const GroundTruthRecord> truth, double tolerance) {
  ErrorSummary out;
  double se_t = 0.0, se_r = 0.0;
  for (const auto& e : estimates) {
    if (!e.pose) {
      ++out.unmatched;
      continue;
    }
    auto it = std::lower_bound(truth.begin(), truth.end(), e.time,
                               [](const GroundTruthRecord& g, double t) { return g.time < t; });
    const GroundTruthRecord* best = nullptr;
    if (it != truth.end()) best = &*it;
    if (it != truth.begin()) {
      const auto& prev = *(it - 1);
      if (!best || e.time - prev.time <= best->time - e.time) best = &prev;
    }
    if (!best || std::abs(best->time - e.time) > tolerance) {
      ++out.unmatched;
      continue;
    }
    const double et = translation_distance(*e.pose, best->pose);
    const double er = rotation_angle(*e.pose, best->pose);
    se_t += et * et;
    se_r += er * er;
    out.max_t = std::max(out.max_t, et);
    ++out.frames;
  }
  if (out.frames > 0) {
    out.rmse_t = std::sqrt(se_t / static_cast<double>(out.frames));
    out.rmse_r = std::sqrt(se_r / static_cast<double>(out.frames));
  }
  return out;
}

const std::vector<std::string>& marker_methods() {
  static const std::vector<std::string> m{"proposed", "ap3", "art"};
  return m;
}

TrackerOptions marker_method_options(const std::string& method) {
  TrackerOptions o;
  if (method == "proposed") return o;
  if (method == "ap3") {
    o.slam_integration = false;
    return o;
  }
  if (method == "art") {
    o.slam_integration = false;
    o.delay_compensation = false;
    return o;
  }
  throw Error(ErrorCode::UnknownMethod, "unknown marker method '" + method + "'");
}

std::vector<TimedPose> track_marker_sequence(const Scenario& s, const MarkerWorld& w,
                                             const MarkerSequence& seq,
                                             const TrackerOptions& options,
                                             std::vector<double>* step_times) {
  // Camera frames keyed by their SLAM tick.
  std::map<long, const MarkerFrame*> frame_at;
  for (const auto& f : seq.frames) frame_at[std::lround(f.time * s.slam_rate)] = &f;

  std::vector<TimedPose> estimates;
  std::optional<TrackerState> state;
  for (const auto& slam : seq.slam) {
    const auto it = frame_at.find(std::lround(slam.timestamp * s.slam_rate));
    std::span<const MarkerObservation> obs;
    if (it != frame_at.end()) obs = it->second->observations;
    TimedPose est{slam.timestamp + s.tracker_delay, std::nullopt};
    const auto t0 = Clock::now();
    if (!state) {
      if (obs.size() == w.layout.size()) {
        state = tracker_init(obs, slam, w.layout, w.intrinsics, s.tracker_delay);
        est.pose = options.delay_compensation ? delay_compensate(*state, slam)
                                              : *state->last_target_pose;
      }
    } else {
      auto out = track_step(*state, obs, slam, w.layout, w.intrinsics, options);
      est.pose = out.pose;
      state = std::move(out.state);
    }
    if (step_times) step_times->push_back(seconds_since(t0));
    estimates.push_back(est);
  }
  return estimates;
}

RunReport run_marker(const Scenario& s, const MarkerWorld& w, const std::string& method) {
  const auto options = marker_method_options(method);
  const auto seq = simulate_marker_sequence(s, w);
  RunReport rep{s.name, method, s.seed};

  std::vector<double> step_times;
  auto estimates = track_marker_sequence(s, w, seq, options, &step_times);
  // Without a fresh estimate the operator still sees the last one.
  std::optional<Pose> shown;
  for (auto& est : estimates) {
    if (est.pose) {
      shown = est.pose;
    } else if (shown) {
      est.pose = shown;
      ++rep.held;
    }
  }
  double observed = 0.0;
  for (const auto& f : seq.frames) observed += static_cast<double>(f.observations.size());

  const auto err = score_trajectory(estimates, seq.truth, 0.5 / s.slam_rate);
  rep.rmse_t = err.rmse_t;
  rep.rmse_r = err.rmse_r;
  rep.max_t = err.max_t;
  rep.frames = err.frames;
  rep.unmatched = err.unmatched;
  rep.valid_matches = seq.frames.empty() ? 0.0 : observed / static_cast<double>(seq.frames.size());
  rep.runtime = median(step_times);
  return rep;
}

std::vector<RunReport> run_marker_bench(const Scenario& base, std::span<const std::string> methods,
                                        std::span<const std::uint64_t> seeds,
                                        const MarkerWorld& w) {
  for (const auto& m : methods) marker_method_options(m);
  std::vector<RunReport> out;
  for (const auto seed : seeds) {
    Scenario s = base;
    s.seed = seed;
    for (const auto& m : methods) out.push_back(run_marker(s, w, m));
  }
  return out;
}

const std::vector<std::string>& lidar_methods() {
  static const std::vector<std::string> m{"odom", "backend", "comb", "all", "pICP"};
  return m;
}

PipelineConfig lidar_pipeline_config(const Scenario& s, const LidarWorld& w, PipelineMode mode) {
  PipelineConfig cfg;
  cfg.lidar_to_camera = inverse(w.camera_in_lidar);
  cfg.intrinsics = w.intrinsics;
  cfg.mode = mode;
  cfg.odometry_noise_translation = s.noise.odometry_translation;
  cfg.odometry_noise_rotation = s.noise.odometry_rotation;
  cfg.seed = s.seed;
  // The sensor keeps its height, so the floor sits at a fixed LiDAR z.
  cfg.crop_min_z = -w.lidar_start.translation().z() + 0.1;
  return cfg;
}

RunReport run_lidar(const Scenario& s, const LidarSequence& seq, const LidarWorld& w,
                    const std::string& method) {
  const auto cfg = lidar_pipeline_config(s, w, pipeline_mode_from_string(method));
  RunReport rep{s.name, method, s.seed};
  if (seq.scans.empty()) return rep;

  std::vector<double> step_times;
  auto t0 = Clock::now();
  auto st = pipeline_init(seq.scans[0], seq.detections[0], cfg);
  step_times.push_back(seconds_since(t0));

  // The model frame is the first crop's centroid with the axes of the first
  // scan; its truth follows from the sensor trajectory.
  const Pose model_in_world = seq.lidar_in_world[0] * Pose::from_translation(st.initial_model.origin);
  std::vector<GroundTruthRecord> truth;
  std::vector<TimedPose> estimates{{seq.times[0], st.global_pose}};
  for (std::size_t k = 0; k < seq.scans.size(); ++k) {
    truth.push_back({seq.times[k], "model_in_lidar", inverse(seq.lidar_in_world[k]) * model_in_world});
  }
  double matches = 0.0;
  for (std::size_t k = 1; k < seq.scans.size(); ++k) {
    t0 = Clock::now();
    auto [out, next] = pipeline_step(std::move(st), seq.scans[k], seq.detections[k]);
    step_times.push_back(seconds_since(t0));
    st = std::move(next);
    estimates.push_back({seq.times[k], out.pose});
    matches += static_cast<double>(out.valid_matches);
  }
  const auto err = score_trajectory(estimates, truth, 0.5 / s.lidar_rate);
  rep.rmse_t = err.rmse_t;
  rep.rmse_r = err.rmse_r;
  rep.max_t = err.max_t;
  rep.frames = err.frames;
  rep.unmatched = err.unmatched;
  rep.valid_matches =
      seq.scans.size() > 1 ? matches / static_cast<double>(seq.scans.size() - 1) : 0.0;
  rep.runtime = median(step_times);
  return rep;
}

std::vector<RunReport> run_lidar_bench(const Scenario& base, std::span<const std::string> methods,
                                       std::span<const std::uint64_t> seeds,
                                       const LidarWorld& w) {
  for (const auto& m : methods) pipeline_mode_from_string(m);
  std::vector<RunReport> out;
  if (methods.empty()) return out;
  for (const auto seed : seeds) {
    Scenario s = base;
    s.seed = seed;
    const auto seq = simulate_lidar_sequence(s, w);
    for (const auto& m : methods) out.push_back(run_lidar(s, seq, w, m));
  }
  return out;
}

std::vector<MethodSummary> summarize(std::span<const RunReport> reports) {
  std::vector<MethodSummary> out;
  std::vector<std::vector<const RunReport*>> groups;
  for (const auto& r : reports) {
    auto it = std::find_if(out.begin(), out.end(), [&](const MethodSummary& m) {
      return m.scenario == r.scenario && m.method == r.method;
    });
    if (it == out.end()) {
      out.push_back({r.scenario, r.method});
      groups.emplace_back();
      it = out.end() - 1;
    }
    groups[static_cast<std::size_t>(it - out.begin())].push_back(&r);
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    auto& m = out[g];
    const auto& rs = groups[g];
    const double n = static_cast<double>(rs.size());
    m.runs = rs.size();
    std::vector<double> ts;
    for (const auto* r : rs) {
      m.mean_rmse_t += r->rmse_t / n;
      m.mean_rmse_r += r->rmse_r / n;
      m.mean_valid_matches += r->valid_matches / n;
      ts.push_back(r->rmse_t);
    }
    for (const auto* r : rs) {
      m.sd_rmse_t += (r->rmse_t - m.mean_rmse_t) * (r->rmse_t - m.mean_rmse_t);
      m.sd_rmse_r += (r->rmse_r - m.mean_rmse_r) * (r->rmse_r - m.mean_rmse_r);
    }
    m.sd_rmse_t = rs.size() > 1 ? std::sqrt(m.sd_rmse_t / (n - 1.0)) : 0.0;
    m.sd_rmse_r = rs.size() > 1 ? std::sqrt(m.sd_rmse_r / (n - 1.0)) : 0.0;
    m.median_rmse_t = median(ts);
  }
  return out;
}

void write_reports_csv(std::ostream& out, std::span<const RunReport> reports, bool with_runtime) {
  out << "scenario,method,seed,rmse_t,rmse_r,max_t,valid_matches,frames,unmatched,held"
      << (with_runtime ? ",runtime\n" : "\n");
  for (const auto& r : reports) {
    out << fmt::format("{},{},{},{:.9g},{:.9g},{:.9g},{:.6f},{},{},{}", r.scenario, r.method,
                       r.seed, r.rmse_t, r.rmse_r, r.max_t, r.valid_matches, r.frames, r.unmatched,
                       r.held);
    if (with_runtime) out << fmt::format(",{:.6g}", r.runtime);
    out << '\n';
  }
}

void write_summary_csv(std::ostream& out, std::span<const MethodSummary> summary) {
  out << "scenario,method,runs,mean_rmse_t,sd_rmse_t,median_rmse_t,mean_rmse_r,sd_rmse_r,"
         "mean_valid_matches\n";
  for (const auto& m : summary) {
    out << fmt::format("{},{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.6f}\n", m.scenario,
                       m.method, m.runs, m.mean_rmse_t, m.sd_rmse_t, m.median_rmse_t,
                       m.mean_rmse_r, m.sd_rmse_r, m.mean_valid_matches);
  }
}

std::vector<AlCurvePoint> run_al_bench(const AlConfig& cfg, std::span<const std::uint64_t> seeds) {
  cfg.validate();
  std::vector<AlCurvePoint> out;
  for (const auto seed : seeds) {
    const auto pool = make_synthetic_pool(cfg.pool, seed);
    const std::uint64_t one[] = {seed};
    const auto curves = al_loop(pool, cfg, one);
    out.insert(out.end(), curves.begin(), curves.end());
  }
  return out;
}

TdpaReport summarize_session(const SessionConfig& cfg, const SessionTrace& tr) {
  TdpaReport rep;
  rep.seed = cfg.seed;
  rep.pc_enabled = cfg.pc_enabled;
  const double ts = cfg.gains.T_s;
  rep.passivity_margin = passivity_margin(tr, ts);
  rep.min_W = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < tr.W_m.size(); ++k) {
    rep.min_W = std::min({rep.min_W, tr.W_m[k], tr.W_s[k]});
  }
  rep.first_contact = tr.first_contact;
  if (tr.first_contact >= 0) {
    const double t0 = static_cast<double>(tr.first_contact) * ts;
    rep.oscillation_early = force_oscillation(tr, ts, t0, t0 + 1.0);
    rep.oscillation_late = force_oscillation(tr, ts, cfg.duration - 1.0, cfg.duration);
  }
  return rep;
}

std::vector<TdpaReport> run_tdpa_bench(const SessionConfig& cfg,
                                       std::span<const std::uint64_t> seeds) {
  cfg.validate();
  std::vector<TdpaReport> out;
  for (const auto seed : seeds) {
    SessionConfig c = cfg;
    c.seed = seed;
    out.push_back(summarize_session(c, simulate_session(c)));
  }
  return out;
}

void write_tdpa_csv(std::ostream& out, std::span<const TdpaReport> reports) {
  out << "seed,pc_enabled,passivity_margin,min_W,first_contact,oscillation_early,"
         "oscillation_late\n";
  for (const auto& r : reports) {
    out << fmt::format("{},{},{:.9g},{:.9g},{},{:.9g},{:.9g}\n", r.seed, r.pc_enabled ? 1 : 0,
                       r.passivity_margin, r.min_W, r.first_contact, r.oscillation_early,
                       r.oscillation_late);
  }
}

}  // namespace telepresence
