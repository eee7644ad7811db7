// telebench: scenario simulation and benchmark runs for the telepresence
// estimators. Exit codes: 0 ok, 1 runtime failure, 2 bad configuration,
// 3 an --assert threshold failed.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "telepresence/bench.hpp"
#include "telepresence/error.hpp"

using namespace telepresence;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kConfigError = 2;
constexpr int kAssertFailed = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config '{}': {}", path, e.what()));
  }
}

std::vector<std::uint64_t> seed_list(int count, std::uint64_t first) {
  if (count < 1) throw ConfigError("--seeds must be >= 1");
  std::vector<std::uint64_t> s;
  for (int i = 0; i < count; ++i) s.push_back(first + static_cast<std::uint64_t>(i));
  return s;
}

// Writes to the --out file, or stdout when none was given.
template <typename F>
void emit(const std::string& path, F&& write) {
  if (path.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  write(out);
}

Scenario load_scenario(const std::string& name, const std::string& config) {
  json j = config.empty() ? json::object() : load_json(config);
  if (!name.empty()) j["name"] = name;
  if (!j.contains("name")) j["name"] = "nominal";
  return scenario_from_json(j);
}

void print_summary(const std::vector<MethodSummary>& summary) {
  for (const auto& m : summary) {
    std::cerr << fmt::format("{:<20} {:<9} rmse_t {:.4g} +- {:.2g} (median {:.4g})  rmse_r {:.4g}  "
                             "valid_matches {:.1f}\n",
                             m.scenario, m.method, m.mean_rmse_t, m.sd_rmse_t, m.median_rmse_t,
                             m.mean_rmse_r, m.mean_valid_matches);
  }
}

const MethodSummary* find_method(const std::vector<MethodSummary>& s, const std::string& m) {
  for (const auto& x : s) {
    if (x.method == m) return &x;
  }
  return nullptr;
}

bool check(bool ok, const std::string& what) {
  std::cerr << (ok ? "PASS " : "FAIL ") << what << '\n';
  return ok;
}

struct Common {
  std::string scenario;
  std::string config;
  std::string out;
  int seeds = 1;
  std::uint64_t first_seed = 0;
  bool assert_ = false;
  bool timing = false;
  std::vector<std::string> methods;
};

void add_common(CLI::App* app, Common& c, bool with_scenario) {
  if (with_scenario) app->add_option("--scenario", c.scenario, "scenario preset name");
  app->add_option("--config", c.config, "JSON configuration file");
  app->add_option("--out", c.out, "CSV output path (default stdout)");
  app->add_option("--seeds", c.seeds, "number of seeds")->check(CLI::PositiveNumber);
  app->add_option("--first-seed", c.first_seed, "first seed");
  app->add_flag("--assert", c.assert_, "exit 3 when the acceptance thresholds fail");
}

int marker_bench(const Common& c, double max_rmse_t, double delay) {
  auto s = load_scenario(c.scenario, c.config);
  if (!std::isnan(delay)) {
    if (!(delay >= 0.0)) throw ConfigError("--delay must be >= 0");
    s.tracker_delay = delay;
  }
  const auto methods = c.methods.empty() ? marker_methods() : c.methods;
  const auto reports = run_marker_bench(s, methods, seed_list(c.seeds, c.first_seed));
  emit(c.out, [&](std::ostream& o) { write_reports_csv(o, reports, c.timing); });
  const auto summary = summarize(reports);
  print_summary(summary);
  if (!c.assert_) return 0;
  bool ok = true;
  const auto* proposed = find_method(summary, "proposed");
  if (!proposed) throw ConfigError("--assert needs the proposed method");
  ok &= check(proposed->mean_rmse_t <= max_rmse_t,
              fmt::format("proposed rmse_t {:.3g} <= {:.3g}", proposed->mean_rmse_t, max_rmse_t));
  // The proposed tracker keeps an estimate whenever a baseline has one.
  std::map<std::uint64_t, std::size_t> proposed_missing;
  for (const auto& r : reports) {
    if (r.method == "proposed") proposed_missing[r.seed] = r.unmatched + r.held;
  }
  for (const auto& r : reports) {
    if (r.method == "proposed") continue;
    ok &= check(proposed_missing[r.seed] <= r.unmatched + r.held,
                fmt::format("seed {} proposed misses no more frames than {}", r.seed, r.method));
  }
  return ok ? 0 : kAssertFailed;
}

int lidar_bench(const Common& c) {
  const auto s = load_scenario(c.scenario, c.config);
  const auto methods = c.methods.empty() ? lidar_methods() : c.methods;
  const auto reports = run_lidar_bench(s, methods, seed_list(c.seeds, c.first_seed));
  emit(c.out, [&](std::ostream& o) { write_reports_csv(o, reports, c.timing); });
  const auto summary = summarize(reports);
  print_summary(summary);
  if (!c.assert_) return 0;
  bool ok = true;
  // Median translation RMSE must not grow as components are added.
  const std::vector<std::string> chain{"all", "comb", "backend", "odom"};
  const MethodSummary* prev = nullptr;
  for (const auto& m : chain) {
    const auto* cur = find_method(summary, m);
    if (!cur) continue;
    if (prev) {
      ok &= check(prev->median_rmse_t <= cur->median_rmse_t,
                  fmt::format("median rmse_t {} {:.4g} <= {} {:.4g}", prev->method,
                              prev->median_rmse_t, cur->method, cur->median_rmse_t));
    }
    prev = cur;
  }
  const auto* all = find_method(summary, "all");
  const auto* picp = find_method(summary, "pICP");
  if (all && picp) {
    ok &= check(all->mean_valid_matches > picp->mean_valid_matches,
                fmt::format("valid matches all {:.1f} > pICP {:.1f}", all->mean_valid_matches,
                            picp->mean_valid_matches));
  }
  return ok ? 0 : kAssertFailed;
}

int al_bench(const Common& c) {
  const AlConfig cfg = c.config.empty() ? AlConfig{} : al_config_from_json(load_json(c.config));
  const auto curves = run_al_bench(cfg, seed_list(c.seeds, c.first_seed));
  emit(c.out, [&](std::ostream& o) { write_curves_csv(o, curves); });

  // Seed-mean curves per strategy.
  std::map<std::string, std::map<int, std::pair<double, double>>> mean;  // metric, fraction
  for (const auto& p : curves) {
    auto& e = mean[p.strategy][p.step];
    e.first += p.metric / c.seeds;
    e.second = p.fraction_labeled;
  }
  double full = 0.0;
  for (const auto seed : seed_list(c.seeds, c.first_seed)) {
    const auto pool = make_synthetic_pool(cfg.pool, seed);
    std::vector<Vec2> all;
    for (const auto& smp : pool.pool) all.push_back(smp.latent);
    full += test_metric(pool, all, cfg) / c.seeds;
  }
  auto needed = [&](const std::string& strategy) {
    for (const auto& [step, e] : mean[strategy]) {
      if (e.first >= 0.95 * full) return e.second;
    }
    return std::numeric_limits<double>::infinity();
  };
  const double f_ent = needed("entropy"), f_rnd = needed("random");
  std::cerr << fmt::format("full-data metric {:.4f}; 95% reached at {:.3f} (entropy), {:.3f} (random)\n",
                           full, f_ent, f_rnd);
  if (!c.assert_) return 0;
  bool ok = check(f_ent <= 0.5 * f_rnd, "entropy needs <= half the labels of random");
  bool dominates = true;
  for (const auto& [step, e] : mean["entropy"]) {
    if (step >= 1 && e.first < mean["random"][step].first) dominates = false;
  }
  ok &= check(dominates, "entropy curve >= random curve after the first step");
  return ok ? 0 : kAssertFailed;
}

int tdpa_bench(const Common& c, bool pc_off) {
  SessionConfig cfg = c.config.empty() ? SessionConfig{} : session_config_from_json(load_json(c.config));
  if (pc_off) cfg.pc_enabled = false;
  const auto reports = run_tdpa_bench(cfg, seed_list(c.seeds, c.first_seed));
  emit(c.out, [&](std::ostream& o) { write_tdpa_csv(o, reports); });
  for (const auto& r : reports) {
    std::cerr << fmt::format("seed {} pc {} margin {:.3g} min W {:.3g} oscillation {:.3g} -> {:.3g} N\n",
                             r.seed, r.pc_enabled, r.passivity_margin, r.min_W,
                             r.oscillation_early, r.oscillation_late);
  }
  if (!c.assert_) return 0;
  bool ok = true;
  for (const auto& r : reports) {
    if (r.pc_enabled) {
      ok &= check(r.passivity_margin >= 0.0, fmt::format("seed {} passivity bound held", r.seed));
    } else {
      ok &= check(r.min_W < 0.0 && r.oscillation_late >= 2.0 * r.oscillation_early,
                  fmt::format("seed {} W < 0 and oscillation grows >= 2x", r.seed));
    }
  }
  return ok ? 0 : kAssertFailed;
}

int simulate(const Common& c, const std::string& dir) {
  const auto s = load_scenario(c.scenario, c.config);
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream o(fs::path(dir) / name);
    if (!o) throw Error(ErrorCode::IoError, "cannot write into '" + dir + "'");
    return o;
  };
  {
    auto o = open("scenario.json");
    o << to_json(s).dump(2) << '\n';
  }

  const auto mw = default_marker_world();
  const auto mseq = simulate_marker_sequence(s, mw);
  // Sensor stream in time order; markers before SLAM at equal stamps.
  std::vector<std::pair<double, SensorRecord>> recs;
  for (const auto& f : mseq.frames) {
    for (const auto& ob : f.observations) recs.emplace_back(f.time, ob);
  }
  for (const auto& sl : mseq.slam) recs.emplace_back(sl.timestamp, sl);
  std::stable_sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second.index() < b.second.index();
  });
  std::vector<SensorRecord> stream;
  for (auto& r : recs) stream.push_back(std::move(r.second));
  {
    auto o = open("sensors.jsonl");
    write_sensor_stream(o, stream);
  }
  {
    auto o = open("marker_truth.jsonl");
    write_ground_truth(o, mseq.truth);
  }

  const auto lw = default_lidar_world();
  const auto lseq = simulate_lidar_sequence(s, lw);
  fs::create_directories(fs::path(dir) / "scans");
  auto dets = open("detections.jsonl");
  for (std::size_t k = 0; k < lseq.scans.size(); ++k) {
    write_pcb_file((fs::path(dir) / "scans" / fmt::format("{:05d}.pcb", k)).string(),
                   lseq.scans[k]);
    json boxes = json::array();
    for (const auto& b : lseq.detections[k]) boxes.push_back(to_json(b));
    dets << json{{"time", lseq.times[k]}, {"scan", fmt::format("scans/{:05d}.pcb", k)},
                 {"detections", boxes}}
                .dump()
         << '\n';
  }
  {
    auto o = open("lidar_truth.jsonl");
    write_ground_truth(o, lseq.truth);
  }
  std::cerr << fmt::format("{}: {} camera frames, {} SLAM samples, {} scans -> {}\n", s.name,
                           mseq.frames.size(), mseq.slam.size(), lseq.scans.size(), dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"telepresence estimator benchmarks"};
  app.require_subcommand(1);

  Common c;
  double max_rmse_t = std::numeric_limits<double>::infinity();
  double delay = std::numeric_limits<double>::quiet_NaN();
  bool pc_off = false;
  std::string sim_dir = "sim_out";

  auto* mb = app.add_subcommand("marker-bench", "marker tracker against its baselines");
  add_common(mb, c, true);
  mb->add_option("--methods", c.methods, "proposed, ap3, art");
  mb->add_option("--max-rmse-t", max_rmse_t, "--assert bound on the proposed rmse_t (m)");
  mb->add_option("--delay", delay, "tracker latency t_d in seconds, overrides the scenario");
  mb->add_flag("--timing", c.timing, "add the runtime column");

  auto* lb = app.add_subcommand("lidar-bench", "LiDAR object-pose pipeline ablations");
  add_common(lb, c, true);
  lb->add_option("--methods", c.methods, "odom, backend, comb, all, pICP");
  lb->add_flag("--timing", c.timing, "add the runtime column");

  auto* ab = app.add_subcommand("al-bench", "active learning against random selection");
  add_common(ab, c, false);

  auto* tb = app.add_subcommand("tdpa-bench", "bilateral teleoperation session");
  add_common(tb, c, false);
  tb->add_flag("--no-pc", pc_off, "disable the passivity controllers");

  auto* sim = app.add_subcommand("simulate", "write the sensor streams of a scenario");
  add_common(sim, c, true);
  sim->add_option("--dir", sim_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (mb->parsed()) return marker_bench(c, max_rmse_t, delay);
    if (lb->parsed()) return lidar_bench(c);
    if (ab->parsed()) return al_bench(c);
    if (tb->parsed()) return tdpa_bench(c, pc_off);
    if (sim->parsed()) {
      if (!c.out.empty()) sim_dir = c.out;
      return simulate(c, sim_dir);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const Error& e) {
    const auto code = e.code();
    const bool config = code == ErrorCode::InvalidArgument || code == ErrorCode::ParseError ||
                        code == ErrorCode::UnknownMethod;
    std::cerr << (config ? "config error: " : "error: ") << e.what() << '\n';
    return config ? kConfigError : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
