#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "telepresence/geometry.hpp"

namespace telepresence {

struct TdpaGains {
  double K_ds = 60.0;    // N s/m, slave damping
  double K_ps = 2000.0;  // N/m, slave stiffness
  double K_dm = 2.0;     // N s/m, device feedforward damping
  double G_h = 1.0;      // velocity scaling device -> robot
  double G_s = 1.0;      // force scaling robot -> device
  double G_e = 0.0;      // measured contact force scaling, outside the PO/PC ports
  double T_s = 0.001;    // s

  void validate() const;
};

/// Running energies of one port. All three only grow.
struct EnergyLedger {
  double E_in = 0.0;
  double E_out = 0.0;
  double E_pc = 0.0;
};

/// f_s = K_ds (v_sd - v_s) + K_ps (x_sd - x_s)
Vec2 impedance_force(const Vec2& v_sd, const Vec2& v_s, const Vec2& x_sd, const Vec2& x_s,
                     const TdpaGains& g);
double impedance_force(double v_sd, double v_s, double x_sd, double x_s, const TdpaGains& g);

/// f_m = f_m0 + f_me + K_dm v_m
Vec2 feedback_force(const Vec2& f_m0, const Vec2& f_me, const Vec2& v_m, const TdpaGains& g);

struct Observation {
  double W = 0.0;
  EnergyLedger ledger;
};

/// Energy increments are floored onto a 2^-40 J grid. Ledger sums then stay
/// exact (below 4096 J), so W = 0 after a correction is exactly zero and both
/// ports of a lossless zero-delay link agree bit for bit.
inline constexpr double kEnergyQuantum = 0x1p-40;
double quantize_energy(double e);

/// One observer sample at a port with received signal u (here `f`) and sent
/// signal y (here `v`). u*y > 0 is energy entering the network, the opposite
/// sign energy leaving it. W = delayed input energy of the other port minus
/// the output energy here plus what the controller already dissipated.
Observation observe_passivity(const EnergyLedger& ledger, double f, double v, double delayed_E_in,
                              const TdpaGains& g);

// Only guards the division itself. Once every earlier deficit was removed,
// -W is at most one sample of output energy T_s |u y|, so the correction
// never exceeds |u| however small y is. A coarser guard lets deficits of
// consecutive slow samples pile up past that one-sample bound.
inline constexpr double kPcGuard = 1e-18;  // on y^2

/// True when the controller acts: W < 0 and y^2 above the guard. With a tiny
/// y the deficit stays in W for the next sample.
bool pc_active(double y, double W);

/// u unchanged if W >= 0, otherwise u - W / (T_s y^2) * y. Applying the
/// corrected value dissipates exactly -W over the sample.
double passivity_control(double u_delayed, double y, double W, double T_s);

struct ChannelModel {
  int delay_samples = 0;
  int jitter = 0;               // uniform in [-jitter, jitter] samples
  double loss_probability = 0.0;

  void validate() const;
};

/// Sample-synchronous lossy link. Receivers take the newest packet that has
/// arrived and is not older than the last one delivered; on loss or late
/// arrival the previous value is held.
template <typename Payload>
class DelayChannel {
 public:
  DelayChannel(ChannelModel model, std::uint64_t seed) : model_(model), rng_(seed) {}

  /// Enqueue the packet for sample k. Returns its index for later payload
  /// edits within the same sample.
  std::size_t send(long k, const Payload& p) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const bool lost = model_.loss_probability > 0.0 && u01(rng_) < model_.loss_probability;
    long arrival = k + model_.delay_samples;
    if (model_.jitter > 0) {
      std::uniform_int_distribution<int> jit(-model_.jitter, model_.jitter);
      arrival += jit(rng_);
    }
    arrival = std::max(arrival, k);
    packets_.push_back({k, arrival, lost, p});
    return packets_.size() - 1 + dropped_;
  }

  Payload& payload(std::size_t handle) { return packets_.at(handle - dropped_).payload; }

  /// Payload delivered at sample k, or null if nothing has arrived yet. The
  /// pointer stays valid until the next receive, so payload edits made later
  /// in the same sample are visible through it.
  const Payload* receive(long k) {
    for (std::size_t i = 0; i < packets_.size(); ++i) {
      const auto& pk = packets_[i];
      if (pk.lost || pk.arrival > k || pk.seq <= last_seq_) continue;
      last_seq_ = pk.seq;
    }
    while (!packets_.empty() && packets_.front().seq < last_seq_) {
      packets_.pop_front();
      ++dropped_;
    }
    if (last_seq_ < 0) return nullptr;
    for (const auto& pk : packets_) {
      if (pk.seq == last_seq_) return &pk.payload;
    }
    return nullptr;
  }

  long last_sequence() const { return last_seq_; }

 private:
  struct Packet {
    long seq;
    long arrival;
    bool lost;
    Payload payload;
  };
  ChannelModel model_;
  std::mt19937_64 rng_;
  std::deque<Packet> packets_;
  std::size_t dropped_ = 0;
  long last_seq_ = -1;
};

/// Haptic device held by a spring-damper hand that tracks a reference
/// position; remote mass touching a unilateral wall.
struct PlantParams {
  double device_mass = 1.0;       // kg
  double hand_stiffness = 1200.0;  // N/m, a firm grip
  double hand_damping = 30.0;      // N s/m
  double slave_mass = 1.0;        // kg
  double wall_position = 0.02;    // m
  double wall_stiffness = 20000.0;  // N/m
  double wall_damping = 10.0;       // N s/m
  double approach_speed = 0.02;    // m/s of the hand reference
  double push_depth = 0.02;        // m past the wall where the reference stops

  void validate() const;
};

struct SessionConfig {
  TdpaGains gains;
  ChannelModel channel;
  PlantParams plant;
  double duration = 5.0;  // s
  std::uint64_t seed = 0;
  bool pc_enabled = true;

  void validate() const;
};

SessionConfig session_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SessionConfig& cfg);

struct SessionTrace {
  std::vector<double> x_m, x_s, v_m, v_s;
  std::vector<double> f_m, f_s, f_e;  // f_m is the corrected device-side port force
  std::vector<double> W_m, W_s;       // after the controller acted
  std::vector<double> P_m, P_s;       // |u y| at each port (W)
  std::vector<EnergyLedger> ledger_m, ledger_s;
  std::vector<long> seq_at_slave, seq_at_master;
  long first_contact = -1;
};

/// Fixed-step loop with both sides stepped by one scheduler. Deterministic
/// for a given config.
SessionTrace simulate_session(const SessionConfig& cfg);

/// min over k of W(k) + T_s |u(k) y(k)| at both ports; >= 0 means the
/// passivity bound held throughout.
double passivity_margin(const SessionTrace& trace, double T_s);

/// Peak-to-peak of the contact force over [t0, t1).
double force_oscillation(const SessionTrace& trace, double T_s, double t0, double t1);

void write_session_csv(std::ostream& out, const SessionTrace& trace);

}  // namespace telepresence
