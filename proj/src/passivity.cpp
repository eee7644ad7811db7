#include "telepresence/passivity.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include <fmt/format.h>

#include "telepresence/error.hpp"

namespace telepresence {

using nlohmann::json;

namespace {
void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}
bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }
}  // namespace

void TdpaGains::validate() const {
  require(finite_nonneg(K_ds) && finite_nonneg(K_ps) && finite_nonneg(K_dm),
          "controller gains must be >= 0");
  require(finite_nonneg(G_h) && finite_nonneg(G_s) && finite_nonneg(G_e),
          "scaling factors must be >= 0");
  require(std::isfinite(T_s) && T_s > 0.0, "sampling time must be > 0");
}

void ChannelModel::validate() const {
  require(delay_samples >= 0, "delay must be >= 0 samples");
  require(jitter >= 0, "jitter must be >= 0 samples");
  require(loss_probability >= 0.0 && loss_probability < 1.0, "loss probability must be in [0,1)");
}

void PlantParams::validate() const {
  require(device_mass > 0.0 && slave_mass > 0.0, "masses must be > 0");
  require(finite_nonneg(hand_stiffness) && finite_nonneg(hand_damping) &&
              finite_nonneg(wall_stiffness) && finite_nonneg(wall_damping),
          "plant stiffness and damping must be >= 0");
  require(std::isfinite(wall_position) && finite_nonneg(approach_speed) &&
              finite_nonneg(push_depth),
          "bad wall or reference geometry");
}

void SessionConfig::validate() const {
  gains.validate();
  channel.validate();
  plant.validate();
  require(std::isfinite(duration) && duration > 0.0, "duration must be > 0");
}

Vec2 impedance_force(const Vec2& v_sd, const Vec2& v_s, const Vec2& x_sd, const Vec2& x_s,
                     const TdpaGains& g) {
  return g.K_ds * (v_sd - v_s) + g.K_ps * (x_sd - x_s);
}

double impedance_force(double v_sd, double v_s, double x_sd, double x_s, const TdpaGains& g) {
  return g.K_ds * (v_sd - v_s) + g.K_ps * (x_sd - x_s);
}

Vec2 feedback_force(const Vec2& f_m0, const Vec2& f_me, const Vec2& v_m, const TdpaGains& g) {
  return f_m0 + f_me + g.K_dm * v_m;
}

double quantize_energy(double e) {
  return std::isfinite(e) && std::abs(e) < 0x1p12 ? std::floor(e / kEnergyQuantum) * kEnergyQuantum : e;
}

Observation observe_passivity(const EnergyLedger& ledger, double f, double v, double delayed_E_in,
                              const TdpaGains& g) {
  Observation o;
  o.ledger = ledger;
  const double p = f * v;
  if (p > 0.0) o.ledger.E_in += quantize_energy(g.T_s * p);
  if (p < 0.0) o.ledger.E_out += quantize_energy(g.T_s * -p);
  o.W = delayed_E_in - o.ledger.E_out + o.ledger.E_pc;
  return o;
}

bool pc_active(double y, double W) { return W < 0.0 && y * y >= kPcGuard; }

double passivity_control(double u_delayed, double y, double W, double T_s) {
  if (!pc_active(y, W)) return u_delayed;
  return u_delayed - W / (T_s * y * y) * y;
}

SessionConfig session_config_from_json(const json& j) {
  SessionConfig c;
  try {
    if (j.contains("gains")) {
      const auto& g = j.at("gains");
      c.gains.K_ds = g.value("K_ds", c.gains.K_ds);
      c.gains.K_ps = g.value("K_ps", c.gains.K_ps);
      c.gains.K_dm = g.value("K_dm", c.gains.K_dm);
      c.gains.G_h = g.value("G_h", c.gains.G_h);
      c.gains.G_s = g.value("G_s", c.gains.G_s);
      c.gains.G_e = g.value("G_e", c.gains.G_e);
      c.gains.T_s = g.value("T_s", c.gains.T_s);
    }
    if (j.contains("channel")) {
      const auto& ch = j.at("channel");
      c.channel.delay_samples = ch.value("delay_samples", c.channel.delay_samples);
      c.channel.jitter = ch.value("jitter", c.channel.jitter);
      c.channel.loss_probability = ch.value("loss_probability", c.channel.loss_probability);
    }
    if (j.contains("plant")) {
      const auto& p = j.at("plant");
      c.plant.device_mass = p.value("device_mass", c.plant.device_mass);
      c.plant.hand_stiffness = p.value("hand_stiffness", c.plant.hand_stiffness);
      c.plant.hand_damping = p.value("hand_damping", c.plant.hand_damping);
      c.plant.slave_mass = p.value("slave_mass", c.plant.slave_mass);
      c.plant.wall_position = p.value("wall_position", c.plant.wall_position);
      c.plant.wall_stiffness = p.value("wall_stiffness", c.plant.wall_stiffness);
      c.plant.wall_damping = p.value("wall_damping", c.plant.wall_damping);
      c.plant.approach_speed = p.value("approach_speed", c.plant.approach_speed);
      c.plant.push_depth = p.value("push_depth", c.plant.push_depth);
    }
    c.duration = j.value("duration", c.duration);
    c.seed = j.value("seed", c.seed);
    c.pc_enabled = j.value("pc_enabled", c.pc_enabled);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("session config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const SessionConfig& c) {
  return json{{"gains",
               {{"K_ds", c.gains.K_ds},
                {"K_ps", c.gains.K_ps},
                {"K_dm", c.gains.K_dm},
                {"G_h", c.gains.G_h},
                {"G_s", c.gains.G_s},
                {"G_e", c.gains.G_e},
                {"T_s", c.gains.T_s}}},
              {"channel",
               {{"delay_samples", c.channel.delay_samples},
                {"jitter", c.channel.jitter},
                {"loss_probability", c.channel.loss_probability}}},
              {"plant",
               {{"device_mass", c.plant.device_mass},
                {"hand_stiffness", c.plant.hand_stiffness},
                {"hand_damping", c.plant.hand_damping},
                {"slave_mass", c.plant.slave_mass},
                {"wall_position", c.plant.wall_position},
                {"wall_stiffness", c.plant.wall_stiffness},
                {"wall_damping", c.plant.wall_damping},
                {"approach_speed", c.plant.approach_speed},
                {"push_depth", c.plant.push_depth}}},
              {"duration", c.duration},
              {"seed", c.seed},
              {"pc_enabled", c.pc_enabled}};
}

namespace {

struct DevicePacket {
  double v = 0.0;     // device velocity
  double E_in = 0.0;  // device port input energy up to this sample
};

struct RobotPacket {
  double f = 0.0;  // impedance controller force
  double f_e = 0.0;
  double E_in = 0.0;
};

}  // namespace

SessionTrace simulate_session(const SessionConfig& cfg) {
  cfg.validate();
  const auto& g = cfg.gains;
  const auto& pl = cfg.plant;
  const double ts = g.T_s;
  const long steps = static_cast<long>(std::llround(cfg.duration / ts));

  std::seed_seq seq{cfg.seed, std::uint64_t{0x7d9a}};
  std::uint64_t sub[2];
  seq.generate(sub, sub + 2);
  DelayChannel<DevicePacket> to_robot(cfg.channel, sub[0]);
  DelayChannel<RobotPacket> to_device(cfg.channel, sub[1]);

  double x_m = 0.0, v_m = 0.0;
  double x_s = 0.0, v_s = 0.0;
  double x_sd = 0.0, v_cmd = 0.0;  // setpoint driven by the corrected velocity
  EnergyLedger led_m, led_s;

  SessionTrace tr;
  auto reserve = [&](auto&... vs) { (vs.reserve(steps), ...); };
  reserve(tr.x_m, tr.x_s, tr.v_m, tr.v_s, tr.f_m, tr.f_s, tr.f_e, tr.W_m, tr.W_s, tr.P_m, tr.P_s,
          tr.ledger_m, tr.ledger_s, tr.seq_at_slave, tr.seq_at_master);

  const double x_stop = pl.wall_position + pl.push_depth;
  for (long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * ts;
    const double x_ref = std::min(pl.approach_speed * t, x_stop);
    const double f_h = pl.hand_stiffness * (x_ref - x_m) - pl.hand_damping * v_m;
    const double f_e = x_s > pl.wall_position
                           ? std::max(0.0, pl.wall_stiffness * (x_s - pl.wall_position) +
                                               pl.wall_damping * v_s)
                           : 0.0;
    const double f_s = impedance_force(v_cmd, v_s, x_sd, x_s, g);

    // Signals go out first; energies are filled in once each port knows its
    // own power for this sample.
    const auto h_dev = to_robot.send(k, DevicePacket{v_m, 0.0});
    const auto h_rob = to_device.send(k, RobotPacket{f_s, f_e, 0.0});
    const DevicePacket* at_robot = to_robot.receive(k);
    const RobotPacket* at_device = to_device.receive(k);

    // Device port: u = received force, y = device velocity.
    const double u_m = at_device ? g.G_s * at_device->f : 0.0;
    const double y_m = v_m;
    // Robot port: u = received velocity, y = -f_s.
    const double u_s = at_robot ? g.G_h * at_robot->v : 0.0;
    const double y_s = -f_s;

    // Own input energy goes into this sample's packet before either side
    // reads the delayed value.
    auto obs_m = observe_passivity(led_m, u_m, y_m, 0.0, g);
    auto obs_s = observe_passivity(led_s, u_s, y_s, 0.0, g);
    to_robot.payload(h_dev).E_in = obs_m.ledger.E_in;
    to_device.payload(h_rob).E_in = obs_s.ledger.E_in;
    const double delayed_in_s = at_device ? at_device->E_in : 0.0;
    const double delayed_in_m = at_robot ? at_robot->E_in : 0.0;
    double W_m = delayed_in_s - obs_m.ledger.E_out + obs_m.ledger.E_pc;
    double W_s = delayed_in_m - obs_s.ledger.E_out + obs_s.ledger.E_pc;
    led_m = obs_m.ledger;
    led_s = obs_s.ledger;

    double u_m_c = u_m, u_s_c = u_s;
    if (cfg.pc_enabled) {
      if (pc_active(y_m, W_m)) {
        u_m_c = passivity_control(u_m, y_m, W_m, ts);
        led_m.E_pc += -W_m;
        W_m = 0.0;
      }
      if (pc_active(y_s, W_s)) {
        u_s_c = passivity_control(u_s, y_s, W_s, ts);
        led_s.E_pc += -W_s;
        W_s = 0.0;
      }
    }

    const double f_me = at_device ? g.G_e * at_device->f_e : 0.0;
    const double f_m = feedback_force(Vec2(u_m_c, 0.0), Vec2(f_me, 0.0), Vec2(v_m, 0.0), g).x();

    tr.x_m.push_back(x_m);
    tr.x_s.push_back(x_s);
    tr.v_m.push_back(v_m);
    tr.v_s.push_back(v_s);
    tr.f_m.push_back(f_m);
    tr.f_s.push_back(f_s);
    tr.f_e.push_back(f_e);
    tr.W_m.push_back(W_m);
    tr.W_s.push_back(W_s);
    tr.P_m.push_back(std::abs(u_m * y_m));
    tr.P_s.push_back(std::abs(u_s * y_s));
    tr.ledger_m.push_back(led_m);
    tr.ledger_s.push_back(led_s);
    tr.seq_at_slave.push_back(to_robot.last_sequence());
    tr.seq_at_master.push_back(to_device.last_sequence());
    if (tr.first_contact < 0 && f_e > 0.0) tr.first_contact = k;

    // Semi-implicit Euler on both sides.
    v_m += ts * (f_h - f_m) / pl.device_mass;
    x_m += ts * v_m;
    v_cmd = u_s_c;
    x_sd += ts * v_cmd;
    v_s += ts * (f_s - f_e) / pl.slave_mass;
    x_s += ts * v_s;
    if (!std::isfinite(x_m) || !std::isfinite(x_s)) break;
  }
  return tr;
}

double passivity_margin(const SessionTrace& tr, double T_s) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < tr.W_m.size(); ++k) {
    m = std::min(m, tr.W_m[k] + T_s * tr.P_m[k]);
    m = std::min(m, tr.W_s[k] + T_s * tr.P_s[k]);
  }
  return m;
}

double force_oscillation(const SessionTrace& tr, double T_s, double t0, double t1) {
  const auto n = static_cast<long>(tr.f_e.size());
  const long k0 = std::max(0L, static_cast<long>(std::llround(t0 / T_s)));
  const long k1 = std::min(n, static_cast<long>(std::llround(t1 / T_s)));
  if (k0 >= k1) return 0.0;
  double lo = tr.f_e[k0], hi = lo;
  for (long k = k0; k < k1; ++k) {
    lo = std::min(lo, tr.f_e[k]);
    hi = std::max(hi, tr.f_e[k]);
  }
  return hi - lo;
}

void write_session_csv(std::ostream& out, const SessionTrace& tr) {
  out << "k,x_m,x_s,f_m,f_s,W_m,W_s,E_in,E_out,E_pc\n";
  for (std::size_t k = 0; k < tr.x_m.size(); ++k) {
    const auto& l = tr.ledger_m[k];
    out << fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", k,
                       tr.x_m[k], tr.x_s[k], tr.f_m[k], tr.f_s[k], tr.W_m[k], tr.W_s[k], l.E_in,
                       l.E_out, l.E_pc);
  }
}

}  // namespace telepresence
