#pragma once

// Synthetic well histories from a "true" choke physics that can deviate from
// the mechanistic model in switchable ways:
//
//   area curve   C_D * A_max * u^n               (n = 1 is the mechanistic line)
//   gas Z        Z_corr(p1, T1) * (1 + s (p1 - p_ref) / p_ref)
//   liquids      rho(T1) = rho * (1 - beta (T1 - T_ref))
//
// Reservoir pressure declines linearly; with a positive productivity index the
// wellhead pressure p1 follows from balancing inflow PI (p_res - p1) against the
// choke mass flow, which couples p1 to the choke opening.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "vfm/choke.hpp"
#include "vfm/pipeline.hpp"
#include "vfm/random.hpp"
#include "vfm/text.hpp"

namespace vfm {

enum class Schedule { constant, steps, rate_hold };

inline std::string_view schedule_name(Schedule s) {
  switch (s) {
    case Schedule::constant: return "constant";
    case Schedule::steps: return "steps";
    case Schedule::rate_hold: return "rate_hold";
  }
  return "?";
}

inline Schedule parse_schedule(std::string_view s) {
  for (auto v : {Schedule::constant, Schedule::steps, Schedule::rate_hold}) {
    if (schedule_name(v) == s) return v;
  }
  throw ConfigError("unknown schedule '" + std::string(s) + "'; valid: constant, steps, rate_hold");
}

struct ControllerConfig {
  double setpoint = 0.0;  // q_O target, m3/s; 0 holds the first sample's rate
  double band = 0.05;     // relative dead band
  double gain = 0.2;      // u step per unit relative error
};

// Proportional step on u outside the dead band, clamped to [0, 1].
inline double rate_hold_controller(const ControllerConfig& c, double u, double q_o) {
  if (!(c.setpoint > 0)) throw ContractError("rate_hold_controller: setpoint must be positive");
  const double err = (c.setpoint - q_o) / c.setpoint;
  if (std::abs(err) <= c.band) return u;
  return std::clamp(u + c.gain * err, 0.0, 1.0);
}

struct WellScenario {
  std::string name = "well";
  std::uint64_t seed = 0;
  Timestamp start = 1577836800;  // 2020-01-01T00:00:00Z
  Timestamp sample_interval = 6 * 3600;
  double duration_days = 730.0;

  PhysicalParameters<> truth{};

  // true-physics deviations; the defaults reproduce the mechanistic model
  double area_exponent = 1.0;
  double z_slope = 0.0;
  double z_reference_pressure = 60e5;
  double liquid_expansion = 0.0;  // 1/K
  double t_reference = 330.0;

  // reservoir and wellbore
  double reservoir_pressure = 90e5;
  double decline = 0.0;       // Pa/day
  double productivity = 0.0;  // kg/s per Pa; 0 sets p1 to the reservoir pressure

  // boundary conditions
  double p2 = 20e5;
  double p2_amplitude = 2e5;
  double p2_period_days = 23.0;
  double t1 = 330.0;
  double t1_amplitude = 5.0;
  double t1_period_days = 365.0;
  double t_drop = 4.0;

  // composition (mass fractions)
  double eta_g = 0.06;
  double eta_g_amplitude = 0.01;
  double eta_g_period_days = 120.0;
  double eta_w = 0.15;
  double eta_w_trend = 0.0;  // per day

  // choke operation
  Schedule schedule = Schedule::steps;
  double u = 0.5;
  double u_min = 0.2;
  double u_max = 0.9;
  double step_days = 5.0;
  ControllerConfig controller{};

  // measurement noise as MAPE per channel
  double noise_flow = 0.0;
  double noise_pressure = 0.0;
  double noise_temperature = 0.0;

  void validate() const {
    truth.validate();
    if (sample_interval <= 0) throw ConfigError("sample_interval_s must be positive");
    if (!(duration_days > 0)) throw ConfigError("duration_days must be positive");
    if (!(area_exponent > 0)) throw ConfigError("area_exponent must be positive");
    if (!(z_reference_pressure > 0)) throw ConfigError("z_reference_pressure must be positive");
    if (!(reservoir_pressure > 0)) throw ConfigError("reservoir_pressure must be positive");
    if (!(decline >= 0)) throw ConfigError("decline must be nonnegative");
    if (!(productivity >= 0)) throw ConfigError("productivity must be nonnegative");
    if (!(p2 > 0 && p2_amplitude >= 0 && p2_amplitude < p2)) throw ConfigError("p2 must stay positive");
    if (!(p2_period_days > 0 && t1_period_days > 0 && eta_g_period_days > 0)) {
      throw ConfigError("periods must be positive");
    }
    if (!(t1 > 0 && t1_amplitude >= 0 && t1 - t1_amplitude - t_drop > 0)) throw ConfigError("temperatures must stay positive");
    if (!(eta_g >= eta_g_amplitude && eta_g_amplitude >= 0 && eta_w >= 0 && eta_g + eta_g_amplitude + eta_w < 1)) {
      throw ConfigError("mass fractions must stay within [0, 1]");
    }
    if (!(u >= 0 && u <= 1 && u_min >= 0 && u_max <= 1 && u_min <= u_max)) {
      throw ConfigError("choke openings must lie in [0, 1] with u_min <= u_max");
    }
    if (schedule == Schedule::steps && !(step_days > 0)) throw ConfigError("step_days must be positive");
    if (!(controller.setpoint >= 0 && controller.band >= 0 && controller.gain >= 0)) {
      throw ConfigError("controller settings must be nonnegative");
    }
    if (!(noise_flow >= 0 && noise_pressure >= 0 && noise_temperature >= 0)) {
      throw ConfigError("noise MAPE must be nonnegative");
    }
  }
};

inline constexpr std::array<std::string_view, 43> kScenarioKeys{
    "name", "seed", "start", "sample_interval_s", "duration_days", "rho_o", "rho_w", "kappa", "m_g", "p_rc",
    "c_d", "a_max", "area_exponent", "z_slope", "z_reference_pressure", "liquid_expansion", "t_reference",
    "reservoir_pressure", "decline_pa_per_day", "productivity", "p2", "p2_amplitude", "p2_period_days", "t1",
    "t1_amplitude", "t1_period_days", "t_drop", "eta_g", "eta_g_amplitude", "eta_g_period_days", "eta_w",
    "eta_w_trend_per_day", "schedule", "u", "u_min", "u_max", "step_days", "setpoint", "band", "gain",
    "noise_flow", "noise_pressure", "noise_temperature"};

inline WellScenario scenario_from_config(const KeyValueConfig& c, const std::string& origin = "scenario") {
  WellScenario s;
  s.name = c.get_string("name", s.name);
  s.seed = c.get_integer<std::uint64_t>("seed", s.seed);
  if (const auto t = c.get_string("start")) {
    const auto ts = parse_iso8601(*t);
    if (!ts) throw ConfigError("key 'start': not an ISO-8601 timestamp: '" + *t + "'");
    s.start = *ts;
  }
  s.sample_interval = c.get_integer<Timestamp>("sample_interval_s", s.sample_interval);
  s.duration_days = c.get_double("duration_days", s.duration_days);
  s.truth.rho_o = c.get_double("rho_o", s.truth.rho_o);
  s.truth.rho_w = c.get_double("rho_w", s.truth.rho_w);
  s.truth.kappa = c.get_double("kappa", s.truth.kappa);
  s.truth.m_g = c.get_double("m_g", s.truth.m_g);
  s.truth.p_rc = c.get_double("p_rc", s.truth.p_rc);
  s.truth.c_d = c.get_double("c_d", s.truth.c_d);
  s.truth.constants.a_max = c.get_double("a_max", s.truth.constants.a_max);
  s.area_exponent = c.get_double("area_exponent", s.area_exponent);
  s.z_slope = c.get_double("z_slope", s.z_slope);
  s.z_reference_pressure = c.get_double("z_reference_pressure", s.z_reference_pressure);
  s.liquid_expansion = c.get_double("liquid_expansion", s.liquid_expansion);
  s.t_reference = c.get_double("t_reference", s.t_reference);
  s.reservoir_pressure = c.get_double("reservoir_pressure", s.reservoir_pressure);
  s.decline = c.get_double("decline_pa_per_day", s.decline);
  s.productivity = c.get_double("productivity", s.productivity);
  s.p2 = c.get_double("p2", s.p2);
  s.p2_amplitude = c.get_double("p2_amplitude", s.p2_amplitude);
  s.p2_period_days = c.get_double("p2_period_days", s.p2_period_days);
  s.t1 = c.get_double("t1", s.t1);
  s.t1_amplitude = c.get_double("t1_amplitude", s.t1_amplitude);
  s.t1_period_days = c.get_double("t1_period_days", s.t1_period_days);
  s.t_drop = c.get_double("t_drop", s.t_drop);
  s.eta_g = c.get_double("eta_g", s.eta_g);
  s.eta_g_amplitude = c.get_double("eta_g_amplitude", s.eta_g_amplitude);
  s.eta_g_period_days = c.get_double("eta_g_period_days", s.eta_g_period_days);
  s.eta_w = c.get_double("eta_w", s.eta_w);
  s.eta_w_trend = c.get_double("eta_w_trend_per_day", s.eta_w_trend);
  if (const auto sc = c.get_string("schedule")) s.schedule = parse_schedule(*sc);
  s.u = c.get_double("u", s.u);
  s.u_min = c.get_double("u_min", s.u_min);
  s.u_max = c.get_double("u_max", s.u_max);
  s.step_days = c.get_double("step_days", s.step_days);
  s.controller.setpoint = c.get_double("setpoint", s.controller.setpoint);
  s.controller.band = c.get_double("band", s.controller.band);
  s.controller.gain = c.get_double("gain", s.controller.gain);
  s.noise_flow = c.get_double("noise_flow", s.noise_flow);
  s.noise_pressure = c.get_double("noise_pressure", s.noise_pressure);
  s.noise_temperature = c.get_double("noise_temperature", s.noise_temperature);
  c.require_all_used(origin);
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return s;
}

inline WellScenario load_scenario(const std::string& path) {
  return scenario_from_config(KeyValueConfig::load(path), path);
}

// --- true physics ------------------------------------------------------------------

inline double true_z_factor(const WellScenario& s, double p1, double t1) {
  const double z = z_factor_for_molar_mass(p1, t1, s.truth.m_g) *
                   (1.0 + s.z_slope * (p1 - s.z_reference_pressure) / s.z_reference_pressure);
  if (!(z > 0)) throw DomainError("true Z factor is not positive at p1 = " + format_double(p1));
  return z;
}

inline PhysicalParameters<> true_parameters_at(const WellScenario& s, double t1) {
  PhysicalParameters<> phi = s.truth;
  phi.rho_o *= 1.0 - s.liquid_expansion * (t1 - s.t_reference);
  phi.rho_w *= 1.0 - s.liquid_expansion * (t1 - s.t_reference);
  return phi;
}

inline double true_area(const WellScenario& s, double u) {
  return s.truth.c_d * s.truth.constants.a_max * std::pow(u, s.area_exponent);
}

// Mass flow and oil rate from the true physics at x (fractions taken from x).
inline ChokeFlowResult true_choke_flow(const WellScenario& s, const OperatingPoint& x) {
  const auto phi = true_parameters_at(s, x.t1);
  Substitutions<double> sub;
  sub.area_term = true_area(s, x.u);
  sub.rho_g1 = gas_density_upstream(x.p1, x.t1, phi.m_g, true_z_factor(s, x.p1, x.t1), phi.constants.gas_constant);
  return choke_flow(x, phi, sub);
}

// --- simulation ----------------------------------------------------------------------

struct SyntheticWell {
  std::vector<OperatingPoint> measured;  // noisy channels, fractions not set
  std::vector<OperatingPoint> truth;     // noiseless, with the true fractions
  std::vector<double> reservoir_pressure;

  Series series() const {
    Series s;
    s.points = measured;
    for (std::size_t i = 0; i < measured.size(); ++i) s.rows.push_back(i + 1);
    return s;
  }
};

namespace detail {

inline double periodic(double mean, double amplitude, double days, double period) {
  return mean + amplitude * std::sin(2.0 * std::numbers::pi * days / period);
}

// Wellhead pressure balancing reservoir inflow and choke outflow.
inline double coupled_upstream_pressure(const WellScenario& s, OperatingPoint x, double p_res) {
  if (s.productivity == 0.0 || x.u == 0.0 || p_res <= x.p2) return p_res;
  auto imbalance = [&](double p1) {
    x.p1 = p1;
    return true_choke_flow(s, x).m_dot - s.productivity * (p_res - p1);
  };
  double lo = x.p2, hi = p_res;
  for (int it = 0; it < 200 && hi - lo > 1e-9 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (imbalance(mid) > 0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

inline double noisy(double v, double mape, std::mt19937_64& rng) {
  if (mape == 0.0) return v;
  const double sigma = std::sqrt(std::numbers::pi / 2.0) * mape;
  return v * (1.0 + sigma * truncated_normal(rng));
}

}  // namespace detail

inline SyntheticWell simulate(const WellScenario& s) {
  s.validate();
  const auto n = static_cast<std::size_t>(std::floor(s.duration_days * kSecondsPerDay / static_cast<double>(s.sample_interval))) + 1;
  std::mt19937_64 schedule_rng(derive_seed(s.seed, 0));
  std::mt19937_64 noise_rng(derive_seed(s.seed, 1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto& c = s.truth.constants;
  SyntheticWell w;
  w.measured.reserve(n);
  w.truth.reserve(n);
  double u = s.u;
  double next_step = 0.0;
  ControllerConfig ctl = s.controller;
  for (std::size_t i = 0; i < n; ++i) {
    const Timestamp dt = static_cast<Timestamp>(i) * s.sample_interval;
    const double days = static_cast<double>(dt) / kSecondsPerDay;
    if (s.schedule == Schedule::steps && days >= next_step) {
      u = s.u_min + (s.u_max - s.u_min) * unit(schedule_rng);
      next_step += s.step_days;
    }
    OperatingPoint x;
    x.timestamp = s.start + dt;
    x.u = u;
    x.p2 = detail::periodic(s.p2, s.p2_amplitude, days, s.p2_period_days);
    x.t1 = detail::periodic(s.t1, s.t1_amplitude, days, s.t1_period_days);
    x.t2 = x.t1 - s.t_drop;
    const double g = detail::periodic(s.eta_g, s.eta_g_amplitude, days, s.eta_g_period_days);
    const double wtr = std::clamp(s.eta_w + s.eta_w_trend * days, 0.0, 1.0 - g);
    x.set_fractions({g, 1.0 - g - wtr, wtr});
    const double p_res = s.reservoir_pressure - s.decline * days;
    x.p1 = detail::coupled_upstream_pressure(s, x, p_res);
    if (x.p1 > x.p2 && x.u > 0) {
      const double m_dot = true_choke_flow(s, x).m_dot;
      x.q_o = x.eta_o * m_dot / c.rho_o_sc;
      x.q_g = x.eta_g * m_dot / c.rho_g_sc;
      x.q_w = x.eta_w * m_dot / c.rho_w_sc;
    }
    w.truth.push_back(x);
    w.reservoir_pressure.push_back(p_res);

    OperatingPoint m = x;
    m.set_fractions({0.0, 0.0, 0.0});
    m.p1 = detail::noisy(x.p1, s.noise_pressure, noise_rng);
    m.p2 = detail::noisy(x.p2, s.noise_pressure, noise_rng);
    m.t1 = detail::noisy(x.t1, s.noise_temperature, noise_rng);
    m.t2 = detail::noisy(x.t2, s.noise_temperature, noise_rng);
    m.q_o = detail::noisy(x.q_o, s.noise_flow, noise_rng);
    m.q_g = detail::noisy(x.q_g, s.noise_flow, noise_rng);
    m.q_w = detail::noisy(x.q_w, s.noise_flow, noise_rng);
    w.measured.push_back(m);

    if (s.schedule == Schedule::rate_hold) {
      if (ctl.setpoint == 0.0) ctl.setpoint = x.q_o;
      if (ctl.setpoint > 0) u = rate_hold_controller(ctl, u, x.q_o);
    }
  }
  return w;
}

}  // namespace vfm
