#include <gtest/gtest.h>

#include "vfm/estimation.hpp"
#include "vfm/synthetic.hpp"

using namespace vfm;

namespace {

WellScenario quiet() {
  WellScenario s;
  s.schedule = Schedule::constant;
  s.p2_amplitude = 0;
  s.t1_amplitude = 0;
  s.eta_g_amplitude = 0;
  s.duration_days = 10;
  return s;
}

}  // namespace

TEST(Controller, Steps) {
  const ControllerConfig c{0.02, 0.05, 0.2};
  EXPECT_NEAR(rate_hold_controller(c, 0.5, 0.015), 0.5 + 0.2 * 0.25, 1e-15);
  EXPECT_NEAR(rate_hold_controller(c, 0.5, 0.025), 0.5 - 0.2 * 0.25, 1e-15);
  EXPECT_EQ(rate_hold_controller(c, 0.5, 0.0205), 0.5);
  EXPECT_EQ(rate_hold_controller(c, 1.0, 0.001), 1.0);
  EXPECT_EQ(rate_hold_controller(c, 0.0, 1.0), 0.0);
}

TEST(TruePhysics, DefaultsReproduceMechanisticModel) {
  const WellScenario s;
  OperatingPoint x;
  x.p1 = 70e5;
  x.p2 = 25e5;
  x.t1 = 335;
  x.t2 = 330;
  x.set_fractions({0.07, 0.7, 0.23});
  for (double u : {0.1, 0.4, 0.9}) {
    x.u = u;
    const double mm = choke_flow(x, s.truth).m_dot;
    EXPECT_NEAR(true_choke_flow(s, x).m_dot, mm, 1e-12 * mm);
  }
}

TEST(TruePhysics, AreaCurveDeviation) {
  WellScenario s;
  s.area_exponent = 2.0;
  OperatingPoint x;
  x.p1 = 70e5;
  x.p2 = 25e5;
  x.t1 = 335;
  x.t2 = 330;
  x.set_fractions({0.07, 0.7, 0.23});
  for (double u : {0.2, 0.5, 1.0}) {
    x.u = u;
    EXPECT_NEAR(true_choke_flow(s, x).m_dot / choke_flow(x, s.truth).m_dot, u, 1e-12);
  }
}

TEST(TruePhysics, ZAndLiquidDeviations) {
  WellScenario s;
  s.z_slope = 0.2;
  EXPECT_NEAR(true_z_factor(s, 90e5, 330) / z_factor_for_molar_mass(90e5, 330.0, s.truth.m_g), 1.1, 1e-12);
  EXPECT_NEAR(true_z_factor(s, 60e5, 330) / z_factor_for_molar_mass(60e5, 330.0, s.truth.m_g), 1.0, 1e-15);
  s.liquid_expansion = 1e-3;
  EXPECT_NEAR(true_parameters_at(s, 340).rho_o, s.truth.rho_o * 0.99, 1e-9);
}

TEST(Simulate, QuietScenarioIsConstant) {
  const auto w = simulate(quiet());
  ASSERT_EQ(w.measured.size(), 41u);
  for (const auto& x : w.measured) {
    EXPECT_EQ(x.p1, w.measured[0].p1);
    EXPECT_EQ(x.u, w.measured[0].u);
    EXPECT_EQ(x.q_o, w.measured[0].q_o);
  }
  EXPECT_EQ(w.measured[1].timestamp - w.measured[0].timestamp, 6 * 3600);
}

TEST(Simulate, Deterministic) {
  auto s = quiet();
  s.schedule = Schedule::steps;
  s.noise_flow = 0.05;
  s.noise_pressure = 0.01;
  const auto a = simulate(s);
  const auto b = simulate(s);
  EXPECT_EQ(a.measured, b.measured);
  s.seed = 1;
  EXPECT_NE(simulate(s).measured, a.measured);
}

TEST(Simulate, NoiseCalibration) {
  auto s = quiet();
  s.duration_days = 3000;
  s.noise_flow = 0.05;
  const auto w = simulate(s);
  ASSERT_GE(w.measured.size(), 10000u);
  double sum = 0.0;
  for (std::size_t i = 0; i < w.measured.size(); ++i) sum += std::abs(w.measured[i].q_o / w.truth[i].q_o - 1.0);
  const double mard = sum / static_cast<double>(w.measured.size());
  EXPECT_NEAR(mard, 0.05, 0.15 * 0.05);
}

TEST(Simulate, WellboreCouplingBalancesInflow) {
  auto s = quiet();
  s.productivity = 2e-6;
  s.schedule = Schedule::steps;
  const auto w = simulate(s);
  for (std::size_t i = 0; i < w.truth.size(); ++i) {
    const auto& x = w.truth[i];
    const double m_dot = true_choke_flow(s, x).m_dot;
    EXPECT_NEAR(m_dot, s.productivity * (w.reservoir_pressure[i] - x.p1), 1e-6 * m_dot);
  }
  OperatingPoint x = w.truth[0];
  x.u = 0.3;
  const double p_low_u = detail::coupled_upstream_pressure(s, x, 90e5);
  x.u = 0.8;
  EXPECT_GT(p_low_u, detail::coupled_upstream_pressure(s, x, 90e5));
}

TEST(Simulate, RateHoldOpensChokeUnderDecline) {
  WellScenario s;
  s.schedule = Schedule::rate_hold;
  s.decline = 0.5e5;
  s.u = 0.3;
  s.duration_days = 120;
  s.p2_amplitude = 0;
  const auto w = simulate(s);
  const std::size_t q = w.measured.size() / 4;
  double first = 0, last = 0;
  for (std::size_t i = 0; i < q; ++i) {
    first += w.measured[i].u;
    last += w.measured[w.measured.size() - 1 - i].u;
  }
  EXPECT_GT(last, first);
  EXPECT_GT(w.measured.back().u, s.u);
  EXPECT_LT(w.measured.back().p1, w.measured.front().p1);
}

TEST(Simulate, DepletedReservoirYieldsFilterableSamples) {
  auto s = quiet();
  s.reservoir_pressure = 25e5;
  s.decline = 1e5;
  const auto w = simulate(s);
  const auto [kept, rep] = filter_samples(w.series());
  EXPECT_LT(kept.size(), w.measured.size());
  EXPECT_GT(rep.dropped_total(), 0u);
  for (const auto& x : kept.points) EXPECT_GT(x.p1, x.p2);
}

TEST(Scenario, ParseAndReject) {
  const auto c = KeyValueConfig::parse("name = t\nseed = 4\nschedule = rate_hold\narea_exponent = 1.8\nnoise_flow = 0.05\n");
  const auto s = scenario_from_config(c);
  EXPECT_EQ(s.name, "t");
  EXPECT_EQ(s.seed, 4u);
  EXPECT_EQ(s.schedule, Schedule::rate_hold);
  EXPECT_DOUBLE_EQ(s.area_exponent, 1.8);
  EXPECT_THROW(scenario_from_config(KeyValueConfig::parse("bogus = 1\n")), ConfigError);
  EXPECT_THROW(scenario_from_config(KeyValueConfig::parse("noise_flow = -0.1\n")), ConfigError);
  EXPECT_THROW(scenario_from_config(KeyValueConfig::parse("schedule = random\n")), ConfigError);
  EXPECT_THROW(scenario_from_config(KeyValueConfig::parse("c_d = 0\n")), ConfigError);
}

TEST(SelfConsistency, MechanisticModelRecoversNoiselessData) {
  WellScenario s;
  s.duration_days = 400;
  s.productivity = 2e-6;
  const auto w = simulate(s);
  PipelineConfig pc;
  pc.split.seed = 1;
  const auto ds = prepare(w.series(), pc);
  const auto train = ds.training();
  const auto m = HybridModel::build(Variant::MM, default_priors(), 0, statistics_from_samples(train));
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 150;
  cfg.patience = 20;
  cfg.repetitions = 1;
  const auto r = fit(m, train, cfg);
  double err = 0.0;
  const auto test = ds.test();
  for (const auto& x : test) err += std::abs(r.model.predict(x) / x.q_o - 1.0);
  EXPECT_LT(100.0 * err / static_cast<double>(test.size()), 1.0);
}
