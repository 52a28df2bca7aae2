#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "vfm/hybrid.hpp"

using namespace vfm;

namespace {

ModelPriors small_priors() {
  auto p = default_priors();
  p.hidden = {16, 16};
  return p;
}

OperatingPoint typical_point() {
  OperatingPoint x;
  x.p1 = 60e5;
  x.p2 = 20e5;
  x.t1 = 330.0;
  x.t2 = 325.0;
  x.u = 0.5;
  x.set_fractions({0.05, 0.75, 0.2});
  x.q_o = 0.03;
  return x;
}

std::vector<OperatingPoint> random_points(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<OperatingPoint> pts;
  for (std::size_t i = 0; i < n; ++i) {
    OperatingPoint x;
    x.p1 = 30e5 + 80e5 * unit(rng);
    x.p2 = x.p1 * (0.1 + 0.85 * unit(rng));
    x.t1 = 310.0 + 40.0 * unit(rng);
    x.t2 = x.t1 - 5.0 * unit(rng);
    x.u = 0.05 + 0.95 * unit(rng);
    const double g = 0.2 * unit(rng), o = (1.0 - g) * unit(rng);
    x.set_fractions({g, o, 1.0 - g - o});
    x.q_o = 0.02;
    pts.push_back(x);
  }
  return pts;
}

void zero_network(HybridModel& m, double output_bias = 0.0) {
  auto net = m.network();
  std::fill(net.values.begin(), net.values.end(), 0.0);
  net.values.back() = output_bias;
  m.set_network(net);
}

}  // namespace

TEST(Variants, ParseAndList) {
  for (auto v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
  try {
    parse_variant("HM_XYZ");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (auto v : kAllVariants) EXPECT_NE(msg.find(variant_name(v)), std::string::npos);
  }
}

TEST(Variants, TableConformance) {
  using enum Param;
  using enum Input;
  auto params = [](Variant v) { return variant_spec(v).estimable; };
  auto inputs = [](Variant v) { return variant_spec(v).inputs; };
  EXPECT_EQ(params(Variant::MM), (std::vector<Param>{rho_o, rho_w, kappa, m_g, p_rc, c_d}));
  EXPECT_EQ(params(Variant::HM_A2), (std::vector<Param>{rho_o, rho_w, kappa, m_g, p_rc}));
  EXPECT_EQ(params(Variant::HM_RHOG1), (std::vector<Param>{rho_o, rho_w, kappa, p_rc, c_d}));
  EXPECT_EQ(params(Variant::HM_RHOG2), (std::vector<Param>{rho_o, rho_w, m_g, p_rc, c_d}));
  EXPECT_EQ(params(Variant::HM_RHO), (std::vector<Param>{rho_o, rho_w, kappa, m_g, p_rc, c_d}));
  EXPECT_EQ(params(Variant::HM_EPS), (std::vector<Param>{rho_o, rho_w, kappa, m_g, p_rc, c_d}));
  EXPECT_TRUE(params(Variant::DM).empty());

  EXPECT_TRUE(inputs(Variant::MM).empty());
  EXPECT_EQ(inputs(Variant::HM_A2), (std::vector<Input>{u}));
  EXPECT_EQ(inputs(Variant::HM_RHOG1), (std::vector<Input>{p1, t1}));
  EXPECT_EQ(inputs(Variant::HM_RHOG2), (std::vector<Input>{p1, p2, t1, t2}));
  EXPECT_EQ(inputs(Variant::HM_RHO), (std::vector<Input>{p1, p2, t1, t2, eta_g, eta_o}));
  EXPECT_EQ(inputs(Variant::HM_EPS), (std::vector<Input>{p1, p2, t1, t2, eta_g, eta_o}));
  EXPECT_EQ(inputs(Variant::DM), (std::vector<Input>{p1, p2, t1, t2, u, eta_g, eta_o}));
}

TEST(Build, Structure) {
  const auto stats = default_statistics();
  const auto mm = HybridModel::build(Variant::MM, default_priors(), 1, stats);
  EXPECT_EQ(mm.physical_count(), 6u);
  EXPECT_EQ(mm.network_count(), 0u);
  EXPECT_THROW(mm.network(), ContractError);

  const auto a2 = HybridModel::build(Variant::HM_A2, default_priors(), 1, stats);
  EXPECT_FALSE(a2.is_estimable(Param::c_d));
  EXPECT_EQ(a2.widths().front(), 1u);
  EXPECT_EQ(std::vector<std::size_t>(a2.widths().begin(), a2.widths().end()),
            (std::vector<std::size_t>{1, 100, 100, 100, 1}));

  const auto dm = HybridModel::build(Variant::DM, default_priors(), 1, stats);
  EXPECT_EQ(dm.physical_count(), 0u);
  EXPECT_EQ(dm.widths().front(), 7u);

  for (auto v : kAllVariants) {
    const auto m = HybridModel::build(v, small_priors(), 3, stats);
    for (auto p : m.estimable()) EXPECT_NEAR(m.natural(p), m.priors().prior(p).mean, 1e-12 * m.priors().prior(p).mean);
  }
}

TEST(Build, MissingPriorNamesParameter) {
  auto p = default_priors();
  p.physical[static_cast<std::size_t>(Param::kappa)].reset();
  try {
    HybridModel::build(Variant::MM, p, 0, default_statistics());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("kappa"), std::string::npos);
  }
  EXPECT_NO_THROW(HybridModel::build(Variant::DM, ModelPriors{}, 0, default_statistics()));
}

TEST(Build, PositivityTransform) {
  auto m = HybridModel::build(Variant::MM, default_priors(), 0, default_statistics());
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 30.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> theta(6);
    for (auto& s : theta) s = n(rng);
    m.set_theta(theta);
    for (auto p : kAllParams) EXPECT_GT(m.natural(p), 0.0);
  }
  // exp(S + zeta) at S = log(mu) - zeta returns mu.
  m.set_natural(Param::c_d, 0.7);
  EXPECT_NEAR(m.natural(Param::c_d), 0.7, 1e-15);
  EXPECT_NEAR(std::exp(m.theta()[5] + 1e-8), 0.7, 1e-15);
}

TEST(Predict, MechanisticMatchesChokeModel) {
  const auto m = HybridModel::build(Variant::MM, default_priors(), 0, default_statistics());
  for (const auto& x : random_points(50, 1)) {
    EXPECT_DOUBLE_EQ(m.predict(x), predict_oil_rate(x, m.physical_parameters()));
  }
}

TEST(Predict, EpsWithZeroNetworkEqualsMechanistic) {
  const auto stats = default_statistics();
  const auto mm = HybridModel::build(Variant::MM, small_priors(), 0, stats);
  auto eps = HybridModel::build(Variant::HM_EPS, small_priors(), 0, stats);
  zero_network(eps);
  for (const auto& x : random_points(100, 2)) EXPECT_EQ(eps.predict(x), mm.predict(x));
}

TEST(Predict, EpsDecomposition) {
  const auto stats = default_statistics();
  const auto mm = HybridModel::build(Variant::MM, small_priors(), 0, stats);
  const auto eps = HybridModel::build(Variant::HM_EPS, small_priors(), 9, stats);
  const auto pts = random_points(100, 3);
  const auto net = eps.network();
  const Eigen::MatrixXd X = eps.network_inputs(pts);
  for (std::size_t n = 0; n < pts.size(); ++n) {
    const double raw = network_forward(net.view(), std::vector<double>(X.col(static_cast<Eigen::Index>(n)).data(),
                                                                       X.col(static_cast<Eigen::Index>(n)).data() + X.rows()));
    const double expected = raw * eps.output_scale();
    EXPECT_NEAR(eps.evaluate(std::span(&pts[n], 1)).q_o[0] - mm.predict(pts[n]), expected, 1e-15);
  }
}

TEST(Predict, DataDrivenWithZeroNetworkIsZero) {
  auto dm = HybridModel::build(Variant::DM, small_priors(), 0, default_statistics());
  zero_network(dm);
  for (const auto& x : random_points(20, 4)) EXPECT_EQ(dm.predict(x), 0.0);
}

TEST(Predict, SubstitutionLocality) {
  const auto stats = default_statistics();
  const auto mm = HybridModel::build(Variant::MM, small_priors(), 0, stats);
  for (auto v : {Variant::HM_A2, Variant::HM_RHOG1, Variant::HM_RHOG2, Variant::HM_RHO}) {
    for (const auto& x : random_points(50, 5)) {
      auto m = HybridModel::build(v, small_priors(), 0, stats);
      const double target = replaced_relation(v, x, m.physical_parameters());
      zero_network(m, target / m.output_scale());
      const double hm = m.predict(x);
      const double ref = mm.predict(x);
      EXPECT_NEAR(hm, ref, 1e-10 * ref) << variant_name(v);
    }
  }
}

TEST(Predict, FloorFractionRaisesEvaluationError) {
  auto m = HybridModel::build(Variant::HM_RHOG1, small_priors(), 0, default_statistics());
  zero_network(m, -1.0);
  const auto pts = random_points(10, 6);
  EXPECT_THROW(m.predict_batch(pts), EvaluationError);
  const auto r = m.evaluate(pts);
  EXPECT_EQ(r.floored, pts.size());
  for (double q : r.q_o) EXPECT_TRUE(std::isfinite(q));
}

TEST(Subfunction, Contract) {
  const auto stats = default_statistics();
  const auto mm = HybridModel::build(Variant::MM, small_priors(), 0, stats);
  const std::vector<double> grid{0.0, 0.5, 1.0};
  try {
    mm.extract_subfunction(Input::u, grid);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("no subfunction"), std::string::npos);
  }
  const auto a2 = HybridModel::build(Variant::HM_A2, small_priors(), 0, stats);
  EXPECT_THROW(a2.extract_subfunction(Input::p1, grid), ContractError);
  const auto trace = a2.extract_subfunction(Input::u, grid);
  ASSERT_EQ(trace.size(), 3u);
  EXPECT_NEAR(trace[2].mechanistic, 0.8 * 2e-3, 1e-15);

  const auto rho = HybridModel::build(Variant::HM_RHO, small_priors(), 0, stats);
  std::vector<double> p1s;
  for (double p = 10e5; p <= 150e5; p += 5e5) p1s.push_back(p);
  for (const auto& s : rho.extract_subfunction(Input::p1, p1s)) {
    EXPECT_TRUE(std::isfinite(s.network));
    EXPECT_TRUE(std::isfinite(s.mechanistic));
    EXPECT_GE(s.effective, kSubstitutionFloor * rho.output_scale() * (1 - 1e-12));
  }
}

TEST(Archive, RoundTripIsLossless) {
  std::vector<OperatingPoint> train = random_points(40, 7);
  for (std::size_t i = 0; i < train.size(); ++i) {
    train[i].timestamp = static_cast<Timestamp>(i) * 3600;
    train[i].q_o = 0.01 + 0.001 * static_cast<double>(i);
  }
  const auto stats = statistics_from_samples(train);
  for (auto v : kAllVariants) {
    auto m = HybridModel::build(v, small_priors(), 11, stats);
    std::vector<double> theta(m.theta().begin(), m.theta().end());
    for (std::size_t k = 0; k < m.physical_count(); ++k) theta[k] += 0.0123456789 * static_cast<double>(k + 1);
    m.set_theta(theta);
    m.set_metadata({42, 17, v != Variant::DM});
    const auto text = model_to_json(m).dump();
    const auto back = model_from_json(nlohmann::json::parse(text));
    EXPECT_TRUE(back == m) << variant_name(v);
    auto q = [](const HybridModel& model, const OperatingPoint& x) {
      try {
        return model.evaluate(std::span(&x, 1)).q_o[0];
      } catch (const EvaluationError&) {
        return -1.0;  // an untrained HM_RHOG2 may produce a negative gas term
      }
    };
    for (const auto& x : train) EXPECT_EQ(q(back, x), q(m, x));
  }
}

TEST(Archive, RejectsWrongFormatAndVersion) {
  const auto m = HybridModel::build(Variant::MM, default_priors(), 0, default_statistics());
  auto j = model_to_json(m);
  j["version"] = 2;
  EXPECT_THROW(model_from_json(j), ConfigError);
  j = model_to_json(m);
  j["format"] = "other";
  EXPECT_THROW(model_from_json(j), ConfigError);
  j = model_to_json(m);
  j.erase("statistics");
  EXPECT_THROW(model_from_json(j), ConfigError);
}

TEST(Statistics, FromSamples) {
  std::vector<OperatingPoint> pts = random_points(101, 8);
  const auto s = statistics_from_samples(pts);
  std::vector<double> p1;
  for (const auto& x : pts) p1.push_back(x.p1);
  EXPECT_DOUBLE_EQ(s.reference.p1, median(p1));
  EXPECT_DOUBLE_EQ(s.mean[0], mean(p1));
  EXPECT_DOUBLE_EQ(s.lower[0], *std::min_element(p1.begin(), p1.end()));
  EXPECT_NEAR(s.y_ref, 0.02, 1e-15);
}
