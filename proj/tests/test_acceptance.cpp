// Acceptance suite. Prints one line per criterion and exits nonzero if any fails.
// Usage: test_acceptance [criterion...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "choke_cases.hpp"
#include "vfm/cli.hpp"

using namespace vfm;
namespace fs = std::filesystem;

namespace {

// --- tolerances and budgets -----------------------------------------------------------------

constexpr double kConformanceRel = 1e-10;
constexpr double kGradientRel = 1e-4;
constexpr std::size_t kGradientSeeds = 50;
constexpr std::size_t kGridPoints = 1000;
constexpr double kMapMleRel = 1e-6;
constexpr double kPretrainRmse = 0.02;
constexpr double kMmRecoveryMape = 1.0;
constexpr double kDmRecoveryMape = 3.0;
constexpr std::size_t kMismatchSeeds = 5;
constexpr std::size_t kMismatchWins = 4;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // 0: no limit
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- shared fixtures ------------------------------------------------------------------------

cli::RunSettings settings(std::uint64_t seed, const std::string& overrides = "") {
  KeyValueConfig c;
  for (const auto& k : cli::kRunKeys) c.set(std::string(k.key), std::string(k.fallback));
  for (const auto& [k, v] : KeyValueConfig::parse(overrides).entries()) c.set(k, v);
  c.set("seed", std::to_string(seed));
  return cli::settings_from_config(c);
}

WellDataset well(const std::string& scenario, std::uint64_t seed, const cli::RunSettings& s) {
  const auto sc = scenario_from_config(KeyValueConfig::parse(scenario + "\nseed = " + std::to_string(seed) + "\n"));
  return prepare(simulate(sc).series(), s.pipeline, sc.name);
}

HybridModel train(Variant v, std::span<const OperatingPoint> pts, const cli::RunSettings& s) {
  auto m = HybridModel::build(v, s.priors, s.init_seed(), statistics_from_samples(pts));
  if (is_substitution(v) && s.pretrain) pretrain_network(m, s.pretraining);
  return fit(m, pts, s.training).model;
}

// 90-day and 7-day test MAPE.
std::pair<double, double> horizons(const HybridModel& m, const WellDataset& ds, const cli::RunSettings& s) {
  const auto test = ds.test();
  const auto h = horizon_compare(m, test, ds.well_id, s.horizons);
  return {h[0].mape, h[1].mape};
}

PhysicalParameters<> reference_truth() {
  PhysicalParameters<> phi;
  phi.rho_o = 820.0;
  phi.rho_w = 1020.0;
  phi.kappa = 1.25;
  phi.m_g = 0.0195;
  phi.p_rc = 0.62;
  phi.c_d = 0.72;
  return phi;
}

// Random operating points with p2/p1 in [0.2, 0.75] and 5% flow noise, 6 h apart.
std::vector<OperatingPoint> random_points(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> eps(0.0, 1.0);
  const auto phi = reference_truth();
  std::vector<OperatingPoint> pts;
  for (std::size_t i = 0; i < n; ++i) {
    OperatingPoint x;
    x.timestamp = static_cast<Timestamp>(i) * 6 * 3600;
    x.p1 = 40e5 + 50e5 * unit(rng);
    x.p2 = x.p1 * (0.2 + 0.55 * unit(rng));
    x.t1 = 320.0 + 20.0 * unit(rng);
    x.t2 = x.t1 - 4.0;
    x.u = 0.2 + 0.7 * unit(rng);
    const double g = 0.02 + 0.08 * unit(rng), o = 0.5 + 0.3 * unit(rng);
    x.set_fractions({g, o, 1.0 - g - o});
    x.q_o = predict_oil_rate(x, phi) * (1.0 + 0.05 * eps(rng));
    pts.push_back(x);
  }
  return pts;
}

// --- 1 ---------------------------------------------------------------------------------------

Outcome conformance() {
  double worst = 0.0;
  for (const auto& c : testing_cases::kCases) {
    PhysicalParameters<> phi;
    phi.rho_o = c.rho_o;
    phi.rho_w = c.rho_w;
    phi.kappa = c.kappa;
    phi.m_g = c.m_g;
    phi.p_rc = c.p_rc;
    phi.c_d = c.c_d;
    OperatingPoint x;
    x.p1 = c.p1;
    x.p2 = c.p2;
    x.t1 = c.t1;
    x.t2 = c.t1 - 5.0;
    x.u = c.u;
    x.set_fractions({c.eg, c.eo, c.ew});
    const auto r = mass_flow_rate(x, phi);
    worst = std::max({worst, std::abs(r.m_dot - c.m_dot) / c.m_dot, std::abs(r.q_o - c.q_o) / c.q_o});
    if (c.eg == 0.0 && c.ew == 0.0) {
      const double closed = c.c_d * c.u * phi.constants.a_max * std::sqrt(2.0 * c.rho_o * (c.p1 - c.p2));
      worst = std::max(worst, std::abs(r.m_dot - closed) / closed);
    }
  }
  return {worst <= kConformanceRel,
          fmt("%zu cases, max rel err %.2e (tol %.0e)", std::size(testing_cases::kCases), worst, kConformanceRel)};
}

// --- 2 ---------------------------------------------------------------------------------------

// Branch state of every nondifferentiable point the loss passes through.
std::vector<char> branches(const HybridModel& m, std::span<const double> theta, const Batch& b) {
  std::vector<char> s;
  const auto phi = m.physical_parameters(theta);
  for (const auto& x : b.points) s.push_back(x.p2 / x.p1 < phi.p_rc);
  if (has_network(m.variant())) {
    BatchCache cache;
    const auto g = network_forward_batch(m.network_view(theta), b.inputs, &cache);
    for (const auto& z : cache.pre) {
      for (Eigen::Index i = 0; i < z.size(); ++i) s.push_back(z.data()[i] > 0.0);
    }
    if (is_substitution(m.variant())) {
      for (Eigen::Index i = 0; i < g.size(); ++i) s.push_back(g(i) < kSubstitutionFloor);
    }
  }
  return s;
}

Outcome gradients() {
  auto priors = default_priors();
  priors.hidden = {10, 10};
  const auto stats = statistics_from_samples(random_points(400, 1000));
  std::vector<HybridModel> pretrained;
  for (auto v : kAllVariants) {
    auto m = HybridModel::build(v, priors, 11, stats);
    if (is_substitution(v)) pretrain_network(m, {.samples = 2000, .max_epochs = 100, .seed = 12});
    pretrained.push_back(std::move(m));
  }
  double worst = 0.0;
  std::size_t checked = 0, excluded = 0, failures = 0;
  for (std::size_t seed = 0; seed < kGradientSeeds; ++seed) {
    const auto pts = random_points(16, seed);
    for (std::size_t vi = 0; vi < kAllVariants.size(); ++vi) {
      const auto v = kAllVariants[vi];
      const auto m = is_substitution(v) ? pretrained[vi] : HybridModel::build(v, priors, derive_seed(seed, 2), stats);
      const auto b = make_batch(m, pts);
      const auto prior = make_prior_spec(m, noise_sigma_from_mape(0.1, b.targets));
      const std::size_t n_total = 3 * b.size();
      std::vector<double> theta(m.theta().begin(), m.theta().end());
      std::mt19937_64 rng(derive_seed(seed, 100 + vi));
      std::normal_distribution<double> jitter(0.0, 0.01);
      for (auto& t : theta) t += jitter(rng);
      const auto g = normalized_gradient(m, theta, prior, b, n_total);
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(theta[i]));
        auto tp = theta, tm = theta;
        tp[i] += h;
        tm[i] -= h;
        if (branches(m, tp, b) != branches(m, tm, b)) {
          ++excluded;
          continue;
        }
        const double fd = (loss_terms(m, tp, prior, b, n_total).normalized() -
                           loss_terms(m, tm, prior, b, n_total).normalized()) /
                          (2 * h);
        const double rel = std::abs(g[i] - fd) / std::max(1.0, std::abs(fd));
        worst = std::max(worst, rel);
        if (rel > kGradientRel) ++failures;
        ++checked;
      }
    }
  }
  return {failures == 0 && checked > 0,
          fmt("%zu seeds x 7 variants, %zu coords checked, %zu kink-excluded, max rel err %.2e (tol %.0e)",
              kGradientSeeds, checked, excluded, worst, kGradientRel)};
}

// --- 3 ---------------------------------------------------------------------------------------

Outcome critical_flow() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t nonzero = 0;
  for (std::size_t n = 0; n < kGridPoints; ++n) {
    PhysicalParameters<> phi;
    phi.kappa = 1.1 + 0.4 * unit(rng);
    phi.p_rc = 0.4 + 0.4 * unit(rng);
    phi.c_d = 0.5 + 0.5 * unit(rng);
    OperatingPoint x;
    x.p1 = 10e5 + 140e5 * unit(rng);
    x.p2 = x.p1 * phi.p_rc * (0.05 + 0.9 * unit(rng));
    x.t1 = 290.0 + 80.0 * unit(rng);
    x.t2 = x.t1 - 5.0;
    x.u = 0.05 + 0.95 * unit(rng);
    const double g = 0.3 * unit(rng), o = unit(rng), w = unit(rng), s = g + o + w;
    x.set_fractions({g / s, o / s, 1.0 - g / s - o / s});
    const double h = 1e-3 * x.p2;
    auto up = x, down = x;
    up.p2 += h;
    down.p2 -= h;
    const double d = (mass_flow_rate(up, phi).m_dot - mass_flow_rate(down, phi).m_dot) / (up.p2 - down.p2);
    if (d != 0.0) ++nonzero;
  }
  return {nonzero == 0, fmt("%zu points, %zu with nonzero dm/dp2", kGridPoints, nonzero)};
}

// --- 4 ---------------------------------------------------------------------------------------

Outcome prior_machinery() {
  std::vector<std::string> bad;
  auto near = [&](const char* what, double got, double want, double tol) {
    if (!(std::abs(got - want) <= tol)) bad.push_back(fmt("%s %.12g != %.12g", what, got, want));
  };
  near("band(600,900)", physical_prior_sigma(600.0, 900.0), 50.0, 1e-12);
  near("band(1,7)", physical_prior_sigma(1.0, 7.0), 1.0, 1e-12);
  const std::vector<double> y{90.0, 100.0, 110.0};
  near("noise(0.1)", noise_sigma_from_mape(0.1, y), 12.533141373155, 1e-10);
  near("noise(0.05)", noise_sigma_from_mape(0.05, y), 6.2665706865775, 1e-10);

  const std::vector<std::size_t> widths{4, 100, 100, 100, 1};
  const auto var = he_variances(widths);
  const std::size_t first = 4 * 100 + 100;
  for (std::size_t i = 0; i < var.size(); ++i) {
    const double want = i < first ? 0.25 : 0.02;
    if (std::abs(var[i] - want) > 1e-15) {
      bad.push_back(fmt("he variance[%zu] %.6g != %.6g", i, var[i], want));
      break;
    }
  }

  const auto mm = HybridModel::build(Variant::MM, default_priors(), 0, default_statistics());
  for (auto p : kAllParams) near(std::string(param_name(p)).c_str(), mm.natural(p), default_priors().prior(p).mean,
                                  1e-12 * default_priors().prior(p).mean);
  for (double s : {-40.0, -5.0, 0.0, 5.0}) {
    std::vector<double> theta(mm.parameter_count(), s);
    const auto phi = mm.physical_parameters(theta);
    for (auto p : kAllParams) {
      if (!(field(phi, p) > 0)) bad.push_back(fmt("exp(%g + zeta) not positive", s));
    }
  }

  // MAP with vanishing prior weight against the prior-free fit on the same data.
  const auto pts = random_points(120, 15);
  auto priors = default_priors();
  priors.hidden = {6, 6};
  const auto m = HybridModel::build(Variant::HM_A2, priors, 2, statistics_from_samples(pts));
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 20;
  cfg.patience = 5;
  cfg.repetitions = 2;
  cfg.validation_fraction = 0.0;
  cfg.seed = 7;
  auto prior = make_prior_spec(m, noise_sigma_from_mape(cfg.mape_alpha, targets_of(pts)));
  for (auto& s : prior.physical_sigma) s = 1e12;
  for (auto& s : prior.network_sigma) s = 1e12;
  const auto map = fit(m, pts, cfg, &prior);
  cfg.include_priors = false;
  const auto mle = fit(m, pts, cfg);
  double worst = 0.0;
  for (std::size_t i = 0; i < m.parameter_count(); ++i) {
    const double b = mle.model.theta()[i];
    worst = std::max(worst, std::abs(map.model.theta()[i] - b) / std::max(1.0, std::abs(b)));
  }
  if (worst > kMapMleRel) bad.push_back(fmt("MAP vs MLE %.2e", worst));

  std::string detail = fmt("band, noise, He, exp-positivity hand values; MAP->MLE max rel %.2e (tol %.0e)", worst,
                           kMapMleRel);
  for (const auto& b : bad) detail += "; " + b;
  return {bad.empty(), detail};
}

// --- 5 ---------------------------------------------------------------------------------------

const char* kStationaryWell = "name = stationary\nproductivity = 1e-5\nnoise_flow = 0.02";

Outcome pretraining() {
  const auto s = settings(0);
  const auto ds = well(kStationaryWell, 0, s);
  const auto stats = statistics_from_samples(ds.training());
  bool ok = true;
  std::string detail;
  for (auto v : {Variant::HM_A2, Variant::HM_RHOG1, Variant::HM_RHOG2, Variant::HM_RHO}) {
    auto m = HybridModel::build(v, s.priors, s.init_seed(), stats);
    const auto r = pretrain_network(m, s.pretraining);
    ok = ok && r.relative_rmse <= kPretrainRmse;
    detail += fmt("%s %.4f, ", std::string(variant_name(v)).c_str(), r.relative_rmse);
  }
  return {ok, detail + fmt("held-out relative RMSE (tol %.2f)", kPretrainRmse)};
}

// --- 6 ---------------------------------------------------------------------------------------

Outcome recovery() {
  const auto s = settings(1);
  const auto ds = well("name = noiseless\nproductivity = 1e-5", 1, s);
  const auto train_pts = ds.training();
  const double mm = horizons(train(Variant::MM, train_pts, s), ds, s).first;
  const double dm = horizons(train(Variant::DM, train_pts, s), ds, s).first;
  return {mm < kMmRecoveryMape && dm < kDmRecoveryMape,
          fmt("test MAPE MM %.3f%% (< %.0f%%), DM %.3f%% (< %.0f%%)", mm, kMmRecoveryMape, dm, kDmRecoveryMape)};
}

// --- 7 ---------------------------------------------------------------------------------------

const char* kAreaMismatch = "name = area\narea_exponent = 2\nnoise_flow = 0.05\nproductivity = 1e-5";
const char* kZMismatch = "name = zfactor\nz_slope = 1.5\neta_g = 0.12\nnoise_flow = 0.05\nproductivity = 1e-5";

std::size_t hybrid_wins(const char* scenario, Variant hybrid, std::string& detail) {
  std::size_t wins = 0;
  detail += std::string(variant_name(hybrid)) + " vs MM:";
  for (std::size_t seed = 0; seed < kMismatchSeeds; ++seed) {
    const auto s = settings(seed);
    const auto ds = well(scenario, seed, s);
    const auto pts = ds.training();
    const double mm = horizons(train(Variant::MM, pts, s), ds, s).first;
    const double hm = horizons(train(hybrid, pts, s), ds, s).first;
    if (hm < mm) ++wins;
    detail += fmt(" %.2f/%.2f", hm, mm);
  }
  detail += fmt(" (%zu/%zu wins)", wins, kMismatchSeeds);
  return wins;
}

Outcome mismatch() {
  std::string detail;
  const auto area = hybrid_wins(kAreaMismatch, Variant::HM_A2, detail);
  detail += "; ";
  const auto z = hybrid_wins(kZMismatch, Variant::HM_RHOG1, detail);
  return {area >= kMismatchWins && z >= kMismatchWins, detail + fmt(", need >= %zu", kMismatchWins)};
}

// --- 8 ---------------------------------------------------------------------------------------

const char* kDeclining =
    "name = declining\nschedule = rate_hold\nband = 0.02\nreservoir_pressure = 120e5\ndecline_pa_per_day = 7000\n"
    "area_exponent = 1.3\nnoise_flow = 0.02\nproductivity = 1e-5";

Outcome nonstationarity() {
  std::size_t ok = 0;
  std::string detail = "MM 7d/90d:";
  for (std::size_t seed = 0; seed < kMismatchSeeds; ++seed) {
    const auto s = settings(seed);
    const auto ds = well(kDeclining, seed, s);
    const auto [m90, m7] = horizons(train(Variant::MM, ds.training(), s), ds, s);
    if (m7 <= m90) ++ok;
    detail += fmt(" %.2f/%.2f", m7, m90);
  }
  return {ok >= kMismatchWins, detail + fmt(" (%zu/%zu seeds, need >= %zu)", ok, kMismatchSeeds, kMismatchWins)};
}

// --- 9 ---------------------------------------------------------------------------------------

const char* kCoupled = "name = coupled\nproductivity = 2e-6\nreservoir_pressure = 60e5\nnoise_flow = 0.02";

Outcome consistency() {
  const auto s = settings(0);
  const auto ds = well(kCoupled, 0, s);
  const auto pts = ds.training();
  const auto test = ds.test();
  const auto bases = pick_base_points(test.size(), s.sweep_points, s.base_point_seed());
  auto count = [&](const HybridModel& m, Input v) {
    const auto [lo, hi] = sweep_range(m.statistics(), v, s.sweep_extend);
    const auto curves = sensitivity_sweep(m, test, bases, v, lo, hi, s.sweep_steps);
    return total_violations(curves);
  };
  const auto mm = train(Variant::MM, pts, s);
  const auto dm = train(Variant::DM, pts, s);
  const auto mm_u = count(mm, Input::u), mm_p1 = count(mm, Input::p1);
  const auto dm_u = count(dm, Input::u), dm_p1 = count(dm, Input::p1);
  const auto r = correlation_matrix(pts);
  return {mm_u == 0 && dm_u + dm_p1 > 0,
          fmt("violations over %zu curves: MM u %zu, p1 %zu; DM u %zu, p1 %zu (corr(u,p1) %.2f)", bases.size(), mm_u,
              mm_p1, dm_u, dm_p1, r(4, 0))};
}

// --- 10 --------------------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const auto root = fs::temp_directory_path() / "vfm_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream(root / "well.cfg") << "name = det\nseed = 5\nduration_days = 150\nproductivity = 1e-5\nnoise_flow = 0.03\n";
    std::ofstream(root / "run.cfg") << "seed = 5\nhidden = 12,12\nmax_epochs = 60\npatience = 10\nrepetitions = 2\n"
                                       "learning_rate = 0.003\npretrain_samples = 2000\npretrain_epochs = 60\n";
  }
  std::ostringstream sink;
  auto call = [&](std::vector<std::string> args) {
    const int code = cli::run(args, sink, sink);
    if (code != 0) throw std::runtime_error("vfm " + args.front() + " exited with " + std::to_string(code) + ": " + sink.str());
  };
  std::array<fs::path, 2> runs{root / "a", root / "b"};
  for (const auto& d : runs) {
    call({"generate", "--config", (root / "well.cfg").string(), "--out", (d / "gen").string()});
    const auto data = (d / "gen" / "det.csv").string();
    call({"train", "--data", data, "--config", (root / "run.cfg").string(), "--variant", "MM,HM_A2,HM_EPS,DM", "--out",
          (d / "train").string()});
    call({"evaluate", "--config", (root / "run.cfg").string(), "--model", (d / "train/det/MM/model.json").string(),
          "--model", (d / "train/det/HM_A2/model.json").string(), "--model", (d / "train/det/HM_EPS/model.json").string(),
          "--model", (d / "train/det/DM/model.json").string(), "--data", data, "--out", (d / "eval").string()});
  }
  std::size_t files = 0;
  std::vector<std::string> differing;
  for (const auto* stage : {"gen", "train", "eval"}) {
    for (const auto& e : fs::recursive_directory_iterator(runs[0] / stage)) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), runs[0]);
      ++files;
      if (rel.filename() == "manifest.json") {
        auto a = nlohmann::json::parse(slurp(runs[0] / rel)), b = nlohmann::json::parse(slurp(runs[1] / rel));
        if (a["outputs"] != b["outputs"] || a["seeds"] != b["seeds"] || a["config"] != b["config"]) {
          differing.push_back(rel.string());
        }
      } else if (slurp(runs[0] / rel) != slurp(runs[1] / rel)) {
        differing.push_back(rel.string());
      }
    }
  }
  fs::remove_all(root);
  std::string detail = fmt("%zu files compared across two runs, %zu differ", files, differing.size());
  for (const auto& d : differing) detail += " " + d;
  return {differing.empty() && files > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "equation conformance", 1.0, conformance},
      {2, "gradient correctness", 120.0, gradients},
      {3, "critical-flow invariance", 1.0, critical_flow},
      {4, "prior machinery", 0.0, prior_machinery},
      {5, "pretraining fidelity", 300.0, pretraining},
      {6, "self-consistency recovery", 600.0, recovery},
      {7, "hybrid beats mechanistic under targeted mismatch", 1800.0, mismatch},
      {8, "nonstationarity effect", 1200.0, nonstationarity},
      {9, "consistency tooling", 0.0, consistency},
      {10, "determinism", 0.0, determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_s == 0.0 || secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << c.id << ' ' << c.name << ": " << o.detail << " ("
              << fmt("%.1f s", secs) << (c.budget_s > 0 ? fmt(", limit %.0f s", c.budget_s) : std::string()) << ')'
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
