#pragma once

// Mechanistic, hybrid and data-driven choke models behind one interface.
//
// Every model owns a flat parameter vector theta = [S_1 .. S_k, network...]:
// the unconstrained images of its estimable physical parameters (natural value
// exp(S + zeta)) followed by the network weights. Hybrid variants replace one
// relation of the mechanistic model by a scaled network output g:
//
//   HM_A2     C_D * A2(u)       <- g(u)
//   HM_RHOG1  rho_G1            <- g(p1, T1)
//   HM_RHOG2  rho_G2            <- g(p1, p2, T1, T2)
//   HM_RHO    rho_2             <- g(p1, p2, T1, T2, eta_G, eta_O)
//   HM_EPS    q_O = MM + g(p1, p2, T1, T2, eta_G, eta_O)
//   DM        q_O = g(p1, p2, T1, T2, u, eta_G, eta_O)

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vfm/autodiff.hpp"
#include "vfm/choke.hpp"
#include "vfm/network.hpp"
#include "vfm/stats.hpp"

namespace vfm {

enum class Variant { MM, HM_A2, HM_RHOG1, HM_RHOG2, HM_RHO, HM_EPS, DM };

inline constexpr std::array<Variant, 7> kAllVariants{Variant::MM,     Variant::HM_A2,  Variant::HM_RHOG1,
                                                     Variant::HM_RHOG2, Variant::HM_RHO, Variant::HM_EPS,
                                                     Variant::DM};

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::MM: return "MM";
    case Variant::HM_A2: return "HM_A2";
    case Variant::HM_RHOG1: return "HM_RHOG1";
    case Variant::HM_RHOG2: return "HM_RHOG2";
    case Variant::HM_RHO: return "HM_RHO";
    case Variant::HM_EPS: return "HM_EPS";
    case Variant::DM: return "DM";
  }
  throw ContractError("unknown variant");
}

inline std::string valid_variant_list() {
  std::string s;
  for (auto v : kAllVariants) {
    if (!s.empty()) s += ", ";
    s += variant_name(v);
  }
  return s;
}

inline Variant parse_variant(std::string_view tag) {
  for (auto v : kAllVariants) {
    if (variant_name(v) == tag) return v;
  }
  throw ConfigError("unknown model variant '" + std::string(tag) + "'; valid tags: " + valid_variant_list());
}

// Explanatory variables, in the canonical order of x.
enum class Input { p1, p2, t1, t2, u, eta_g, eta_o };
inline constexpr std::size_t kInputCount = 7;

inline std::string_view input_name(Input i) {
  static constexpr std::array<std::string_view, kInputCount> names{"p1", "p2", "t1", "t2", "u", "eta_g", "eta_o"};
  return names[static_cast<std::size_t>(i)];
}

inline Input parse_input(std::string_view s) {
  for (std::size_t i = 0; i < kInputCount; ++i) {
    if (input_name(static_cast<Input>(i)) == s) return static_cast<Input>(i);
  }
  throw ConfigError("unknown input variable '" + std::string(s) + "'");
}

inline double input_value(const OperatingPoint& x, Input i) {
  switch (i) {
    case Input::p1: return x.p1;
    case Input::p2: return x.p2;
    case Input::t1: return x.t1;
    case Input::t2: return x.t2;
    case Input::u: return x.u;
    case Input::eta_g: return x.eta_g;
    case Input::eta_o: return x.eta_o;
  }
  throw ContractError("unknown input");
}

// Sets one explanatory variable; fraction changes are absorbed by eta_W.
inline void set_input(OperatingPoint& x, Input i, double v) {
  switch (i) {
    case Input::p1: x.p1 = v; return;
    case Input::p2: x.p2 = v; return;
    case Input::t1: x.t1 = v; return;
    case Input::t2: x.t2 = v; return;
    case Input::u: x.u = v; return;
    case Input::eta_g: x.eta_g = v; break;
    case Input::eta_o: x.eta_o = v; break;
  }
  x.eta_w = std::max(0.0, 1.0 - x.eta_g - x.eta_o);
}

enum class Param { rho_o, rho_w, kappa, m_g, p_rc, c_d };
inline constexpr std::size_t kParamCount = 6;
inline constexpr std::array<Param, kParamCount> kAllParams{Param::rho_o, Param::rho_w, Param::kappa,
                                                           Param::m_g,   Param::p_rc,  Param::c_d};

inline std::string_view param_name(Param p) {
  static constexpr std::array<std::string_view, kParamCount> names{"rho_o", "rho_w", "kappa", "m_g", "p_rc", "c_d"};
  return names[static_cast<std::size_t>(p)];
}

inline Param parse_param(std::string_view s) {
  for (auto p : kAllParams) {
    if (param_name(p) == s) return p;
  }
  throw ConfigError("unknown physical parameter '" + std::string(s) + "'");
}

template <class Scalar>
Scalar& field(PhysicalParameters<Scalar>& phi, Param p) {
  switch (p) {
    case Param::rho_o: return phi.rho_o;
    case Param::rho_w: return phi.rho_w;
    case Param::kappa: return phi.kappa;
    case Param::m_g: return phi.m_g;
    case Param::p_rc: return phi.p_rc;
    case Param::c_d: return phi.c_d;
  }
  throw ContractError("unknown parameter");
}

template <class Scalar>
const Scalar& field(const PhysicalParameters<Scalar>& phi, Param p) {
  return field(const_cast<PhysicalParameters<Scalar>&>(phi), p);
}

struct VariantSpec {
  Variant variant;
  std::vector<Param> estimable;  // physical parameters kept in theta
  std::vector<Input> inputs;     // network inputs, empty for MM
};

inline const VariantSpec& variant_spec(Variant v) {
  using enum Param;
  using enum Input;
  static const std::array<VariantSpec, 7> table{{
      {Variant::MM, {rho_o, rho_w, kappa, m_g, p_rc, c_d}, {}},
      {Variant::HM_A2, {rho_o, rho_w, kappa, m_g, p_rc}, {u}},
      {Variant::HM_RHOG1, {rho_o, rho_w, kappa, p_rc, c_d}, {p1, t1}},
      {Variant::HM_RHOG2, {rho_o, rho_w, m_g, p_rc, c_d}, {p1, p2, t1, t2}},
      {Variant::HM_RHO, {rho_o, rho_w, kappa, m_g, p_rc, c_d}, {p1, p2, t1, t2, eta_g, eta_o}},
      {Variant::HM_EPS, {rho_o, rho_w, kappa, m_g, p_rc, c_d}, {p1, p2, t1, t2, eta_g, eta_o}},
      {Variant::DM, {}, {p1, p2, t1, t2, u, eta_g, eta_o}},
  }};
  return table[static_cast<std::size_t>(v)];
}

inline bool has_network(Variant v) { return v != Variant::MM; }
inline bool is_substitution(Variant v) {
  return v == Variant::HM_A2 || v == Variant::HM_RHOG1 || v == Variant::HM_RHOG2 || v == Variant::HM_RHO;
}

// --- priors and input statistics ----------------------------------------------

struct ParameterPrior {
  double mean = 0.0;
  double sigma = 0.0;  // natural units
};

inline double physical_prior_sigma(double min_val, double max_val) {
  if (!(max_val > min_val)) throw DomainError("physical_prior_sigma: max must exceed min");
  return (max_val - min_val) / 6.0;
}

struct ModelPriors {
  std::array<std::optional<ParameterPrior>, kParamCount> physical{};
  FluidConstants constants{};
  std::vector<std::size_t> hidden{100, 100, 100};
  double zeta = 1e-8;
  double floor_fraction = 0.5;  // tolerated share of floored substitutions per batch

  const ParameterPrior& prior(Param p) const {
    const auto& o = physical[static_cast<std::size_t>(p)];
    if (!o) throw ConfigError("missing prior for physical parameter '" + std::string(param_name(p)) + "'");
    return *o;
  }
  void set(Param p, ParameterPrior pr) { physical[static_cast<std::size_t>(p)] = pr; }
};

// Prior means with 6-sigma bands spanning the plausible range of each parameter.
inline ModelPriors default_priors() {
  ModelPriors m;
  m.set(Param::rho_o, {850.0, physical_prior_sigma(750.0, 950.0)});
  m.set(Param::rho_w, {1000.0, physical_prior_sigma(950.0, 1100.0)});
  m.set(Param::kappa, {1.3, physical_prior_sigma(1.1, 1.5)});
  m.set(Param::m_g, {0.0189, physical_prior_sigma(0.016, 0.024)});
  m.set(Param::p_rc, {0.6, physical_prior_sigma(0.4, 0.8)});
  m.set(Param::c_d, {0.8, physical_prior_sigma(0.5, 1.0)});
  return m;
}

// Training-set statistics: standardization of the network inputs, a reference
// operating point (per-field medians), the input box and the target mean.
struct InputStatistics {
  std::array<double, kInputCount> mean{};
  std::array<double, kInputCount> stddev{};
  std::array<double, kInputCount> lower{};
  std::array<double, kInputCount> upper{};
  OperatingPoint reference{};
  double y_ref = 0.0;

  friend bool operator==(const InputStatistics&, const InputStatistics&) = default;
};

inline InputStatistics statistics_from_box(const std::array<double, kInputCount>& lo,
                                           const std::array<double, kInputCount>& hi,
                                           const OperatingPoint& reference, double y_ref) {
  InputStatistics s;
  s.lower = lo;
  s.upper = hi;
  for (std::size_t i = 0; i < kInputCount; ++i) {
    if (!(hi[i] >= lo[i])) throw ConfigError("input box has inverted bounds for " + std::string(input_name(static_cast<Input>(i))));
    s.mean[i] = 0.5 * (lo[i] + hi[i]);
    const double sd = (hi[i] - lo[i]) / std::sqrt(12.0);
    s.stddev[i] = sd > 0 ? sd : 1.0;
  }
  s.reference = reference;
  s.y_ref = y_ref;
  return s;
}

// A generic box around a typical well, used when no data is at hand.
inline InputStatistics default_statistics(const FluidConstants& constants = {}) {
  OperatingPoint ref;
  ref.p1 = 60e5;
  ref.p2 = 20e5;
  ref.t1 = 330.0;
  ref.t2 = 325.0;
  ref.u = 0.5;
  ref.set_fractions({0.05, 0.75, 0.2});
  PhysicalParameters<> phi;
  phi.rho_o = 850.0;
  phi.constants = constants;
  const double y_ref = choke_flow(ref, phi).q_o;
  return statistics_from_box({20e5, 5e5, 300.0, 295.0, 0.05, 0.0, 0.3},
                             {120e5, 60e5, 360.0, 355.0, 1.0, 0.3, 0.95}, ref, y_ref);
}

inline InputStatistics statistics_from_samples(std::span<const OperatingPoint> samples) {
  if (samples.empty()) throw ConfigError("cannot compute input statistics of an empty training set");
  InputStatistics s;
  std::vector<double> col(samples.size());
  for (std::size_t i = 0; i < kInputCount; ++i) {
    for (std::size_t n = 0; n < samples.size(); ++n) col[n] = input_value(samples[n], static_cast<Input>(i));
    s.mean[i] = mean(col);
    const double sd = vfm::stddev(col);
    s.stddev[i] = sd > 0 ? sd : 1.0;
    s.lower[i] = *std::min_element(col.begin(), col.end());
    s.upper[i] = *std::max_element(col.begin(), col.end());
    set_input(s.reference, static_cast<Input>(i), median(col));
  }
  for (std::size_t n = 0; n < samples.size(); ++n) col[n] = samples[n].q_o;
  s.y_ref = mean(col);
  for (std::size_t n = 0; n < samples.size(); ++n) col[n] = samples[n].t2;
  s.reference.t2 = median(col);
  s.reference.timestamp = samples.back().timestamp;
  return s;
}

// --- the replaced relations -----------------------------------------------------

inline constexpr double kSubstitutionFloor = 1e-6;

// Mechanistic value of the quantity a variant replaces (for HM_EPS the mechanistic
// correction is zero; for DM it is the full mechanistic prediction).
template <class Scalar>
Scalar replaced_relation(Variant v, const OperatingPoint& x, const PhysicalParameters<Scalar>& phi) {
  switch (v) {
    case Variant::HM_A2: return phi.c_d * area_function(x.u, phi.constants.a_max);
    case Variant::HM_RHOG1: return gas_density_upstream(x.p1, x.t1, phi);
    case Variant::HM_RHOG2: {
      const Scalar p_r = effective_pressure_ratio(x.p1, x.p2, phi.p_rc);
      return gas_density_downstream(gas_density_upstream(x.p1, x.t1, phi), p_r, phi.kappa);
    }
    case Variant::HM_RHO: {
      const Scalar p_r = effective_pressure_ratio(x.p1, x.p2, phi.p_rc);
      const Scalar g2 = gas_density_downstream(gas_density_upstream(x.p1, x.t1, phi), p_r, phi.kappa);
      return mixture_density(g2, x.fractions(), phi.rho_o, phi.rho_w);
    }
    case Variant::HM_EPS: return Scalar(0.0);
    case Variant::DM: return choke_flow(x, phi).q_o;
    case Variant::MM: break;
  }
  throw ContractError("variant " + std::string(variant_name(v)) + " has no subfunction");
}

// Output of a variant given physical parameters and the raw network output g
// (ignored for MM). `floored` reports whether a substitution hit the positivity floor.
template <class Scalar>
Scalar hybrid_output(Variant v, const OperatingPoint& x, const PhysicalParameters<Scalar>& phi, const Scalar& g,
                     double scale, bool* floored = nullptr) {
  if (floored) *floored = false;
  auto floor = [&](const Scalar& raw) -> Scalar {
    if (floored && value_of(raw) < kSubstitutionFloor) *floored = true;
    return maximum(raw, kSubstitutionFloor) * scale;
  };
  Substitutions<Scalar> sub;
  switch (v) {
    case Variant::MM: return choke_flow(x, phi).q_o;
    case Variant::HM_A2: sub.area_term = floor(g); break;
    case Variant::HM_RHOG1: sub.rho_g1 = floor(g); break;
    case Variant::HM_RHOG2: sub.rho_g2 = floor(g); break;
    case Variant::HM_RHO: sub.rho_mix = floor(g); break;
    case Variant::HM_EPS: return choke_flow(x, phi).q_o + g * scale;
    case Variant::DM: return g * scale;
  }
  return choke_flow(x, phi, sub).q_o;
}

// --- model ----------------------------------------------------------------------

struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  bool pretrained = false;
  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct BatchPrediction {
  std::vector<double> q_o;
  std::size_t floored = 0;
};

struct SubfunctionSample {
  OperatingPoint x;
  double swept = 0.0;        // value of the swept input
  double network = 0.0;      // scaled network output before the floor
  double effective = 0.0;    // value entering the model (after the floor)
  double mechanistic = 0.0;  // replaced relation at the current physical parameters
};

class HybridModel {
 public:
  HybridModel() = default;

  static HybridModel build(Variant v, const ModelPriors& priors, std::uint64_t seed,
                           const InputStatistics& stats) {
    HybridModel m;
    m.variant_ = v;
    m.priors_ = priors;
    m.stats_ = stats;
    m.meta_.seed = seed;
    priors.constants.validate();
    if (!(priors.zeta >= 0)) throw ConfigError("zeta must be nonnegative");
    const auto& spec = variant_spec(v);
    if (v != Variant::DM) {
      for (auto p : kAllParams) {
        const auto& pr = priors.prior(p);
        if (!(pr.mean > 0)) throw ConfigError("prior mean of '" + std::string(param_name(p)) + "' must be positive");
      }
      for (auto p : spec.estimable) {
        if (!(priors.prior(p).sigma > 0)) {
          throw ConfigError("prior sigma of '" + std::string(param_name(p)) + "' must be positive");
        }
      }
    }
    m.theta_.clear();
    for (auto p : spec.estimable) m.theta_.push_back(std::log(priors.prior(p).mean) - priors.zeta);
    if (has_network(v)) {
      m.widths_ = make_widths(spec.inputs.size(), priors.hidden);
      const auto net = he_initialize(m.widths_, seed);
      m.theta_.insert(m.theta_.end(), net.values.begin(), net.values.end());
      m.network_prior_mean_.assign(net.values.size(), 0.0);
    }
    if (v == Variant::HM_EPS || v == Variant::DM) {
      if (!(std::abs(stats.y_ref) > 0)) throw ConfigError("reference target mean must be nonzero");
      m.output_scale_ = std::abs(stats.y_ref);
    } else if (is_substitution(v)) {
      m.output_scale_ = std::abs(replaced_relation(v, stats.reference, m.physical_parameters()));
      if (!(m.output_scale_ > 0)) {
        throw ConfigError("replaced relation vanishes at the reference point; cannot scale the network");
      }
    }
    return m;
  }

  Variant variant() const { return variant_; }
  const VariantSpec& spec() const { return variant_spec(variant_); }
  const ModelPriors& priors() const { return priors_; }
  const InputStatistics& statistics() const { return stats_; }
  double output_scale() const { return output_scale_; }
  double zeta() const { return priors_.zeta; }
  const TrainingMetadata& metadata() const { return meta_; }
  void set_metadata(const TrainingMetadata& m) { meta_ = m; }

  std::span<const Param> estimable() const { return spec().estimable; }
  std::size_t physical_count() const { return spec().estimable.size(); }
  std::size_t network_count() const { return theta_.size() - physical_count(); }
  std::size_t parameter_count() const { return theta_.size(); }
  std::span<const std::size_t> widths() const { return widths_; }

  std::span<const double> theta() const { return theta_; }
  void set_theta(std::vector<double> theta) {
    if (theta.size() != theta_.size()) throw ContractError("set_theta: wrong parameter count");
    for (double v : theta) {
      if (!std::isfinite(v)) throw ContractError("set_theta: non-finite parameter");
    }
    theta_ = std::move(theta);
  }

  NetworkView network_view(std::span<const double> theta) const {
    if (!has_network(variant_)) throw ContractError("variant " + std::string(variant_name(variant_)) + " has no network");
    return NetworkView(widths_, theta.subspan(physical_count()));
  }
  NetworkParameters network() const {
    const auto v = network_view(theta_);
    return NetworkParameters{widths_, {v.parameters().begin(), v.parameters().end()}, meta_.seed};
  }
  void set_network(const NetworkParameters& net) {
    if (net.widths != widths_) throw ContractError("set_network: widths do not match the model");
    std::copy(net.values.begin(), net.values.end(), theta_.begin() + static_cast<std::ptrdiff_t>(physical_count()));
  }

  std::span<const double> network_prior_mean() const { return network_prior_mean_; }
  void set_network_prior_mean(std::vector<double> mu) {
    if (mu.size() != network_count()) throw ContractError("network prior mean has wrong length");
    network_prior_mean_ = std::move(mu);
  }

  double natural(Param p) const {
    const auto& est = spec().estimable;
    for (std::size_t k = 0; k < est.size(); ++k) {
      if (est[k] == p) return std::exp(theta_[k] + priors_.zeta);
    }
    return fixed_value(p);
  }
  bool is_estimable(Param p) const {
    const auto& est = spec().estimable;
    return std::find(est.begin(), est.end(), p) != est.end();
  }
  void set_natural(Param p, double value) {
    if (!(value > 0)) throw DomainError("physical parameter must be positive");
    const auto& est = spec().estimable;
    for (std::size_t k = 0; k < est.size(); ++k) {
      if (est[k] == p) {
        theta_[k] = std::log(value) - priors_.zeta;
        return;
      }
    }
    throw ContractError("parameter '" + std::string(param_name(p)) + "' is not estimable in " +
                        std::string(variant_name(variant_)));
  }

  // Physical parameters from theta; dropped parameters sit at their prior means.
  template <class Scalar>
  PhysicalParameters<Scalar> assemble(std::span<const Scalar> natural_estimable) const {
    PhysicalParameters<Scalar> phi;
    phi.constants = priors_.constants;
    for (auto p : kAllParams) field(phi, p) = Scalar(fixed_value(p));
    const auto& est = spec().estimable;
    for (std::size_t k = 0; k < est.size(); ++k) field(phi, est[k]) = natural_estimable[k];
    return phi;
  }

  PhysicalParameters<double> physical_parameters(std::span<const double> theta) const {
    std::vector<double> nat(physical_count());
    for (std::size_t k = 0; k < nat.size(); ++k) nat[k] = std::exp(theta[k] + priors_.zeta);
    return assemble<double>(nat);
  }
  PhysicalParameters<double> physical_parameters() const { return physical_parameters(theta_); }

  // Standardized network inputs, one column per sample.
  Eigen::MatrixXd network_inputs(std::span<const OperatingPoint> points) const {
    const auto& in = spec().inputs;
    Eigen::MatrixXd X(static_cast<Eigen::Index>(in.size()), static_cast<Eigen::Index>(points.size()));
    for (std::size_t c = 0; c < points.size(); ++c) {
      for (std::size_t r = 0; r < in.size(); ++r) {
        const auto i = static_cast<std::size_t>(in[r]);
        X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            (input_value(points[c], in[r]) - stats_.mean[i]) / stats_.stddev[i];
      }
    }
    return X;
  }

  // Double-precision evaluation for an arbitrary theta; X from network_inputs (may
  // be empty for MM).
  BatchPrediction evaluate(std::span<const double> theta, std::span<const OperatingPoint> points,
                           const Eigen::MatrixXd& X) const {
    BatchPrediction out;
    out.q_o.resize(points.size());
    const auto phi = physical_parameters(theta);
    Eigen::RowVectorXd g;
    if (has_network(variant_)) {
      if (static_cast<std::size_t>(X.cols()) != points.size()) throw ContractError("evaluate: input matrix mismatch");
      g = network_forward_batch(network_view(theta), X);
    }
    for (std::size_t n = 0; n < points.size(); ++n) {
      bool fl = false;
      const double gn = g.size() ? g(static_cast<Eigen::Index>(n)) : 0.0;
      out.q_o[n] = hybrid_output(variant_, points[n], phi, gn, output_scale_, &fl);
      if (fl) ++out.floored;
    }
    return out;
  }

  BatchPrediction evaluate(std::span<const OperatingPoint> points) const {
    return evaluate(theta_, points, has_network(variant_) ? network_inputs(points) : Eigen::MatrixXd());
  }

  std::vector<double> predict_batch(std::span<const OperatingPoint> points) const {
    for (const auto& x : points) validate(x);
    auto r = evaluate(points);
    if (!points.empty() &&
        static_cast<double>(r.floored) > priors_.floor_fraction * static_cast<double>(points.size())) {
      throw EvaluationError("substituted quantity hit the positivity floor for " + std::to_string(r.floored) +
                            " of " + std::to_string(points.size()) + " samples");
    }
    return std::move(r.q_o);
  }

  double predict(const OperatingPoint& x) const { return predict_batch(std::span(&x, 1)).front(); }

  // Network trace over one swept input; other inputs at the training medians.
  std::vector<SubfunctionSample> extract_subfunction(Input swept, std::span<const double> values) const {
    if (variant_ == Variant::MM) throw ContractError("MM has no subfunction");
    const auto& in = spec().inputs;
    if (std::find(in.begin(), in.end(), swept) == in.end()) {
      throw ContractError(std::string(input_name(swept)) + " is not an input of " + std::string(variant_name(variant_)));
    }
    std::vector<OperatingPoint> pts;
    pts.reserve(values.size());
    for (double v : values) {
      OperatingPoint x = stats_.reference;
      set_input(x, swept, v);
      pts.push_back(x);
    }
    const auto phi = physical_parameters();
    const Eigen::RowVectorXd g = network_forward_batch(network_view(theta_), network_inputs(pts));
    std::vector<SubfunctionSample> out;
    out.reserve(pts.size());
    for (std::size_t n = 0; n < pts.size(); ++n) {
      SubfunctionSample s;
      s.x = pts[n];
      s.swept = values[n];
      const double gn = g(static_cast<Eigen::Index>(n));
      s.network = gn * output_scale_;
      s.effective = is_substitution(variant_) ? std::max(gn, kSubstitutionFloor) * output_scale_ : s.network;
      s.mechanistic = replaced_relation(variant_, pts[n], phi);
      out.push_back(s);
    }
    return out;
  }

  friend bool operator==(const HybridModel& a, const HybridModel& b) {
    return a.variant_ == b.variant_ && a.theta_ == b.theta_ && a.widths_ == b.widths_ &&
           a.network_prior_mean_ == b.network_prior_mean_ && a.stats_ == b.stats_ &&
           a.output_scale_ == b.output_scale_ && a.meta_ == b.meta_ && a.priors_.zeta == b.priors_.zeta &&
           a.priors_.constants == b.priors_.constants && a.priors_.hidden == b.priors_.hidden &&
           a.priors_.floor_fraction == b.priors_.floor_fraction && same_physical_priors(a, b);
  }

 private:
  friend HybridModel model_from_json(const nlohmann::json&);

  double fixed_value(Param p) const {
    const auto& o = priors_.physical[static_cast<std::size_t>(p)];
    if (o) return o->mean;
    return field(PhysicalParameters<double>{}, p);  // DM only: never enters a prediction
  }

  static bool same_physical_priors(const HybridModel& a, const HybridModel& b) {
    for (std::size_t i = 0; i < kParamCount; ++i) {
      const auto& x = a.priors_.physical[i];
      const auto& y = b.priors_.physical[i];
      if (x.has_value() != y.has_value()) return false;
      if (x && (x->mean != y->mean || x->sigma != y->sigma)) return false;
    }
    return true;
  }

  Variant variant_ = Variant::MM;
  ModelPriors priors_{};
  InputStatistics stats_{};
  std::vector<double> theta_;
  std::vector<std::size_t> widths_;
  std::vector<double> network_prior_mean_;
  double output_scale_ = 1.0;
  TrainingMetadata meta_{};
};

// --- archive ------------------------------------------------------------------------
//
// {"format": "vfm-model", "version": 1, "variant": "...", "zeta": ..., "floor_fraction": ...,
//  "constants": {...}, "hidden": [...],
//  "physical": {"<name>": {"value", "prior_mean", "prior_sigma", "estimable", "S"}},
//  "statistics": {"mean", "stddev", "lower", "upper", "reference": {...}, "y_ref"},
//  "output_scale": ..., "network": <vfm-network>, "network_prior_mean": [...],
//  "training": {"seed", "epochs", "pretrained"}}

inline nlohmann::json point_to_json(const OperatingPoint& x) {
  return {{"timestamp", x.timestamp}, {"p1", x.p1},       {"p2", x.p2},       {"t1", x.t1},
          {"t2", x.t2},               {"u", x.u},         {"eta_g", x.eta_g}, {"eta_o", x.eta_o},
          {"eta_w", x.eta_w},         {"q_o", x.q_o},     {"q_g", x.q_g},     {"q_w", x.q_w}};
}

inline OperatingPoint point_from_json(const nlohmann::json& j) {
  OperatingPoint x;
  x.timestamp = j.at("timestamp").get<Timestamp>();
  x.p1 = j.at("p1").get<double>();
  x.p2 = j.at("p2").get<double>();
  x.t1 = j.at("t1").get<double>();
  x.t2 = j.at("t2").get<double>();
  x.u = j.at("u").get<double>();
  x.eta_g = j.at("eta_g").get<double>();
  x.eta_o = j.at("eta_o").get<double>();
  x.eta_w = j.at("eta_w").get<double>();
  x.q_o = j.at("q_o").get<double>();
  x.q_g = j.at("q_g").get<double>();
  x.q_w = j.at("q_w").get<double>();
  return x;
}

inline nlohmann::json constants_to_json(const FluidConstants& c) {
  return {{"gas_constant", c.gas_constant}, {"p_sc", c.p_sc},         {"t_sc", c.t_sc},
          {"rho_o_sc", c.rho_o_sc},         {"rho_g_sc", c.rho_g_sc}, {"rho_w_sc", c.rho_w_sc},
          {"a_max", c.a_max}};
}

inline FluidConstants constants_from_json(const nlohmann::json& j) {
  FluidConstants c;
  c.gas_constant = j.at("gas_constant").get<double>();
  c.p_sc = j.at("p_sc").get<double>();
  c.t_sc = j.at("t_sc").get<double>();
  c.rho_o_sc = j.at("rho_o_sc").get<double>();
  c.rho_g_sc = j.at("rho_g_sc").get<double>();
  c.rho_w_sc = j.at("rho_w_sc").get<double>();
  c.a_max = j.at("a_max").get<double>();
  return c;
}

inline nlohmann::json model_to_json(const HybridModel& m) {
  nlohmann::json j;
  j["format"] = "vfm-model";
  j["version"] = 1;
  j["variant"] = std::string(variant_name(m.variant()));
  j["zeta"] = m.zeta();
  j["floor_fraction"] = m.priors().floor_fraction;
  j["constants"] = constants_to_json(m.priors().constants);
  j["hidden"] = m.priors().hidden;
  nlohmann::json phys = nlohmann::json::object();
  for (auto p : kAllParams) {
    const auto& o = m.priors().physical[static_cast<std::size_t>(p)];
    if (!o) continue;
    nlohmann::json e{{"value", m.natural(p)}, {"prior_mean", o->mean}, {"prior_sigma", o->sigma},
                     {"estimable", m.is_estimable(p)}};
    const auto est = m.estimable();
    for (std::size_t k = 0; k < est.size(); ++k) {
      if (est[k] == p) e["S"] = m.theta()[k];
    }
    phys[std::string(param_name(p))] = std::move(e);
  }
  j["physical"] = std::move(phys);
  const auto& s = m.statistics();
  j["statistics"] = {{"mean", s.mean},   {"stddev", s.stddev}, {"lower", s.lower},
                     {"upper", s.upper}, {"reference", point_to_json(s.reference)}, {"y_ref", s.y_ref}};
  j["output_scale"] = m.output_scale();
  if (has_network(m.variant())) {
    j["network"] = network_to_json(m.network());
    j["network_prior_mean"] = std::vector<double>(m.network_prior_mean().begin(), m.network_prior_mean().end());
  }
  j["training"] = {{"seed", m.metadata().seed}, {"epochs", m.metadata().epochs}, {"pretrained", m.metadata().pretrained}};
  return j;
}

inline HybridModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "vfm-model") throw ConfigError("not a vfm-model archive");
    if (j.value("version", 0) != 1) {
      throw ConfigError("unsupported vfm-model archive version " + j.value("version", nlohmann::json(0)).dump());
    }
    HybridModel m;
    m.variant_ = parse_variant(j.at("variant").get<std::string>());
    m.priors_.zeta = j.at("zeta").get<double>();
    m.priors_.floor_fraction = j.at("floor_fraction").get<double>();
    m.priors_.constants = constants_from_json(j.at("constants"));
    m.priors_.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    for (const auto& [name, e] : j.at("physical").items()) {
      m.priors_.set(parse_param(name), {e.at("prior_mean").get<double>(), e.at("prior_sigma").get<double>()});
    }
    for (auto p : m.spec().estimable) {
      const auto& e = j.at("physical").at(std::string(param_name(p)));
      m.theta_.push_back(e.at("S").get<double>());
    }
    const auto& s = j.at("statistics");
    m.stats_.mean = s.at("mean").get<std::array<double, kInputCount>>();
    m.stats_.stddev = s.at("stddev").get<std::array<double, kInputCount>>();
    m.stats_.lower = s.at("lower").get<std::array<double, kInputCount>>();
    m.stats_.upper = s.at("upper").get<std::array<double, kInputCount>>();
    m.stats_.reference = point_from_json(s.at("reference"));
    m.stats_.y_ref = s.at("y_ref").get<double>();
    m.output_scale_ = j.at("output_scale").get<double>();
    if (has_network(m.variant_)) {
      const auto net = network_from_json(j.at("network"));
      if (net.widths.front() != m.spec().inputs.size()) throw ConfigError("network input width does not match variant");
      m.widths_ = net.widths;
      m.theta_.insert(m.theta_.end(), net.values.begin(), net.values.end());
      m.network_prior_mean_ = j.at("network_prior_mean").get<std::vector<double>>();
      if (m.network_prior_mean_.size() != net.values.size()) throw ConfigError("network prior mean has wrong length");
    }
    const auto& t = j.at("training");
    m.meta_.seed = t.at("seed").get<std::uint64_t>();
    m.meta_.epochs = t.at("epochs").get<std::size_t>();
    m.meta_.pretrained = t.at("pretrained").get<bool>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model archive: ") + e.what());
  }
}

inline void save_model(const HybridModel& m, const std::string& path) {
  write_file(path, model_to_json(m).dump(1) + "\n");
}

inline HybridModel load_model(const std::string& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model archive '" + path + "' is not valid JSON: " + e.what());
  }
  return model_from_json(j);
}

}  // namespace vfm
