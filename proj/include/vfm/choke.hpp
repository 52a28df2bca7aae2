#pragma once

// Steady-state multiphase choke model (Sachdeva type): mass flow through the
// valve from upstream/downstream conditions, and the oil rate at standard
// conditions derived from it.

#include <cmath>
#include <optional>
#include <string>

#include "vfm/fluid.hpp"

namespace vfm {

struct PressureRatio {
  double value = 1.0;
  bool critical = false;
  bool no_driving_force = false;  // p2 >= p1, the model yields zero flow
};

inline PressureRatio pressure_ratio(double p1, double p2, double p_rc) {
  if (!(p1 > 0)) throw DomainError("pressure_ratio: p1 must be positive");
  if (!(p2 >= 0)) throw DomainError("pressure_ratio: p2 must be nonnegative");
  const double raw = p2 / p1;
  PressureRatio r;
  r.critical = raw < p_rc;
  r.no_driving_force = raw >= 1.0;
  r.value = minimum(maximum(raw, p_rc), 1.0);
  return r;
}

// max(p2/p1, p_rc) capped at 1. At the kink the subcritical branch wins.
template <class Scalar>
Scalar effective_pressure_ratio(double p1, double p2, const Scalar& p_rc) {
  return minimum(maximum(p2 / p1, p_rc), 1.0);
}

// Effective flow area, linear in the opening.
inline double area_function(double u, double a_max) {
  if (!(u >= 0 && u <= 1)) throw DomainError("area_function: choke opening outside [0, 1]");
  return a_max * u;
}

// Optional replacements for intermediate quantities of the model. Each one, when
// set, is used instead of the corresponding mechanistic relation.
template <class Scalar>
struct Substitutions {
  std::optional<Scalar> area_term;  // C_D * A2(u)
  std::optional<Scalar> rho_g1;     // upstream gas density
  std::optional<Scalar> rho_g2;     // downstream gas density
  std::optional<Scalar> rho_mix;    // downstream mixture density
};

template <class Scalar>
struct ChokeFlow {
  Scalar m_dot{};
  Scalar p_r_effective{};
  Scalar rho_2{};
  Scalar q_o{};
  bool critical = false;
};

using ChokeFlowResult = ChokeFlow<double>;

template <class Scalar>
ChokeFlow<Scalar> choke_flow(const OperatingPoint& x, const PhysicalParameters<Scalar>& phi,
                             const Substitutions<Scalar>& sub = {}) {
  using std::sqrt;
  const MassFractions f = x.fractions();
  ChokeFlow<Scalar> out;
  out.critical = x.p2 / x.p1 < value_of(phi.p_rc);
  const Scalar p_r = effective_pressure_ratio(x.p1, x.p2, phi.p_rc);
  out.p_r_effective = p_r;

  const Scalar area = sub.area_term ? *sub.area_term : Scalar(phi.c_d * area_function(x.u, phi.constants.a_max));
  const Scalar rho_g1 = sub.rho_g1 ? *sub.rho_g1 : gas_density_upstream(x.p1, x.t1, phi);
  const Scalar rho_g2 = sub.rho_g2 ? *sub.rho_g2 : gas_density_downstream(rho_g1, p_r, phi.kappa);
  const Scalar rho_2 = sub.rho_mix ? *sub.rho_mix : mixture_density(rho_g2, f, phi.rho_o, phi.rho_w);
  out.rho_2 = rho_2;

  const Scalar gas_term = phi.kappa / (phi.kappa - 1.0) * f.gas * (1.0 / rho_g1 - p_r / rho_g2);
  const Scalar liquid_term = (f.oil / phi.rho_o + f.water / phi.rho_w) * (1.0 - p_r);
  Scalar bracket = gas_term + liquid_term;
  if (value_of(bracket) < 0.0) {
    const double scale = std::abs(value_of(phi.kappa / (phi.kappa - 1.0) * f.gas / rho_g1)) +
                         std::abs(value_of(f.oil / phi.rho_o + f.water / phi.rho_w));
    if (value_of(bracket) < -1e-12 * scale) {
      throw EvaluationError("choke_flow: negative radicand (gas term " + format_double(value_of(gas_term)) +
                            ", liquid term " + format_double(value_of(liquid_term)) + ")");
    }
    bracket = Scalar(0.0);  // rounding at p_r -> 1
  }
  out.m_dot = area * sqrt(2.0 * rho_2 * rho_2 * x.p1 * bracket);
  out.q_o = f.oil * out.m_dot / phi.constants.rho_o_sc;
  return out;
}

inline ChokeFlowResult mass_flow_rate(const OperatingPoint& x, const PhysicalParameters<double>& params) {
  validate(x);
  params.validate();
  return choke_flow(x, params);
}

inline double predict_oil_rate(const OperatingPoint& x, const PhysicalParameters<double>& params) {
  return mass_flow_rate(x, params).q_o;
}

}  // namespace vfm
