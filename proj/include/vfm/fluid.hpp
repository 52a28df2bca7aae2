#pragma once

// Phase-level thermodynamic relations of the choke model. All quantities are SI.
// Relations are templated on the scalar type so the same code evaluates with
// doubles and with reverse-mode variables.

#include <cmath>
#include <optional>
#include <string>

#include "vfm/autodiff.hpp"
#include "vfm/errors.hpp"
#include "vfm/text.hpp"

namespace vfm {

inline constexpr double kAirMolarMass = 0.028964;  // kg/mol
inline constexpr double kPsiToPa = 6894.757293168;
inline constexpr double kRankineToKelvin = 5.0 / 9.0;
inline constexpr double kMinSpecificGravity = 0.55;
inline constexpr double kMaxSpecificGravity = 1.5;

// Fixed (never estimated) constants of the choke model.
struct FluidConstants {
  double gas_constant = 8.314;      // J/(mol K)
  double p_sc = 101325.0;           // Pa
  double t_sc = 288.15;             // K
  double rho_o_sc = 850.0;          // kg/m3
  double rho_g_sc = 0.8;            // kg/m3
  double rho_w_sc = 1000.0;         // kg/m3
  double a_max = 2.0e-3;            // m2, fully open effective area

  void validate() const {
    if (!(gas_constant > 0 && p_sc > 0 && t_sc > 0 && rho_o_sc > 0 && rho_g_sc > 0 && rho_w_sc > 0 &&
          a_max > 0)) {
      throw ValidationError("fluid constants must be strictly positive");
    }
  }
  friend bool operator==(const FluidConstants&, const FluidConstants&) = default;
};

// The estimable mechanistic parameter set plus the fixed constants.
template <class Scalar = double>
struct PhysicalParameters {
  Scalar rho_o = 800.0;   // oil density, kg/m3
  Scalar rho_w = 1000.0;  // water density, kg/m3
  Scalar kappa = 1.3;     // gas expansion coefficient
  Scalar m_g = 0.0189;    // gas molar mass, kg/mol
  Scalar p_rc = 0.6;      // critical pressure ratio
  Scalar c_d = 0.8;       // discharge coefficient
  FluidConstants constants{};

  void validate() const {
    constants.validate();
    if (!(value_of(rho_o) > 0 && value_of(rho_w) > 0 && value_of(m_g) > 0 && value_of(c_d) > 0)) {
      throw ValidationError("physical parameters must be strictly positive");
    }
    if (!(value_of(p_rc) > 0 && value_of(p_rc) < 1)) throw ValidationError("p_rc must lie in (0, 1)");
    if (!(value_of(kappa) > 1)) throw ValidationError("kappa must exceed 1");
  }
};

struct MassFractions {
  double gas = 0.0;
  double oil = 0.0;
  double water = 0.0;

  double sum() const { return gas + oil + water; }
};

// One steady-state sample: explanatory variables plus measured flow rates.
struct OperatingPoint {
  Timestamp timestamp = 0;
  double p1 = 0.0;  // Pa
  double p2 = 0.0;  // Pa
  double t1 = 0.0;  // K
  double t2 = 0.0;  // K
  double u = 0.0;   // choke opening, [0, 1]
  double eta_g = 0.0;
  double eta_o = 0.0;
  double eta_w = 0.0;
  double q_o = 0.0;  // m3/s at standard conditions
  double q_g = 0.0;
  double q_w = 0.0;

  MassFractions fractions() const { return {eta_g, eta_o, eta_w}; }
  void set_fractions(const MassFractions& f) {
    eta_g = f.gas;
    eta_o = f.oil;
    eta_w = f.water;
  }

  friend bool operator==(const OperatingPoint&, const OperatingPoint&) = default;
};

inline void validate(const OperatingPoint& x) {
  if (!(x.p1 > 0 && x.p2 > 0)) throw ValidationError("pressures must be positive");
  if (!(x.t1 > 0 && x.t2 > 0)) throw ValidationError("temperatures must be positive");
  if (!(x.u >= 0 && x.u <= 1)) throw ValidationError("choke opening must lie in [0, 1]");
  if (!(x.eta_g >= 0 && x.eta_o >= 0 && x.eta_w >= 0)) {
    throw ValidationError("mass fractions must be nonnegative");
  }
  if (std::abs(x.eta_g + x.eta_o + x.eta_w - 1.0) > 1e-9) {
    throw ValidationError("mass fractions must sum to 1");
  }
  if (!(x.q_o >= 0 && x.q_g >= 0 && x.q_w >= 0)) throw ValidationError("flow rates must be nonnegative");
}

inline double specific_gravity_from_molar_mass(double m_g) { return m_g / kAirMolarMass; }

// Gas compressibility factor.
//
// Pseudo-critical properties from gas specific gravity (Sutton, 1985):
//   T_pc = 169.2 + 349.5 g - 74.0 g^2   [degR]
//   p_pc = 756.8 - 131.07 g - 3.6 g^2   [psia]
// and the explicit correlation of Papay (1968):
//   Z = 1 - 3.53 p_pr / 10^(0.9813 T_pr) + 0.274 p_pr^2 / 10^(0.8157 T_pr)
//
// No range checks here; see z_factor() for the checked entry point.
template <class Scalar>
Scalar z_factor_correlation(double p, double t, const Scalar& gamma) {
  using std::exp;
  const Scalar t_pc = (169.2 + 349.5 * gamma - 74.0 * gamma * gamma) * kRankineToKelvin;
  const Scalar p_pc = (756.8 - 131.07 * gamma - 3.6 * gamma * gamma) * kPsiToPa;
  const Scalar t_pr = t / t_pc;
  const Scalar p_pr = p / p_pc;
  const double ln10 = std::log(10.0);
  return 1.0 - 3.53 * p_pr * exp(-0.9813 * ln10 * t_pr) +
         0.274 * p_pr * p_pr * exp(-0.8157 * ln10 * t_pr);
}

inline double z_factor(double p, double t, double gas_specific_gravity) {
  if (!(p > 0)) throw DomainError("z_factor: pressure must be positive");
  if (!(t > 0)) throw DomainError("z_factor: temperature must be positive");
  if (!(gas_specific_gravity >= kMinSpecificGravity && gas_specific_gravity <= kMaxSpecificGravity)) {
    throw DomainError("z_factor: gas_specific_gravity " + format_double(gas_specific_gravity) +
                      " outside [0.55, 1.5]");
  }
  const double z = z_factor_correlation(p, t, gas_specific_gravity);
  if (!(z > 0 && z <= 2)) {
    throw DomainError("z_factor: correlation left its validity range (Z = " + format_double(z) + ")");
  }
  return z;
}

// Z as used inside the choke model: specific gravity follows M_G, clamped to the
// correlation's range.
template <class Scalar>
Scalar z_factor_for_molar_mass(double p, double t, const Scalar& m_g) {
  const Scalar gamma = minimum(maximum(m_g / kAirMolarMass, kMinSpecificGravity), kMaxSpecificGravity);
  return z_factor_correlation(p, t, gamma);
}

// Real gas law upstream of the choke.
template <class Scalar>
Scalar gas_density_upstream(double p1, double t1, const Scalar& m_g, const Scalar& z,
                            double gas_constant = 8.314) {
  if (!(p1 > 0) || !(t1 > 0) || !(value_of(m_g) > 0) || !(value_of(z) > 0)) {
    throw DomainError("gas_density_upstream: inputs must be positive");
  }
  return p1 * m_g / (z * gas_constant * t1);
}

template <class Scalar>
Scalar gas_density_upstream(double p1, double t1, const PhysicalParameters<Scalar>& params) {
  if (!(p1 > 0) || !(t1 > 0)) throw DomainError("gas_density_upstream: inputs must be positive");
  const Scalar z = z_factor_for_molar_mass(p1, t1, params.m_g);
  return gas_density_upstream(p1, t1, params.m_g, z, params.constants.gas_constant);
}

// Adiabatic expansion across the choke.
template <class Scalar, class Ratio>
Scalar gas_density_downstream(const Scalar& rho_g1, const Ratio& p_r, const Scalar& kappa) {
  using std::pow;
  if (!(value_of(rho_g1) > 0)) throw DomainError("gas_density_downstream: rho_G1 must be positive");
  if (!(value_of(p_r) > 0)) throw DomainError("gas_density_downstream: p_r must be positive");
  if (value_of(p_r) > 1) throw DomainError("gas_density_downstream: p_r > 1 (flow reversal is not modeled)");
  if (!(value_of(kappa) > 1)) throw DomainError("gas_density_downstream: kappa must exceed 1");
  return rho_g1 * pow(p_r, 1.0 / kappa);
}

// Homogeneous mixture density: 1/rho = eta_G/rho_G2 + eta_O/rho_O + eta_W/rho_W.
template <class Scalar>
Scalar mixture_density(const Scalar& rho_g2, const MassFractions& f, const Scalar& rho_o,
                       const Scalar& rho_w) {
  if (std::abs(f.sum() - 1.0) > 1e-6) throw ValidationError("mixture_density: mass fractions do not sum to 1");
  if (f.gas < 0 || f.oil < 0 || f.water < 0) throw ValidationError("mixture_density: negative mass fraction");
  if (!(value_of(rho_g2) > 0 && value_of(rho_o) > 0 && value_of(rho_w) > 0)) {
    throw DomainError("mixture_density: densities must be positive");
  }
  return 1.0 / (f.gas / rho_g2 + f.oil / rho_o + f.water / rho_w);
}

// Mass fractions from the previous sample's measured volumetric rates. Empty when
// the previous sample carries no flow.
inline std::optional<MassFractions> lagged_mass_fractions(const OperatingPoint& prev,
                                                          const FluidConstants& c) {
  const double mg = c.rho_g_sc * prev.q_g;
  const double mo = c.rho_o_sc * prev.q_o;
  const double mw = c.rho_w_sc * prev.q_w;
  const double total = mg + mo + mw;
  if (!(total > 0) || mg < 0 || mo < 0 || mw < 0 || !std::isfinite(total)) return std::nullopt;
  MassFractions f{mg / total, mo / total, mw / total};
  // Put the rounding residue on the largest phase so the closure is tight.
  const double residue = 1.0 - f.sum();
  if (f.oil >= f.gas && f.oil >= f.water) {
    f.oil += residue;
  } else if (f.water >= f.gas) {
    f.water += residue;
  } else {
    f.gas += residue;
  }
  return f;
}

}  // namespace vfm
