#pragma once

// Mechanistic choke conformance cases, evaluated independently by oracles/choke_oracle.py.

namespace vfm::testing_cases {

struct ConformanceCase {
  double p1, p2, t1, u, eg, eo, ew;
  double rho_o, rho_w, kappa, m_g, p_rc, c_d;
  double m_dot, q_o;
};

constexpr ConformanceCase kCases[] = {
    {10e5, 8e5, 300, 0.5, 0.0, 1.0, 0.0, 800, 1000, 1.3, 0.0189, 0.6, 1.0, 17.888543819998315, 0.021045345670586253},
    {60e5, 20e5, 330, 0.5, 0.05, 0.75, 0.2, 800, 1000, 1.3, 0.0189, 0.6, 0.8, 31.482239309566957, 0.027778446449617904},
    {60e5, 45e5, 330, 0.5, 0.05, 0.75, 0.2, 800, 1000, 1.3, 0.0189, 0.6, 0.8, 26.86797080345471, 0.023707033061871802},
    {80e5, 30e5, 340, 0.9, 0.1, 0.6, 0.3, 800, 1000, 1.3, 0.0189, 0.6, 0.8, 57.137744452042206, 0.040332525495559206},
    {40e5, 30e5, 320, 0.2, 0.02, 0.9, 0.08, 800, 1000, 1.3, 0.0189, 0.6, 0.8, 9.8582438880258287, 0.010438140587321466},
    {120e5, 50e5, 350, 0.7, 0.15, 0.7, 0.15, 800, 1000, 1.25, 0.021, 0.6, 0.8, 56.563540307351708, 0.046581739076642585},
    {50e5, 49e5, 310, 1.0, 0.08, 0.52, 0.4, 800, 1000, 1.3, 0.0189, 0.5, 0.9, 14.570161434926924, 0.0089135105248964713},
    {70e5, 10e5, 335, 0.35, 0.0, 0.5, 0.5, 800, 1000, 1.3, 0.0189, 0.6, 0.8, 39.509886245231215, 0.023241109556018363},
    {90e5, 60e5, 345, 0.6, 0.3, 0.7, 0.0, 750, 1000, 1.3, 0.0189, 0.6, 0.8, 25.999785459857922, 0.021411588025765343},
    {30e5, 18e5, 300, 0.45, 0.04, 0.66, 0.30, 800, 1030, 1.3, 0.0189, 0.65, 0.8, 16.952209582515124, 0.013162892146423509},
};

}  // namespace vfm::testing_cases
