#pragma once

#include "hydrolimit/common.hpp"

namespace hydrolimit {

inline const double kSqrt53 = std::sqrt(5.0 / 3.0);
inline const double kSqrt15 = std::sqrt(15.0);

struct GasState {
    double rho = 1.0;
    Vec3 u{0.0, 0.0, 0.0};
    double theta = 1.0;

    double pressure() const { return rho * theta; }
    bool valid() const;
    void validate() const;  // throws Domain
};

double entropy(double rho, double theta);
double lambda1(double rho, double u1, double s);

struct WaveEndStates {
    GasState left;
    GasState right;
    double s_plus = 0.0;
    double w_minus = 0.0;
    double w_plus = 0.0;
    double invariant = 0.0;  // u1 + sqrt(15) rho^{1/3} e^{s/2}

    double strength() const { return w_plus - w_minus; }
    // State on the wave curve with lambda1 = w.
    GasState state_at(double w) const;
    // d(rho, u1, theta)/dw along the wave curve.
    std::array<double, 3> state_slope(double w) const;
};

WaveEndStates connect_right_state(const GasState& left, double w_plus);
// Builds end states from two explicit states and checks the invariants.
WaveEndStates make_endstates(const GasState& left, const GasState& right, bool theorem_compatible,
                             double tol = 1e-10);

GasState exact_wave(const WaveEndStates& ends, double t, double x1);

struct SmoothWaveParams {
    WaveEndStates endstates;
    double sigma = 0.1;

    void validate() const;
    double w_sigma(double x0) const;
    double dw_sigma(double x0) const;
    double d2w_sigma(double x0) const;
};

// Foot of the Burgers characteristic through (t, x1).
double characteristic_foot(const SmoothWaveParams& p, double t, double x1);
double burgers_smooth(const SmoothWaveParams& p, double t, double x1);
GasState smooth_wave(const SmoothWaveParams& p, double t, double x1);

struct WaveDerivatives {
    GasState state;
    double w = 0.0;
    double w_t = 0.0;
    double w_x = 0.0;
    double rho_t = 0.0, rho_x = 0.0;
    double u_t = 0.0, u_x = 0.0;
    double theta_t = 0.0, theta_x = 0.0;
};

WaveDerivatives wave_derivatives(const SmoothWaveParams& p, double t, double x1);

enum class NormKind { L1, L2, Linf };

struct DecayNorms {
    double rho = 0.0;
    double u1 = 0.0;
    double theta = 0.0;
    double w = 0.0;
};

DecayNorms decay_norms(const SmoothWaveParams& p, double t, NormKind kind);

double sup_distance(const SmoothWaveParams& p, double t);

}  // namespace hydrolimit
