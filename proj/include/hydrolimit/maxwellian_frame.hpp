#pragma once

#include <Eigen/Dense>

#include "hydrolimit/euler_waves.hpp"
#include "hydrolimit/kernel.hpp"
#include "hydrolimit/velocity_grid.hpp"

namespace hydrolimit {

double maxwellian(const GasState& s, const Vec3& v);
Field maxwellian_on(const GasState& s, const VelocityGrid& grid);

std::array<double, 5> chi_basis(const GasState& s, const Vec3& v);

// Discrete L2_v projection onto span{chi_0..chi_4}. The Gram matrix is
// inverted so the projector is exact on the lattice.
class MacroProjector {
public:
    MacroProjector() = default;
    MacroProjector(const GasState& s, const VelocityGrid& grid);

    Field apply(const Field& g) const;
    Field complement(const Field& g) const;  // (I - P) g
    // Coordinates c with P g = sum_i c_i chi_i.
    std::array<double, 5> coordinates(const Field& g) const;
    const Field& chi(int i) const { return chi_[i]; }
    const Eigen::Matrix<double, 5, 5>& gram() const { return gram_; }
    const VelocityGrid& grid() const { return grid_; }

private:
    VelocityGrid grid_;
    std::array<Field, 5> chi_;
    Eigen::Matrix<double, 5, 5> gram_;
    Eigen::Matrix<double, 5, 5> gram_inv_;
};

Field project_P(const Field& g, const GasState& s, const VelocityGrid& grid);

double collision_frequency(const GasState& s, const KernelSpec& kernel, const Vec3& v);

double choose_theta_M(double theta_minus, double theta_plus);

inline double default_beta(double gamma) { return 2.25 + 2.0 * (3.0 - gamma); }

struct MaxwellFrame {
    GasState state;
    double theta_M = 0.625;
    double beta = 6.25;
    double gamma = 1.0;

    double mu_sigma(const Vec3& v) const { return maxwellian(state, v); }
    double mu_M(const Vec3& v) const;
    double weight(const Vec3& v) const { return std::pow(1.0 + norm2(v), beta); }
};

struct MuComparison {
    double C = 1.0;
    double alpha = 0.75;
};

// Smallest C over a set of admissible alpha such that
// mu_M / C <= mu_s <= C mu_M^alpha holds at every node and sampled state.
MuComparison mu_comparison(const std::vector<GasState>& states, double theta_M, const VelocityGrid& grid);
MuComparison mu_comparison(const MaxwellFrame& frame, const VelocityGrid& grid);

// Reference grid for a set of states: L = 8 sqrt(theta_max) + |u|_max.
VelocityGrid reference_grid(double theta_max, double u_max, int n);

}  // namespace hydrolimit
