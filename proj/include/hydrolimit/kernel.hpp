#pragma once

#include <vector>

#include "hydrolimit/common.hpp"

namespace hydrolimit {

// B(v-u, theta) = |v-u|^gamma * b_scale * |cos theta|
struct KernelSpec {
    double gamma = 1.0;
    double b_scale = 1.0;
    int n_polar = 8;
    int n_azimuth = 8;

    void validate() const;
    double angular_integral() const { return 2.0 * kPi * b_scale; }
    double speed_factor(double r) const;  // r^gamma, 0 at r = 0 for soft potentials
};

// Product rule on S^2 about an axis: Gauss-Legendre in c = |cos| on [0, 1]
// times a uniform azimuth. Only one hemisphere is stored; the weights carry
// the factor 2 from omega -> -omega, which leaves (u', v') unchanged.
struct AngularRule {
    std::vector<double> cos_polar;
    std::vector<double> sin_polar;
    std::vector<double> weight_polar;  // includes b_scale * c * 2 * (2 pi / n_azimuth)
    std::vector<double> cos_az;
    std::vector<double> sin_az;

    explicit AngularRule(const KernelSpec& k);
    std::size_t size() const { return cos_polar.size() * cos_az.size(); }
    double total_weight() const;
};

// Orthonormal frame (e1, e2, e3) with e3 along a.
void frame_from_axis(const Vec3& a, Vec3& e1, Vec3& e2, Vec3& e3);

// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w);

}  // namespace hydrolimit
