#include "hydrolimit/maxwellian_frame.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <limits>

namespace hydrolimit {

double maxwellian(const GasState& s, const Vec3& v) {
    const double d2 = norm2(v - s.u);
    return s.rho * std::pow(2.0 * kPi * s.theta, -1.5) * std::exp(-0.5 * d2 / s.theta);
}

Field maxwellian_on(const GasState& s, const VelocityGrid& grid) {
    return grid.sample([&](const Vec3& v) { return maxwellian(s, v); });
}

std::array<double, 5> chi_basis(const GasState& s, const Vec3& v) {
    const double sq = std::sqrt(maxwellian(s, v));
    const Vec3 c = v - s.u;
    const double a = sq / std::sqrt(s.rho * s.theta);
    return {sq / std::sqrt(s.rho), c[0] * a, c[1] * a, c[2] * a,
            (norm2(c) / s.theta - 3.0) * sq / std::sqrt(6.0 * s.rho)};
}

MacroProjector::MacroProjector(const GasState& s, const VelocityGrid& grid) : grid_(grid) {
    s.validate();
    for (auto& c : chi_) c.resize(grid.size());
    for (std::size_t q = 0; q < grid.size(); ++q) {
        const auto b = chi_basis(s, grid.node(q));
        for (int i = 0; i < 5; ++i) chi_[i][q] = b[i];
    }
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) gram_(i, j) = grid.inner(chi_[i], chi_[j]);
    gram_inv_ = gram_.inverse();
}

std::array<double, 5> MacroProjector::coordinates(const Field& g) const {
    Eigen::Matrix<double, 5, 1> b;
    for (int i = 0; i < 5; ++i) b(i) = grid_.inner(chi_[i], g);
    const Eigen::Matrix<double, 5, 1> c = gram_inv_ * b;
    return {c(0), c(1), c(2), c(3), c(4)};
}

Field MacroProjector::apply(const Field& g) const {
    const auto c = coordinates(g);
    Field out(g.size(), 0.0);
    for (int i = 0; i < 5; ++i)
        for (std::size_t q = 0; q < out.size(); ++q) out[q] += c[i] * chi_[i][q];
    return out;
}

Field MacroProjector::complement(const Field& g) const {
    Field p = apply(g);
    for (std::size_t q = 0; q < p.size(); ++q) p[q] = g[q] - p[q];
    return p;
}

Field project_P(const Field& g, const GasState& s, const VelocityGrid& grid) {
    return MacroProjector(s, grid).apply(g);
}

double collision_frequency(const GasState& s, const KernelSpec& kernel, const Vec3& v) {
    if (!(kernel.gamma > -3.0)) throw Error(ErrorKind::Domain, "collision frequency needs gamma > -3");
    kernel.validate();
    s.validate();
    const double a = std::sqrt(norm2(v - s.u));
    const double th = s.theta;
    // Angular average of the Maxwellian at distance r from v, times r^{2+gamma}.
    auto f = [&](double r) {
        if (r <= 0.0) return 0.0;
        const double x = a * r / th;
        double ang;
        if (x < 1e-4) {
            ang = 4.0 * kPi * (1.0 + x * x / 6.0) * std::exp(-0.5 * (a * a + r * r) / th);
        } else {
            ang = (2.0 * kPi * th / (a * r)) *
                  (std::exp(-0.5 * (a - r) * (a - r) / th) - std::exp(-0.5 * (a + r) * (a + r) / th));
        }
        return std::pow(r, 2.0 + kernel.gamma) * ang;
    };
    const double span = 12.0 * std::sqrt(th);
    const double lo = std::max(0.0, a - span);
    double integral = 0.0;
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    if (lo > 0.0) integral += GK::integrate(f, 0.0, lo, 15, 1e-13);
    if (a > lo) integral += GK::integrate(f, lo, a, 15, 1e-13);
    integral += GK::integrate(f, a, a + span, 15, 1e-13);
    return kernel.angular_integral() * s.rho * std::pow(2.0 * kPi * th, -1.5) * integral;
}

double choose_theta_M(double theta_minus, double theta_plus) {
    if (!(theta_minus > 0.0) || !(theta_plus > 0.0)) throw Error(ErrorKind::Domain, "temperatures must be positive");
    const double hi = std::max(theta_minus, theta_plus);
    const double lo = std::min(theta_minus, theta_plus);
    if (!(hi < 2.0 * lo)) throw Error(ErrorKind::IncompatibleWaveStrength, "max theta must stay below 2 min theta");
    return 0.5 * (0.5 * hi + lo);
}

double MaxwellFrame::mu_M(const Vec3& v) const {
    return std::pow(2.0 * kPi * theta_M, -1.5) * std::exp(-0.5 * norm2(v) / theta_M);
}

MuComparison mu_comparison(const std::vector<GasState>& states, double theta_M, const VelocityGrid& grid) {
    if (states.empty()) throw Error(ErrorKind::Domain, "mu_comparison needs at least one state");
    double th_min = std::numeric_limits<double>::infinity(), th_max = 0.0;
    for (const auto& s : states) {
        s.validate();
        th_min = std::min(th_min, s.theta);
        th_max = std::max(th_max, s.theta);
    }
    const double a_hi = std::min(1.0, theta_M / th_max);
    if (!(a_hi > 0.5) || theta_M > th_min * (1.0 + 1e-12))
        throw Error(ErrorKind::Incompatibility, "no admissible alpha for this theta_M");

    const std::size_t n = grid.size();
    const double log_norm_M = -1.5 * std::log(2.0 * kPi * theta_M);
    Field log_M(n);
    for (std::size_t q = 0; q < n; ++q) log_M[q] = log_norm_M - 0.5 * norm2(grid.node(q)) / theta_M;

    const int n_alpha = 41;
    std::vector<double> lower(1, -std::numeric_limits<double>::infinity());
    std::vector<double> upper(n_alpha, -std::numeric_limits<double>::infinity());
    std::vector<double> alphas(n_alpha);
    for (int k = 0; k < n_alpha; ++k) alphas[k] = 0.5 + (a_hi - 0.5) * (k + 1) / (n_alpha + 1);
    for (const auto& s : states) {
        const double ln_norm = std::log(s.rho) - 1.5 * std::log(2.0 * kPi * s.theta);
        for (std::size_t q = 0; q < n; ++q) {
            const double ls = ln_norm - 0.5 * norm2(grid.node(q) - s.u) / s.theta;
            lower[0] = std::max(lower[0], log_M[q] - ls);
            for (int k = 0; k < n_alpha; ++k) upper[k] = std::max(upper[k], ls - alphas[k] * log_M[q]);
        }
    }
    const double mid = 0.5 * (0.5 + a_hi);
    MuComparison best{std::numeric_limits<double>::infinity(), mid};
    for (int k = 0; k < n_alpha; ++k) {
        const double C = std::exp(std::max(lower[0], upper[k]));
        const bool tie = std::abs(C - best.C) <= 1e-12 * C;
        if ((C < best.C && !tie) || (tie && std::abs(alphas[k] - mid) < std::abs(best.alpha - mid))) {
            best = {C, alphas[k]};
        }
    }
    return best;
}

MuComparison mu_comparison(const MaxwellFrame& frame, const VelocityGrid& grid) {
    return mu_comparison(std::vector<GasState>{frame.state}, frame.theta_M, grid);
}

VelocityGrid reference_grid(double theta_max, double u_max, int n) {
    return VelocityGrid(8.0 * std::sqrt(theta_max) + std::abs(u_max), n);
}

}  // namespace hydrolimit
