#include "hydrolimit/euler_waves.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/minima.hpp>
#include <limits>

namespace hydrolimit {

namespace {

const double kInvSum = 1.0 / (kSqrt15 + kSqrt53);

GasState invert_invariants(double s, double R, double w) {
    const double X = (R - w) * kInvSum;  // rho^{1/3} e^{s/2}
    if (!(X > 0.0)) throw Error(ErrorKind::Vacuum, "invariant inversion gives non-positive density");
    GasState st;
    st.rho = X * X * X * std::exp(-1.5 * s);
    st.u = {w + kSqrt53 * X, 0.0, 0.0};
    st.theta = X * X;
    return st;
}

}  // namespace

bool GasState::valid() const {
    return std::isfinite(rho) && std::isfinite(theta) && rho > 0.0 && theta > 0.0 && std::isfinite(u[0]) &&
           std::isfinite(u[1]) && std::isfinite(u[2]);
}

void GasState::validate() const {
    if (!valid()) throw Error(ErrorKind::Domain, "gas state needs rho > 0, theta > 0 and finite velocity");
}

double entropy(double rho, double theta) {
    if (!(rho > 0.0) || !(theta > 0.0)) throw Error(ErrorKind::Domain, "entropy needs rho, theta > 0");
    return std::log(theta) - (2.0 / 3.0) * std::log(rho);
}

double lambda1(double rho, double u1, double s) {
    if (!(rho > 0.0)) throw Error(ErrorKind::Domain, "lambda1 needs rho > 0");
    return u1 - kSqrt53 * std::cbrt(rho) * std::exp(0.5 * s);
}

GasState WaveEndStates::state_at(double w) const { return invert_invariants(s_plus, invariant, w); }

std::array<double, 3> WaveEndStates::state_slope(double w) const {
    const double X = (invariant - w) * kInvSum;
    const double dX = -kInvSum;
    return {3.0 * X * X * std::exp(-1.5 * s_plus) * dX, 1.0 + kSqrt53 * dX, 2.0 * X * dX};
}

WaveEndStates connect_right_state(const GasState& left, double w_plus) {
    left.validate();
    if (left.u[1] != 0.0 || left.u[2] != 0.0)
        throw Error(ErrorKind::Domain, "planar wave needs u2 = u3 = 0");
    WaveEndStates e;
    e.left = left;
    e.s_plus = entropy(left.rho, left.theta);
    e.w_minus = lambda1(left.rho, left.u[0], e.s_plus);
    if (w_plus < e.w_minus) throw Error(ErrorKind::NotRarefaction, "w_plus below lambda1 of the left state");
    e.w_plus = w_plus;
    e.invariant = left.u[0] + kSqrt15 * std::cbrt(left.rho) * std::exp(0.5 * e.s_plus);
    e.right = (w_plus == e.w_minus) ? left : invert_invariants(e.s_plus, e.invariant, w_plus);
    return e;
}

WaveEndStates make_endstates(const GasState& left, const GasState& right, bool theorem_compatible, double tol) {
    left.validate();
    right.validate();
    if (left.u[1] != 0.0 || left.u[2] != 0.0 || right.u[1] != 0.0 || right.u[2] != 0.0)
        throw Error(ErrorKind::Domain, "planar wave needs u2 = u3 = 0");
    WaveEndStates e;
    e.left = left;
    e.right = right;
    e.s_plus = entropy(left.rho, left.theta);
    if (std::abs(entropy(right.rho, right.theta) - e.s_plus) > tol)
        throw Error(ErrorKind::NotRarefaction, "end states have different entropy");
    e.invariant = left.u[0] + kSqrt15 * std::cbrt(left.rho) * std::exp(0.5 * e.s_plus);
    const double R_right = right.u[0] + kSqrt15 * std::cbrt(right.rho) * std::exp(0.5 * e.s_plus);
    if (std::abs(R_right - e.invariant) > tol)
        throw Error(ErrorKind::NotRarefaction, "2-Riemann invariant differs across the wave");
    e.w_minus = lambda1(left.rho, left.u[0], e.s_plus);
    e.w_plus = lambda1(right.rho, right.u[0], e.s_plus);
    if (e.w_plus < e.w_minus) throw Error(ErrorKind::NotRarefaction, "w_minus > w_plus");
    if (theorem_compatible) {
        const double hi = std::max(left.theta, right.theta);
        const double lo = std::min(left.theta, right.theta);
        if (!(hi < 2.0 * lo)) throw Error(ErrorKind::IncompatibleWaveStrength, "max theta >= 2 min theta");
    }
    return e;
}

GasState exact_wave(const WaveEndStates& ends, double t, double x1) {
    if (!(t > 0.0)) throw Error(ErrorKind::Domain, "exact wave needs t > 0");
    const double xi = x1 / t;
    if (xi <= ends.w_minus) return ends.left;
    if (xi >= ends.w_plus) return ends.right;
    return ends.state_at(xi);
}

void SmoothWaveParams::validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error(ErrorKind::Domain, "sigma must be positive");
}

double SmoothWaveParams::w_sigma(double x0) const {
    const double wm = endstates.w_minus, wp = endstates.w_plus;
    return 0.5 * (wp + wm) + 0.5 * (wp - wm) * std::tanh(x0 / sigma);
}

double SmoothWaveParams::dw_sigma(double x0) const {
    const double c = std::cosh(x0 / sigma);
    if (!std::isfinite(c)) return 0.0;
    return 0.5 * (endstates.w_plus - endstates.w_minus) / (sigma * c * c);
}

double SmoothWaveParams::d2w_sigma(double x0) const {
    const double th = std::tanh(x0 / sigma);
    return -2.0 * th / sigma * dw_sigma(x0);
}

double characteristic_foot(const SmoothWaveParams& p, double t, double x1) {
    p.validate();
    if (t < 0.0) throw Error(ErrorKind::Domain, "burgers_smooth needs t >= 0");
    if (t == 0.0) return x1;
    const double wm = p.endstates.w_minus, wp = p.endstates.w_plus;
    if (wp == wm) return x1 - wm * t;
    double lo = x1 - wp * t, hi = x1 - wm * t;
    auto g = [&](double x0) { return x0 + p.w_sigma(x0) * t - x1; };
    const double glo = g(lo), ghi = g(hi);
    const double slack = 1e-12 * (std::abs(x1) + std::max(std::abs(wm), std::abs(wp)) * t + 1.0);
    if (glo > slack || ghi < -slack) throw Error(ErrorKind::Numeric, "characteristic bracket lost its sign change");
    if (glo >= 0.0) return lo;
    if (ghi <= 0.0) return hi;
    int it = 0;
    while (hi - lo > 1e-13) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (g(mid) > 0.0) hi = mid;
        else lo = mid;
        if (++it > 400) throw Error(ErrorKind::Numeric, "characteristic bisection did not converge");
    }
    double x0 = 0.5 * (lo + hi);
    const double dg = 1.0 + t * p.dw_sigma(x0);
    const double polished = x0 - g(x0) / dg;
    if (polished >= lo - 1e-13 && polished <= hi + 1e-13) x0 = polished;
    return x0;
}

double burgers_smooth(const SmoothWaveParams& p, double t, double x1) {
    return p.w_sigma(characteristic_foot(p, t, x1));
}

GasState smooth_wave(const SmoothWaveParams& p, double t, double x1) {
    return p.endstates.state_at(burgers_smooth(p, t, x1));
}

WaveDerivatives wave_derivatives(const SmoothWaveParams& p, double t, double x1) {
    WaveDerivatives d;
    const double x0 = characteristic_foot(p, t, x1);
    d.w = p.w_sigma(x0);
    const double dw0 = p.dw_sigma(x0);
    d.w_x = dw0 / (1.0 + t * dw0);
    d.w_t = -d.w * d.w_x;
    d.state = p.endstates.state_at(d.w);
    const auto s = p.endstates.state_slope(d.w);
    d.rho_x = s[0] * d.w_x;
    d.rho_t = s[0] * d.w_t;
    d.u_x = s[1] * d.w_x;
    d.u_t = s[1] * d.w_t;
    d.theta_x = s[2] * d.w_x;
    d.theta_t = s[2] * d.w_t;
    return d;
}

DecayNorms decay_norms(const SmoothWaveParams& p, double t, NormKind kind) {
    p.validate();
    if (t < 0.0) throw Error(ErrorKind::Domain, "decay_norms needs t >= 0");
    DecayNorms out;
    if (p.endstates.strength() == 0.0) return out;

    // Work in the characteristic foot x0; x1 = x0 + w(x0) t is monotone.
    auto slopes_at = [&](double x0, double* q) {
        const double dw0 = p.dw_sigma(x0);
        const double wx = dw0 / (1.0 + t * dw0);
        const auto s = p.endstates.state_slope(p.w_sigma(x0));
        q[0] = std::abs(s[0] * wx);
        q[1] = std::abs(s[1] * wx);
        q[2] = std::abs(s[2] * wx);
        q[3] = wx;
        return 1.0 + t * dw0;  // dx1/dx0
    };

    if (kind == NormKind::Linf) {
        const double half = 20.0 * p.sigma;
        const int n = 4001;
        double vals[4] = {0, 0, 0, 0};
        for (int c = 0; c < 4; ++c) {
            int best = 0;
            double bestv = -1.0;
            for (int i = 0; i < n; ++i) {
                const double x0 = -half + 2.0 * half * i / (n - 1);
                double q[4];
                slopes_at(x0, q);
                if (q[c] > bestv) {
                    bestv = q[c];
                    best = i;
                }
            }
            const double step = 2.0 * half / (n - 1);
            const double a = -half + step * (best - 1), b = -half + step * (best + 1);
            auto neg = [&](double x0) {
                double q[4];
                slopes_at(x0, q);
                return -q[c];
            };
            const auto r = boost::math::tools::brent_find_minima(neg, a, b, 52);
            vals[c] = std::max(bestv, -r.second);
        }
        out = {vals[0], vals[1], vals[2], vals[3]};
        return out;
    }

    const double pw = (kind == NormKind::L1) ? 1.0 : 2.0;
    const double X0 = 40.0 * p.sigma + 10.0;
    const double inner = 20.0 * p.sigma;
    const double cuts[] = {-X0, -inner, 0.0, inner, X0};
    double sums[4] = {0, 0, 0, 0};
    for (int c = 0; c < 4; ++c) {
        auto f = [&](double x0) {
            double q[4];
            const double jac = slopes_at(x0, q);
            return std::pow(q[c], pw) * jac;
        };
        for (int k = 0; k < 4; ++k) {
            sums[c] += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, cuts[k], cuts[k + 1], 20,
                                                                                     1e-14);
        }
    }
    auto root = [&](double v) { return kind == NormKind::L1 ? v : std::sqrt(v); };
    out = {root(sums[0]), root(sums[1]), root(sums[2]), root(sums[3])};
    return out;
}

double sup_distance(const SmoothWaveParams& p, double t) {
    p.validate();
    if (!(t > 0.0)) throw Error(ErrorKind::Domain, "sup_distance needs t > 0");
    if (p.endstates.strength() == 0.0) return 0.0;
    auto dist = [&](double x) {
        const GasState a = smooth_wave(p, t, x);
        const GasState b = exact_wave(p.endstates, t, x);
        return std::max({std::abs(a.rho - b.rho), std::abs(a.u[0] - b.u[0]), std::abs(a.theta - b.theta)});
    };
    const double lo = p.endstates.w_minus * t - 30.0 * p.sigma - 1.0;
    const double hi = p.endstates.w_plus * t + 30.0 * p.sigma + 1.0;
    const int n = 4001;
    const double step = (hi - lo) / (n - 1);
    int best = 0;
    double bestv = -1.0;
    for (int i = 0; i < n; ++i) {
        const double v = dist(lo + step * i);
        if (v > bestv) {
            bestv = v;
            best = i;
        }
    }
    for (double edge : {p.endstates.w_minus * t, p.endstates.w_plus * t}) bestv = std::max(bestv, dist(edge));
    const double a = lo + step * std::max(best - 1, 0), b = lo + step * std::min(best + 1, n - 1);
    const auto r = boost::math::tools::brent_find_minima([&](double x) { return -dist(x); }, a, b, 52);
    return std::max(bestv, -r.second);
}

}  // namespace hydrolimit
