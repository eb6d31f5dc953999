#include "hydrolimit/rate_fit.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "hydrolimit/common.hpp"

namespace hydrolimit {

double student_t975(int dof) {
    if (dof < 1) throw Error(ErrorKind::Domain, "t quantile needs at least one degree of freedom");
    return boost::math::quantile(boost::math::students_t(dof), 0.975);
}

RateFit fit_rate(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw Error(ErrorKind::Domain, "fit_rate: xs and ys differ in length");
    if (xs.size() < 3) throw Error(ErrorKind::Domain, "fit_rate needs at least 3 points");
    const std::size_t n = xs.size();
    std::vector<double> lx(n), ly(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(xs[i] > 0.0) || !(ys[i] > 0.0) || !std::isfinite(xs[i]) || !std::isfinite(ys[i]))
            throw Error(ErrorKind::Domain, "fit_rate needs strictly positive finite data");
        lx[i] = std::log(xs[i]);
        ly[i] = std::log(ys[i]);
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (!(sxx > 0.0)) throw Error(ErrorKind::Domain, "fit_rate needs distinct abscissae");
    RateFit f;
    f.xs = xs;
    f.ys = ys;
    f.exponent = sxy / sxx;
    f.log_constant = my - f.exponent * mx;
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = ly[i] - (f.log_constant + f.exponent * lx[i]);
        sse += r * r;
        const double fit = std::exp(f.log_constant + f.exponent * lx[i]);
        f.relative_residual = std::max(f.relative_residual, std::abs(ys[i] - fit) / ys[i]);
    }
    f.residual = std::sqrt(sse / n);
    const int dof = static_cast<int>(n) - 2;
    const double se = std::sqrt(sse / dof / sxx);
    const double half = student_t975(dof) * se;
    f.ci_low = f.exponent - half;
    f.ci_high = f.exponent + half;
    return f;
}

}  // namespace hydrolimit
