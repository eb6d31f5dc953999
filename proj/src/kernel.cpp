#include "hydrolimit/kernel.hpp"

namespace hydrolimit {

void KernelSpec::validate() const {
    if (!(gamma > -3.0 && gamma <= 1.0)) throw Error(ErrorKind::Domain, "kernel gamma must lie in (-3, 1]");
    if (!(b_scale > 0.0)) throw Error(ErrorKind::Domain, "b_scale must be positive");
    if (n_polar < 1 || n_azimuth < 1) throw Error(ErrorKind::Domain, "angular rule needs positive counts");
}

double KernelSpec::speed_factor(double r) const {
    if (gamma == 0.0) return 1.0;
    if (gamma == 1.0) return r;
    if (r == 0.0) return 0.0;
    return std::pow(r, gamma);
}

void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int k = 1; k <= n; ++k) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
            }
            dp = n * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        x[i] = -z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
}

AngularRule::AngularRule(const KernelSpec& k) {
    k.validate();
    std::vector<double> gx, gw;
    gauss_legendre(k.n_polar, gx, gw);
    const double az_w = 2.0 * kPi / k.n_azimuth;
    for (int i = 0; i < k.n_polar; ++i) {
        const double c = 0.5 * (gx[i] + 1.0);
        cos_polar.push_back(c);
        sin_polar.push_back(std::sqrt(std::max(0.0, 1.0 - c * c)));
        weight_polar.push_back(2.0 * 0.5 * gw[i] * k.b_scale * c * az_w);
    }
    for (int j = 0; j < k.n_azimuth; ++j) {
        const double phi = az_w * (j + 0.5);
        cos_az.push_back(std::cos(phi));
        sin_az.push_back(std::sin(phi));
    }
}

double AngularRule::total_weight() const {
    double s = 0.0;
    for (double w : weight_polar) s += w;
    return s * static_cast<double>(cos_az.size());
}

void frame_from_axis(const Vec3& a, Vec3& e1, Vec3& e2, Vec3& e3) {
    const double r = std::sqrt(norm2(a));
    if (r == 0.0) {
        e1 = {1, 0, 0};
        e2 = {0, 1, 0};
        e3 = {0, 0, 1};
        return;
    }
    e3 = (1.0 / r) * a;
    const Vec3 helper = std::abs(e3[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    const double d = dot(helper, e3);
    Vec3 t = helper - d * e3;
    e1 = (1.0 / std::sqrt(norm2(t))) * t;
    e2 = {e3[1] * e1[2] - e3[2] * e1[1], e3[2] * e1[0] - e3[0] * e1[2], e3[0] * e1[1] - e3[1] * e1[0]};
}

}  // namespace hydrolimit
