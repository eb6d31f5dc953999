#include "hydrolimit/velocity_grid.hpp"

namespace hydrolimit {

VelocityGrid::VelocityGrid(double half_width, int n_per_axis, Vec3 center)
    : L_(half_width), n_(n_per_axis), h_(2.0 * half_width / n_per_axis), center_(center) {
    if (!(half_width > 0.0) || n_per_axis < 2) throw Error(ErrorKind::Domain, "velocity grid needs L > 0, N >= 2");
}

Vec3 VelocityGrid::node(std::size_t idx) const {
    const int k = static_cast<int>(idx % n_);
    const int j = static_cast<int>((idx / n_) % n_);
    const int i = static_cast<int>(idx / (static_cast<std::size_t>(n_) * n_));
    return {coord(0, i), coord(1, j), coord(2, k)};
}

int VelocityGrid::stencil(const Vec3& p, std::size_t* idx, double* w) const {
    int i0[3];
    double t[3];
    for (int a = 0; a < 3; ++a) {
        const double s = (p[a] - center_[a] + L_) / h_ - 0.5;
        if (!(s >= -1.0 && s <= n_)) return 0;
        double fl = std::floor(s);
        if (fl >= n_) fl = n_ - 1;
        i0[a] = static_cast<int>(fl);
        t[a] = s - fl;
    }
    int count = 0;
    for (int di = 0; di < 2; ++di) {
        const int i = i0[0] + di;
        if (i < 0 || i >= n_) continue;
        const double wi = di ? t[0] : 1.0 - t[0];
        for (int dj = 0; dj < 2; ++dj) {
            const int j = i0[1] + dj;
            if (j < 0 || j >= n_) continue;
            const double wj = wi * (dj ? t[1] : 1.0 - t[1]);
            for (int dk = 0; dk < 2; ++dk) {
                const int k = i0[2] + dk;
                if (k < 0 || k >= n_) continue;
                const double wk = wj * (dk ? t[2] : 1.0 - t[2]);
                if (wk == 0.0) continue;
                idx[count] = index(i, j, k);
                w[count] = wk;
                ++count;
            }
        }
    }
    return count;
}

double VelocityGrid::interpolate(const Field& f, const Vec3& p) const {
    std::size_t idx[8];
    double w[8];
    const int c = stencil(p, idx, w);
    double s = 0.0;
    for (int q = 0; q < c; ++q) s += w[q] * f[idx[q]];
    return s;
}

double VelocityGrid::integrate(const Field& f) const {
    double s = 0.0;
    for (double x : f) s += x;
    return s * weight();
}

double VelocityGrid::inner(const Field& f, const Field& g) const {
    double s = 0.0;
    for (std::size_t q = 0; q < f.size(); ++q) s += f[q] * g[q];
    return s * weight();
}

}  // namespace hydrolimit
