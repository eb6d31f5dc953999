#include "hydrolimit/collision_operator.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace hydrolimit {

namespace {

// Fixed work split for scatter-style loops, so sums do not depend on the thread count.
constexpr std::size_t kScatterChunks = 32;

// Trilinear interpolation with zero ghost values, written for the inner loops.
struct Interp {
    double o[3];
    double ih;
    int n;

    explicit Interp(const VelocityGrid& g) : ih(1.0 / g.spacing()), n(g.n()) {
        for (int a = 0; a < 3; ++a) o[a] = g.center()[a] - g.half_width();
    }

    // Writes up to 8 (index, weight) pairs; returns the count.
    int stencil(const Vec3& p, std::size_t* idx, double* w) const {
        int i0[3];
        double t[3];
        for (int a = 0; a < 3; ++a) {
            const double s = (p[a] - o[a]) * ih - 0.5;
            if (!(s >= -1.0 && s <= n)) return 0;
            double fl = std::floor(s);
            if (fl >= n) fl = n - 1;
            i0[a] = static_cast<int>(fl);
            t[a] = s - fl;
        }
        int c = 0;
        const std::size_t nn = static_cast<std::size_t>(n);
        for (int di = 0; di < 2; ++di) {
            const int i = i0[0] + di;
            if (i < 0 || i >= n) continue;
            const double wi = di ? t[0] : 1.0 - t[0];
            for (int dj = 0; dj < 2; ++dj) {
                const int j = i0[1] + dj;
                if (j < 0 || j >= n) continue;
                const double wj = wi * (dj ? t[1] : 1.0 - t[1]);
                for (int dk = 0; dk < 2; ++dk) {
                    const int k = i0[2] + dk;
                    if (k < 0 || k >= n) continue;
                    idx[c] = (i * nn + j) * nn + k;
                    w[c] = wj * (dk ? t[2] : 1.0 - t[2]);
                    ++c;
                }
            }
        }
        return c;
    }

    double operator()(const double* f, const Vec3& p) const {
        int i0[3];
        double t[3];
        for (int a = 0; a < 3; ++a) {
            const double s = (p[a] - o[a]) * ih - 0.5;
            if (!(s >= -1.0 && s <= n)) return 0.0;
            double fl = std::floor(s);
            if (fl >= n) fl = n - 1;
            i0[a] = static_cast<int>(fl);
            t[a] = s - fl;
        }
        const std::size_t nn = static_cast<std::size_t>(n);
        if (i0[0] >= 0 && i0[1] >= 0 && i0[2] >= 0 && i0[0] < n - 1 && i0[1] < n - 1 && i0[2] < n - 1) {
            const double* b = f + (i0[0] * nn + i0[1]) * nn + i0[2];
            const std::size_t sj = nn, si = nn * nn;
            const double c00 = b[0] + t[2] * (b[1] - b[0]);
            const double c01 = b[sj] + t[2] * (b[sj + 1] - b[sj]);
            const double c10 = b[si] + t[2] * (b[si + 1] - b[si]);
            const double c11 = b[si + sj] + t[2] * (b[si + sj + 1] - b[si + sj]);
            const double c0 = c00 + t[1] * (c01 - c00);
            const double c1 = c10 + t[1] * (c11 - c10);
            return c0 + t[0] * (c1 - c0);
        }
        std::size_t idx[8];
        double w[8];
        const int c = stencil(p, idx, w);
        double s = 0.0;
        for (int q = 0; q < c; ++q) s += w[q] * f[idx[q]];
        return s;
    }
};

// Post-collision directions for one pair: omega = s cos(phi) e1 + s sin(phi) e2 + c e3.
struct PairGeometry {
    Vec3 e1, e2, e3;
    double r;
};

inline PairGeometry pair_geometry(const Vec3& v, const Vec3& u) {
    PairGeometry g;
    const Vec3 z = v - u;
    g.r = std::sqrt(norm2(z));
    frame_from_axis(z, g.e1, g.e2, g.e3);
    return g;
}

inline Vec3 omega_of(const PairGeometry& g, double c, double s, double cphi, double sphi) {
    return {s * (cphi * g.e1[0] + sphi * g.e2[0]) + c * g.e3[0], s * (cphi * g.e1[1] + sphi * g.e2[1]) + c * g.e3[1],
            s * (cphi * g.e1[2] + sphi * g.e2[2]) + c * g.e3[2]};
}

inline bool pruned(const Vec3& v, const Vec3& u, const Vec3& c, double R2) {
    return norm2(v - c) + norm2(u - c) > R2;
}

std::vector<Vec3> all_nodes(const VelocityGrid& grid) {
    std::vector<Vec3> nodes(grid.size());
    for (std::size_t q = 0; q < nodes.size(); ++q) nodes[q] = grid.node(q);
    return nodes;
}

}  // namespace

Field q_bilinear(const Field& F1, const Field& F2, const KernelSpec& kernel, const VelocityGrid& grid,
                 const CollisionOptions& opts) {
    const AngularRule rule(kernel);
    const Interp interp(grid);
    const std::size_t N = grid.size();
    if (F1.size() != N || F2.size() != N) throw Error(ErrorKind::Domain, "field size does not match grid");
    const auto nodes = all_nodes(grid);
    const double h3 = grid.weight();
    const double b_int = rule.total_weight();
    const double R2 = opts.prune_radius * opts.prune_radius;
    const bool prune = std::isfinite(opts.prune_radius);
    const Vec3 c0 = grid.center();
    const std::size_t np = rule.cos_polar.size(), na = rule.cos_az.size();
    Field out(N, 0.0);

#pragma omp parallel for schedule(dynamic, 8)
    for (std::size_t iv = 0; iv < N; ++iv) {
        const Vec3& v = nodes[iv];
        if (prune && norm2(v - c0) > R2) continue;
        double gain = 0.0, loss = 0.0;
        for (std::size_t iu = 0; iu < N; ++iu) {
            if (iu == iv) continue;
            const Vec3& u = nodes[iu];
            if (prune && pruned(v, u, c0, R2)) continue;
            const PairGeometry g = pair_geometry(v, u);
            const double speed = kernel.speed_factor(g.r);
            if (speed == 0.0) continue;
            loss += speed * F1[iu];
            double gsum = 0.0;
            for (std::size_t ip = 0; ip < np; ++ip) {
                const double cp = rule.cos_polar[ip], sp = rule.sin_polar[ip];
                const double rc = g.r * cp;
                double psum = 0.0;
                for (std::size_t ia = 0; ia < na; ++ia) {
                    const Vec3 om = omega_of(g, cp, sp, rule.cos_az[ia], rule.sin_az[ia]);
                    const Vec3 up = u + rc * om;
                    const Vec3 vp = v - rc * om;
                    const double a = interp(F1.data(), up);
                    if (a == 0.0) continue;
                    psum += a * interp(F2.data(), vp);
                }
                gsum += rule.weight_polar[ip] * psum;
            }
            gain += speed * gsum;
        }
        out[iv] = h3 * (gain - b_int * loss * F2[iv]);
    }
    return out;
}

namespace reference {

Field q_bilinear(const Field& F1, const Field& F2, const KernelSpec& kernel, const VelocityGrid& grid) {
    const AngularRule rule(kernel);
    const std::size_t N = grid.size();
    Field out(N, 0.0);
    for (std::size_t iv = 0; iv < N; ++iv) {
        const Vec3 v = grid.node(iv);
        double acc = 0.0;
        for (std::size_t iu = 0; iu < N; ++iu) {
            const Vec3 u = grid.node(iu);
            const Vec3 z = v - u;
            const double r = std::sqrt(norm2(z));
            if (r == 0.0) continue;
            Vec3 e1, e2, e3;
            frame_from_axis(z, e1, e2, e3);
            const double B = kernel.speed_factor(r);
            for (std::size_t ip = 0; ip < rule.cos_polar.size(); ++ip) {
                for (std::size_t ia = 0; ia < rule.cos_az.size(); ++ia) {
                    const double c = rule.cos_polar[ip], s = rule.sin_polar[ip];
                    Vec3 om;
                    for (int a = 0; a < 3; ++a)
                        om[a] = s * rule.cos_az[ia] * e1[a] + s * rule.sin_az[ia] * e2[a] + c * e3[a];
                    const double proj = dot(z, om);
                    const Vec3 up = u + proj * om;
                    const Vec3 vp = v - proj * om;
                    const double w = rule.weight_polar[ip];
                    acc += B * w * (grid.interpolate(F1, up) * grid.interpolate(F2, vp) - F1[iu] * F2[iv]);
                }
            }
        }
        out[iv] = acc * grid.weight();
    }
    return out;
}

}  // namespace reference

CollisionPlan::CollisionPlan(const KernelSpec& kernel, const VelocityGrid& grid) : kernel_(kernel), grid_(grid) {
    const AngularRule rule(kernel);
    const int n = grid.n();
    const double h = grid.spacing(), h3 = grid.weight();
    const double b_int = rule.total_weight();
    pad_ = static_cast<int>(std::ceil(0.5 * (n - 1) * std::sqrt(3.0))) + 2;
    np_ = n + 2 * pad_;
    const std::size_t per_offset = rule.size();
    const std::size_t n_off = static_cast<std::size_t>(2 * n - 1) * (2 * n - 1) * (2 * n - 1) - 1;
    if (n_off * per_offset * sizeof(Shift) > LinearizedOperator::kDefaultBudget)
        throw Error(ErrorKind::MemoryBudget, "collision plan does not fit the memory budget");
    offsets_.reserve(n_off);
    shifts_.reserve(n_off * per_offset);
    const std::int64_t sj = np_, si = static_cast<std::int64_t>(np_) * np_;
    for (int d0 = -(n - 1); d0 < n; ++d0)
        for (int d1 = -(n - 1); d1 < n; ++d1)
            for (int d2 = -(n - 1); d2 < n; ++d2) {
                if (d0 == 0 && d1 == 0 && d2 == 0) continue;
                const Vec3 z{d0 * h, d1 * h, d2 * h};
                const double r = std::sqrt(norm2(z));
                const double speed = kernel.speed_factor(r);
                if (speed == 0.0) continue;
                Vec3 e1, e2, e3;
                frame_from_axis(z, e1, e2, e3);
                Offset o{{d0, d1, d2}, h3 * b_int * speed, shifts_.size(), 0};
                for (std::size_t ip = 0; ip < rule.cos_polar.size(); ++ip) {
                    const double c = rule.cos_polar[ip], s = rule.sin_polar[ip];
                    for (std::size_t ia = 0; ia < rule.cos_az.size(); ++ia) {
                        Shift sh{};
                        std::int64_t a1[3], a2[3];
                        for (int a = 0; a < 3; ++a) {
                            const double om = s * rule.cos_az[ia] * e1[a] + s * rule.sin_az[ia] * e2[a] + c * e3[a];
                            const double delta = r * c * om / h;
                            const double f1 = std::floor(delta), f2 = std::floor(-delta);
                            a1[a] = static_cast<std::int64_t>(f1) - o.d[a];
                            sh.t1[a] = delta - f1;
                            a2[a] = static_cast<std::int64_t>(f2);
                            sh.t2[a] = -delta - f2;
                        }
                        sh.off1 = a1[0] * si + a1[1] * sj + a1[2];
                        sh.off2 = a2[0] * si + a2[1] * sj + a2[2];
                        sh.weight = h3 * speed * rule.weight_polar[ip];
                        shifts_.push_back(sh);
                    }
                }
                o.last = shifts_.size();
                offsets_.push_back(o);
            }
}

namespace {

inline double trilerp(const double* b, std::int64_t sj, std::int64_t si, const double* t) {
    const double c00 = b[0] + t[2] * (b[1] - b[0]);
    const double c01 = b[sj] + t[2] * (b[sj + 1] - b[sj]);
    const double c10 = b[si] + t[2] * (b[si + 1] - b[si]);
    const double c11 = b[si + sj] + t[2] * (b[si + sj + 1] - b[si + sj]);
    const double c0 = c00 + t[1] * (c01 - c00);
    const double c1 = c10 + t[1] * (c11 - c10);
    return c0 + t[0] * (c1 - c0);
}

}  // namespace

void CollisionPlan::evaluate(const Field& F1, const Field& F2, Field& gain, Field& nu) const {
    const int n = grid_.n();
    const std::size_t N = grid_.size();
    if (F1.size() != N || F2.size() != N) throw Error(ErrorKind::Domain, "field size does not match grid");
    const std::int64_t sj = np_, si = static_cast<std::int64_t>(np_) * np_;
    Field P1(static_cast<std::size_t>(si) * np_, 0.0), P2(P1.size(), 0.0);
    auto pidx = [&](int i, int j, int k) { return (i + pad_) * si + (j + pad_) * sj + (k + pad_); };
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) {
                P1[pidx(i, j, k)] = F1[grid_.index(i, j, k)];
                P2[pidx(i, j, k)] = F2[grid_.index(i, j, k)];
            }
    std::vector<Field> gbuf(kScatterChunks, Field(N, 0.0)), lbuf(kScatterChunks, Field(N, 0.0));
    const std::size_t n_off = offsets_.size();
#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t c = 0; c < kScatterChunks; ++c) {
        Field& g = gbuf[c];
        Field& l = lbuf[c];
        for (std::size_t io = c * n_off / kScatterChunks; io < (c + 1) * n_off / kScatterChunks; ++io) {
            const Offset& o = offsets_[io];
            int lo[3], hi[3];
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::max(0, o.d[a]);
                hi[a] = n + std::min(0, o.d[a]);
            }
            const std::int64_t dlin = (static_cast<std::int64_t>(o.d[0]) * n + o.d[1]) * n + o.d[2];
            for (int i = lo[0]; i < hi[0]; ++i)
                for (int j = lo[1]; j < hi[1]; ++j) {
                    const std::size_t row = grid_.index(i, j, 0);
                    for (int k = lo[2]; k < hi[2]; ++k) l[row + k] += o.loss_weight * F1[row + k - dlin];
                }
            for (std::size_t is = o.first; is < o.last; ++is) {
                const Shift& s = shifts_[is];
                for (int i = lo[0]; i < hi[0]; ++i)
                    for (int j = lo[1]; j < hi[1]; ++j) {
                        const std::size_t row = grid_.index(i, j, 0);
                        const double* b1 = P1.data() + pidx(i, j, 0) + s.off1;
                        const double* b2 = P2.data() + pidx(i, j, 0) + s.off2;
                        double* out = g.data() + row;
                        for (int k = lo[2]; k < hi[2]; ++k)
                            out[k] += s.weight * trilerp(b1 + k, sj, si, s.t1) * trilerp(b2 + k, sj, si, s.t2);
                    }
            }
        }
    }
    gain.assign(N, 0.0);
    nu.assign(N, 0.0);
    for (std::size_t c = 0; c < kScatterChunks; ++c)
        for (std::size_t q = 0; q < N; ++q) {
            gain[q] += gbuf[c][q];
            nu[q] += lbuf[c][q];
        }
}

Field CollisionPlan::apply(const Field& F1, const Field& F2) const {
    Field gain, nu;
    evaluate(F1, F2, gain, nu);
    for (std::size_t q = 0; q < gain.size(); ++q) gain[q] -= nu[q] * F2[q];
    return gain;
}

Field gamma_bilinear(const Field& g1, const Field& g2, const GasState& s, const KernelSpec& kernel,
                     const VelocityGrid& grid) {
    Field sq = maxwellian_on(s, grid);
    for (double& x : sq) x = std::sqrt(x);
    Field a(g1.size()), b(g2.size());
    for (std::size_t q = 0; q < sq.size(); ++q) {
        a[q] = sq[q] * g1[q];
        b[q] = sq[q] * g2[q];
    }
    Field out = q_bilinear(a, b, kernel, grid);
    for (std::size_t q = 0; q < sq.size(); ++q) out[q] /= sq[q];
    return out;
}

Field loss_frequency(const Field& F, const KernelSpec& kernel, const VelocityGrid& grid) {
    const auto nodes = all_nodes(grid);
    const std::size_t N = grid.size();
    const double b_int = AngularRule(kernel).total_weight();
    Field nu(N, 0.0);
#pragma omp parallel for schedule(static)
    for (std::size_t iv = 0; iv < N; ++iv) {
        double s = 0.0;
        for (std::size_t iu = 0; iu < N; ++iu) {
            if (iu == iv) continue;
            s += kernel.speed_factor(std::sqrt(norm2(nodes[iv] - nodes[iu]))) * F[iu];
        }
        nu[iv] = s * b_int * grid.weight();
    }
    return nu;
}

namespace {

// Visits the nonzero entries of row v of the unsymmetrized lattice operator.
// Only g is interpolated at post-collision velocities; the Maxwellian factors
// are evaluated in closed form, where mu(u')sqrt(mu(v'))/sqrt(mu(v)) reduces
// to sqrt(mu(u) mu(u')).
struct RowVisitor {
    const KernelSpec& kernel;
    const VelocityGrid& grid;
    GasState state;
    AngularRule rule;
    Interp interp;
    std::vector<Vec3> nodes;
    Field mu, sq;
    double b_int, h3;

    RowVisitor(const GasState& s, const KernelSpec& k, const VelocityGrid& g)
        : kernel(k), grid(g), state(s), rule(k), interp(g), nodes(all_nodes(g)), mu(maxwellian_on(s, g)), sq(mu.size()) {
        for (std::size_t q = 0; q < mu.size(); ++q) sq[q] = std::sqrt(mu[q]);
        b_int = rule.total_weight();
        h3 = g.weight();
    }

    double sqrt_mu(const Vec3& x) const { return std::sqrt(maxwellian(state, x)); }

    template <class Emit>
    void row(std::size_t iv, Emit&& emit) const {
        const std::size_t N = nodes.size();
        const Vec3& v = nodes[iv];
        std::size_t idx[8];
        double w[8];
        double diag = 0.0;
        for (std::size_t iu = 0; iu < N; ++iu) {
            if (iu == iv) continue;
            const Vec3& u = nodes[iu];
            const PairGeometry g = pair_geometry(v, u);
            const double cu = h3 * kernel.speed_factor(g.r);
            if (cu == 0.0) continue;
            diag += cu * b_int * mu[iu];
            emit(iu, cu * b_int * sq[iv] * sq[iu]);
            for (std::size_t ip = 0; ip < rule.cos_polar.size(); ++ip) {
                const double cp = rule.cos_polar[ip], sp = rule.sin_polar[ip];
                const double rc = g.r * cp;
                const double cw = cu * rule.weight_polar[ip] * sq[iu];
                for (std::size_t ia = 0; ia < rule.cos_az.size(); ++ia) {
                    const Vec3 om = omega_of(g, cp, sp, rule.cos_az[ia], rule.sin_az[ia]);
                    const Vec3 up = u + rc * om;
                    const Vec3 vp = v - rc * om;
                    const double a = cw * sqrt_mu(up);
                    int c = interp.stencil(vp, idx, w);
                    for (int q = 0; q < c; ++q) emit(idx[q], -a * w[q]);
                    const double b = cw * sqrt_mu(vp);
                    c = interp.stencil(up, idx, w);
                    for (int q = 0; q < c; ++q) emit(idx[q], -b * w[q]);
                }
            }
        }
        emit(iv, diag);
    }
};

// A g and A^T g in one pass, deterministic for any thread count.
void apply_both(const RowVisitor& rv, const Field& g, Field& Ag, Field& ATg) {
    const std::size_t N = rv.nodes.size();
    Ag.assign(N, 0.0);
    std::vector<Field> buffers(kScatterChunks, Field(N, 0.0));
#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t c = 0; c < kScatterChunks; ++c) {
        const std::size_t lo = c * N / kScatterChunks, hi = (c + 1) * N / kScatterChunks;
        Field& buf = buffers[c];
        for (std::size_t iv = lo; iv < hi; ++iv) {
            double acc = 0.0;
            const double gv = g[iv];
            rv.row(iv, [&](std::size_t col, double val) {
                acc += val * g[col];
                buf[col] += val * gv;
            });
            Ag[iv] = acc;
        }
    }
    ATg.assign(N, 0.0);
    for (std::size_t c = 0; c < kScatterChunks; ++c)
        for (std::size_t q = 0; q < N; ++q) ATg[q] += buffers[c][q];
}

}  // namespace

Field L_apply_raw(const Field& g, const GasState& s, const KernelSpec& kernel, const VelocityGrid& grid) {
    const RowVisitor rv(s, kernel, grid);
    Field Ag, ATg;
    apply_both(rv, g, Ag, ATg);
    return Ag;
}

Field L_apply(const Field& g, const GasState& s, const KernelSpec& kernel, const VelocityGrid& grid) {
    const RowVisitor rv(s, kernel, grid);
    Field Ag, ATg;
    apply_both(rv, g, Ag, ATg);
    for (std::size_t q = 0; q < Ag.size(); ++q) Ag[q] = 0.5 * (Ag[q] + ATg[q]);
    return Ag;
}

LinearizedOperator LinearizedOperator::assemble(const GasState& s, const KernelSpec& kernel, const VelocityGrid& grid,
                                                std::size_t budget_bytes) {
    const std::size_t N = grid.size();
    if (grid.n() > 16 || N * N * sizeof(double) * 2 > budget_bytes)
        throw Error(ErrorKind::MemoryBudget, "dense assembly refused for this lattice; use matrix_free");
    LinearizedOperator op = matrix_free(s, kernel, grid);
    const RowVisitor rv(s, kernel, grid);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
    // Column-major storage: fill A^T row by row so each row visit writes one column.
#pragma omp parallel for schedule(dynamic, 4)
    for (std::size_t iv = 0; iv < N; ++iv) {
        double* col = A.data() + iv * N;
        rv.row(iv, [&](std::size_t c, double val) { col[c] += val; });
    }
    // A currently holds the transpose of the row operator; symmetrize.
    op.L_ = 0.5 * (A + A.transpose());
    op.assembled_ = true;
    return op;
}

LinearizedOperator LinearizedOperator::matrix_free(const GasState& s, const KernelSpec& kernel,
                                                   const VelocityGrid& grid) {
    s.validate();
    kernel.validate();
    LinearizedOperator op;
    op.state_ = s;
    op.kernel_ = kernel;
    op.grid_ = grid;
    op.projector_ = MacroProjector(s, grid);
    op.nu_ = loss_frequency(maxwellian_on(s, grid), kernel, grid);
    return op;
}

Field LinearizedOperator::apply(const Field& g) const {
    if (!assembled_) return L_apply(g, state_, kernel_, grid_);
    const Eigen::Map<const Eigen::VectorXd> x(g.data(), static_cast<Eigen::Index>(g.size()));
    Field out(g.size());
    Eigen::Map<Eigen::VectorXd> y(out.data(), static_cast<Eigen::Index>(out.size()));
    y.noalias() = L_ * x;
    return out;
}

Field LinearizedOperator::apply_K(const Field& g) const {
    Field out = apply(g);
    for (std::size_t q = 0; q < out.size(); ++q) out[q] -= nu_[q] * g[q];
    return out;
}

void LinearizedOperator::check_microscopic(const Field& r) const {
    const Field p = projector_.apply(r);
    const double np = std::sqrt(grid_.inner(p, p)), nr = std::sqrt(grid_.inner(r, r));
    if (np > 1e-6 * nr)
        throw Error(ErrorKind::Projection,
                    "input to the pseudo-inverse is not microscopic (|Pr|/|r| = " + std::to_string(np / nr) + ")");
}

Field LinearizedOperator::pseudo_inverse(const Field& r, double rel_tol, int max_iter) const {
    check_microscopic(r);
    const std::size_t N = r.size();
    const Field b = projector_.complement(r);
    const double bnorm = std::sqrt(grid_.inner(b, b));
    Field x(N, 0.0);
    last_iterations_ = 0;
    last_residual_ = 0.0;
    if (bnorm == 0.0) return x;
    Field res = b;
    auto precondition = [&](const Field& v) {
        Field z(N);
        for (std::size_t q = 0; q < N; ++q) z[q] = v[q] / nu_[q];
        return projector_.complement(z);
    };
    Field z = precondition(res);
    Field p = z;
    double rz = grid_.inner(res, z);
    for (int it = 1; it <= max_iter; ++it) {
        const Field Ap = projector_.complement(apply(p));
        const double pAp = grid_.inner(p, Ap);
        if (!(pAp > 0.0)) throw Error(ErrorKind::Numeric, "pseudo-inverse: operator not positive on the search direction");
        const double alpha = rz / pAp;
        for (std::size_t q = 0; q < N; ++q) {
            x[q] += alpha * p[q];
            res[q] -= alpha * Ap[q];
        }
        last_iterations_ = it;
        last_residual_ = std::sqrt(grid_.inner(res, res)) / bnorm;
        if (last_residual_ <= rel_tol) break;
        z = precondition(res);
        const double rz_new = grid_.inner(res, z);
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t q = 0; q < N; ++q) p[q] = z[q] + beta * p[q];
    }
    if (last_residual_ > rel_tol)
        throw Error(ErrorKind::Numeric,
                    "pseudo-inverse stagnated, relative residual " + std::to_string(last_residual_));
    // Recompute the true residual to guard against drift in the recurrence.
    const Field Lx = projector_.complement(apply(x));
    double s = 0.0;
    for (std::size_t q = 0; q < N; ++q) s += (Lx[q] - b[q]) * (Lx[q] - b[q]);
    last_residual_ = std::sqrt(s * grid_.weight()) / bnorm;
    return projector_.complement(x);
}

Field LinearizedOperator::pseudo_inverse_dense(const Field& r) const {
    if (!assembled_) throw Error(ErrorKind::MemoryBudget, "dense pseudo-inverse needs an assembled operator");
    check_microscopic(r);
    const Eigen::Index N = static_cast<Eigen::Index>(r.size());
    if (!chol_) {
        Eigen::MatrixXd X(N, 5);
        for (int i = 0; i < 5; ++i)
            for (Eigen::Index q = 0; q < N; ++q) X(q, i) = projector_.chi(i)[q];
        const Eigen::MatrixXd Y = X * projector_.gram().inverse() * grid_.weight();  // P = Y X^T
        const Eigen::MatrixXd LP = (L_ * Y) * X.transpose();                           // L P
        Eigen::MatrixXd M = L_ - LP - LP.transpose();
        const Eigen::MatrixXd core = X.transpose() * L_ * Y;  // 5x5
        M.noalias() += Y * core * X.transpose();
        M.noalias() += Y * X.transpose();
        M = 0.5 * (M + M.transpose()).eval();
        chol_ = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(M);
        if (chol_->info() != Eigen::Success) {
            chol_.reset();
            throw Error(ErrorKind::Numeric, "projected operator is not positive definite");
        }
    }
    const Field b = projector_.complement(r);
    const Eigen::Map<const Eigen::VectorXd> bb(b.data(), N);
    const Eigen::VectorXd x = chol_->solve(bb);
    Field out(x.data(), x.data() + N);
    return projector_.complement(out);
}

SpectralGapProbe spectral_gap_probe(const LinearizedOperator& op, int samples, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uniform = [&]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0; };
    const VelocityGrid& grid = op.grid();
    const std::size_t N = grid.size();
    const GasState& s = op.state();
    const Field mu = maxwellian_on(s, grid);
    SpectralGapProbe out;
    out.min_ratio = std::numeric_limits<double>::infinity();
    out.min_quadratic = std::numeric_limits<double>::infinity();
    for (int k = 0; k < samples; ++k) {
        Field g(N);
        if (k % 2 == 0) {
            for (auto& x : g) x = uniform();
        } else {
            double coef[35];
            for (double& c : coef) c = uniform();
            for (std::size_t q = 0; q < N; ++q) {
                const Vec3 xi = (1.0 / std::sqrt(s.theta)) * (grid.node(q) - s.u);
                double val = 0.0;
                int m = 0;
                for (int a = 0; a <= 4; ++a)
                    for (int b = 0; a + b <= 4; ++b)
                        for (int c = 0; a + b + c <= 4; ++c)
                            val += coef[m++] * std::pow(xi[0], a) * std::pow(xi[1], b) * std::pow(xi[2], c);
                g[q] = val * std::sqrt(mu[q]);
            }
        }
        const Field Lg_raw = op.apply(g);
        out.min_quadratic = std::min(out.min_quadratic, grid.inner(Lg_raw, g));
        const Field gm = op.projector().complement(g);
        const Field Lg = op.apply(gm);
        double nrm = 0.0;
        for (std::size_t q = 0; q < N; ++q) nrm += op.nu_diag()[q] * gm[q] * gm[q];
        nrm *= grid.weight();
        out.min_ratio = std::min(out.min_ratio, grid.inner(Lg, gm) / nrm);
        ++out.samples;
    }
    return out;
}

double smooth_cutoff(double r, double m) {
    if (r <= m) return 1.0;
    if (r >= 2.0 * m) return 0.0;
    const double s = (r - m) / m;
    return 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
}

KSplit::KSplit(const LinearizedOperator& op, double m, int n_radial, int n_dir_polar, int n_dir_az)
    : op_(&op), m_(m) {
    if (!(m > 0.0)) throw Error(ErrorKind::Domain, "k_split needs m > 0");
    std::vector<double> x, w;
    gauss_legendre(n_radial, x, w);
    // Panels of width at most 1 on [0, m] and on [m, 2m].
    auto add_interval = [&](double a, double b) {
        const int panels = std::max(1, static_cast<int>(std::ceil((b - a) / 1.0)));
        for (int p = 0; p < panels; ++p) {
            const double lo = a + (b - a) * p / panels, hi = a + (b - a) * (p + 1) / panels;
            for (int i = 0; i < n_radial; ++i) {
                const double r = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x[i];
                const double wt = 0.5 * (hi - lo) * w[i] * r * r * smooth_cutoff(r, m);
                if (wt == 0.0) continue;
                r_nodes_.push_back(r);
                r_weights_.push_back(wt);
            }
        }
    };
    add_interval(0.0, m);
    add_interval(m, 2.0 * m);
    gauss_legendre(n_dir_polar, x, w);
    for (int i = 0; i < n_dir_polar; ++i) {
        const double c = x[i], s = std::sqrt(std::max(0.0, 1.0 - c * c));
        for (int j = 0; j < n_dir_az; ++j) {
            const double phi = 2.0 * kPi * (j + 0.5) / n_dir_az;
            dirs_.push_back({s * std::cos(phi), s * std::sin(phi), c});
            dir_weights_.push_back(w[i] * 2.0 * kPi / n_dir_az);
        }
    }
}

template <class Fn>
double KSplit::visit_near(const Vec3& v, Fn&& fn) const {
    const GasState& s = op_->state();
    const KernelSpec& k = op_->kernel();
    const AngularRule rule(k);
    const double b_int = rule.total_weight();
    auto sqmu = [&](const Vec3& x) { return std::sqrt(maxwellian(s, x)); };
    const double sq_v = sqmu(v);
    double acc = 0.0;
    for (std::size_t ir = 0; ir < r_nodes_.size(); ++ir) {
        const double r = r_nodes_[ir];
        const double sf = k.speed_factor(r);
        for (std::size_t id = 0; id < dirs_.size(); ++id) {
            const Vec3 u = v + r * dirs_[id];
            const double c = r_weights_[ir] * dir_weights_[id] * sf;
            const double sq_u = sqmu(u);
            acc += fn(u, c * b_int * sq_v * sq_u);
            const PairGeometry g = pair_geometry(v, u);
            for (std::size_t ip = 0; ip < rule.cos_polar.size(); ++ip) {
                const double cp = rule.cos_polar[ip], sp = rule.sin_polar[ip];
                const double cw = c * rule.weight_polar[ip] * sq_u;
                for (std::size_t ia = 0; ia < rule.cos_az.size(); ++ia) {
                    const Vec3 om = omega_of(g, cp, sp, rule.cos_az[ia], rule.sin_az[ia]);
                    const Vec3 up = u + (r * cp) * om;
                    const Vec3 vp = v - (r * cp) * om;
                    acc += fn(vp, -cw * sqmu(up));
                    acc += fn(up, -cw * sqmu(vp));
                }
            }
        }
    }
    return acc;
}

Field KSplit::apply_near(const Field& g) const {
    const VelocityGrid& grid = op_->grid();
    const Interp interp(grid);
    Field out(grid.size());
#pragma omp parallel for schedule(dynamic, 4)
    for (std::size_t q = 0; q < grid.size(); ++q) {
        out[q] = visit_near(grid.node(q), [&](const Vec3& p, double c) { return c * interp(g.data(), p); });
    }
    return out;
}

Field KSplit::apply_far(const Field& g) const {
    Field k = op_->apply_K(g);
    const Field near = apply_near(g);
    for (std::size_t q = 0; q < k.size(); ++q) k[q] -= near[q];
    return k;
}

double KSplit::near_row_abs(const Vec3& v) const {
    return visit_near(v, [](const Vec3&, double c) { return std::abs(c); });
}

double KSplit::near_norm_inf() const {
    const VelocityGrid& grid = op_->grid();
    Field rows(grid.size());
#pragma omp parallel for schedule(dynamic, 4)
    for (std::size_t q = 0; q < grid.size(); ++q) rows[q] = near_row_abs(grid.node(q));
    return *std::max_element(rows.begin(), rows.end());
}

double entropy_production(const Field& F, const KernelSpec& kernel, const VelocityGrid& grid) {
    for (double x : F)
        if (!(x > 0.0)) throw Error(ErrorKind::Domain, "entropy production needs F > 0 on the grid");
    const AngularRule rule(kernel);
    const Interp interp(grid);
    const auto nodes = all_nodes(grid);
    const std::size_t N = grid.size();
    Field per_node(N, 0.0);
#pragma omp parallel for schedule(dynamic, 8)
    for (std::size_t iv = 0; iv < N; ++iv) {
        const Vec3& v = nodes[iv];
        double acc = 0.0;
        for (std::size_t iu = 0; iu < N; ++iu) {
            if (iu == iv) continue;
            const Vec3& u = nodes[iu];
            const PairGeometry g = pair_geometry(v, u);
            const double speed = kernel.speed_factor(g.r);
            if (speed == 0.0) continue;
            const double pre = F[iu] * F[iv];
            double s = 0.0;
            for (std::size_t ip = 0; ip < rule.cos_polar.size(); ++ip) {
                const double cp = rule.cos_polar[ip], sp = rule.sin_polar[ip];
                double ps = 0.0;
                for (std::size_t ia = 0; ia < rule.cos_az.size(); ++ia) {
                    const Vec3 om = omega_of(g, cp, sp, rule.cos_az[ia], rule.sin_az[ia]);
                    const Vec3 up = u + (g.r * cp) * om;
                    const Vec3 vp = v - (g.r * cp) * om;
                    const double post = interp(F.data(), up) * interp(F.data(), vp);
                    if (!(post > 0.0)) continue;
                    ps += (post - pre) * std::log(post / pre);
                }
                s += rule.weight_polar[ip] * ps;
            }
            acc += speed * s;
        }
        per_node[iv] = acc;
    }
    double total = 0.0;
    for (double x : per_node) total += x;
    return -0.25 * total * grid.weight() * grid.weight();
}

double entropy_production_direct(const Field& F, const KernelSpec& kernel, const VelocityGrid& grid) {
    const Field Q = q_bilinear(F, F, kernel, grid);
    double s = 0.0;
    for (std::size_t q = 0; q < F.size(); ++q) {
        if (!(F[q] > 0.0)) throw Error(ErrorKind::Domain, "entropy production needs F > 0 on the grid");
        s += Q[q] * std::log(F[q]);
    }
    return s * grid.weight();
}

std::array<double, 5> conserved_moments(const Field& F, const VelocityGrid& grid) {
    std::array<double, 5> m{0, 0, 0, 0, 0};
    for (std::size_t q = 0; q < F.size(); ++q) {
        const Vec3 v = grid.node(q);
        m[0] += F[q];
        m[1] += v[0] * F[q];
        m[2] += v[1] * F[q];
        m[3] += v[2] * F[q];
        m[4] += 0.5 * norm2(v) * F[q];
    }
    for (double& x : m) x *= grid.weight();
    return m;
}

GasState moments_to_state(const std::array<double, 5>& m) {
    if (!(m[0] > 0.0)) throw Error(ErrorKind::Vacuum, "non-positive density");
    GasState s;
    s.rho = m[0];
    s.u = {m[1] / m[0], m[2] / m[0], m[3] / m[0]};
    s.theta = (2.0 * m[4] / m[0] - norm2(s.u)) / 3.0;
    if (!(s.theta > 0.0)) throw Error(ErrorKind::Vacuum, "non-positive temperature");
    return s;
}

Field matched_maxwellian(const Field& F, const VelocityGrid& grid, GasState* params) {
    const auto target = conserved_moments(F, grid);
    GasState s = moments_to_state(target);
    const std::size_t N = grid.size();
    const auto nodes = all_nodes(grid);
    Field M(N);
    const double scale = std::abs(target[0]) + std::abs(target[4]);
    for (int it = 0; it < 40; ++it) {
        for (std::size_t q = 0; q < N; ++q) M[q] = maxwellian(s, nodes[q]);
        Eigen::Matrix<double, 5, 5> J = Eigen::Matrix<double, 5, 5>::Zero();
        Eigen::Matrix<double, 5, 1> R = Eigen::Matrix<double, 5, 1>::Zero();
        for (std::size_t q = 0; q < N; ++q) {
            const Vec3& v = nodes[q];
            const Vec3 c = v - s.u;
            const double phi[5] = {1.0, v[0], v[1], v[2], 0.5 * norm2(v)};
            const double d[5] = {M[q] / s.rho, M[q] * c[0] / s.theta, M[q] * c[1] / s.theta, M[q] * c[2] / s.theta,
                                 M[q] * (0.5 * norm2(c) / (s.theta * s.theta) - 1.5 / s.theta)};
            for (int a = 0; a < 5; ++a) {
                R(a) += phi[a] * M[q];
                for (int b = 0; b < 5; ++b) J(a, b) += phi[a] * d[b];
            }
        }
        R *= grid.weight();
        J *= grid.weight();
        for (int a = 0; a < 5; ++a) R(a) -= target[a];
        if (R.norm() <= 1e-15 * scale) break;
        const Eigen::Matrix<double, 5, 1> dp = J.partialPivLu().solve(R);
        s.rho -= dp(0);
        s.u = {s.u[0] - dp(1), s.u[1] - dp(2), s.u[2] - dp(3)};
        s.theta -= dp(4);
        if (!(s.rho > 0.0) || !(s.theta > 0.0)) throw Error(ErrorKind::Numeric, "moment matching left the state space");
        if (dp.norm() <= 1e-16 * (1.0 + s.rho + s.theta)) {
            for (std::size_t q = 0; q < N; ++q) M[q] = maxwellian(s, nodes[q]);
            break;
        }
    }
    for (std::size_t q = 0; q < N; ++q) M[q] = maxwellian(s, nodes[q]);
    if (params) *params = s;
    return M;
}

Field bgk_surrogate(const Field& F, const VelocityGrid& grid, double nu_bar) {
    const Field M = matched_maxwellian(F, grid);
    Field out(F.size());
    for (std::size_t q = 0; q < F.size(); ++q) out[q] = nu_bar * (M[q] - F[q]);
    return out;
}

double discrete_entropy(const Field& F, const VelocityGrid& grid) {
    double s = 0.0;
    for (double x : F)
        if (x > 0.0) s += x * std::log(x);
    return s * grid.weight();
}

}  // namespace hydrolimit
