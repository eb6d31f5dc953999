#include "hydrolimit/hilbert_cascade.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <limits>
#include <sstream>

namespace hydrolimit {

double j_tau(const WaveDerivatives& d, const Vec3& v, Direction dir) {
    const GasState& s = d.state;
    const Vec3 c = v - s.u;
    const double rt = dir == Direction::T ? d.rho_t : d.rho_x;
    const double ut = dir == Direction::T ? d.u_t : d.u_x;
    const double tt = dir == Direction::T ? d.theta_t : d.theta_x;
    return rt / s.rho - 1.5 * tt / s.theta + c[0] * ut / s.theta + norm2(c) * tt / (2.0 * s.theta * s.theta);
}

double j_tau(const SmoothWaveParams& wave, double t, double x1, const Vec3& v, Direction dir) {
    return j_tau(wave_derivatives(wave, t, x1), v, dir);
}

// ---------------------------------------------------------------------------
// Reference inverses

double MicroInverse::sqrt_mu1(const Vec3& xi) const {
    return std::pow(2.0 * kPi, -0.75) * std::exp(-0.25 * norm2(xi));
}

VelocityGrid MicroInverse::node_lattice(const GasState& s) const {
    return VelocityGrid(lattice_.half_width() * std::sqrt(s.theta), lattice_.n(), s.u);
}

namespace {

inline void catmull_rom(double t, double* w) {
    const double t2 = t * t, t3 = t2 * t;
    w[0] = 0.5 * (-t3 + 2 * t2 - t);
    w[1] = 0.5 * (3 * t3 - 5 * t2 + 2);
    w[2] = 0.5 * (-3 * t3 + 4 * t2 + t);
    w[3] = 0.5 * (t3 - t2);
}

}  // namespace

double MicroInverse::interpolate(const Field& values, const Vec3& xi) const {
    const int n = lattice_.n();
    const double h = lattice_.spacing();
    int i0[3];
    double w[3][4];
    for (int a = 0; a < 3; ++a) {
        const double s = (xi[a] + lattice_.half_width()) / h - 0.5;
        if (!(s >= 0.0 && s <= n - 1)) return 0.0;
        double fl = std::floor(s);
        if (fl >= n - 1) fl = n - 2;
        i0[a] = static_cast<int>(fl);
        catmull_rom(s - fl, w[a]);
    }
    auto clampi = [n](int i) { return std::clamp(i, 0, n - 1); };
    double acc = 0.0;
    for (int a = 0; a < 4; ++a) {
        const int i = clampi(i0[0] - 1 + a);
        for (int b = 0; b < 4; ++b) {
            const int j = clampi(i0[1] - 1 + b);
            const double wab = w[0][a] * w[1][b];
            for (int c = 0; c < 4; ++c) {
                const int k = clampi(i0[2] - 1 + c);
                acc += wab * w[2][c] * values[lattice_.index(i, j, k)];
            }
        }
    }
    return acc;
}

void MicroInverse::init_common(const KernelSpec& k, const VelocityGrid& lattice) {
    kernel_ = k;
    lattice_ = lattice;
    const GasState unit{};
    projector_ = MacroProjector(unit, lattice);
    sqrt_mu1_ = lattice.sample([&](const Vec3& xi) { return sqrt_mu1(xi); });
}

void MicroInverse::finish_responses() {
    const Field srcB = projector_.complement(
        lattice_.sample([&](const Vec3& xi) { return xi[0] * xi[0] * sqrt_mu1(xi); }));
    const Field srcA = projector_.complement(
        lattice_.sample([&](const Vec3& xi) { return xi[0] * norm2(xi) * sqrt_mu1(xi); }));
    psi_B_ = solve(srcB);
    psi_A_ = solve(srcA);
    const Field B11 = lattice_.sample([&](const Vec3& xi) { return (xi[0] * xi[0] - norm2(xi) / 3.0) * sqrt_mu1(xi); });
    const Field A1 = lattice_.sample([&](const Vec3& xi) { return xi[0] * (norm2(xi) - 5.0) * sqrt_mu1(xi); });
    b_BB_ = lattice_.inner(B11, psi_B_);
    b_BA_ = lattice_.inner(B11, psi_A_);
    b_AB_ = lattice_.inner(A1, psi_B_);
    b_AA_ = lattice_.inner(A1, psi_A_);
}

BoltzmannMicroInverse::BoltzmannMicroInverse(const KernelSpec& k, int n, double half_width, bool dense)
    : dense_(dense) {
    init_common(k, VelocityGrid(half_width, n));
    const GasState unit{};
    op_ = dense ? LinearizedOperator::assemble(unit, k, lattice_) : LinearizedOperator::matrix_free(unit, k, lattice_);
    finish_responses();
    ratio_B_.resize(psi_B_.size());
    ratio_A_.resize(psi_A_.size());
    for (std::size_t q = 0; q < psi_B_.size(); ++q) {
        ratio_B_[q] = psi_B_[q] / sqrt_mu1_[q];
        ratio_A_[q] = psi_A_[q] / sqrt_mu1_[q];
    }
}

Field BoltzmannMicroInverse::solve(const Field& r) const {
    return dense_ ? op_.pseudo_inverse_dense(r) : op_.pseudo_inverse(r);
}

Field BoltzmannMicroInverse::solve_iterative(const Field& r) const { return op_.pseudo_inverse(r); }

double BoltzmannMicroInverse::psi_B(const Vec3& xi) const { return sqrt_mu1(xi) * interpolate(ratio_B_, xi); }
double BoltzmannMicroInverse::psi_A(const Vec3& xi) const { return sqrt_mu1(xi) * interpolate(ratio_A_, xi); }

BgkMicroInverse::BgkMicroInverse(const KernelSpec& k, int n, double half_width) {
    init_common(k, VelocityGrid(half_width, n));
    nu1_ = collision_frequency(GasState{}, k, Vec3{0.0, 0.0, 0.0});
    finish_responses();
}

Field BgkMicroInverse::solve(const Field& r) const {
    Field out = projector_.complement(r);
    for (double& x : out) x /= nu1_;
    return out;
}

double BgkMicroInverse::psi_B(const Vec3& xi) const {
    return (xi[0] * xi[0] - norm2(xi) / 3.0) * sqrt_mu1(xi) / nu1_;
}

double BgkMicroInverse::psi_A(const Vec3& xi) const { return xi[0] * (norm2(xi) - 5.0) * sqrt_mu1(xi) / nu1_; }

// ---------------------------------------------------------------------------
// Level 1 microscopic part

Field level1_source(const WaveDerivatives& d, const VelocityGrid& node) {
    return node.sample([&](const Vec3& v) {
        const double J = j_tau(d, v, Direction::T) + v[0] * j_tau(d, v, Direction::X);
        return -J * std::sqrt(maxwellian(d.state, v));
    });
}

namespace {

double l2(const Field& f) {
    double s = 0.0;
    for (double x : f) s += x * x;
    return std::sqrt(s);
}

}  // namespace

Field micro_part_level1(const WaveDerivatives& d, const MicroInverse& inv, double consistency_tol) {
    const VelocityGrid node = inv.node_lattice(d.state);
    const Field R = level1_source(d, node);
    const double nR = l2(R);
    Field out(R.size(), 0.0);
    if (nR == 0.0) return out;
    const Field PR = inv.projector().apply(R);
    if (l2(PR) > consistency_tol * nR)
        throw Error(ErrorKind::Consistency, "level-1 source is not microscopic (|PR|/|R| = " +
                                                std::to_string(l2(PR) / nR) + ")");
    out = inv.solve(inv.projector().complement(R));
    const double sc = 1.0 / inv.scale(d.state);
    for (double& x : out) x *= sc;
    return out;
}

Field micro_part_level1_closed(const WaveDerivatives& d, const MicroInverse& inv) {
    const GasState& s = d.state;
    const double pre = -std::sqrt(s.rho) * std::pow(s.theta, -0.75) / inv.scale(s);
    const double cB = pre * d.u_x;
    const double cA = pre * d.theta_x / (2.0 * std::sqrt(s.theta));
    Field out(inv.Psi_B().size());
    for (std::size_t q = 0; q < out.size(); ++q) out[q] = cB * inv.Psi_B()[q] + cA * inv.Psi_A()[q];
    return out;
}

// ---------------------------------------------------------------------------
// Macroscopic system

MacroCoefficients macro_coefficients(const WaveDerivatives& d) {
    const double r = d.state.rho, u = d.state.u[0], th = d.state.theta;
    MacroCoefficients m;
    m.A0.setZero();
    m.A0.diagonal() << th * th, r * r * th, r * r * th, r * r * th, r * r / 6.0;
    m.A1.setZero();
    m.A1(0, 0) = th * th * u;
    m.A1(0, 1) = m.A1(1, 0) = r * th * th;
    m.A1(1, 1) = m.A1(2, 2) = m.A1(3, 3) = r * r * th * u;
    m.A1(1, 4) = m.A1(4, 1) = r * r * th / 3.0;
    m.A1(4, 4) = r * r * u / 6.0;
    m.B.setZero();
    m.B(0, 0) = th * th * d.u_x;
    m.B(0, 1) = th * th * d.rho_x;
    m.B(1, 0) = -th * th * d.rho_x;
    m.B(1, 1) = r * r * th * d.u_x;
    m.B(1, 4) = r * th * d.rho_x / 3.0;
    m.B(4, 1) = r * r * d.theta_x / 2.0;
    m.B(4, 4) = r * r * d.u_x / 9.0;
    return m;
}

std::vector<double> derivative_4th(const std::vector<double>& f, double dx) {
    const int n = static_cast<int>(f.size());
    if (n < 5) throw Error(ErrorKind::Domain, "4th-order differences need at least 5 points");
    std::vector<double> d(n);
    const double c = 1.0 / (12.0 * dx);
    for (int j = 2; j < n - 2; ++j) d[j] = (f[j - 2] - 8 * f[j - 1] + 8 * f[j + 1] - f[j + 2]) * c;
    d[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) * c;
    d[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) * c;
    d[n - 1] = -(-25 * f[n - 1] + 48 * f[n - 2] - 36 * f[n - 3] + 16 * f[n - 4] - 3 * f[n - 5]) * c;
    d[n - 2] = -(-3 * f[n - 1] - 10 * f[n - 2] + 18 * f[n - 3] - 6 * f[n - 4] + f[n - 5]) * c;
    return d;
}

MacroSystem assemble_macro_system(const SmoothWaveParams& wave, double t, const SpaceGrid& grid,
                                  const std::vector<MicroMoments>& moments) {
    const int n = grid.cells;
    if (static_cast<int>(moments.size()) != n) throw Error(ErrorKind::Domain, "moment field size mismatch");
    MacroSystem sys;
    sys.t = t;
    sys.grid = grid;
    sys.A0.resize(n);
    sys.A1.resize(n);
    sys.B.resize(n);
    sys.F.resize(n);
    std::vector<WaveDerivatives> d(n);
    std::vector<double> q1(n), q2(n), q3(n), qe(n);
    for (int j = 0; j < n; ++j) {
        d[j] = wave_derivatives(wave, t, grid.x(j));
        const double th = d[j].state.theta, u = d[j].state.u[0];
        q1[j] = th * moments[j].B11;
        q2[j] = th * moments[j].B21;
        q3[j] = th * moments[j].B31;
        qe[j] = std::pow(th, 1.5) * moments[j].A1 + 2.0 * u * th * moments[j].B11;
    }
    const auto d1 = derivative_4th(q1, grid.dx()), d2 = derivative_4th(q2, grid.dx()),
               d3 = derivative_4th(q3, grid.dx()), de = derivative_4th(qe, grid.dx());
    for (int j = 0; j < n; ++j) {
        const auto m = macro_coefficients(d[j]);
        sys.A0[j] = m.A0;
        sys.A1[j] = m.A1;
        sys.B[j] = m.B;
        const double r = d[j].state.rho, th = d[j].state.theta, u = d[j].state.u[0];
        const double f1 = -d1[j], f2 = -d2[j], f3 = -d3[j];
        const double g = -de[j] - 2.0 * u * f1;
        sys.F[j] << 0.0, r * th * f1, r * th * f2, r * th * f3, r * g / 6.0;
    }
    return sys;
}

double max_characteristic_speed(const SmoothWaveParams& wave) {
    const auto& e = wave.endstates;
    double a = 0.0;
    for (int i = 0; i <= 100; ++i) {
        const GasState s = e.strength() == 0.0 ? e.left : e.state_at(e.w_minus + e.strength() * i / 100.0);
        a = std::max(a, std::abs(s.u[0]) + std::sqrt(5.0 * s.theta / 3.0));
    }
    return a;
}

namespace {

Mat5 transport_matrix(const GasState& s) {
    Mat5 M = Mat5::Zero();
    const double r = s.rho, u = s.u[0], th = s.theta;
    M(0, 0) = u;
    M(0, 1) = r;
    M(1, 0) = th / r;
    M(1, 1) = u;
    M(1, 4) = 1.0 / 3.0;
    M(2, 2) = u;
    M(3, 3) = u;
    M(4, 1) = 2.0 * th;
    M(4, 4) = u;
    return M;
}

void macro_rhs(const SmoothWaveParams& wave, const MomentProvider& moments, const std::vector<Vec5>& U, double t,
               const SpaceGrid& grid, const ExtraForcing& extra, std::vector<Vec5>& dU, double* forcing_norm2) {
    const int n = grid.cells;
    const double dx = grid.dx();
    std::vector<MicroMoments> mom = moments ? moments(t) : std::vector<MicroMoments>(n);
    const MacroSystem sys = assemble_macro_system(wave, t, grid, mom);
    std::vector<Mat5> Mi(n + 1);
    std::vector<double> alpha(n + 1);
#pragma omp parallel for schedule(static)
    for (int k = 0; k <= n; ++k) {
        const double xf = grid.x_min + dx * k;
        const GasState s = smooth_wave(wave, t, xf);
        Mi[k] = transport_matrix(s);
        alpha[k] = std::abs(s.u[0]) + std::sqrt(5.0 * s.theta / 3.0);
    }
    auto Ug = [&](int j) -> const Vec5& { return U[std::clamp(j, 0, n - 1)]; };
    std::vector<Vec5> flux(n + 1);
#pragma omp parallel for schedule(static)
    for (int k = 0; k <= n; ++k) {
        const int jl = k - 1, jr = k;
        const Vec5 UL = Ug(jl) + 0.25 * (Ug(jl + 1) - Ug(jl - 1));
        const Vec5 UR = Ug(jr) - 0.25 * (Ug(jr + 1) - Ug(jr - 1));
        flux[k] = 0.5 * Mi[k] * (UL + UR) - 0.5 * alpha[k] * (UR - UL);
    }
    dU.resize(n);
    double fn = 0.0;
    for (int j = 0; j < n; ++j) {
        Vec5 F = sys.F[j];
        if (extra) F += extra(t, grid.x(j));
        const Vec5 a0inv = sys.A0[j].diagonal().cwiseInverse();
        fn += F.dot(a0inv.cwiseProduct(F)) * dx;
        const Mat5 N = a0inv.asDiagonal() * sys.B[j];
        dU[j] = -(flux[j + 1] - flux[j]) / dx + (Mi[j + 1] - Mi[j]) * U[j] / dx - N * U[j] + a0inv.cwiseProduct(F);
    }
    if (forcing_norm2) *forcing_norm2 = fn;
}

double macro_energy(const SmoothWaveParams& wave, const std::vector<Vec5>& U, double t, const SpaceGrid& grid) {
    double e = 0.0;
    for (int j = 0; j < grid.cells; ++j) {
        const GasState s = smooth_wave(wave, t, grid.x(j));
        const double w[5] = {s.theta * s.theta, s.rho * s.rho * s.theta, s.rho * s.rho * s.theta,
                             s.rho * s.rho * s.theta, s.rho * s.rho / 6.0};
        for (int a = 0; a < 5; ++a) e += w[a] * U[j](a) * U[j](a);
    }
    return e * grid.dx();
}

}  // namespace

void macro_step(const SmoothWaveParams& wave, const MomentProvider& moments, std::vector<Vec5>& U, double t, double dt,
                const SpaceGrid& grid, double cfl, const ExtraForcing& extra) {
    const double limit = cfl * grid.dx() / max_characteristic_speed(wave);
    if (dt > limit * (1.0 + 1e-12))
        throw Error(ErrorKind::CflViolation, "macro step dt=" + std::to_string(dt) + " exceeds " + std::to_string(limit));
    std::vector<Vec5> k1, k2;
    macro_rhs(wave, moments, U, t, grid, extra, k1, nullptr);
    std::vector<Vec5> U1(U.size());
    for (std::size_t j = 0; j < U.size(); ++j) U1[j] = U[j] + dt * k1[j];
    macro_rhs(wave, moments, U1, t + dt, grid, extra, k2, nullptr);
    for (std::size_t j = 0; j < U.size(); ++j) U[j] = 0.5 * U[j] + 0.5 * (U1[j] + dt * k2[j]);
}

MacroSolution solve_macro(const SmoothWaveParams& wave, const MomentProvider& moments, const std::vector<Vec5>& U_init,
                          double t_final, const SpaceGrid& grid, const MacroSolverSettings& settings,
                          const ExtraForcing& extra) {
    if (static_cast<int>(U_init.size()) != grid.cells) throw Error(ErrorKind::Domain, "initial data size mismatch");
    if (!(settings.snapshot_dt > 0.0)) throw Error(ErrorKind::Domain, "snapshot_dt must be positive");
    MacroSolution sol;
    sol.grid = grid;
    std::vector<Vec5> U = U_init;
    const double dt_max = settings.cfl * grid.dx() / max_characteristic_speed(wave);
    const int n_snap = std::max(1, static_cast<int>(std::llround(t_final / settings.snapshot_dt)));
    double t = 0.0;
    sol.times.push_back(0.0);
    sol.U.push_back(U);
    double E = macro_energy(wave, U, 0.0, grid);
    sol.energy.push_back(E);
    for (int s = 1; s <= n_snap; ++s) {
        const double t_next = t_final * s / n_snap;
        while (t < t_next - 1e-14) {
            const double dt = std::min(dt_max, t_next - t);
            double fn = 0.0;
            if (E > 1e-300) {
                std::vector<Vec5> tmp;
                macro_rhs(wave, moments, U, t, grid, extra, tmp, &fn);
            }
            macro_step(wave, moments, U, t, dt, grid, settings.cfl, extra);
            const double E_new = macro_energy(wave, U, t + dt, grid);
            if (E > 1e-300) {
                const double rate = (wave.sigma + t) * ((E_new - E) / dt - 2.0 * std::sqrt(fn * E)) / E;
                sol.gronwall_rate = std::max(sol.gronwall_rate, rate);
            }
            E = E_new;
            t = (t_next - t <= dt_max) ? t_next : t + dt;
            ++sol.steps;
        }
        sol.times.push_back(t_next);
        sol.U.push_back(U);
        sol.energy.push_back(E);
    }
    return sol;
}

Vec5 MacroSolution::at(double t, double x) const {
    if (times.empty()) return Vec5::Zero();
    auto in_space = [&](const std::vector<Vec5>& u) -> Vec5 {
        const double s = (x - grid.x_min) / grid.dx() - 0.5;
        if (s <= 0.0) return u.front();
        if (s >= grid.cells - 1) return u.back();
        const int j = static_cast<int>(std::floor(s));
        const double w = s - j;
        return (1.0 - w) * u[j] + w * u[j + 1];
    };
    if (t <= times.front()) return in_space(U.front());
    if (t >= times.back()) return in_space(U.back());
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t n = static_cast<std::size_t>(it - times.begin()) - 1;
    const double w = (t - times[n]) / (times[n + 1] - times[n]);
    return (1.0 - w) * in_space(U[n]) + w * in_space(U[n + 1]);
}

// ---------------------------------------------------------------------------
// Assembly

Field assemble_level(const Vec5& U, const Field& micro, const GasState& s, const VelocityGrid& grid) {
    const double c[5] = {U(0) / std::sqrt(s.rho), std::sqrt(s.rho / s.theta) * U(1), std::sqrt(s.rho / s.theta) * U(2),
                         std::sqrt(s.rho / s.theta) * U(3), std::sqrt(s.rho / 6.0) * U(4) / s.theta};
    Field F(grid.size());
    for (std::size_t q = 0; q < F.size(); ++q) {
        const Vec3 v = grid.node(q);
        const auto chi = chi_basis(s, v);
        double f = micro.empty() ? 0.0 : micro[q];
        for (int i = 0; i < 5; ++i) f += c[i] * chi[i];
        F[q] = std::sqrt(maxwellian(s, v)) * f;
    }
    return F;
}

HilbertCascade::HilbertCascade(SmoothWaveParams wave, std::shared_ptr<const MicroInverse> inv, CascadeSettings settings)
    : wave_(std::move(wave)), inv_(std::move(inv)), settings_(settings) {
    if (settings_.depth < 1 || settings_.depth > 5) throw Error(ErrorKind::Config, "cascade depth must lie in 1..5");
    if (settings_.grid.cells < 8) throw Error(ErrorKind::Config, "cascade grid needs at least 8 cells");
    if (settings_.depth >= 2 && !dynamic_cast<const BoltzmannMicroInverse*>(inv_.get()))
        throw Error(ErrorKind::Config, "levels above 1 need the Boltzmann inverse");
}

std::vector<MicroMoments> HilbertCascade::level1_moments(double t, const SpaceGrid& grid) const {
    std::vector<MicroMoments> m(grid.cells);
    const double g2 = 0.5 * inv_->kernel().gamma;
    for (int j = 0; j < grid.cells; ++j) {
        const auto d = wave_derivatives(wave_, t, grid.x(j));
        const double th = d.state.theta;
        const double pre = -std::pow(th, -g2);
        const double cB = d.u_x, cA = d.theta_x / (2.0 * std::sqrt(th));
        m[j].B11 = pre * (cB * inv_->b_BB() + cA * inv_->b_BA());
        m[j].A1 = pre * (cB * inv_->b_AB() + cA * inv_->b_AA());
    }
    return m;
}

void HilbertCascade::compute() {
    levels_.clear();
    compute_level1();
    for (int k = 2; k <= settings_.depth; ++k) compute_higher(k);
}

void HilbertCascade::compute_level1() {
    CascadeLevel lvl;
    lvl.index = 1;
    const SpaceGrid g = settings_.grid;
    std::vector<Vec5> U0(g.cells, Vec5::Zero());
    lvl.macro = solve_macro(
        wave_, [&](double t) { return level1_moments(t, g); }, U0, settings_.t_final, g, settings_.macro);
    levels_.push_back(std::move(lvl));
}

double HilbertCascade::micro_sample(int i, int snap, int sample, const WaveDerivatives& d, const Vec3& v) const {
    const GasState& s = d.state;
    const Vec3 xi = (1.0 / std::sqrt(s.theta)) * (v - s.u);
    const auto& ratio = levels_[i - 1].micro_ratio[snap][sample];
    return inv_->sqrt_mu1(xi) * inv_->interpolate(ratio, xi);
}

double HilbertCascade::micro(int i, double t, double x, const Vec3& v) const {
    if (i == 1) {
        const auto d = wave_derivatives(wave_, t, x);
        const GasState& s = d.state;
        const Vec3 xi = (1.0 / std::sqrt(s.theta)) * (v - s.u);
        const double pre = -std::sqrt(s.rho) * std::pow(s.theta, -0.75) / inv_->scale(s);
        return pre * (d.u_x * inv_->psi_B(xi) + d.theta_x / (2.0 * std::sqrt(s.theta)) * inv_->psi_A(xi));
    }
    const CascadeLevel& L = levels_.at(i - 1);
    const auto& times = L.macro.times;
    const SpaceGrid& g = settings_.grid;
    // Bracket in time over sampled snapshots and in space over sampled cells.
    std::vector<double> ts, xs;
    for (int n : L.sample_snapshots) ts.push_back(times[n]);
    for (int j : L.sample_cells) xs.push_back(g.x(j));
    auto bracket = [](const std::vector<double>& a, double y, int& k, double& w) {
        if (a.size() == 1 || y <= a.front()) {
            k = 0;
            w = 0.0;
            return;
        }
        if (y >= a.back()) {
            k = static_cast<int>(a.size()) - 2;
            w = 1.0;
            return;
        }
        k = static_cast<int>(std::upper_bound(a.begin(), a.end(), y) - a.begin()) - 1;
        w = (y - a[k]) / (a[k + 1] - a[k]);
    };
    int kt, kx;
    double wt, wx;
    bracket(ts, t, kt, wt);
    bracket(xs, x, kx, wx);
    double acc = 0.0;
    for (int a = 0; a < 2; ++a) {
        const double fa = a ? wt : 1.0 - wt;
        if (fa == 0.0 || kt + a >= static_cast<int>(ts.size())) continue;
        for (int b = 0; b < 2; ++b) {
            const double fb = b ? wx : 1.0 - wx;
            if (fb == 0.0 || kx + b >= static_cast<int>(xs.size())) continue;
            const auto d = wave_derivatives(wave_, ts[kt + a], xs[kx + b]);
            acc += fa * fb * micro_sample(i, kt + a, kx + b, d, v);
        }
    }
    return acc;
}

double HilbertCascade::F(int i, double t, double x, const Vec3& v) const {
    const GasState s = smooth_wave(wave_, t, x);
    const Vec5 U = levels_.at(i - 1).macro.at(t, x);
    const double c[5] = {U(0) / std::sqrt(s.rho), std::sqrt(s.rho / s.theta) * U(1), std::sqrt(s.rho / s.theta) * U(2),
                         std::sqrt(s.rho / s.theta) * U(3), std::sqrt(s.rho / 6.0) * U(4) / s.theta};
    const auto chi = chi_basis(s, v);
    double f = micro(i, t, x, v);
    for (int k = 0; k < 5; ++k) f += c[k] * chi[k];
    return std::sqrt(maxwellian(s, v)) * f;
}

Field HilbertCascade::F_on(int i, double t, double x, const VelocityGrid& grid) const {
    Field out(grid.size());
    if (i == 1) {
        // Hoist the wave evaluation out of the velocity loop.
        const auto d = wave_derivatives(wave_, t, x);
        const GasState& s = d.state;
        const Vec5 U = levels_.at(0).macro.at(t, x);
        const double pre = -std::sqrt(s.rho) * std::pow(s.theta, -0.75) / inv_->scale(s);
        const double cB = pre * d.u_x, cA = pre * d.theta_x / (2.0 * std::sqrt(s.theta));
        const double c[5] = {U(0) / std::sqrt(s.rho), std::sqrt(s.rho / s.theta) * U(1),
                             std::sqrt(s.rho / s.theta) * U(2), std::sqrt(s.rho / s.theta) * U(3),
                             std::sqrt(s.rho / 6.0) * U(4) / s.theta};
        const double ist = 1.0 / std::sqrt(s.theta);
        for (std::size_t q = 0; q < out.size(); ++q) {
            const Vec3 v = grid.node(q);
            const Vec3 xi = ist * (v - s.u);
            const auto chi = chi_basis(s, v);
            double f = cB * inv_->psi_B(xi) + cA * inv_->psi_A(xi);
            for (int k = 0; k < 5; ++k) f += c[k] * chi[k];
            out[q] = std::sqrt(maxwellian(s, v)) * f;
        }
        return out;
    }
    for (std::size_t q = 0; q < out.size(); ++q) out[q] = F(i, t, x, grid.node(q));
    return out;
}

void HilbertCascade::compute_higher(int k) {
    // Level k from levels 1..k-1: micro part of f_k, then its macro system.
    const SpaceGrid g = settings_.grid;
    const CascadeLevel& prev = levels_.at(k - 2);
    const auto& times = prev.macro.times;
    CascadeLevel lvl;
    lvl.index = k;
    const int stride = std::max(1, settings_.level2_stride);
    for (int j = std::max(2, stride / 2); j <= g.cells - 3; j += stride) lvl.sample_cells.push_back(j);
    const int tstride = std::max(1, settings_.level2_time_stride);
    for (int n = 0; n < static_cast<int>(times.size()); n += tstride) lvl.sample_snapshots.push_back(n);
    if (lvl.sample_snapshots.back() != static_cast<int>(times.size()) - 1)
        lvl.sample_snapshots.push_back(static_cast<int>(times.size()) - 1);
    const double dx = g.dx();
    const int nts = static_cast<int>(times.size());
    if (nts < 5) throw Error(ErrorKind::Config, "levels above 1 need at least 5 macro snapshots for time derivatives");
    const double dts = nts > 1 ? times[1] - times[0] : 1.0;
    const KernelSpec& kernel = inv_->kernel();

    const std::size_t ns = lvl.sample_snapshots.size(), nc = lvl.sample_cells.size();
    lvl.micro_ratio.assign(ns, std::vector<Field>(nc));
    std::vector<std::vector<MicroMoments>> mom(ns, std::vector<MicroMoments>(nc));
    std::vector<double> defects(ns * nc, 0.0);

    const Field sqrt_mu1 = inv_->lattice().sample([&](const Vec3& xi) { return inv_->sqrt_mu1(xi); });

    for (std::size_t a = 0; a < ns; ++a) {
        const int n = lvl.sample_snapshots[a];
        const double t = times[n];
        for (std::size_t b = 0; b < nc; ++b) {
            const int j = lvl.sample_cells[b];
            const double x = g.x(j);
            const auto d = wave_derivatives(wave_, t, x);
            const VelocityGrid node = inv_->node_lattice(d.state);
            const std::size_t N = node.size();
            // Time derivative at fixed v through snapshot values.
            auto Fprev = [&](int nn, double xx) { return F_on(k - 1, times[nn], xx, node); };
            Field dt_F(N, 0.0), dx_F(N, 0.0);
            {
                int base;
                double c[5];
                if (n >= 2 && n <= nts - 3) {
                    base = n - 2;
                    const double cc[5] = {1, -8, 0, 8, -1};
                    std::copy(cc, cc + 5, c);
                } else if (n < 2) {
                    base = 0;
                    const double c0[5] = {-25, 48, -36, 16, -3}, c1[5] = {-3, -10, 18, -6, 1};
                    std::copy(n == 0 ? c0 : c1, (n == 0 ? c0 : c1) + 5, c);
                } else {
                    base = nts - 5;
                    const double c0[5] = {3, -16, 36, -48, 25}, c1[5] = {-1, 6, -18, 10, 3};
                    std::copy(n == nts - 1 ? c0 : c1, (n == nts - 1 ? c0 : c1) + 5, c);
                }
                for (int m = 0; m < 5; ++m) {
                    if (c[m] == 0.0) continue;
                    const Field f = Fprev(base + m, x);
                    for (std::size_t q = 0; q < N; ++q) dt_F[q] += c[m] * f[q] / (12.0 * dts);
                }
            }
            const double cx[4] = {1, -8, 8, -1};
            const int off[4] = {-2, -1, 1, 2};
            for (int m = 0; m < 4; ++m) {
                const Field f = F_on(k - 1, t, x + off[m] * dx, node);
                for (std::size_t q = 0; q < N; ++q) dx_F[q] += cx[m] * f[q] / (12.0 * dx);
            }
            Field R(N, 0.0);
            for (std::size_t q = 0; q < N; ++q) R[q] = -(dt_F[q] + node.node(q)[0] * dx_F[q]);
            CollisionOptions opts;
            opts.prune_radius = settings_.prune_radius * std::sqrt(d.state.theta);
            for (int i1 = 1; i1 < k; ++i1) {
                const int i2 = k - i1;
                const Field Fa = F_on(i1, t, x, node);
                const Field Fb = F_on(i2, t, x, node);
                const Field Q = q_bilinear(Fa, Fb, kernel, node, opts);
                for (std::size_t q = 0; q < N; ++q) R[q] -= Q[q];
            }
            const GasState& s = d.state;
            for (std::size_t q = 0; q < N; ++q) R[q] /= std::sqrt(maxwellian(s, node.node(q)));
            const double nR = l2(R);
            Field micro(N, 0.0);
            if (nR > 0.0) {
                defects[a * nc + b] = l2(inv_->projector().apply(R)) / nR;
                micro = inv_->solve(inv_->projector().complement(R));
                const double sc = 1.0 / inv_->scale(s);
                for (double& y : micro) y *= sc;
            }
            Field ratio(N);
            for (std::size_t q = 0; q < N; ++q) ratio[q] = micro[q] / sqrt_mu1[q];
            lvl.micro_ratio[a][b] = std::move(ratio);
            // Moments of sqrt(mu_s) micro.
            const double jac = std::pow(s.theta, 1.5) * inv_->lattice().weight();
            const double amp = std::sqrt(s.rho) * std::pow(s.theta, -0.75);
            MicroMoments mm;
            for (std::size_t q = 0; q < N; ++q) {
                const Vec3 xi = inv_->lattice().node(q);
                const double w = jac * amp * sqrt_mu1[q] * micro[q];
                const double x2 = norm2(xi);
                mm.B11 += (xi[0] * xi[0] - x2 / 3.0) * w;
                mm.B21 += xi[1] * xi[0] * w;
                mm.B31 += xi[2] * xi[0] * w;
                mm.A1 += xi[0] * (x2 - 5.0) * w;
            }
            mom[a][b] = mm;
        }
    }
    lvl.max_consistency_defect = *std::max_element(defects.begin(), defects.end());
    if (lvl.max_consistency_defect > settings_.consistency_tol)
        throw Error(ErrorKind::Consistency, "level " + std::to_string(k) + " source has |PR|/|R| = " +
                                                std::to_string(lvl.max_consistency_defect));

    std::vector<double> ts;
    for (int n : lvl.sample_snapshots) ts.push_back(times[n]);
    std::vector<double> xs;
    for (int j : lvl.sample_cells) xs.push_back(g.x(j));
    auto provider = [ts, xs, mom, g](double t) {
        std::size_t a = 0;
        double w = 0.0;
        if (ts.size() > 1) {
            if (t >= ts.back()) {
                a = ts.size() - 2;
                w = 1.0;
            } else if (t > ts.front()) {
                a = static_cast<std::size_t>(std::upper_bound(ts.begin(), ts.end(), t) - ts.begin()) - 1;
                w = (t - ts[a]) / (ts[a + 1] - ts[a]);
            }
        }
        std::vector<MicroMoments> out(g.cells);
        auto lerp = [](const MicroMoments& p, const MicroMoments& q, double s) {
            return MicroMoments{(1 - s) * p.B11 + s * q.B11, (1 - s) * p.B21 + s * q.B21, (1 - s) * p.B31 + s * q.B31,
                                (1 - s) * p.A1 + s * q.A1};
        };
        for (int j = 0; j < g.cells; ++j) {
            const double x = g.x(j);
            std::size_t b = 0;
            double u = 0.0;
            if (xs.size() > 1) {
                if (x >= xs.back()) {
                    b = xs.size() - 2;
                    u = 1.0;
                } else if (x > xs.front()) {
                    b = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin()) - 1;
                    u = (x - xs[b]) / (xs[b + 1] - xs[b]);
                }
            }
            const std::size_t b1 = std::min(b + 1, xs.size() - 1), a1 = std::min(a + 1, ts.size() - 1);
            const MicroMoments lo = lerp(mom[a][b], mom[a][b1], u);
            const MicroMoments hi = lerp(mom[a1][b], mom[a1][b1], u);
            out[j] = lerp(lo, hi, w);
        }
        return out;
    };
    std::vector<Vec5> U0(g.cells, Vec5::Zero());
    lvl.macro = solve_macro(wave_, provider, U0, settings_.t_final, g, settings_.macro);
    levels_.push_back(std::move(lvl));
}

void HilbertCascade::write_csv(int i, const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Config, "cannot write " + path);
    out << "t,x1,rho,u1,u2,u3,theta,micro_sup\r\n";
    out << std::setprecision(12);
    const CascadeLevel& L = level(i);
    const SpaceGrid& g = settings_.grid;
    for (std::size_t n = 0; n < L.macro.times.size(); ++n) {
        const double t = L.macro.times[n];
        for (int j = 0; j < g.cells; ++j) {
            const Vec5& U = L.macro.U[n][j];
            out << t << ',' << g.x(j);
            for (int a = 0; a < 5; ++a) out << ',' << U(a);
            out << ',';
            if (i == 1) {
                const auto d = wave_derivatives(wave_, t, g.x(j));
                const Field m = micro_part_level1_closed(d, *inv_);
                double mx = 0.0;
                for (double y : m) mx = std::max(mx, std::abs(y));
                out << mx;
            } else {
                const auto sit = std::find(L.sample_cells.begin(), L.sample_cells.end(), j);
                const auto nit = std::find(L.sample_snapshots.begin(), L.sample_snapshots.end(), static_cast<int>(n));
                if (sit != L.sample_cells.end() && nit != L.sample_snapshots.end()) {
                    const auto& r = L.micro_ratio[nit - L.sample_snapshots.begin()][sit - L.sample_cells.begin()];
                    double mx = 0.0;
                    for (std::size_t q = 0; q < r.size(); ++q)
                        mx = std::max(mx, std::abs(r[q] * inv_->sqrt_mu1(inv_->lattice().node(q))));
                    out << mx;
                }
            }
            out << "\r\n";
        }
    }
}

void HilbertCascade::write_metadata(const std::string& path) const {
    nlohmann::ordered_json j;
    const auto& e = wave_.endstates;
    j["wave"] = {{"rho_minus", e.left.rho},   {"u1_minus", e.left.u[0]}, {"theta_minus", e.left.theta},
                 {"rho_plus", e.right.rho},   {"u1_plus", e.right.u[0]}, {"theta_plus", e.right.theta},
                 {"w_minus", e.w_minus},      {"w_plus", e.w_plus},      {"sigma", wave_.sigma}};
    j["grid"] = {{"x_min", settings_.grid.x_min}, {"x_max", settings_.grid.x_max}, {"cells", settings_.grid.cells}};
    j["t_final"] = settings_.t_final;
    j["snapshot_dt"] = settings_.macro.snapshot_dt;
    j["cfl"] = settings_.macro.cfl;
    j["depth"] = depth();
    j["inverse"] = inv_->name();
    j["reference_lattice"] = {{"n", inv_->lattice().n()}, {"half_width", inv_->lattice().half_width()}};
    j["kernel"] = {{"gamma", inv_->kernel().gamma},
                   {"b_scale", inv_->kernel().b_scale},
                   {"n_polar", inv_->kernel().n_polar},
                   {"n_azimuth", inv_->kernel().n_azimuth}};
    j["columns"] = {{"t", "time"},
                    {"x1", "cell centre"},
                    {"rho", "rho_i"},
                    {"u1", "u_i^1"},
                    {"u2", "u_i^2"},
                    {"u3", "u_i^3"},
                    {"theta", "theta_i"},
                    {"micro_sup", "max over the node lattice of |(I-P) f_i| (empty where not sampled)"}};
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Config, "cannot write " + path);
    out << j.dump(2) << '\n';
}

}  // namespace hydrolimit
