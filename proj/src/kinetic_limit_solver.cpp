#include "hydrolimit/kinetic_limit_solver.hpp"

#include <algorithm>
#include <bit>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace hydrolimit {

Backend parse_backend(const std::string& name) {
    if (name == "bgk") return Backend::Bgk;
    if (name == "boltzmann") return Backend::Boltzmann;
    throw Error(ErrorKind::Config, "unknown backend '" + name + "' (expected bgk or boltzmann)");
}

const char* backend_name(Backend b) { return b == Backend::Bgk ? "bgk" : "boltzmann"; }

double DistributionField::total_mass() const {
    double s = 0.0;
    for (const Field& c : F)
        for (double x : c) s += x;
    return s * space.dx() * velocity.weight();
}

double kinetic_half_width(const WaveEndStates& ends, double sigma, double t_final) {
    const double w = std::max(std::abs(ends.w_minus), std::abs(ends.w_plus));
    return w * t_final * 1.5 + 40.0 * sigma + 10.0;
}

VelocityGrid kinetic_velocity_grid(const WaveEndStates& ends, int n, double width) {
    if (n < 4) throw Error(ErrorKind::Config, "velocity lattice needs at least 4 nodes per axis");
    if (!(width > 0.0)) throw Error(ErrorKind::Config, "velocity width must be positive");
    const double th = std::max(ends.left.theta, ends.right.theta);
    const double du = ends.right.u[0] - ends.left.u[0];
    const Vec3 c{0.5 * (ends.left.u[0] + ends.right.u[0]), 0.0, 0.0};
    return VelocityGrid(width * std::sqrt(th) + 0.5 * std::abs(du), n, c);
}

DistributionField init_expansion(const SmoothWaveParams& wave, const HilbertCascade* cascade, double epsilon, int depth,
                                 const SpaceGrid& space, const VelocityGrid& velocity, bool strict_positivity,
                                 double t0) {
    if (depth < 0) throw Error(ErrorKind::Config, "expansion depth must be >= 0");
    if (depth > 0 && (!cascade || cascade->depth() < depth))
        throw Error(ErrorKind::Config, "expansion depth exceeds the available cascade levels");
    if (!(epsilon > 0.0)) throw Error(ErrorKind::Domain, "epsilon must be positive");
    DistributionField f;
    f.space = space;
    f.velocity = velocity;
    f.t = t0;
    f.F.assign(space.cells, Field());
    f.left_inflow = maxwellian_on(wave.endstates.left, velocity);
    f.right_inflow = maxwellian_on(wave.endstates.right, velocity);
    std::vector<double> clipped(space.cells, 0.0);
    std::vector<int> negative(space.cells, 0);
#pragma omp parallel for schedule(dynamic, 1)
    for (int j = 0; j < space.cells; ++j) {
        const double x = space.x(j);
        Field F = maxwellian_on(smooth_wave(wave, t0, x), velocity);
        double en = 1.0;
        for (int n = 1; n <= depth; ++n) {
            en *= epsilon;
            const Field Fn = cascade->F_on(n, t0, x, velocity);
            for (std::size_t q = 0; q < F.size(); ++q) F[q] += en * Fn[q];
        }
        for (double& v : F)
            if (v < 0.0) {
                ++negative[j];
                clipped[j] -= v;
                v = 0.0;
            }
        f.F[j] = std::move(F);
    }
    double total = 0.0;
    for (int j = 0; j < space.cells; ++j) {
        if (strict_positivity && negative[j] > 0)
            throw Error(ErrorKind::Positivity, "initial expansion is negative at x = " + std::to_string(space.x(j)));
        total += clipped[j];
    }
    f.clipped_mass = total * space.dx() * velocity.weight();
    f.max_step_clip = f.clipped_mass;
    return f;
}

namespace {

double max_abs_v1(const VelocityGrid& g) {
    double m = 0.0;
    for (int i = 0; i < g.n(); ++i) m = std::max(m, std::abs(g.coord(0, i)));
    return m;
}

}  // namespace

void transport(DistributionField& f, double dt) {
    const VelocityGrid& g = f.velocity;
    const double dx = f.space.dx();
    if (!(dt >= 0.0)) throw Error(ErrorKind::Domain, "negative time step");
    if (dt * max_abs_v1(g) > dx * (1.0 + 1e-12))
        throw Error(ErrorKind::CflViolation, "transport step exceeds the CFL bound dt max|v1| <= dx");
    const int J = f.cells();
    const int n = g.n();
    const std::size_t plane = static_cast<std::size_t>(n) * n;
    const double lam = dt / dx;
    std::vector<Field> out(J);
    auto cell = [&](int j) -> const Field& {
        if (j < 0) return f.left_inflow;
        if (j >= J) return f.right_inflow;
        return f.F[j];
    };
#pragma omp parallel for schedule(static)
    for (int j = 0; j < J; ++j) {
        const Field& L = cell(j - 1);
        const Field& C = f.F[j];
        const Field& R = cell(j + 1);
        Field o(C.size());
        for (int i = 0; i < n; ++i) {
            const double v1 = g.coord(0, i);
            const std::size_t b = i * plane;
            if (v1 > 0.0) {
                for (std::size_t q = b; q < b + plane; ++q) o[q] = C[q] - lam * v1 * (C[q] - L[q]);
            } else {
                for (std::size_t q = b; q < b + plane; ++q) o[q] = C[q] - lam * v1 * (R[q] - C[q]);
            }
        }
        out[j] = std::move(o);
    }
    // Mass flux through x_min (into the domain) and x_max (out of it).
    double in = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v1 = g.coord(0, i);
        const std::size_t b = i * plane;
        for (std::size_t q = b; q < b + plane; ++q) {
            const double left = v1 > 0.0 ? v1 * f.left_inflow[q] : v1 * f.F[0][q];
            const double right = v1 > 0.0 ? v1 * f.F[J - 1][q] : v1 * f.right_inflow[q];
            in += left - right;
        }
    }
    f.boundary_inflow += in * dt * g.weight();
    f.F = std::move(out);
}

KineticStepper::KineticStepper(const CollisionSettings& settings, const VelocityGrid& velocity)
    : settings_(settings), velocity_(velocity) {
    settings_.kernel.validate();
    if (settings_.backend == Backend::Boltzmann) {
        if (!(settings_.substep_factor > 0.0 && settings_.substep_factor <= 1.0))
            throw Error(ErrorKind::Config, "substep_factor must lie in (0, 1]");
        if (settings_.max_substeps < 0) throw Error(ErrorKind::Config, "max_substeps must be non-negative");
        plan_ = std::make_shared<CollisionPlan>(settings_.kernel, velocity);
    }
    const std::size_t N = velocity.size();
    C_.resize(5, static_cast<Eigen::Index>(N));
    for (std::size_t q = 0; q < N; ++q) {
        const Vec3 v = velocity.node(q);
        const Eigen::Index c = static_cast<Eigen::Index>(q);
        C_(0, c) = 1.0;
        C_(1, c) = v[0];
        C_(2, c) = v[1];
        C_(3, c) = v[2];
        C_(4, c) = 0.5 * norm2(v);
    }
    CCt_inv_ = (C_ * C_.transpose()).inverse();
}

double KineticStepper::max_dt(const DistributionField& f, double cfl) const {
    if (!(cfl > 0.0 && cfl <= 1.0)) throw Error(ErrorKind::Config, "CFL number must lie in (0, 1]");
    return cfl * f.space.dx() / max_abs_v1(f.velocity);
}

void KineticStepper::collide_bgk(Field& F, double epsilon, double dt) const {
    GasState s;
    const Field M = matched_maxwellian(F, velocity_, &s);
    const double nu = collision_frequency(s, settings_.kernel, s.u);
    const double decay = std::exp(-nu * dt / epsilon);
    for (std::size_t q = 0; q < F.size(); ++q) F[q] = M[q] + decay * (F[q] - M[q]);
}

int KineticStepper::collide_boltzmann(Field& F, double epsilon, double dt, double& clipped) const {
    GasState s;
    const Field M = matched_maxwellian(F, velocity_, &s);
    double dev = 0.0, peak = 0.0;
    for (std::size_t q = 0; q < F.size(); ++q) {
        dev = std::max(dev, std::abs(F[q] - M[q]));
        peak = std::max(peak, M[q]);
    }
    if (dev <= settings_.skip_tol * peak) return 0;
    // Q(F,F) - Q(M,M): the lattice residual of Q(M,M) is removed so that the
    // matched Maxwellian stays a fixed point.
    const Field QMM = plan_->apply(M, M);
    const double nu_bar = collision_frequency(s, settings_.kernel, s.u);
    int n_sub = std::max(1, static_cast<int>(std::ceil(dt * nu_bar / (settings_.substep_factor * epsilon))));
    if (settings_.max_substeps > 0) n_sub = std::min(n_sub, settings_.max_substeps);
    const double tau = dt / n_sub;
    const std::size_t N = F.size();
    Field gain, nu;
    Eigen::VectorXd dF(static_cast<Eigen::Index>(N));
    for (int k = 0; k < n_sub; ++k) {
        plan_->evaluate(F, F, gain, nu);
        for (std::size_t q = 0; q < N; ++q) {
            const double src = gain[q] - QMM[q];
            double next;
            if (nu[q] > 0.0) {
                const double e = std::exp(-nu[q] * tau / epsilon);
                next = e * F[q] + (1.0 - e) / nu[q] * src;
            } else {
                next = F[q] + tau / epsilon * src;
            }
            dF(static_cast<Eigen::Index>(q)) = next - F[q];
        }
        // Least-squares correction onto zero change of (mass, momentum, energy).
        const Eigen::Matrix<double, 5, 1> lam = CCt_inv_ * (C_ * dF);
        dF.noalias() -= C_.transpose() * lam;
        for (std::size_t q = 0; q < N; ++q) {
            F[q] += dF(static_cast<Eigen::Index>(q));
            if (F[q] < 0.0) {
                clipped -= F[q];
                F[q] = 0.0;
            }
        }
    }
    return n_sub;
}

void KineticStepper::collide(DistributionField& f, double epsilon, double dt) const {
    if (!(epsilon > 0.0)) throw Error(ErrorKind::Domain, "epsilon must be positive");
    const int J = f.cells();
    for (int j = 0; j < J; ++j)
        if (!(conserved_moments(f.F[j], velocity_)[0] > 0.0))
            throw Error(ErrorKind::Vacuum, "vacuum cell at x = " + std::to_string(f.space.x(j)));
    if (settings_.backend == Backend::Bgk) {
#pragma omp parallel for schedule(dynamic, 4)
        for (int j = 0; j < J; ++j) collide_bgk(f.F[j], epsilon, dt);
        return;
    }
    double clipped = 0.0;
    for (int j = 0; j < J; ++j) {
        const int k = collide_boltzmann(f.F[j], epsilon, dt, clipped);
        if (k == 0) ++skipped_;
        substeps_ += k;
    }
    clipped *= f.space.dx() * velocity_.weight();
    f.clipped_mass += clipped;
    f.max_step_clip = std::max(f.max_step_clip, clipped);
}

void KineticStepper::step(DistributionField& f, double epsilon, double dt) const {
    if (dt > max_dt(f, 1.0) * (1.0 + 1e-12))
        throw Error(ErrorKind::CflViolation, "time step exceeds dx / max|v1|");
    transport(f, 0.5 * dt);
    collide(f, epsilon, dt);
    transport(f, 0.5 * dt);
    f.t += dt;
}

void KineticStepper::free_step(DistributionField& f, double dt) const {
    if (dt > max_dt(f, 1.0) * (1.0 + 1e-12))
        throw Error(ErrorKind::CflViolation, "time step exceeds dx / max|v1|");
    transport(f, 0.5 * dt);
    transport(f, 0.5 * dt);
    f.t += dt;
}

std::vector<GasState> moments(const DistributionField& f) {
    std::vector<GasState> out(f.cells());
    for (int j = 0; j < f.cells(); ++j) out[j] = moments_to_state(conserved_moments(f.F[j], f.velocity));
    return out;
}

std::shared_ptr<const MicroInverse> make_inverse(const KineticConfig& cfg) {
    if (cfg.collision.backend == Backend::Bgk)
        return std::make_shared<BgkMicroInverse>(cfg.collision.kernel, cfg.ref_n, cfg.ref_half_width);
    return std::make_shared<BoltzmannMicroInverse>(cfg.collision.kernel, cfg.ref_n, cfg.ref_half_width);
}

namespace {

void validate(const KineticConfig& cfg, double epsilon) {
    if (!(epsilon > 0.0)) throw Error(ErrorKind::Domain, "epsilon must be positive");
    if (!(cfg.t_final > 0.0)) throw Error(ErrorKind::Config, "t_final must be positive");
    if (cfg.cells < 8) throw Error(ErrorKind::Config, "kinetic grid needs at least 8 cells");
    if (cfg.depth < 0 || cfg.depth > 5) throw Error(ErrorKind::Config, "expansion depth must lie in 0..5");
    if (!(cfg.sigma_for(epsilon) > 0.0)) throw Error(ErrorKind::Config, "sigma must be positive");
}

std::shared_ptr<HilbertCascade> build_cascade(const KineticConfig& cfg, const SmoothWaveParams& wave,
                                              const SpaceGrid& space, std::shared_ptr<const MicroInverse> inv) {
    if (cfg.depth == 0) return nullptr;
    CascadeSettings cs;
    cs.depth = cfg.depth;
    cs.t_final = cfg.t_final;
    cs.grid = space;
    auto c = std::make_shared<HilbertCascade>(wave, std::move(inv), cs);
    c->compute();
    return c;
}

KineticRun march(const KineticConfig& cfg, double epsilon, const SmoothWaveParams& wave,
                 std::shared_ptr<HilbertCascade> cascade, const StepObserver& observer) {
    const double X = kinetic_half_width(wave.endstates, wave.sigma, cfg.t_final);
    const SpaceGrid space{-X, X, cfg.cells};
    const VelocityGrid vel = kinetic_velocity_grid(wave.endstates, cfg.n_v, cfg.v_width);
    KineticRun run;
    run.wave = wave;
    run.cascade = cascade;
    run.field = init_expansion(wave, cascade.get(), epsilon, cfg.depth, space, vel, cfg.strict_positivity);
    const KineticStepper stepper(cfg.collision, vel);
    const double dt_max = stepper.max_dt(run.field, cfg.cfl);
    const int steps = static_cast<int>(std::ceil(cfg.t_final / dt_max - 1e-12));
    const double dt = cfg.t_final / steps;
    if (observer) observer(run.field, cascade.get());
    for (int s = 0; s < steps; ++s) {
        stepper.step(run.field, epsilon, dt);
        if (observer) observer(run.field, cascade.get());
    }
    run.field.t = cfg.t_final;
    run.steps = steps;
    return run;
}

}  // namespace

KineticRun run_kinetic(const KineticConfig& cfg, double epsilon, const StepObserver& observer) {
    validate(cfg, epsilon);
    const SmoothWaveParams wave{cfg.ends, cfg.sigma_for(epsilon)};
    wave.validate();
    const double X = kinetic_half_width(cfg.ends, wave.sigma, cfg.t_final);
    auto cascade = cfg.depth > 0 ? build_cascade(cfg, wave, SpaceGrid{-X, X, cfg.cells}, make_inverse(cfg)) : nullptr;
    return march(cfg, epsilon, wave, cascade, observer);
}

MomentErrors moment_errors(const DistributionField& f, const std::function<GasState(double x)>& target) {
    const auto m = moments(f);
    MomentErrors e;
    for (int j = 0; j < f.cells(); ++j) {
        const GasState s = target(f.space.x(j));
        e.rho = std::max(e.rho, std::abs(m[j].rho - s.rho));
        e.u1 = std::max(e.u1, std::abs(m[j].u[0] - s.u[0]));
        e.theta = std::max(e.theta, std::abs(m[j].theta - s.theta));
    }
    return e;
}

double weighted_sup_distance(const DistributionField& f, const WaveEndStates& ends, double theta_M) {
    const std::size_t N = f.velocity.size();
    Field inv_sqrt_muM(N);
    for (std::size_t q = 0; q < N; ++q) {
        const Vec3 v = f.velocity.node(q);
        inv_sqrt_muM[q] = 1.0 / std::sqrt(std::pow(2.0 * kPi * theta_M, -1.5) * std::exp(-0.5 * norm2(v) / theta_M));
    }
    double sup = 0.0;
    for (int j = 0; j < f.cells(); ++j) {
        const Field mu = maxwellian_on(exact_wave(ends, f.t, f.space.x(j)), f.velocity);
        for (std::size_t q = 0; q < N; ++q) sup = std::max(sup, std::abs(f.F[j][q] - mu[q]) * inv_sqrt_muM[q]);
    }
    return sup;
}

LimitTable limit_study(const KineticConfig& cfg, const std::vector<double>& epsilons, const RunSink& sink) {
    if (epsilons.empty()) throw Error(ErrorKind::Config, "limit study needs at least one epsilon");
    for (std::size_t i = 1; i < epsilons.size(); ++i)
        if (!(epsilons[i] < epsilons[i - 1])) throw Error(ErrorKind::Config, "epsilons must be strictly decreasing");
    LimitTable table;
    const double theta_M = choose_theta_M(cfg.ends.left.theta, cfg.ends.right.theta);
    // With sigma held fixed the cascade does not depend on epsilon.
    std::shared_ptr<const MicroInverse> inv;
    std::shared_ptr<HilbertCascade> shared;
    for (double eps : epsilons) {
        LimitRow row;
        row.epsilon = eps;
        row.sigma = cfg.sigma_for(eps);
        try {
            validate(cfg, eps);
            const SmoothWaveParams wave{cfg.ends, row.sigma};
            wave.validate();
            std::shared_ptr<HilbertCascade> cascade;
            if (cfg.depth > 0) {
                if (!inv) inv = make_inverse(cfg);
                if (cfg.couple_sigma || !shared) {
                    const double X = kinetic_half_width(cfg.ends, row.sigma, cfg.t_final);
                    cascade = build_cascade(cfg, wave, SpaceGrid{-X, X, cfg.cells}, inv);
                    if (!cfg.couple_sigma) shared = cascade;
                } else {
                    cascade = shared;
                }
            }
            const KineticRun run = march(cfg, eps, wave, cascade, nullptr);
            const double t = run.field.t;
            row.exact = moment_errors(run.field, [&](double x) { return exact_wave(cfg.ends, t, x); });
            row.smooth = moment_errors(run.field, [&](double x) { return smooth_wave(wave, t, x); });
            row.weighted_sup = weighted_sup_distance(run.field, cfg.ends, theta_M);
            row.steps = run.steps;
            row.clipped_mass = run.field.clipped_mass;
            row.ok = true;
            if (sink) sink(eps, run);
        } catch (const Error& e) {
            row.ok = false;
            row.failure = e.what();
        }
        table.rows.push_back(row);
    }
    std::vector<double> xs, ys;
    for (const LimitRow& r : table.rows)
        if (r.ok) {
            xs.push_back(r.epsilon);
            ys.push_back(r.exact.max());
        }
    table.strictly_decreasing = xs.size() == table.rows.size() && xs.size() >= 2;
    for (std::size_t i = 1; i < ys.size(); ++i)
        if (!(ys[i] < ys[i - 1])) table.strictly_decreasing = false;
    if (xs.size() >= 3) {
        table.fit = fit_rate(xs, ys);
        table.has_fit = true;
    }
    return table;
}

void write_limit_csv(const LimitTable& table, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::Config, "cannot write " + path);
    os << std::setprecision(12);
    os << "epsilon,sigma,ok,err_rho,err_u1,err_theta,err_max,smooth_err_max,weighted_sup,steps,clipped_mass,failure\r\n";
    for (const LimitRow& r : table.rows) {
        os << r.epsilon << ',' << r.sigma << ',' << (r.ok ? 1 : 0) << ',' << r.exact.rho << ',' << r.exact.u1 << ','
           << r.exact.theta << ',' << r.exact.max() << ',' << r.smooth.max() << ',' << r.weighted_sup << ',' << r.steps
           << ',' << r.clipped_mass << ',' << csv_quote(r.failure) << "\r\n";
    }
}

double mollifier_phi(double a, const Vec3& x) {
    if (!(a > 0.0)) throw Error(ErrorKind::Domain, "mollifier scale must be positive");
    const double r2 = norm2(x) / (a * a);
    if (r2 >= 1.0) return 0.0;
    return std::exp(1.0 / (r2 - 1.0)) / (a * a * a);
}

Vec3 mollifier_gradient(double a, const Vec3& x) {
    const double r2 = norm2(x) / (a * a);
    if (r2 >= 1.0) return {0.0, 0.0, 0.0};
    const double s = 1.0 - r2;
    const double c = -2.0 * mollifier_phi(a, x) / (a * a * s * s);
    return c * x;
}

double mollifier_gradient_check(double a, double lambda, int samples) {
    if (!(a > 0.0)) throw Error(ErrorKind::Domain, "mollifier scale must be positive");
    if (!(lambda > 0.0 && lambda < 1.0)) throw Error(ErrorKind::Domain, "lambda must lie in (0, 1)");
    if (samples < 2) throw Error(ErrorKind::Domain, "mollifier check needs at least 2 samples");
    // Both phi_a and its gradient underflow near |x| = a, so the ratio is formed
    // from logarithms: ln|grad phi_a| = ln phi_a + ln(2 |x| / (a^2 s^2)).
    const Vec3 dirs[6] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.6, 0.8, 0}, {0, -0.6, 0.8}, {0.48, 0.6, 0.64}};
    double best = -std::numeric_limits<double>::infinity();
    for (const Vec3& d : dirs) {
        const double dn = std::sqrt(norm2(d));
        for (int k = 1; k < samples; ++k) {
            const double r = 1.0 - std::pow(10.0, -12.0 * k / samples);
            const Vec3 x = (a * r / dn) * d;
            const double r2 = norm2(x) / (a * a);
            const double s = 1.0 - r2;
            const double log_phi = -3.0 * std::log(a) - 1.0 / s;
            const double log_grad = log_phi + std::log(2.0 * std::sqrt(norm2(x)) / (a * a * s * s));
            best = std::max(best, log_grad - (1.0 - lambda) * log_phi);
        }
    }
    return std::exp(best) * std::pow(a, 1.0 + 3.0 * lambda);
}

RemainderView remainder_view(const DistributionField& f, const SmoothWaveParams& wave, const HilbertCascade* cascade,
                             double epsilon, int depth, const RemainderSpec& spec) {
    if (depth < 0 || (depth > 0 && (!cascade || cascade->depth() < depth)))
        throw Error(ErrorKind::Config, "remainder depth exceeds the available cascade levels");
    if (!(epsilon > 0.0)) throw Error(ErrorKind::Domain, "epsilon must be positive");
    const std::size_t N = f.velocity.size();
    MaxwellFrame frame;
    frame.theta_M = spec.theta_M;
    frame.beta = spec.beta;
    Field w(N), sqrt_muM(N);
    for (std::size_t q = 0; q < N; ++q) {
        const Vec3 v = f.velocity.node(q);
        w[q] = frame.weight(v);
        sqrt_muM[q] = std::sqrt(frame.mu_M(v));
    }
    RemainderView rv;
    rv.f.assign(f.cells(), Field(N));
    rv.h.assign(f.cells(), Field(N));
    const double e3 = epsilon * epsilon * epsilon;
#pragma omp parallel for schedule(dynamic, 1)
    for (int j = 0; j < f.cells(); ++j) {
        const double x = f.space.x(j);
        const Field mu = maxwellian_on(smooth_wave(wave, f.t, x), f.velocity);
        Field E = mu;
        double en = 1.0;
        for (int n = 1; n <= depth; ++n) {
            en *= epsilon;
            const Field Fn = cascade->F_on(n, f.t, x, f.velocity);
            for (std::size_t q = 0; q < N; ++q) E[q] += en * Fn[q];
        }
        for (std::size_t q = 0; q < N; ++q) {
            const double FR = (f.F[j][q] - E[q]) / e3;
            rv.f[j][q] = FR / std::sqrt(mu[q]);
            rv.h[j][q] = w[q] * FR / sqrt_muM[q];
        }
    }
    return rv;
}

double planar_mollifier_weight(double a, double y1) {
    if (!(a > 0.0)) throw Error(ErrorKind::Domain, "mollifier scale must be positive");
    const double t2 = (y1 / a) * (y1 / a);
    if (t2 >= 1.0) return 0.0;
    // phi_a^2 over the transverse plane in polar form, s = rho^2 / a^2.
    auto g = [&](double s) {
        const double d = t2 + s - 1.0;
        return d < 0.0 ? std::exp(2.0 / d) : 0.0;
    };
    const double I = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(g, 0.0, 1.0 - t2, 15, 1e-13);
    return kPi * I / std::pow(a, 4);
}

RemainderNorms remainder_norms(const DistributionField& f, const SmoothWaveParams& wave, const HilbertCascade* cascade,
                               double epsilon, int depth, double a, double x0, const RemainderSpec& spec) {
    if (!(a > 0.0)) throw Error(ErrorKind::Domain, "mollifier scale must be positive");
    const RemainderView rv = remainder_view(f, wave, cascade, epsilon, depth, spec);
    RemainderNorms out;
    double l2 = 0.0;
    const double scale = std::pow(epsilon, 1.5) / (a * a * a);
    for (int j = 0; j < f.cells(); ++j) {
        const double phi2 = planar_mollifier_weight(a, f.space.x(j) - x0);
        double s = 0.0;
        for (std::size_t q = 0; q < rv.f[j].size(); ++q) {
            s += rv.f[j][q] * rv.f[j][q];
            out.weighted_linf = std::max(out.weighted_linf, scale * std::abs(rv.h[j][q]));
        }
        l2 += phi2 * s;
    }
    out.local_l2 = std::sqrt(l2 * f.space.dx() * f.velocity.weight());
    return out;
}

void write_checkpoint_csv(const DistributionField& f, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::Config, "cannot write " + path);
    const auto m = moments(f);
    os << std::setprecision(12);
    os << "t,x1,rho,u1,u2,u3,theta\r\n";
    for (int j = 0; j < f.cells(); ++j)
        os << f.t << ',' << f.space.x(j) << ',' << m[j].rho << ',' << m[j].u[0] << ',' << m[j].u[1] << ','
           << m[j].u[2] << ',' << m[j].theta << "\r\n";
}

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put(std::ostream& os, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    os.write(b, sizeof(T));
}

template <class T>
T get(std::istream& is) {
    char b[sizeof(T)];
    if (!is.read(b, sizeof(T))) throw Error(ErrorKind::Config, "raw dump truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

constexpr char kMagic[8] = {'H', 'L', 'F', 'I', 'E', 'L', 'D', '1'};

}  // namespace

void write_raw_dump(const DistributionField& f, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::Config, "cannot write " + path);
    os.write(kMagic, 8);
    put<std::int32_t>(os, f.cells());
    put<std::int32_t>(os, f.velocity.n());
    put<double>(os, f.space.x_min);
    put<double>(os, f.space.x_max);
    put<double>(os, f.velocity.half_width());
    for (int a = 0; a < 3; ++a) put<double>(os, f.velocity.center()[a]);
    put<double>(os, f.t);
    for (const Field& c : f.F)
        for (double v : c) put<double>(os, v);
}

DistributionField read_raw_dump(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::Config, "cannot read " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw Error(ErrorKind::Config, "not a raw field dump");
    DistributionField f;
    const int cells = get<std::int32_t>(is);
    const int n = get<std::int32_t>(is);
    if (cells < 1 || n < 1) throw Error(ErrorKind::Config, "raw dump header is invalid");
    f.space.cells = cells;
    f.space.x_min = get<double>(is);
    f.space.x_max = get<double>(is);
    const double L = get<double>(is);
    Vec3 c;
    for (int a = 0; a < 3; ++a) c[a] = get<double>(is);
    f.t = get<double>(is);
    f.velocity = VelocityGrid(L, n, c);
    f.F.assign(cells, Field(f.velocity.size()));
    for (Field& cf : f.F)
        for (double& v : cf) v = get<double>(is);
    // Inflow values are not stored; the end cells stand in for them.
    f.left_inflow = f.F.front();
    f.right_inflow = f.F.back();
    return f;
}

}  // namespace hydrolimit
