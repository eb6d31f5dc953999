#pragma once

#include <functional>
#include <memory>
#include <string>

#include "hydrolimit/hilbert_cascade.hpp"
#include "hydrolimit/rate_fit.hpp"

namespace hydrolimit {

enum class Backend { Bgk, Boltzmann };
Backend parse_backend(const std::string& name);  // Config error on unknown names
const char* backend_name(Backend b);

// F(cell, v-node) on [-X, X] x velocity lattice. Ghost cells at both ends are
// pinned to the values in left_inflow / right_inflow.
struct DistributionField {
    SpaceGrid space;
    VelocityGrid velocity;
    std::vector<Field> F;
    Field left_inflow, right_inflow;
    double t = 0.0;
    double clipped_mass = 0.0;    // cumulative mass removed by clipping negatives
    double max_step_clip = 0.0;   // largest removal in a single step
    double boundary_inflow = 0.0; // net mass entered through the two ends

    int cells() const { return space.cells; }
    double total_mass() const;
};

// X = max|w+-| t_final 1.5 + 40 sigma + 10.
double kinetic_half_width(const WaveEndStates& ends, double sigma, double t_final);
// Lattice centred at the mean end-state velocity, half width
// width sqrt(theta_max) + |u1+ - u1-| / 2.
VelocityGrid kinetic_velocity_grid(const WaveEndStates& ends, int n, double width);

// F = mu_sigma + sum_{n<=depth} eps^n F_n at time t0. Negative values are an
// error when strict, otherwise clipped (recorded in clipped_mass).
DistributionField init_expansion(const SmoothWaveParams& wave, const HilbertCascade* cascade, double epsilon, int depth,
                                 const SpaceGrid& space, const VelocityGrid& velocity, bool strict_positivity = false,
                                 double t0 = 0.0);

// First-order upwind in x1 per sign of v1. Throws CflViolation when dt max|v1| > dx.
void transport(DistributionField& f, double dt);

struct CollisionSettings {
    Backend backend = Backend::Bgk;
    KernelSpec kernel;
    // Boltzmann only: cells with sup|F - M| <= skip_tol sup M are left unchanged.
    double skip_tol = 1e-7;
    // Boltzmann only: substeps satisfy dt_coll <= substep_factor eps / nu_bar.
    double substep_factor = 0.5;
    // Boltzmann only: cap on substeps per collision step, 0 for none. The gain is
    // frozen over a substep and the loss integrated exactly, so the update stays
    // bounded when nu dt / eps is large.
    int max_substeps = 0;
};

class KineticStepper {
public:
    KineticStepper(const CollisionSettings& settings, const VelocityGrid& velocity);

    const CollisionSettings& settings() const { return settings_; }
    // Largest dt accepted by step() for the given CFL number.
    double max_dt(const DistributionField& f, double cfl) const;
    void collide(DistributionField& f, double epsilon, double dt) const;
    // Strang splitting: half transport, collision, half transport.
    void step(DistributionField& f, double epsilon, double dt) const;
    // Collision off: two half transports.
    void free_step(DistributionField& f, double dt) const;

    long substeps() const { return substeps_; }
    long skipped_cells() const { return skipped_; }

private:
    void collide_bgk(Field& F, double epsilon, double dt) const;
    // Returns the number of substeps, 0 when the cell was skipped.
    int collide_boltzmann(Field& F, double epsilon, double dt, double& clipped) const;

    CollisionSettings settings_;
    VelocityGrid velocity_;
    std::shared_ptr<CollisionPlan> plan_;
    Eigen::Matrix<double, 5, Eigen::Dynamic> C_;  // conserved-moment rows
    Eigen::Matrix<double, 5, 5> CCt_inv_;
    mutable long substeps_ = 0;
    mutable long skipped_ = 0;
};

std::vector<GasState> moments(const DistributionField& f);

struct KineticConfig {
    WaveEndStates ends;
    double t_final = 1.0;
    bool couple_sigma = false;  // sigma = eps^eta
    double sigma = 0.1;
    double eta = 0.005;
    int depth = 1;
    int cells = 200;
    int n_v = 24;
    double v_width = 6.0;
    double cfl = 0.5;
    CollisionSettings collision;
    int ref_n = 12;               // reference lattice of the cascade inverse
    double ref_half_width = 6.0;
    bool strict_positivity = false;

    double sigma_for(double epsilon) const { return couple_sigma ? std::pow(epsilon, eta) : sigma; }
};

struct KineticRun {
    SmoothWaveParams wave;
    std::shared_ptr<HilbertCascade> cascade;
    DistributionField field;
    int steps = 0;
};

// Called after initialization and after every step.
using StepObserver = std::function<void(const DistributionField&, const HilbertCascade*)>;

// Cascade (when depth >= 1), initialization and time march to t_final.
KineticRun run_kinetic(const KineticConfig& cfg, double epsilon, const StepObserver& observer = nullptr);
// Cascade inverse matching the collision backend.
std::shared_ptr<const MicroInverse> make_inverse(const KineticConfig& cfg);

struct MomentErrors {
    double rho = 0.0, u1 = 0.0, theta = 0.0;
    double max() const { return std::max({rho, u1, theta}); }
};

// sup_x |moments - target(x)| per component.
MomentErrors moment_errors(const DistributionField& f, const std::function<GasState(double x)>& target);
// sup over cells and nodes of |F - mu| / sqrt(mu_M), mu the exact-wave Maxwellian.
double weighted_sup_distance(const DistributionField& f, const WaveEndStates& ends, double theta_M);

struct LimitRow {
    double epsilon = 0.0;
    double sigma = 0.0;
    bool ok = false;
    std::string failure;
    MomentErrors exact;   // vs the exact rarefaction
    MomentErrors smooth;  // vs the smoothed wave
    double weighted_sup = 0.0;
    int steps = 0;
    double clipped_mass = 0.0;
};

struct LimitTable {
    std::vector<LimitRow> rows;
    bool strictly_decreasing = false;  // exact-wave error over successful rows
    bool has_fit = false;
    RateFit fit;                       // exact-wave error vs epsilon
};

// Receives each successful run before it is discarded.
using RunSink = std::function<void(double epsilon, const KineticRun&)>;

LimitTable limit_study(const KineticConfig& cfg, const std::vector<double>& epsilons, const RunSink& sink = nullptr);
void write_limit_csv(const LimitTable& table, const std::string& path);

// phi_a(x) = a^-3 phi(x / a), phi(y) = exp(1 / (|y|^2 - 1)) for |y| < 1.
double mollifier_phi(double a, const Vec3& x);
Vec3 mollifier_gradient(double a, const Vec3& x);
// sup over sampled points of |grad phi_a| / phi_a^{1-lambda}, times a^{1+3 lambda}.
// Radii are graded towards the boundary of the ball.
double mollifier_gradient_check(double a, double lambda, int samples = 400);

struct RemainderView {
    std::vector<Field> f;  // (F - expansion) / (eps^3 sqrt(mu_sigma))
    std::vector<Field> h;  // w F_R / sqrt(mu_M)
};

struct RemainderSpec {
    double theta_M = 0.625;
    double beta = 6.25;
};

RemainderView remainder_view(const DistributionField& f, const SmoothWaveParams& wave, const HilbertCascade* cascade,
                             double epsilon, int depth, const RemainderSpec& spec);

struct RemainderNorms {
    double local_l2 = 0.0;     // |f phi_a(. - x0)|_{L2_{x,v}}, planar reduction
    double weighted_linf = 0.0;  // sup |eps^{3/2} a^-3 h|
};

// int int phi_a(y1, y2, y3)^2 dy2 dy3.
double planar_mollifier_weight(double a, double y1);

RemainderNorms remainder_norms(const DistributionField& f, const SmoothWaveParams& wave, const HilbertCascade* cascade,
                               double epsilon, int depth, double a, double x0, const RemainderSpec& spec);

// Checkpoint: per-cell moments.
void write_checkpoint_csv(const DistributionField& f, const std::string& path);
// Raw dump, little endian:
//   char[8] "HLFIELD1"; int32 cells, n_v; float64 x_min, x_max, v_half_width,
//   v_center[3], t; then cells * n_v^3 float64 values of F, cell-major, nodes (i, j, k) row-major.
void write_raw_dump(const DistributionField& f, const std::string& path);
DistributionField read_raw_dump(const std::string& path);

}  // namespace hydrolimit
