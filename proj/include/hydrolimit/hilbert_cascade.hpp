#pragma once

#include <functional>
#include <memory>
#include <string>

#include "hydrolimit/collision_operator.hpp"

namespace hydrolimit {

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;

struct SpaceGrid {
    double x_min = -1.0;
    double x_max = 1.0;
    int cells = 100;

    double dx() const { return (x_max - x_min) / cells; }
    double x(int j) const { return x_min + dx() * (j + 0.5); }
};

// d/dtau ln mu_sigma at (t, x1, v).
enum class Direction { T, X };
double j_tau(const SmoothWaveParams& wave, double t, double x1, const Vec3& v, Direction dir);
double j_tau(const WaveDerivatives& d, const Vec3& v, Direction dir);

// Pseudo-inverse of the linearized operator at the unit state on a reference
// xi-lattice. On the lattice v = u + sqrt(theta) xi the operator at (rho, u, theta)
// equals rho theta^{gamma/2} times the reference one.
class MicroInverse {
public:
    virtual ~MicroInverse() = default;
    virtual Field solve(const Field& r) const = 0;  // on the reference lattice
    // Closed-form responses Psi_B = L^+ (I-P)(xi1^2 sqrt(mu1)), Psi_A = L^+ (I-P)(xi1 |xi|^2 sqrt(mu1)),
    // evaluated at arbitrary xi.
    virtual double psi_B(const Vec3& xi) const = 0;
    virtual double psi_A(const Vec3& xi) const = 0;
    virtual std::string name() const = 0;

    const VelocityGrid& lattice() const { return lattice_; }
    const MacroProjector& projector() const { return projector_; }
    const KernelSpec& kernel() const { return kernel_; }
    const Field& Psi_B() const { return psi_B_; }
    const Field& Psi_A() const { return psi_A_; }
    // h^3 sum B11 sqrt(mu1) Psi_B and h^3 sum A1 sqrt(mu1) Psi_A on the lattice.
    double b_BB() const { return b_BB_; }
    double b_BA() const { return b_BA_; }
    double b_AB() const { return b_AB_; }
    double b_AA() const { return b_AA_; }
    double sqrt_mu1(const Vec3& xi) const;
    // Tricubic (Catmull-Rom) interpolation of lattice values at xi; 0 outside the node hull.
    double interpolate(const Field& values, const Vec3& xi) const;
    double scale(const GasState& s) const { return s.rho * std::pow(s.theta, 0.5 * kernel_.gamma); }
    // Lattice adapted to a state: center u, half width L_ref sqrt(theta).
    VelocityGrid node_lattice(const GasState& s) const;

protected:
    void init_common(const KernelSpec& k, const VelocityGrid& lattice);
    void finish_responses();

    KernelSpec kernel_;
    VelocityGrid lattice_;
    MacroProjector projector_;
    Field sqrt_mu1_;
    Field psi_B_, psi_A_;
    double b_BB_ = 0.0, b_BA_ = 0.0, b_AB_ = 0.0, b_AA_ = 0.0;
};

class BoltzmannMicroInverse : public MicroInverse {
public:
    BoltzmannMicroInverse(const KernelSpec& k, int n, double half_width, bool dense = true);
    Field solve(const Field& r) const override;
    Field solve_iterative(const Field& r) const;
    double psi_B(const Vec3& xi) const override;
    double psi_A(const Vec3& xi) const override;
    std::string name() const override { return "boltzmann"; }
    const LinearizedOperator& op() const { return op_; }

private:
    LinearizedOperator op_;
    bool dense_;
    Field ratio_B_, ratio_A_;
};

// Linearization of the BGK surrogate: nu1 (I - P), nu1 = nu(v = u) at the unit state.
class BgkMicroInverse : public MicroInverse {
public:
    BgkMicroInverse(const KernelSpec& k, int n, double half_width);
    Field solve(const Field& r) const override;
    double psi_B(const Vec3& xi) const override;
    double psi_A(const Vec3& xi) const override;
    std::string name() const override { return "bgk"; }
    double nu1() const { return nu1_; }

private:
    double nu1_;
};

// Source -(J_t + v1 J_x) sqrt(mu_sigma) on the node lattice of the wave state.
Field level1_source(const WaveDerivatives& d, const VelocityGrid& node_lattice);

// Microscopic part of f_1 at one wave point, as lattice values on inv.node_lattice(state).
// Generic path: project the source and solve.
Field micro_part_level1(const WaveDerivatives& d, const MicroInverse& inv, double consistency_tol = 1e-5);
// Closed form through the two reference responses.
Field micro_part_level1_closed(const WaveDerivatives& d, const MicroInverse& inv);

struct MacroCoefficients {
    Mat5 A0, A1, B;
};

MacroCoefficients macro_coefficients(const WaveDerivatives& d);

// Moments of the microscopic part of F_{k+1}: int B_{11}, B_{21}, B_{31}, A_1 times F.
struct MicroMoments {
    double B11 = 0.0, B21 = 0.0, B31 = 0.0, A1 = 0.0;
};

struct MacroSystem {
    double t = 0.0;
    SpaceGrid grid;
    std::vector<Mat5> A0, A1, B;
    std::vector<Vec5> F;
};

MacroSystem assemble_macro_system(const SmoothWaveParams& wave, double t, const SpaceGrid& grid,
                                  const std::vector<MicroMoments>& moments);

// 4th order centred differences, one-sided near the ends.
std::vector<double> derivative_4th(const std::vector<double>& f, double dx);

using MomentProvider = std::function<std::vector<MicroMoments>(double t)>;
// Extra right-hand side (symmetrized form) added to F at cell centres.
using ExtraForcing = std::function<Vec5(double t, double x)>;

struct MacroSolution {
    SpaceGrid grid;
    std::vector<double> times;
    std::vector<std::vector<Vec5>> U;  // snapshots
    std::vector<double> energy;         // int U^T A0 U dx at each snapshot
    double gronwall_rate = 0.0;         // max (sigma+t)(dE/dt - 2|F|_{A0^-1} sqrt(E)) / E
    int steps = 0;

    Vec5 at(double t, double x) const;  // linear in t and x
};

struct MacroSolverSettings {
    double cfl = 0.4;
    double snapshot_dt = 0.05;
};

MacroSolution solve_macro(const SmoothWaveParams& wave, const MomentProvider& moments, const std::vector<Vec5>& U_init,
                          double t_final, const SpaceGrid& grid, const MacroSolverSettings& settings = {},
                          const ExtraForcing& extra = nullptr);

// One SSP-RK2 step; throws CflViolation if dt exceeds the CFL bound.
void macro_step(const SmoothWaveParams& wave, const MomentProvider& moments, std::vector<Vec5>& U, double t, double dt,
                const SpaceGrid& grid, double cfl, const ExtraForcing& extra = nullptr);

double max_characteristic_speed(const SmoothWaveParams& wave);

struct CascadeSettings {
    int depth = 2;
    double t_final = 1.0;
    SpaceGrid grid;
    MacroSolverSettings macro;
    int level2_stride = 8;         // spatial subsampling for levels >= 2
    int level2_time_stride = 1;    // snapshot subsampling for levels >= 2
    double prune_radius = 6.0;     // in units of sqrt(theta) on node lattices
    double consistency_tol = 0.05; // relative |P R| allowed for levels >= 2
};

struct CascadeLevel {
    int index = 0;
    MacroSolution macro;
    // Levels >= 2: micro part f_i / sqrt(mu1) on the node lattices of sampled
    // (snapshot, cell) pairs.
    std::vector<int> sample_cells;
    std::vector<int> sample_snapshots;
    std::vector<std::vector<Field>> micro_ratio;  // [snapshot][cell sample]
    double max_consistency_defect = 0.0;
};

class HilbertCascade {
public:
    HilbertCascade(SmoothWaveParams wave, std::shared_ptr<const MicroInverse> inv, CascadeSettings settings);

    void compute();
    int depth() const { return static_cast<int>(levels_.size()); }
    const CascadeLevel& level(int i) const { return levels_.at(i - 1); }
    const SmoothWaveParams& wave() const { return wave_; }
    const CascadeSettings& settings() const { return settings_; }
    const MicroInverse& inverse() const { return *inv_; }

    // Micro moments of level 1 at all cells, closed form.
    std::vector<MicroMoments> level1_moments(double t, const SpaceGrid& grid) const;

    // F_i(t, x, v) at arbitrary points through the macro/micro split.
    double F(int i, double t, double x, const Vec3& v) const;
    Field F_on(int i, double t, double x, const VelocityGrid& grid) const;
    // Microscopic part (I-P) f_i at (t, x, v), without the sqrt(mu) factor.
    double micro(int i, double t, double x, const Vec3& v) const;

    void write_csv(int i, const std::string& path) const;
    void write_metadata(const std::string& path) const;

private:
    void compute_level1();
    void compute_higher(int k);
    double micro_sample(int i, int snap, int sample, const WaveDerivatives& d, const Vec3& v) const;

    SmoothWaveParams wave_;
    std::shared_ptr<const MicroInverse> inv_;
    CascadeSettings settings_;
    std::vector<CascadeLevel> levels_;
};

// F_i assembled from macro coordinates and micro values on a lattice.
Field assemble_level(const Vec5& U, const Field& micro, const GasState& s, const VelocityGrid& grid);

}  // namespace hydrolimit
