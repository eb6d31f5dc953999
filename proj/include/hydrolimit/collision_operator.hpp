#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <memory>

#include "hydrolimit/maxwellian_frame.hpp"

namespace hydrolimit {

struct CollisionOptions {
    // Pairs with |v - c|^2 + |u - c|^2 > prune_radius^2 are skipped (c = grid center).
    double prune_radius = std::numeric_limits<double>::infinity();
};

// Q(F1, F2)(v) on the lattice. Parallel over output nodes; each node sums in a
// fixed order, so the result does not depend on the thread count.
Field q_bilinear(const Field& F1, const Field& F2, const KernelSpec& kernel, const VelocityGrid& grid,
                 const CollisionOptions& opts = {});

namespace reference {
// Straight double loop, serial. Kept for testing and benchmarking.
Field q_bilinear(const Field& F1, const Field& F2, const KernelSpec& kernel, const VelocityGrid& grid);
}  // namespace reference

// Same quadrature as q_bilinear (no pruning), organized by lattice offset d = v - u.
// For fixed (d, omega) the post-collision points are constant shifts of v, so the
// trilinear weights are shared by every pair with that offset and the inner loop
// runs over contiguous memory of zero-padded copies of F1 and F2.
class CollisionPlan {
public:
    CollisionPlan(const KernelSpec& kernel, const VelocityGrid& grid);

    // Q(F1, F2) = gain - nu * F2.
    void evaluate(const Field& F1, const Field& F2, Field& gain, Field& nu) const;
    Field apply(const Field& F1, const Field& F2) const;

    const VelocityGrid& grid() const { return grid_; }
    const KernelSpec& kernel() const { return kernel_; }
    std::size_t entries() const { return shifts_.size(); }

private:
    struct Shift {
        std::int64_t off1, off2;  // padded linear offsets of the lower corners
        double t1[3], t2[3];      // trilinear fractions
        double weight;
    };
    struct Offset {
        int d[3];
        double loss_weight;       // h^3 b_int |d h|^gamma
        std::size_t first, last;  // range in shifts_
    };

    KernelSpec kernel_;
    VelocityGrid grid_;
    int pad_ = 0;
    int np_ = 0;  // padded extent per axis
    std::vector<Offset> offsets_;
    std::vector<Shift> shifts_;
};

Field gamma_bilinear(const Field& g1, const Field& g2, const GasState& s, const KernelSpec& kernel,
                     const VelocityGrid& grid);

// Loss frequency of the lattice operator: sum_u h^3 |v-u|^gamma (int b) F(u).
Field loss_frequency(const Field& F, const KernelSpec& kernel, const VelocityGrid& grid);

// -(Q(mu, sqrt(mu) g) + Q(sqrt(mu) g, mu)) / sqrt(mu) on the lattice, before symmetrization.
// Post-collision values interpolate g; Maxwellian factors are exact.
Field L_apply_raw(const Field& g, const GasState& s, const KernelSpec& kernel, const VelocityGrid& grid);
// Symmetric part of the lattice operator, applied matrix-free.
Field L_apply(const Field& g, const GasState& s, const KernelSpec& kernel, const VelocityGrid& grid);

class LinearizedOperator {
public:
    static constexpr std::size_t kDefaultBudget = std::size_t(768) << 20;

    // Dense assembly; throws MemoryBudget when N > 16 or the matrix does not fit.
    static LinearizedOperator assemble(const GasState& s, const KernelSpec& kernel, const VelocityGrid& grid,
                                       std::size_t budget_bytes = kDefaultBudget);
    // Apply-only operator for larger lattices.
    static LinearizedOperator matrix_free(const GasState& s, const KernelSpec& kernel, const VelocityGrid& grid);

    bool assembled() const { return assembled_; }
    const GasState& state() const { return state_; }
    const KernelSpec& kernel() const { return kernel_; }
    const VelocityGrid& grid() const { return grid_; }
    const MacroProjector& projector() const { return projector_; }
    const Field& nu_diag() const { return nu_; }
    const Eigen::MatrixXd& matrix() const { return L_; }

    Field apply(const Field& g) const;
    Field apply_K(const Field& g) const;  // (L - nu) g

    // f with (I-P) L f = r and P f = 0. Iterative PCG on the projected subspace.
    Field pseudo_inverse(const Field& r, double rel_tol = 1e-8, int max_iter = 2000) const;
    // Same solve through a dense Cholesky factorization of (I-P)L(I-P) + P.
    Field pseudo_inverse_dense(const Field& r) const;

    // Relative residual |(I-P)(L f - r)| / |r| of the last pseudo_inverse call.
    double last_residual() const { return last_residual_; }
    int last_iterations() const { return last_iterations_; }

private:
    void check_microscopic(const Field& r) const;

    GasState state_;
    KernelSpec kernel_;
    VelocityGrid grid_;
    MacroProjector projector_;
    Field nu_;
    bool assembled_ = false;
    Eigen::MatrixXd L_;
    mutable std::shared_ptr<Eigen::LLT<Eigen::MatrixXd>> chol_;
    mutable double last_residual_ = 0.0;
    mutable int last_iterations_ = 0;
};

struct SpectralGapProbe {
    double min_ratio = 0.0;   // min <Lg,g> / |(I-P)g|_nu^2
    double min_quadratic = 0.0;  // min <Lg,g> over unprojected samples
    int samples = 0;
};

SpectralGapProbe spectral_gap_probe(const LinearizedOperator& op, int samples, std::uint64_t seed);

// Near-diagonal part K^m in relative coordinates z = u - v with smooth cutoff
// chi_m(|z|) (1 on [0,m], 0 beyond 2m).
class KSplit {
public:
    KSplit(const LinearizedOperator& op, double m, int n_radial = 8, int n_dir_polar = 8, int n_dir_az = 16);

    double m() const { return m_; }
    Field apply_near(const Field& g) const;     // K^m g at lattice nodes
    Field apply_far(const Field& g) const;      // K^c g = K g - K^m g
    double near_norm_inf() const;               // sup_v of |K^m| applied to 1
    double near_row_abs(const Vec3& v) const;   // |K^m| 1 at an arbitrary v

private:
    template <class Fn>
    double visit_near(const Vec3& v, Fn&& fn) const;

    const LinearizedOperator* op_;
    double m_;
    std::vector<double> r_nodes_, r_weights_;   // weights include r^2 and chi_m
    std::vector<Vec3> dirs_;
    std::vector<double> dir_weights_;
};

double smooth_cutoff(double r, double m);

// Symmetric weak form -1/4 sum B (F'F'_* - FF_*) ln(F'F'_*/(FF_*)).
double entropy_production(const Field& F, const KernelSpec& kernel, const VelocityGrid& grid);
// Direct sum of Q(F,F) ln F.
double entropy_production_direct(const Field& F, const KernelSpec& kernel, const VelocityGrid& grid);

// Discrete conserved moments (mass, momentum, energy = sum |v|^2/2 F).
std::array<double, 5> conserved_moments(const Field& F, const VelocityGrid& grid);
GasState moments_to_state(const std::array<double, 5>& m);
// Maxwellian on the lattice whose discrete moments equal those of F.
Field matched_maxwellian(const Field& F, const VelocityGrid& grid, GasState* params = nullptr);

Field bgk_surrogate(const Field& F, const VelocityGrid& grid, double nu_bar);

double discrete_entropy(const Field& F, const VelocityGrid& grid);

}  // namespace hydrolimit
