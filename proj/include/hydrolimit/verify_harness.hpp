#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hydrolimit/kinetic_limit_solver.hpp"

namespace hydrolimit {

// Every bound used by a suite. Key names in the [tolerances] section match the members.
struct Tolerances {
    double wave_slope = 0.05;             // |fitted decay slope - target|
    double wave_l1 = 1e-8;                // |L1 norm of d_x w - (w+ - w-)|
    double sup_fit_residual = 0.15;       // relative residual of sup_distance ~ C sigma |ln sigma|
    double gram = 1e-6;                   // max |G - I|
    double moments = 1e-8;                // recovered (rho, u, theta) of mu
    double frequency = 1e-8;              // |nu - 2 pi rho b_scale| for gamma = 0
    double collision_order = 1.0;         // minimum refinement order of Q(mu, mu) and its defects
    double symmetric_defect = 1e-12;      // defects below this are exact by symmetry
    double entropy_maxwellian = 1e-8;     // entropy production of a Maxwellian stays below
    double entropy_bimodal = -1e-4;       // ... and of the bimodal state below this
    double round_trip = 1e-6;             // pseudo-inverse round trip, relative sup
    double km_exponent = 0.3;             // |fitted m exponent - (3 + gamma)|
    double macro_order = 1.0;             // manufactured-solution order of the macro solver
    double envelope_slack = 0.25;         // level-1 envelope at held-out points
    double consistency = 0.05;            // relative |P R| for levels >= 2
    double limit_order = 0.5;             // fitted epsilon order of the moment error
    double mollifier_refinement = 0.05;   // C_lambda change from N to 2N samples
    double remainder_homogeneity = 1e-9;   // relative error of the norms under F_R -> c F_R
};

struct ExperimentConfig {
    // [wave]
    GasState left{};
    double strength = 0.7;                // w+ - w-
    std::optional<GasState> right;        // replaces strength when set
    double decay_sigma = 0.1;
    double decay_t_min = 1.0, decay_t_max = 100.0;
    int decay_samples = 100;
    bool decay_log_spacing = false;       // sample times uniform in t unless set
    std::vector<double> sup_sigmas{0.2, 0.1, 0.05, 0.025};
    double sup_t = 1.0;

    KernelSpec kernel;

    // [frame]
    int frame_n = 32;

    // [collision]
    double collision_half_width = 4.0;
    std::vector<int> collision_sizes{8, 12, 16};
    int bimodal_n = 12;
    int linear_n = 12;
    double linear_half_width = 4.0;
    int gap_samples = 100;
    int ksplit_n = 8;
    double ksplit_half_width = 4.0;
    std::vector<double> ksplit_m{0.1, 0.2, 0.4};
    std::vector<double> ksplit_gammas{0.0, 1.0};

    // [cascade]
    int depth = 1;
    int cascade_cells = 96;
    double cascade_half_width = 6.0;      // x in [-X, X]
    double cascade_t_final = 1.0;
    double snapshot_dt = 0.05;
    Backend cascade_inverse = Backend::Boltzmann;
    int ref_n = 12;
    double ref_half_width = 6.0;
    std::vector<double> sweep_sigmas{0.4, 0.2, 0.1};
    std::vector<int> mms_cells{80, 160, 320};
    double mms_sigma = 0.3;
    double mms_t_final = 0.4;

    // [limit]
    Backend backend = Backend::Bgk;
    std::vector<double> epsilons{0.1, 0.05, 0.025};
    double t_final = 1.0;
    double cfl = 0.5;
    double skip_tol = 1e-7;
    double substep_factor = 0.5;
    int max_substeps = 1;                 // 0: substep_factor alone decides
    bool strict_positivity = false;
    // [bgk] and [boltzmann]: kinetic grids per backend
    int bgk_cells = 200, bgk_n_v = 24;
    double bgk_v_width = 6.0;
    int boltzmann_cells = 64, boltzmann_n_v = 12;
    double boltzmann_v_width = 4.5;

    // [coupling]: sigma = eps^eta, a = eps^(-2 eta) when couple is set, else the explicit values.
    bool couple = false;
    double eta = 0.005;
    double sigma = 0.1;
    double a = 1.0;

    // [mollifier]
    int mollifier_samples = 400;
    double remainder_epsilon = 0.05;
    int remainder_cells = 24;
    int remainder_n_v = 12;

    // [output]
    std::string out_dir = "hydrolimit_out";
    bool raw_dump = false;

    // [run]
    std::uint64_t seed = 0;

    Tolerances tol;

    WaveEndStates endstates() const;
    double lambda() const { return eta / 21.0; }
    double sigma_for(double epsilon) const { return couple ? std::pow(epsilon, eta) : sigma; }
    double a_for(double epsilon) const { return couple ? std::pow(epsilon, -2.0 * eta) : a; }
    KineticConfig kinetic() const;
};

// Throws Error(Config) on any out-of-range value or inconsistent coupling.
void validate(const ExperimentConfig& cfg);
// INI file; "default" selects the built-in defaults. Missing files, unknown
// sections or keys, malformed values: Error(Config).
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& text);

enum class Relation { Le, Lt, Ge, Gt };

struct Check {
    std::string name;
    double value = 0.0;
    double bound = 0.0;
    bool pass = false;
    Relation rel = Relation::Le;
};

Check make_check(std::string name, double value, Relation rel, double bound);

struct NamedFit {
    std::string name;
    RateFit fit;
};

struct SuiteReport {
    std::string suite;
    std::vector<Check> checks;
    std::vector<NamedFit> fits;

    bool passed() const;
    std::string to_json() const;  // {suite, checks, fits}, 2-space indent
};

const std::vector<std::string>& suite_names();  // without "all"

// Runs one suite, writing <out>/<suite>.json and its CSV files.
SuiteReport run_suite(const std::string& name, const ExperimentConfig& cfg, const std::string& out_dir);

SuiteReport run_wave(const ExperimentConfig& cfg, const std::string& out_dir);
SuiteReport run_frame_check(const ExperimentConfig& cfg, const std::string& out_dir);
SuiteReport run_collision_check(const ExperimentConfig& cfg, const std::string& out_dir);
// The three parts of collision-check: Q(mu, mu) refinement and entropy, the
// linearized operator, and the K^m row norms.
void collision_refinement_checks(const ExperimentConfig& cfg, const std::string& out_dir, SuiteReport& r);
void linearized_checks(const ExperimentConfig& cfg, const std::string& out_dir, SuiteReport& r);
void ksplit_checks(const ExperimentConfig& cfg, const std::string& out_dir, SuiteReport& r);
SuiteReport run_cascade(const ExperimentConfig& cfg, const std::string& out_dir);
SuiteReport run_limit(const ExperimentConfig& cfg, const std::string& out_dir);
SuiteReport run_mollifier_check(const ExperimentConfig& cfg, const std::string& out_dir);

// Returns the process exit code: 0 all checks pass, 1 numeric failure, 2 bad config.
int cli_dispatch(int argc, char** argv);

}  // namespace hydrolimit
