#include "hydrolimit/verify_harness.hpp"

#include <CLI11.hpp>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

namespace hydrolimit {

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorKind::Config, msg); }

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& raw) {
    const std::string s = trim(raw);
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v))
        config_error(key + ": not a number: '" + raw + "'");
    return v;
}

long long to_int(const std::string& key, const std::string& raw) {
    const std::string s = trim(raw);
    long long v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
        config_error(key + ": not an integer: '" + raw + "'");
    return v;
}

bool to_bool(const std::string& key, const std::string& raw) {
    const std::string s = trim(raw);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    config_error(key + ": not a boolean: '" + raw + "'");
}

std::vector<std::string> split_list(const std::string& raw) {
    std::vector<std::string> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& raw) {
    std::vector<double> out;
    for (const auto& s : split_list(raw)) out.push_back(to_double(key, s));
    if (out.empty()) config_error(key + ": empty list");
    return out;
}

std::vector<int> to_ints(const std::string& key, const std::string& raw) {
    std::vector<int> out;
    for (const auto& s : split_list(raw)) out.push_back(static_cast<int>(to_int(key, s)));
    if (out.empty()) config_error(key + ": empty list");
    return out;
}

Backend to_backend(const std::string& key, const std::string& raw) {
    try {
        return parse_backend(trim(raw));
    } catch (const Error&) {
        config_error(key + ": unknown backend '" + raw + "'");
    }
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

#define HL_DOUBLE(field) [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }
#define HL_INT(field) \
    [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = static_cast<int>(to_int(k, v)); }
#define HL_BOOL(field) [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = to_bool(k, v); }
#define HL_DOUBLES(field) \
    [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = to_doubles(k, v); }
#define HL_INTS(field) [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = to_ints(k, v); }

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> m = {
        {"wave.rho_minus", HL_DOUBLE(left.rho)},
        {"wave.u1_minus", HL_DOUBLE(left.u[0])},
        {"wave.theta_minus", HL_DOUBLE(left.theta)},
        {"wave.strength", HL_DOUBLE(strength)},
        {"wave.rho_plus", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             if (!c.right) c.right = GasState{};
             c.right->rho = to_double(k, v);
         }},
        {"wave.u1_plus", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             if (!c.right) c.right = GasState{};
             c.right->u[0] = to_double(k, v);
         }},
        {"wave.theta_plus", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             if (!c.right) c.right = GasState{};
             c.right->theta = to_double(k, v);
         }},
        {"wave.decay_sigma", HL_DOUBLE(decay_sigma)},
        {"wave.decay_t_min", HL_DOUBLE(decay_t_min)},
        {"wave.decay_t_max", HL_DOUBLE(decay_t_max)},
        {"wave.decay_samples", HL_INT(decay_samples)},
        {"wave.decay_spacing", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             const std::string s = trim(v);
             if (s != "linear" && s != "log") config_error(k + ": expected linear or log, got '" + v + "'");
             c.decay_log_spacing = s == "log";
         }},
        {"wave.sup_sigmas", HL_DOUBLES(sup_sigmas)},
        {"wave.sup_t", HL_DOUBLE(sup_t)},

        {"kernel.gamma", HL_DOUBLE(kernel.gamma)},
        {"kernel.b_scale", HL_DOUBLE(kernel.b_scale)},
        {"kernel.n_polar", HL_INT(kernel.n_polar)},
        {"kernel.n_azimuth", HL_INT(kernel.n_azimuth)},

        {"frame.n", HL_INT(frame_n)},

        {"collision.half_width", HL_DOUBLE(collision_half_width)},
        {"collision.sizes", HL_INTS(collision_sizes)},
        {"collision.bimodal_n", HL_INT(bimodal_n)},
        {"collision.linear_n", HL_INT(linear_n)},
        {"collision.linear_half_width", HL_DOUBLE(linear_half_width)},
        {"collision.gap_samples", HL_INT(gap_samples)},
        {"collision.ksplit_n", HL_INT(ksplit_n)},
        {"collision.ksplit_half_width", HL_DOUBLE(ksplit_half_width)},
        {"collision.ksplit_m", HL_DOUBLES(ksplit_m)},
        {"collision.ksplit_gammas", HL_DOUBLES(ksplit_gammas)},

        {"cascade.depth", HL_INT(depth)},
        {"cascade.cells", HL_INT(cascade_cells)},
        {"cascade.half_width", HL_DOUBLE(cascade_half_width)},
        {"cascade.t_final", HL_DOUBLE(cascade_t_final)},
        {"cascade.snapshot_dt", HL_DOUBLE(snapshot_dt)},
        {"cascade.inverse", [](ExperimentConfig& c, const std::string& k,
                               const std::string& v) { c.cascade_inverse = to_backend(k, v); }},
        {"cascade.ref_n", HL_INT(ref_n)},
        {"cascade.ref_half_width", HL_DOUBLE(ref_half_width)},
        {"cascade.sweep_sigmas", HL_DOUBLES(sweep_sigmas)},
        {"cascade.mms_cells", HL_INTS(mms_cells)},
        {"cascade.mms_sigma", HL_DOUBLE(mms_sigma)},
        {"cascade.mms_t_final", HL_DOUBLE(mms_t_final)},

        {"limit.backend", [](ExperimentConfig& c, const std::string& k,
                             const std::string& v) { c.backend = to_backend(k, v); }},
        {"limit.epsilons", HL_DOUBLES(epsilons)},
        {"limit.t_final", HL_DOUBLE(t_final)},
        {"limit.cfl", HL_DOUBLE(cfl)},
        {"limit.skip_tol", HL_DOUBLE(skip_tol)},
        {"limit.substep_factor", HL_DOUBLE(substep_factor)},
        {"limit.max_substeps", HL_INT(max_substeps)},
        {"limit.strict_positivity", HL_BOOL(strict_positivity)},
        {"bgk.cells", HL_INT(bgk_cells)},
        {"bgk.n_v", HL_INT(bgk_n_v)},
        {"bgk.v_width", HL_DOUBLE(bgk_v_width)},
        {"boltzmann.cells", HL_INT(boltzmann_cells)},
        {"boltzmann.n_v", HL_INT(boltzmann_n_v)},
        {"boltzmann.v_width", HL_DOUBLE(boltzmann_v_width)},

        {"coupling.couple", HL_BOOL(couple)},
        {"coupling.eta", HL_DOUBLE(eta)},
        {"coupling.sigma", HL_DOUBLE(sigma)},
        {"coupling.a", HL_DOUBLE(a)},

        {"mollifier.samples", HL_INT(mollifier_samples)},
        {"mollifier.remainder_epsilon", HL_DOUBLE(remainder_epsilon)},
        {"mollifier.remainder_cells", HL_INT(remainder_cells)},
        {"mollifier.remainder_n_v", HL_INT(remainder_n_v)},

        {"output.dir", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = trim(v); }},
        {"output.raw_dump", HL_BOOL(raw_dump)},

        {"run.seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             const long long s = to_int(k, v);
             if (s < 0) config_error(k + " must be non-negative");
             c.seed = static_cast<std::uint64_t>(s);
         }},

        {"tolerances.wave_slope", HL_DOUBLE(tol.wave_slope)},
        {"tolerances.wave_l1", HL_DOUBLE(tol.wave_l1)},
        {"tolerances.sup_fit_residual", HL_DOUBLE(tol.sup_fit_residual)},
        {"tolerances.gram", HL_DOUBLE(tol.gram)},
        {"tolerances.moments", HL_DOUBLE(tol.moments)},
        {"tolerances.frequency", HL_DOUBLE(tol.frequency)},
        {"tolerances.collision_order", HL_DOUBLE(tol.collision_order)},
        {"tolerances.symmetric_defect", HL_DOUBLE(tol.symmetric_defect)},
        {"tolerances.entropy_maxwellian", HL_DOUBLE(tol.entropy_maxwellian)},
        {"tolerances.entropy_bimodal", HL_DOUBLE(tol.entropy_bimodal)},
        {"tolerances.round_trip", HL_DOUBLE(tol.round_trip)},
        {"tolerances.km_exponent", HL_DOUBLE(tol.km_exponent)},
        {"tolerances.macro_order", HL_DOUBLE(tol.macro_order)},
        {"tolerances.envelope_slack", HL_DOUBLE(tol.envelope_slack)},
        {"tolerances.consistency", HL_DOUBLE(tol.consistency)},
        {"tolerances.limit_order", HL_DOUBLE(tol.limit_order)},
        {"tolerances.mollifier_refinement", HL_DOUBLE(tol.mollifier_refinement)},
        {"tolerances.remainder_homogeneity", HL_DOUBLE(tol.remainder_homogeneity)},
    };
    return m;
}

#undef HL_DOUBLE
#undef HL_INT
#undef HL_BOOL
#undef HL_DOUBLES
#undef HL_INTS

void require(bool ok, const std::string& msg) {
    if (!ok) config_error(msg);
}

bool positive_list(const std::vector<double>& v) {
    return !v.empty() && std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0; });
}

}  // namespace

WaveEndStates ExperimentConfig::endstates() const {
    if (right) return make_endstates(left, *right, true);
    const double w_minus = lambda1(left.rho, left.u[0], entropy(left.rho, left.theta));
    return connect_right_state(left, w_minus + strength);
}

KineticConfig ExperimentConfig::kinetic() const {
    KineticConfig k;
    k.ends = endstates();
    k.t_final = t_final;
    k.couple_sigma = couple;
    k.sigma = sigma;
    k.eta = eta;
    k.depth = depth;
    const bool bgk = backend == Backend::Bgk;
    k.cells = bgk ? bgk_cells : boltzmann_cells;
    k.n_v = bgk ? bgk_n_v : boltzmann_n_v;
    k.v_width = bgk ? bgk_v_width : boltzmann_v_width;
    k.cfl = cfl;
    k.collision.backend = backend;
    k.collision.kernel = kernel;
    k.collision.skip_tol = skip_tol;
    k.collision.substep_factor = substep_factor;
    k.collision.max_substeps = max_substeps;
    k.ref_n = ref_n;
    k.ref_half_width = ref_half_width;
    k.strict_positivity = strict_positivity;
    return k;
}

void validate(const ExperimentConfig& c) {
    require(c.left.rho > 0.0 && c.left.theta > 0.0, "wave: rho_minus and theta_minus must be positive");
    if (c.right) {
        require(c.right->rho > 0.0 && c.right->theta > 0.0, "wave: rho_plus and theta_plus must be positive");
    } else {
        require(c.strength > 0.0, "wave: strength must be positive");
    }
    require(c.decay_sigma > 0.0, "wave: decay_sigma must be positive");
    require(c.decay_t_min > 0.0 && c.decay_t_max > c.decay_t_min, "wave: need 0 < decay_t_min < decay_t_max");
    require(c.decay_samples >= 3, "wave: decay_samples must be at least 3");
    require(c.sup_sigmas.size() >= 3 && positive_list(c.sup_sigmas), "wave: sup_sigmas needs 3 positive values");
    for (double s : c.sup_sigmas) require(s < 1.0, "wave: sup_sigmas must lie below 1");
    require(c.sup_t > 0.0, "wave: sup_t must be positive");

    try {
        c.kernel.validate();
    } catch (const Error& e) {
        config_error(std::string("kernel: ") + e.what());
    }
    try {
        const WaveEndStates e = c.endstates();
        choose_theta_M(e.left.theta, e.right.theta);
    } catch (const Error& e) {
        config_error(std::string("wave: ") + e.what());
    }

    require(c.frame_n >= 4 && c.frame_n <= 64, "frame: n must lie in [4, 64]");

    require(c.collision_half_width > 0.0, "collision: half_width must be positive");
    require(c.collision_sizes.size() >= 3, "collision: sizes needs at least 3 entries");
    for (std::size_t i = 0; i < c.collision_sizes.size(); ++i) {
        require(c.collision_sizes[i] >= 4 && c.collision_sizes[i] <= 32, "collision: sizes must lie in [4, 32]");
        if (i > 0) require(c.collision_sizes[i] > c.collision_sizes[i - 1], "collision: sizes must increase");
    }
    require(c.bimodal_n >= 4 && c.bimodal_n <= 32, "collision: bimodal_n must lie in [4, 32]");
    require(c.linear_n >= 4 && c.linear_n <= 16, "collision: linear_n must lie in [4, 16]");
    require(c.linear_half_width > 0.0, "collision: linear_half_width must be positive");
    require(c.gap_samples >= 1, "collision: gap_samples must be positive");
    require(c.ksplit_n >= 4 && c.ksplit_n <= 32, "collision: ksplit_n must lie in [4, 32]");
    require(c.ksplit_half_width > 0.0, "collision: ksplit_half_width must be positive");
    require(c.ksplit_m.size() >= 3 && positive_list(c.ksplit_m), "collision: ksplit_m needs 3 positive values");
    require(!c.ksplit_gammas.empty(), "collision: ksplit_gammas is empty");
    for (double g : c.ksplit_gammas) require(g >= 0.0 && g <= 1.0, "collision: ksplit_gammas must lie in [0, 1]");

    require(c.depth >= 0 && c.depth <= 2, "cascade: depth must be 0, 1 or 2");
    require(c.cascade_cells >= 16, "cascade: cells must be at least 16");
    require(c.cascade_half_width > 0.0, "cascade: half_width must be positive");
    require(c.cascade_t_final > 0.0, "cascade: t_final must be positive");
    require(c.snapshot_dt > 0.0 && c.snapshot_dt <= c.cascade_t_final, "cascade: need 0 < snapshot_dt <= t_final");
    require(c.ref_n >= 4 && c.ref_n <= 16, "cascade: ref_n must lie in [4, 16]");
    require(c.ref_half_width > 0.0, "cascade: ref_half_width must be positive");
    require(c.sweep_sigmas.size() >= 3 && positive_list(c.sweep_sigmas), "cascade: sweep_sigmas needs 3 positive values");
    require(c.mms_cells.size() >= 3, "cascade: mms_cells needs at least 3 entries");
    for (std::size_t i = 0; i < c.mms_cells.size(); ++i) {
        require(c.mms_cells[i] >= 16, "cascade: mms_cells must be at least 16");
        if (i > 0) require(c.mms_cells[i] > c.mms_cells[i - 1], "cascade: mms_cells must increase");
    }
    require(c.mms_sigma > 0.0 && c.mms_t_final > 0.0, "cascade: mms_sigma and mms_t_final must be positive");

    require(positive_list(c.epsilons), "limit: epsilons must be positive");
    for (std::size_t i = 1; i < c.epsilons.size(); ++i)
        require(c.epsilons[i] < c.epsilons[i - 1], "limit: epsilons must be strictly decreasing");
    require(c.t_final > 0.0, "limit: t_final must be positive");
    require(c.cfl > 0.0 && c.cfl <= 1.0, "limit: cfl must lie in (0, 1]");
    require(c.skip_tol >= 0.0, "limit: skip_tol must be non-negative");
    require(c.substep_factor > 0.0 && c.substep_factor <= 1.0, "limit: substep_factor must lie in (0, 1]");
    require(c.max_substeps >= 0, "limit: max_substeps must be non-negative");
    require(c.bgk_cells >= 8 && c.boltzmann_cells >= 8, "grids: cells must be at least 8");
    require(c.bgk_n_v >= 4 && c.bgk_n_v <= 48 && c.boltzmann_n_v >= 4 && c.boltzmann_n_v <= 24,
            "grids: n_v must lie in [4, 48] (bgk) or [4, 24] (boltzmann)");
    require(c.bgk_v_width > 0.0 && c.boltzmann_v_width > 0.0, "grids: v_width must be positive");

    require(c.eta > 0.0 && c.eta < 0.01, "coupling: eta must lie in (0, 0.01)");
    require(c.sigma > 0.0, "coupling: sigma must be positive");
    require(c.a > 0.0, "coupling: a must be positive");

    require(c.mollifier_samples >= 10, "mollifier: samples must be at least 10");
    require(c.remainder_epsilon > 0.0, "mollifier: remainder_epsilon must be positive");
    require(c.remainder_cells >= 8, "mollifier: remainder_cells must be at least 8");
    require(c.remainder_n_v >= 4 && c.remainder_n_v <= 24, "mollifier: remainder_n_v must lie in [4, 24]");

    require(!c.out_dir.empty(), "output: dir is empty");

    const Tolerances& t = c.tol;
    for (double v : {t.wave_slope, t.wave_l1, t.sup_fit_residual, t.gram, t.moments, t.frequency, t.symmetric_defect,
                     t.round_trip, t.km_exponent, t.consistency, t.mollifier_refinement, t.remainder_homogeneity})
        require(v > 0.0, "tolerances: bounds must be positive");
    require(t.envelope_slack >= 0.0, "tolerances: envelope_slack must be non-negative");
    require(t.entropy_bimodal < 0.0, "tolerances: entropy_bimodal must be negative");
}

ExperimentConfig parse_config(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        config_error(std::string("malformed config: ") + e.what());
    }
    ExperimentConfig c;
    bool has_strength = false, sigma_or_a = false;
    int right_keys = 0;
    for (const auto& [section, body] : tree) {
        if (body.empty()) config_error("key outside a section: " + section);
        for (const auto& [key, node] : body) {
            const std::string full = section + "." + key;
            const auto it = setters().find(full);
            if (it == setters().end()) config_error("unknown key " + full);
            it->second(c, full, node.data());
            if (full == "wave.strength") has_strength = true;
            if (full == "wave.rho_plus" || full == "wave.u1_plus" || full == "wave.theta_plus") ++right_keys;
            if (full == "coupling.sigma" || full == "coupling.a") sigma_or_a = true;
        }
    }
    if (right_keys != 0 && right_keys != 3) config_error("wave: an explicit right state needs rho_plus, u1_plus and theta_plus");
    if (right_keys == 3 && has_strength) config_error("wave: give either strength or an explicit right state");
    if (c.couple && sigma_or_a) config_error("coupling: couple = true excludes explicit sigma and a");
    validate(c);
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    if (path == "default") {
        ExperimentConfig c;
        validate(c);
        return c;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) config_error("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Reports

Check make_check(std::string name, double value, Relation rel, double bound) {
    Check c{std::move(name), value, bound, false, rel};
    switch (rel) {
        case Relation::Le: c.pass = value <= bound; break;
        case Relation::Lt: c.pass = value < bound; break;
        case Relation::Ge: c.pass = value >= bound; break;
        case Relation::Gt: c.pass = value > bound; break;
    }
    return c;
}

bool SuiteReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

std::string SuiteReport::to_json() const {
    nlohmann::ordered_json j;
    j["suite"] = suite;
    j["checks"] = nlohmann::ordered_json::array();
    for (const Check& c : checks)
        j["checks"].push_back({{"name", c.name}, {"value", c.value}, {"bound", c.bound}, {"pass", c.pass}});
    j["fits"] = nlohmann::ordered_json::array();
    for (const NamedFit& f : fits)
        j["fits"].push_back({{"name", f.name},
                             {"abscissae", f.fit.xs},
                             {"ordinates", f.fit.ys},
                             {"exponent", f.fit.exponent},
                             {"interval", {f.fit.ci_low, f.fit.ci_high}},
                             {"residual", f.fit.residual}});
    return j.dump(2) + "\n";
}

namespace {

const char* relation_text(Relation r) {
    switch (r) {
        case Relation::Le: return "<=";
        case Relation::Lt: return "<";
        case Relation::Ge: return ">=";
        case Relation::Gt: return ">";
    }
    return "?";
}

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

class Csv {
public:
    Csv(const std::string& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
        if (!out_) config_error("cannot write " + path);
        row_strings(header);
    }
    void row(const std::vector<double>& values) {
        std::vector<std::string> s;
        for (double v : values) s.push_back(num(v));
        row_strings(s);
    }
    void row_strings(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << csv_quote(fields[i]);
        out_ << "\r\n";
    }

private:
    std::ofstream out_;
};

std::string path_in(const std::string& dir, const std::string& file) {
    return (std::filesystem::path(dir) / file).string();
}

void write_report(const SuiteReport& r, const std::string& dir) {
    std::ofstream out(path_in(dir, r.suite + ".json"), std::ios::binary);
    if (!out) config_error("cannot write report in " + dir);
    out << r.to_json();
}

double sup_abs(const Field& f) {
    double m = 0.0;
    for (double x : f) m = std::max(m, std::abs(x));
    return m;
}

// Number of consecutive pairs that fail to strictly decrease.
int decrease_violations(const std::vector<double>& ys) {
    int n = 0;
    for (std::size_t i = 1; i < ys.size(); ++i)
        if (!(ys[i] < ys[i - 1])) ++n;
    return n;
}

std::vector<double> sorted_descending(std::vector<double> v) {
    std::sort(v.begin(), v.end(), std::greater<>());
    return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// wave

SuiteReport run_wave(const ExperimentConfig& cfg, const std::string& out_dir) {
    SuiteReport r{"wave", {}, {}};
    const WaveEndStates ends = cfg.endstates();
    const SmoothWaveParams p{ends, cfg.decay_sigma};

    std::vector<double> ts;
    for (int i = 0; i < cfg.decay_samples; ++i) {
        const double f = double(i) / (cfg.decay_samples - 1);
        ts.push_back(cfg.decay_log_spacing ? cfg.decay_t_min * std::pow(cfg.decay_t_max / cfg.decay_t_min, f)
                                           : cfg.decay_t_min + (cfg.decay_t_max - cfg.decay_t_min) * f);
    }

    Csv csv(path_in(out_dir, "wave_decay.csv"),
            {"t", "l1_rho", "l1_u1", "l1_theta", "l1_w", "l2_rho", "l2_u1", "l2_theta", "l2_w", "linf_rho", "linf_u1",
             "linf_theta", "linf_w"});
    std::vector<double> l2[3], linf[3];
    double l1_dev = 0.0;
    for (double t : ts) {
        const DecayNorms n1 = decay_norms(p, t, NormKind::L1);
        const DecayNorms n2 = decay_norms(p, t, NormKind::L2);
        const DecayNorms ni = decay_norms(p, t, NormKind::Linf);
        csv.row({t, n1.rho, n1.u1, n1.theta, n1.w, n2.rho, n2.u1, n2.theta, n2.w, ni.rho, ni.u1, ni.theta, ni.w});
        l1_dev = std::max(l1_dev, std::abs(n1.w - ends.strength()));
        const double a2[3] = {n2.rho, n2.u1, n2.theta}, ai[3] = {ni.rho, ni.u1, ni.theta};
        for (int k = 0; k < 3; ++k) {
            l2[k].push_back(a2[k]);
            linf[k].push_back(ai[k]);
        }
    }
    const char* comp[3] = {"rho", "u1", "theta"};
    for (int k = 0; k < 3; ++k) {
        const RateFit f = fit_rate(ts, linf[k]);
        r.fits.push_back({std::string("linf_") + comp[k] + "_vs_t", f});
        r.checks.push_back(make_check(std::string("wave.linf_slope_deviation.") + comp[k], std::abs(f.exponent + 1.0),
                                      Relation::Le, cfg.tol.wave_slope));
    }
    for (int k = 0; k < 3; ++k) {
        const RateFit f = fit_rate(ts, l2[k]);
        r.fits.push_back({std::string("l2_") + comp[k] + "_vs_t", f});
        r.checks.push_back(make_check(std::string("wave.l2_slope_deviation.") + comp[k], std::abs(f.exponent + 0.5),
                                      Relation::Le, cfg.tol.wave_slope));
    }
    r.checks.push_back(make_check("wave.l1_constant_deviation", l1_dev, Relation::Le, cfg.tol.wave_l1));

    // sup_distance ~ C sigma |ln sigma|, C from the mean log ratio.
    const std::vector<double> sigmas = sorted_descending(cfg.sup_sigmas);
    std::vector<double> xs, ds;
    double log_c = 0.0;
    for (double s : sigmas) {
        xs.push_back(s * std::abs(std::log(s)));
        ds.push_back(sup_distance(SmoothWaveParams{ends, s}, cfg.sup_t));
        log_c += std::log(ds.back() / xs.back());
    }
    const double C = std::exp(log_c / sigmas.size());
    double resid = 0.0;
    Csv sd(path_in(out_dir, "wave_sup_distance.csv"), {"sigma", "sigma_abs_log_sigma", "sup_distance", "fit"});
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        resid = std::max(resid, std::abs(ds[i] - C * xs[i]) / ds[i]);
        sd.row({sigmas[i], xs[i], ds[i], C * xs[i]});
    }
    r.fits.push_back({"sup_distance_vs_sigma_abs_log_sigma", fit_rate(xs, ds)});
    r.checks.push_back(make_check("wave.sup_distance_nonmonotone_pairs", decrease_violations(ds), Relation::Le, 0.0));
    r.checks.push_back(make_check("wave.sup_distance_fit_residual", resid, Relation::Lt, cfg.tol.sup_fit_residual));
    return r;
}

// ---------------------------------------------------------------------------
// frame-check

SuiteReport run_frame_check(const ExperimentConfig& cfg, const std::string& out_dir) {
    SuiteReport r{"frame-check", {}, {}};
    const WaveEndStates ends = cfg.endstates();
    const double theta_max = std::max(ends.left.theta, ends.right.theta);
    const double u_max = std::max(std::abs(ends.left.u[0]), std::abs(ends.right.u[0]));
    const VelocityGrid grid = reference_grid(theta_max, u_max, cfg.frame_n);
    KernelSpec k0 = cfg.kernel;
    k0.gamma = 0.0;

    const std::vector<std::pair<std::string, GasState>> states = {
        {"left", ends.left}, {"middle", ends.state_at(0.5 * (ends.w_minus + ends.w_plus))}, {"right", ends.right}};
    const std::vector<Vec3> probes = {{0.0, 0.0, 0.0}, {1.0, -0.5, 0.3}, {3.0, 2.0, -1.0}, {-4.0, 0.0, 2.5}};
    Csv csv(path_in(out_dir, "frame_check.csv"), {"state", "rho", "u1", "theta", "gram_error", "moment_error",
                                                  "frequency_error"});
    double gram = 0.0, mom = 0.0, freq = 0.0;
    for (const auto& [name, s] : states) {
        const MacroProjector P(s, grid);
        const double g = (P.gram() - Eigen::Matrix<double, 5, 5>::Identity()).cwiseAbs().maxCoeff();
        const GasState m = moments_to_state(conserved_moments(maxwellian_on(s, grid), grid));
        double me = std::max(std::abs(m.rho - s.rho), std::abs(m.theta - s.theta));
        for (int a = 0; a < 3; ++a) me = std::max(me, std::abs(m.u[a] - s.u[a]));
        double fe = 0.0;
        for (const Vec3& v : probes)
            fe = std::max(fe, std::abs(collision_frequency(s, k0, v) - 2.0 * kPi * s.rho * k0.b_scale));
        fe = std::max(fe, std::abs(collision_frequency(s, k0, s.u) - 2.0 * kPi * s.rho * k0.b_scale));
        gram = std::max(gram, g);
        mom = std::max(mom, me);
        freq = std::max(freq, fe);
        csv.row_strings({name, num(s.rho), num(s.u[0]), num(s.theta), num(g), num(me), num(fe)});
    }
    r.checks.push_back(make_check("frame.gram_identity_error", gram, Relation::Le, cfg.tol.gram));
    r.checks.push_back(make_check("frame.maxwellian_moment_error", mom, Relation::Le, cfg.tol.moments));
    r.checks.push_back(make_check("frame.gamma0_frequency_error", freq, Relation::Le, cfg.tol.frequency));
    return r;
}

// ---------------------------------------------------------------------------
// collision-check

namespace {

// Interpolation bound for L chi_i: h^2/8 sup sum_a |d_aa (chi_i sqrt(mu))| times 2 sup nu.
double invariant_bound(const LinearizedOperator& op, int i) {
    const VelocityGrid& g = op.grid();
    const GasState& s = op.state();
    const double h = g.spacing(), d = 1e-3 * std::sqrt(s.theta);
    auto f = [&](const Vec3& v) { return chi_basis(s, v)[i] * std::sqrt(maxwellian(s, v)); };
    double curv = 0.0;
    for (std::size_t q = 0; q < g.size(); ++q) {
        const Vec3 v = g.node(q);
        const double c0 = f(v);
        double sum = 0.0;
        for (int a = 0; a < 3; ++a) {
            Vec3 p = v, m = v;
            p[a] += d;
            m[a] -= d;
            sum += std::abs(f(p) - 2.0 * c0 + f(m)) / (d * d);
        }
        curv = std::max(curv, sum);
    }
    return h * h / 8.0 * curv * 2.0 * sup_abs(op.nu_diag());
}

Field smooth_micro(const VelocityGrid& g, const GasState& s, const MacroProjector& P) {
    const double st = std::sqrt(s.theta);
    return P.complement(g.sample([&](const Vec3& v) {
        const Vec3 x = (1.0 / st) * (v - s.u);
        return (std::sin(x[0]) + x[1] * x[2] - 0.3 * x[0] * norm2(x)) * std::exp(-0.3 * norm2(x));
    }));
}

double rel_sup_diff(const Field& a, const Field& b) {
    double d = 0.0;
    for (std::size_t q = 0; q < a.size(); ++q) d = std::max(d, std::abs(a[q] - b[q]));
    return d / sup_abs(b);
}

}  // namespace

void collision_refinement_checks(const ExperimentConfig& cfg, const std::string& out_dir, SuiteReport& r) {
    const GasState s = cfg.endstates().left;
    const double st = std::sqrt(s.theta);
    const KernelSpec& k = cfg.kernel;

    // Q(mu, mu) under refinement.
    std::vector<double> hs, sup_q, mass, mom, energy, ent;
    Csv csv(path_in(out_dir, "collision_refinement.csv"),
            {"n", "h", "sup_q", "mass_defect", "momentum_defect", "energy_defect", "entropy_production"});
    for (int n : cfg.collision_sizes) {
        const VelocityGrid g(cfg.collision_half_width * st, n, s.u);
        const Field mu = maxwellian_on(s, g);
        const Field q = q_bilinear(mu, mu, k, g);
        const auto m = conserved_moments(q, g);
        hs.push_back(g.spacing());
        sup_q.push_back(sup_abs(q));
        mass.push_back(std::abs(m[0]));
        mom.push_back(std::sqrt(m[1] * m[1] + m[2] * m[2] + m[3] * m[3]));
        energy.push_back(std::abs(m[4]));
        ent.push_back(entropy_production(mu, k, g));
        csv.row({double(n), hs.back(), sup_q.back(), mass.back(), mom.back(), energy.back(), ent.back()});
    }
    auto order_check = [&](const std::string& what, const std::vector<double>& ys) {
        const double scale = sup_q.front();
        if (*std::max_element(ys.begin(), ys.end()) <= cfg.tol.symmetric_defect * scale) {
            r.checks.push_back(make_check("collision." + what + "_vanishing", *std::max_element(ys.begin(), ys.end()),
                                          Relation::Le, cfg.tol.symmetric_defect * scale));
            return;
        }
        const RateFit f = fit_rate(hs, ys);
        r.fits.push_back({what + "_vs_h", f});
        r.checks.push_back(make_check("collision." + what + "_order", f.exponent, Relation::Ge, cfg.tol.collision_order));
    };
    order_check("q_mu_mu_sup", sup_q);
    order_check("mass_defect", mass);
    order_check("momentum_defect", mom);
    order_check("energy_defect", energy);
    r.checks.push_back(make_check("collision.entropy_production_maxwellian", *std::max_element(ent.begin(), ent.end()),
                                  Relation::Le, cfg.tol.entropy_maxwellian));
    {
        const VelocityGrid g(cfg.collision_half_width * st, cfg.bimodal_n, s.u);
        const GasState a{0.5 * s.rho, {s.u[0] + st, s.u[1], s.u[2]}, 0.6 * s.theta};
        const GasState b{0.5 * s.rho, {s.u[0] - st, s.u[1], s.u[2]}, 0.6 * s.theta};
        const Field F = g.sample([&](const Vec3& v) { return maxwellian(a, v) + maxwellian(b, v); });
        r.checks.push_back(make_check("collision.entropy_production_bimodal", entropy_production(F, k, g), Relation::Lt,
                                      cfg.tol.entropy_bimodal));
    }
}

void linearized_checks(const ExperimentConfig& cfg, const std::string&, SuiteReport& r) {
    const GasState s = cfg.endstates().left;
    const double st = std::sqrt(s.theta);
    const VelocityGrid g(cfg.linear_half_width * st, cfg.linear_n, s.u);
    const auto op = LinearizedOperator::assemble(s, cfg.kernel, g);
    double ratio = 0.0;
    for (int i = 0; i < 5; ++i) ratio = std::max(ratio, sup_abs(op.apply(op.projector().chi(i))) / invariant_bound(op, i));
    r.checks.push_back(make_check("linear.invariant_residual_over_bound", ratio, Relation::Le, 1.0));
    const SpectralGapProbe probe = spectral_gap_probe(op, cfg.gap_samples, cfg.seed);
    r.checks.push_back(make_check("linear.spectral_gap_min_ratio", probe.min_ratio, Relation::Gt, 0.0));
    const Field gm = smooth_micro(g, s, op.projector());
    const Field rhs = op.projector().complement(op.apply(gm));
    r.checks.push_back(make_check("linear.pseudo_inverse_round_trip", rel_sup_diff(op.pseudo_inverse_dense(rhs), gm),
                                  Relation::Le, cfg.tol.round_trip));
}

void ksplit_checks(const ExperimentConfig& cfg, const std::string& out_dir, SuiteReport& r) {
    const GasState s = cfg.endstates().left;
    const double st = std::sqrt(s.theta);
    Csv kc(path_in(out_dir, "ksplit.csv"), {"gamma", "m", "near_norm_inf"});
    for (double gamma : cfg.ksplit_gammas) {
        KernelSpec kg = cfg.kernel;
        kg.gamma = gamma;
        const VelocityGrid g(cfg.ksplit_half_width * st, cfg.ksplit_n, s.u);
        const auto op = LinearizedOperator::matrix_free(s, kg, g);
        std::vector<double> norms;
        for (double m : cfg.ksplit_m) {
            norms.push_back(KSplit(op, m).near_norm_inf());
            kc.row({gamma, m, norms.back()});
        }
        const RateFit f = fit_rate(cfg.ksplit_m, norms);
        const std::string tag = "gamma_" + num(gamma);
        r.fits.push_back({"km_norm_vs_m_" + tag, f});
        r.checks.push_back(make_check("ksplit.exponent_deviation." + tag, std::abs(f.exponent - (3.0 + gamma)),
                                      Relation::Le, cfg.tol.km_exponent));
    }
}

SuiteReport run_collision_check(const ExperimentConfig& cfg, const std::string& out_dir) {
    SuiteReport r{"collision-check", {}, {}};
    collision_refinement_checks(cfg, out_dir, r);
    linearized_checks(cfg, out_dir, r);
    ksplit_checks(cfg, out_dir, r);
    return r;
}

// ---------------------------------------------------------------------------
// cascade

namespace {

std::shared_ptr<const MicroInverse> cascade_inverse(const ExperimentConfig& cfg) {
    if (cfg.cascade_inverse == Backend::Boltzmann)
        return std::make_shared<BoltzmannMicroInverse>(cfg.kernel, cfg.ref_n, cfg.ref_half_width);
    return std::make_shared<BgkMicroInverse>(cfg.kernel, cfg.ref_n, cfg.ref_half_width);
}

// Manufactured solution for the level-1 macro system.
double mms_error(const SmoothWaveParams& wave, double T, int cells, double X) {
    auto exact = [](double t, double x) {
        Vec5 u;
        const double b = std::exp(-2.0 * x * x) * (1.0 + t);
        u << b, 0.5 * b, -0.2 * b, 0.1 * b, 0.3 * b * std::cos(x);
        return u;
    };
    auto forcing = [&](double t, double x) {
        const double h = 1e-5;
        const Vec5 Ut = (exact(t + h, x) - exact(t - h, x)) / (2 * h);
        const Vec5 Ux = (exact(t, x + h) - exact(t, x - h)) / (2 * h);
        const auto c = macro_coefficients(wave_derivatives(wave, t, x));
        return Vec5(c.A0 * Ut + c.A1 * Ux + c.B * exact(t, x));
    };
    const SpaceGrid g{-X, X, cells};
    std::vector<Vec5> U0(cells);
    for (int j = 0; j < cells; ++j) U0[j] = exact(0.0, g.x(j));
    MacroSolverSettings st;
    st.snapshot_dt = T;
    const MacroSolution sol = solve_macro(wave, nullptr, U0, T, g, st, forcing);
    double e = 0.0;
    for (int j = 0; j < cells; ++j) e = std::max(e, (sol.U.back()[j] - exact(T, g.x(j))).cwiseAbs().maxCoeff());
    return e;
}

}  // namespace

SuiteReport run_cascade(const ExperimentConfig& cfg, const std::string& out_dir) {
    SuiteReport r{"cascade", {}, {}};
    const WaveEndStates ends = cfg.endstates();
    const double sigma = cfg.sigma_for(cfg.epsilons.front());
    const SmoothWaveParams wave{ends, sigma};
    const auto inv = cascade_inverse(cfg);

    CascadeSettings cs;
    cs.depth = std::max(1, cfg.depth);
    cs.t_final = cfg.cascade_t_final;
    cs.grid = SpaceGrid{-cfg.cascade_half_width, cfg.cascade_half_width, cfg.cascade_cells};
    cs.macro.snapshot_dt = cfg.snapshot_dt;
    cs.consistency_tol = cfg.tol.consistency;
    HilbertCascade hc(wave, inv, cs);
    hc.compute();
    for (int i = 1; i <= hc.depth(); ++i) hc.write_csv(i, path_in(out_dir, "cascade_level" + std::to_string(i) + ".csv"));
    hc.write_metadata(path_in(out_dir, "cascade_metadata.json"));

    // Symmetrizer structure at every node and snapshot.
    int asym = 0;
    double min_eig = std::numeric_limits<double>::infinity();
    for (double t : hc.level(1).macro.times)
        for (int j = 0; j < cs.grid.cells; ++j) {
            const MacroCoefficients c = macro_coefficients(wave_derivatives(wave, t, cs.grid.x(j)));
            if (!(c.A0 == c.A0.transpose()) || !(c.A1 == c.A1.transpose())) ++asym;
            min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Mat5>(c.A0).eigenvalues().minCoeff());
        }
    r.checks.push_back(make_check("cascade.asymmetric_coefficient_nodes", asym, Relation::Le, 0.0));
    r.checks.push_back(make_check("cascade.a0_min_eigenvalue", min_eig, Relation::Gt, 0.0));

    // Manufactured solution.
    {
        const SmoothWaveParams mw{ends, cfg.mms_sigma};
        const double X = 5.0;
        std::vector<double> dxs, errs;
        Csv csv(path_in(out_dir, "cascade_mms.csv"), {"cells", "dx", "error"});
        for (int n : cfg.mms_cells) {
            dxs.push_back(2.0 * X / n);
            errs.push_back(mms_error(mw, cfg.mms_t_final, n, X));
            csv.row({double(n), dxs.back(), errs.back()});
        }
        const RateFit f = fit_rate(dxs, errs);
        r.fits.push_back({"mms_error_vs_dx", f});
        r.checks.push_back(make_check("cascade.mms_order", f.exponent, Relation::Ge, cfg.tol.macro_order));
    }

    // Level-1 sigma sweep at t = 0, where the macro part vanishes.
    {
        const std::vector<double> sigmas = sorted_descending(cfg.sweep_sigmas);
        std::vector<double> sups, ratios;
        std::vector<HilbertCascade> sweeps;
        CascadeSettings one = cs;
        one.depth = 1;
        auto envelope = [](const GasState& s, const Vec3& v) {
            return std::pow(1.0 + std::sqrt(norm2(v)), 3) * std::sqrt(maxwellian(s, v));
        };
        for (double sg : sigmas) {
            sweeps.emplace_back(SmoothWaveParams{ends, sg}, inv, one);
            const HilbertCascade& c = sweeps.back();
            double sup = 0.0, ratio = 0.0;
            for (int j = 0; j < cs.grid.cells; ++j) {
                const double x = cs.grid.x(j);
                const GasState s = smooth_wave(c.wave(), 0.0, x);
                const VelocityGrid node = inv->node_lattice(s);
                for (std::size_t q = 0; q < node.size(); ++q) {
                    const Vec3 v = node.node(q);
                    const double f = c.micro(1, 0.0, x, v);
                    sup = std::max(sup, std::abs(f) * std::sqrt(maxwellian(s, v)));
                    ratio = std::max(ratio, std::abs(f) / envelope(s, v));
                }
            }
            sups.push_back(sup);
            ratios.push_back(ratio);
        }
        const RateFit f = fit_rate(sigmas, sups);
        r.fits.push_back({"f1_sup_vs_sigma", f});
        std::vector<double> rev(sups.rbegin(), sups.rend());
        r.checks.push_back(make_check("cascade.f1_sup_nongrowing_pairs", decrease_violations(rev), Relation::Le, 0.0));
        r.checks.push_back(make_check("cascade.f1_sigma_exponent", f.exponent, Relation::Lt, 0.0));

        // Envelope constant K sigma^p fitted on the node lattices at the cascade cells.
        // Grid points may not exceed it (up to rounding); held-out points, the cell
        // midpoints on a lattice with twice the nodes per axis, get envelope_slack.
        double K = 0.0;
        for (std::size_t i = 0; i < sigmas.size(); ++i) K = std::max(K, ratios[i] * std::pow(sigmas[i], -f.exponent));
        long violations = 0;
        double heldout = 0.0;
        Csv csv(path_in(out_dir, "cascade_sigma_sweep.csv"),
                {"sigma", "f1_sup", "envelope_ratio", "envelope_constant", "heldout_excess"});
        for (std::size_t i = 0; i < sigmas.size(); ++i) {
            const HilbertCascade& c = sweeps[i];
            const double bound = K * std::pow(sigmas[i], f.exponent);
            double excess = 0.0;
            for (int j = 0; j < cs.grid.cells; ++j) {
                const double x = cs.grid.x(j);
                const GasState s = smooth_wave(c.wave(), 0.0, x);
                const VelocityGrid node = inv->node_lattice(s);
                for (std::size_t q = 0; q < node.size(); ++q) {
                    const Vec3 v = node.node(q);
                    if (std::abs(c.micro(1, 0.0, x, v)) / envelope(s, v) > bound * (1.0 + 1e-12)) ++violations;
                }
                if (j + 1 == cs.grid.cells) continue;
                const double xm = x + 0.5 * cs.grid.dx();
                const GasState sm = smooth_wave(c.wave(), 0.0, xm);
                const VelocityGrid coarse = inv->node_lattice(sm);
                const VelocityGrid fine(coarse.half_width(), 2 * coarse.n(), coarse.center());
                for (std::size_t q = 0; q < fine.size(); ++q) {
                    const Vec3 v = fine.node(q);
                    excess = std::max(excess, std::abs(c.micro(1, 0.0, xm, v)) / envelope(sm, v) / bound);
                }
            }
            heldout = std::max(heldout, excess);
            csv.row({sigmas[i], sups[i], ratios[i], K, excess});
        }
        r.checks.push_back(make_check("cascade.envelope_violations", double(violations), Relation::Le, 0.0));
        r.checks.push_back(
            make_check("cascade.envelope_heldout_excess", heldout, Relation::Le, 1.0 + cfg.tol.envelope_slack));
    }

    if (hc.depth() >= 2)
        r.checks.push_back(make_check("cascade.level2_consistency_defect", hc.level(2).max_consistency_defect, Relation::Le,
                                      cfg.tol.consistency));
    return r;
}

// ---------------------------------------------------------------------------
// limit

SuiteReport run_limit(const ExperimentConfig& cfg, const std::string& out_dir) {
    SuiteReport r{"limit", {}, {}};
    const KineticConfig kc = cfg.kinetic();
    RunSink sink;
    if (cfg.raw_dump)
        sink = [&](double eps, const KineticRun& run) {
            const std::string tag = "eps_" + num(eps);
            write_checkpoint_csv(run.field, path_in(out_dir, "checkpoint_" + tag + ".csv"));
            write_raw_dump(run.field, path_in(out_dir, "field_" + tag + ".bin"));
        };
    const LimitTable table = limit_study(kc, cfg.epsilons, sink);
    write_limit_csv(table, path_in(out_dir, "limit.csv"));
    int failed = 0;
    std::vector<double> errs;
    for (const LimitRow& row : table.rows) {
        if (!row.ok) ++failed;
        errs.push_back(row.ok ? row.exact.max() : std::numeric_limits<double>::infinity());
    }
    r.checks.push_back(make_check("limit.failed_runs", failed, Relation::Le, 0.0));
    r.checks.push_back(make_check("limit.nondecreasing_pairs", decrease_violations(errs), Relation::Le, 0.0));
    if (table.has_fit) {
        r.fits.push_back({"moment_error_vs_epsilon", table.fit});
        r.checks.push_back(make_check("limit.fitted_order", table.fit.exponent, Relation::Ge, cfg.tol.limit_order));
    }
    return r;
}

// ---------------------------------------------------------------------------
// mollifier-check

SuiteReport run_mollifier_check(const ExperimentConfig& cfg, const std::string& out_dir) {
    SuiteReport r{"mollifier-check", {}, {}};
    const double eps = cfg.remainder_epsilon;
    const double a = cfg.a_for(eps);
    const double lambda = cfg.lambda();
    const double c1 = mollifier_gradient_check(a, lambda, cfg.mollifier_samples);
    const double c2 = mollifier_gradient_check(a, lambda, 2 * cfg.mollifier_samples);
    Csv csv(path_in(out_dir, "mollifier.csv"), {"a", "lambda", "samples", "c_lambda"});
    csv.row({a, lambda, double(cfg.mollifier_samples), c1});
    csv.row({a, lambda, double(2 * cfg.mollifier_samples), c2});
    r.checks.push_back(make_check("mollifier.c_lambda_refinement_change", std::abs(c2 - c1) / c2, Relation::Le,
                                  cfg.tol.mollifier_refinement));

    // Remainder norms on a truncated expansion.
    const WaveEndStates ends = cfg.endstates();
    const SmoothWaveParams wave{ends, cfg.sigma_for(eps)};
    const int depth = std::max(1, cfg.depth);
    const double X = 3.0;
    const SpaceGrid sg{-X, X, cfg.remainder_cells};
    const VelocityGrid vg = kinetic_velocity_grid(ends, cfg.remainder_n_v, 5.0);
    CascadeSettings cs;
    cs.depth = depth;
    cs.t_final = 0.2;
    cs.grid = sg;
    HilbertCascade cascade(wave, std::make_shared<BgkMicroInverse>(cfg.kernel, cfg.ref_n, cfg.ref_half_width), cs);
    cascade.compute();
    const RemainderSpec spec{choose_theta_M(ends.left.theta, ends.right.theta), default_beta(cfg.kernel.gamma)};
    const DistributionField E = init_expansion(wave, &cascade, eps, depth, sg, vg);
    const RemainderNorms z = remainder_norms(E, wave, &cascade, eps, depth, a, 0.0, spec);
    r.checks.push_back(make_check("remainder.zero_input_local_l2", z.local_l2, Relation::Le, 0.0));
    r.checks.push_back(make_check("remainder.zero_input_weighted_linf", z.weighted_linf, Relation::Le, 0.0));

    auto with_remainder = [&](double c) {
        DistributionField f = E;
        for (int j = 0; j < sg.cells; ++j) {
            const Field mu = maxwellian_on(smooth_wave(wave, 0.0, sg.x(j)), vg);
            for (std::size_t q = 0; q < mu.size(); ++q) {
                const Vec3 v = vg.node(q);
                f.F[j][q] += c * eps * eps * eps * std::sqrt(mu[q]) * std::cos(sg.x(j) + v[0]) * std::exp(-0.1 * norm2(v));
            }
        }
        return f;
    };
    const RemainderNorms n1 = remainder_norms(with_remainder(1.0), wave, &cascade, eps, depth, a, 0.3, spec);
    const RemainderNorms n3 = remainder_norms(with_remainder(-3.0), wave, &cascade, eps, depth, a, 0.3, spec);
    const double hl2 = std::abs(n3.local_l2 - 3.0 * n1.local_l2) / (3.0 * n1.local_l2);
    const double hinf = std::abs(n3.weighted_linf - 3.0 * n1.weighted_linf) / (3.0 * n1.weighted_linf);
    Csv rc(path_in(out_dir, "remainder.csv"), {"scale", "local_l2", "weighted_linf"});
    rc.row({0.0, z.local_l2, z.weighted_linf});
    rc.row({1.0, n1.local_l2, n1.weighted_linf});
    rc.row({-3.0, n3.local_l2, n3.weighted_linf});
    r.checks.push_back(make_check("remainder.homogeneity_local_l2", hl2, Relation::Le, cfg.tol.remainder_homogeneity));
    r.checks.push_back(make_check("remainder.homogeneity_weighted_linf", hinf, Relation::Le,
                                  cfg.tol.remainder_homogeneity));
    return r;
}

// ---------------------------------------------------------------------------
// dispatch

const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names = {"wave",    "frame-check", "collision-check",
                                                   "cascade", "limit",       "mollifier-check"};
    return names;
}

SuiteReport run_suite(const std::string& name, const ExperimentConfig& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    SuiteReport r;
    if (name == "wave")
        r = run_wave(cfg, out_dir);
    else if (name == "frame-check")
        r = run_frame_check(cfg, out_dir);
    else if (name == "collision-check")
        r = run_collision_check(cfg, out_dir);
    else if (name == "cascade")
        r = run_cascade(cfg, out_dir);
    else if (name == "limit")
        r = run_limit(cfg, out_dir);
    else if (name == "mollifier-check")
        r = run_mollifier_check(cfg, out_dir);
    else
        config_error("unknown suite " + name);
    write_report(r, out_dir);
    return r;
}

namespace {

void print_summary(const SuiteReport& r, std::ostream& os) {
    os << "== " << r.suite << "\n";
    std::size_t w = 4;
    for (const Check& c : r.checks) w = std::max(w, c.name.size());
    for (const Check& c : r.checks)
        os << "  " << (c.pass ? "PASS " : "FAIL ") << std::left << std::setw(static_cast<int>(w)) << c.name << "  "
           << std::setprecision(6) << c.value << " " << relation_text(c.rel) << " " << c.bound << "\n";
    for (const NamedFit& f : r.fits)
        os << "  fit  " << std::left << std::setw(static_cast<int>(w)) << f.name << "  exponent " << std::setprecision(6)
           << f.fit.exponent << " [" << f.fit.ci_low << ", " << f.fit.ci_high << "]\n";
}

}  // namespace

int cli_dispatch(int argc, char** argv) {
    CLI::App app{"hydrolimit: verification suites for the kinetic-to-Euler limit across a rarefaction wave"};
    std::string suite, config_path = "default", out, epsilons, backend;
    std::optional<double> sigma, eta;
    std::optional<int> depth;
    std::optional<std::int64_t> seed;
    std::vector<std::string> all = suite_names();
    all.push_back("all");
    app.add_option("suite", suite, "Suite to run")->required()->check(CLI::IsMember(all));
    app.add_option("--config", config_path, "INI config file, or 'default' for the built-in defaults");
    app.add_option("--out", out, "Output directory (overrides [output] dir)");
    app.add_option("--epsilons", epsilons, "Comma-separated Knudsen numbers, strictly decreasing");
    auto* o_sigma = app.add_option("--sigma", sigma, "Explicit wave smoothing sigma (disables coupling)");
    auto* o_eta = app.add_option("--eta", eta, "Coupling exponent: sigma = eps^eta, a = eps^(-2 eta)");
    o_sigma->excludes(o_eta);
    app.add_option("--depth", depth, "Cascade depth");
    app.add_option("--backend", backend, "Collision backend: bgk or boltzmann");
    app.add_option("--seed", seed, "Seed of the randomized probes");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    ExperimentConfig cfg;
    try {
        cfg = load_config(config_path);
        if (!epsilons.empty()) cfg.epsilons = to_doubles("--epsilons", epsilons);
        if (sigma) {
            cfg.couple = false;
            cfg.sigma = *sigma;
        }
        if (eta) {
            cfg.couple = true;
            cfg.eta = *eta;
        }
        if (depth) cfg.depth = *depth;
        if (!backend.empty()) cfg.backend = to_backend("--backend", backend);
        if (seed) {
            if (*seed < 0) config_error("--seed must be non-negative");
            cfg.seed = static_cast<std::uint64_t>(*seed);
        }
        if (!out.empty()) cfg.out_dir = out;
        validate(cfg);
    } catch (const Error& e) {
        std::cerr << "hydrolimit: " << e.what() << "\n";
        return 2;
    }

    const std::vector<std::string> run = suite == "all" ? suite_names() : std::vector<std::string>{suite};
    bool ok = true;
    for (const std::string& name : run) {
        try {
            const SuiteReport r = run_suite(name, cfg, cfg.out_dir);
            print_summary(r, std::cout);
            for (const Check& c : r.checks)
                if (!c.pass) {
                    std::cerr << "hydrolimit: assertion failed: " << c.name << " = " << c.value << " "
                              << relation_text(c.rel) << " " << c.bound << " does not hold\n";
                    ok = false;
                }
        } catch (const Error& e) {
            std::cerr << "hydrolimit: " << name << ": " << e.what() << "\n";
            if (e.kind() == ErrorKind::Config) return 2;
            ok = false;
        }
    }
    return ok ? 0 : 1;
}

}  // namespace hydrolimit
