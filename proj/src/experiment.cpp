#include "cis/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "cis/diagnostics.hpp"
#include "cis/errors.hpp"
#include "cis/io.hpp"
#include "cis/log.hpp"
#include "cis/parallel.hpp"
#include "cis/samplers.hpp"

namespace cis {

namespace {

// ---------------------------------------------------------------------------
// schema helpers

void check_keys(const Json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ValidationError(where + ": expected an object");
    for (const auto& item : obj.items())
        if (!allowed.count(item.key())) throw ValidationError(where + ": unknown key '" + item.key() + "'");
}

const Json& child(const Json& obj, const char* key) {
    static const Json null_json;
    if (obj.is_object() && obj.contains(key)) return obj.at(key);
    return null_json;
}

double num(const Json& obj, const char* key, double def, const std::string& where) {
    const Json& v = child(obj, key);
    if (v.is_null()) return def;
    if (!v.is_number()) throw ValidationError(where + "." + key + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ValidationError(where + "." + key + ": must be finite");
    return d;
}

long integer(const Json& obj, const char* key, long def, const std::string& where, long lo = 0) {
    const Json& v = child(obj, key);
    if (v.is_null()) return def;
    if (!v.is_number_integer()) throw ValidationError(where + "." + key + ": expected an integer");
    const long x = v.get<long>();
    if (x < lo) throw ValidationError(where + "." + key + ": must be >= " + std::to_string(lo));
    return x;
}

bool boolean(const Json& obj, const char* key, bool def, const std::string& where) {
    const Json& v = child(obj, key);
    if (v.is_null()) return def;
    if (!v.is_boolean()) throw ValidationError(where + "." + key + ": expected true or false");
    return v.get<bool>();
}

std::string text(const Json& obj, const char* key, const std::string& def, const std::string& where,
                 const std::set<std::string>& choices = {}) {
    const Json& v = child(obj, key);
    if (v.is_null()) return def;
    if (!v.is_string()) throw ValidationError(where + "." + key + ": expected a string");
    std::string s = v.get<std::string>();
    if (!choices.empty() && !choices.count(s)) throw ValidationError(where + "." + key + ": unsupported value '" + s + "'");
    return s;
}

Vector vec(const Json& v, const std::string& where) {
    if (!v.is_array()) throw ValidationError(where + ": expected an array of numbers");
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw ValidationError(where + ": expected an array of numbers");
        out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
    }
    return out;
}

Matrix mat(const Json& v, const std::string& where) {
    if (!v.is_array() || v.empty()) throw ValidationError(where + ": expected a non-empty array of rows");
    const std::size_t cols = v[0].is_array() ? v[0].size() : 0;
    Matrix out(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < v.size(); ++i) {
        const Vector row = vec(v[i], where);
        if (static_cast<std::size_t>(row.size()) != cols || cols == 0) throw ValidationError(where + ": ragged or empty rows");
        out.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    return out;
}

Json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

const std::set<std::string> kProblemKinds{"linear", "polynomial", "elliptic1d", "gomos"};

void validate_sections(const ExperimentConfig& c) {
    const std::string kind = text(c.problem, "kind", "", "problem", kProblemKinds);
    if (kind.empty()) throw ValidationError("problem.kind is required");
    if (kind == "linear")
        check_keys(c.problem, {"kind", "n", "m", "F", "data", "noise_std", "noise_cov", "truth_seed"}, "problem");
    else if (kind == "polynomial")
        check_keys(c.problem, {"kind", "degree", "coefficient", "data", "noise_var"}, "problem");
    else if (kind == "elliptic1d")
        check_keys(c.problem,
                   {"kind", "grid_nodes", "corr_length", "log_std", "kernel", "n_modes", "sensors", "noise_fraction", "truth_seed"}, "problem");
    else
        check_keys(c.problem,
                   {"kind", "n_alt", "n_gas", "n_lambda", "noise_std", "truth_seed", "corr_length_km", "log_std", "optical_depths",
                    "path_lengths_csv", "cross_sections_csv"},
                   "problem");
    if (!c.prior.is_null()) {
        if (kind == "elliptic1d" || kind == "gomos")
            throw ValidationError("prior: the " + kind + " problem defines its own prior; remove the prior section");
        check_keys(c.prior, {"mean", "variance", "std", "cov"}, "prior");
    }
    if (!c.method.is_null()) {
        const std::string name = text(c.method, "name", "cis", "method", {"cis", "cis-smc", "gis-fd"});
        if (name == "cis")
            check_keys(c.method,
                       {"name", "n_init", "n_ite", "chain_steps", "burn_in", "max_kept", "n_perp", "r_max_first", "growth",
                        "r_max_cap", "stop_angle", "patience", "kernel", "scale"},
                       "method");
        else if (name == "cis-smc")
            check_keys(c.method,
                       {"name", "n_samp", "n_moves", "n_perp", "tau_fraction", "tau_fraction_degenerate", "clip", "pcn_step",
                        "target_acceptance", "max_stages"},
                       "method");
        else
            check_keys(c.method, {"name", "n_samples", "rank", "fd_step"}, "method");
    }
    if (!c.rank_rule.is_null()) {
        check_keys(c.rank_rule, {"mode", "threshold", "r_min", "r_max", "variation"}, "rank_rule");
        text(c.rank_rule, "mode", "plateau", "rank_rule", {"plateau", "threshold"});
    }
    if (!c.sampler.is_null()) {
        check_keys(c.sampler, {"mode", "n_steps", "kernel", "scale", "max_lag", "n_perp", "burn_in", "projector"}, "sampler");
        text(c.sampler, "mode", "delayed", "sampler", {"delayed", "approximate"});
        text(c.sampler, "kernel", "rwm", "sampler", {"rwm", "pcn"});
    }
    if (!c.blg_check.is_null())
        check_keys(c.blg_check, {"instances", "n_min", "n_max", "m_min", "m_max", "rank", "alternatives", "negative_control"},
                   "blg_check");
    if (!c.compare.is_null()) {
        check_keys(c.compare, {"n_samples", "estimator", "rank", "fd_step"}, "compare");
        text(c.compare, "estimator", "wmc", "compare", {"wmc", "analytic"});
    }
    if (!c.diagnose.is_null())
        check_keys(c.diagnose, {"n_reduced", "n_perp", "chain_steps", "burn_in", "scale", "projector"}, "diagnose");
}

// ---------------------------------------------------------------------------
// problem builders

Rng truth_rng(const ExperimentConfig& cfg) {
    return make_stream(static_cast<std::uint64_t>(integer(cfg.problem, "truth_seed", 1, "problem")), 0x7472757468ull);
}

GaussianDist prior_from(const Json& p, Eigen::Index n) {
    Vector mean = Vector::Zero(n);
    const Json& m = child(p, "mean");
    if (m.is_number()) mean.setConstant(m.get<double>());
    else if (!m.is_null()) {
        mean = vec(m, "prior.mean");
        if (mean.size() != n) throw ValidationError("prior.mean: length differs from the problem dimension");
    }
    const int given = !child(p, "variance").is_null() + !child(p, "std").is_null() + !child(p, "cov").is_null();
    if (given > 1) throw ValidationError("prior: give at most one of variance, std, cov");
    Matrix cov = Matrix::Identity(n, n);
    if (!child(p, "variance").is_null()) {
        const double v = num(p, "variance", 1.0, "prior");
        if (!(v > 0.0)) throw ValidationError("prior.variance must be positive");
        cov *= v;
    } else if (!child(p, "std").is_null()) {
        const Vector s = vec(child(p, "std"), "prior.std");
        if (s.size() != n || (s.array() <= 0.0).any()) throw ValidationError("prior.std: need n positive entries");
        cov = s.array().square().matrix().asDiagonal();
    } else if (!child(p, "cov").is_null()) {
        cov = mat(child(p, "cov"), "prior.cov");
        if (cov.rows() != n || cov.cols() != n) throw ValidationError("prior.cov: must be n x n");
    }
    return GaussianDist(mean, SpdMatrix(cov));
}

SpdMatrix noise_from(const Json& p, Eigen::Index m, double def_std, const char* std_key) {
    if (!child(p, "noise_cov").is_null()) {
        const Matrix c = mat(child(p, "noise_cov"), "problem.noise_cov");
        if (c.rows() != m || c.cols() != m) throw ValidationError("problem.noise_cov: must be m x m");
        return SpdMatrix(c);
    }
    const Json& s = child(p, std_key);
    Vector sd = Vector::Constant(m, def_std);
    if (s.is_array()) {
        sd = vec(s, std::string("problem.") + std_key);
        if (sd.size() != m) throw ValidationError(std::string("problem.") + std_key + ": need one entry per observation");
    } else if (!s.is_null()) {
        sd.setConstant(num(p, std_key, def_std, "problem"));
    }
    if ((sd.array() <= 0.0).any()) throw ValidationError(std::string("problem.") + std_key + " must be positive");
    return SpdMatrix(Matrix(sd.array().square().matrix().asDiagonal()));
}

Vector data_from(const Json& p, Eigen::Index m, const Vector& clean, const SpdMatrix& noise, Rng& rng) {
    const Json& d = child(p, "data");
    if (d.is_number()) {
        if (m != 1) throw ValidationError("problem.data: expected an array");
        return Vector::Constant(1, d.get<double>());
    }
    if (!d.is_null()) {
        Vector y = vec(d, "problem.data");
        if (y.size() != m) throw ValidationError("problem.data: length differs from the model output");
        return y;
    }
    return clean + noise.chol().triangularView<Eigen::Lower>() * standard_normal(rng, m);
}

Problem finish(std::string kind, GaussianDist prior, ModelPtr model, const SpdMatrix& noise, const Vector& y) {
    auto counting = std::make_shared<CountingModel>(std::move(model));
    auto lik = std::make_shared<GaussianLikelihood>(counting, y, noise);
    return Problem{std::move(kind), std::move(prior), counting, lik, std::nullopt, std::nullopt, Vector(), {}, {}, std::nullopt};
}

Problem build_linear(const ExperimentConfig& cfg) {
    const Json& p = cfg.problem;
    Rng rng = truth_rng(cfg);
    Matrix f;
    if (!child(p, "F").is_null()) {
        f = mat(child(p, "F"), "problem.F");
        if (!child(p, "n").is_null() || !child(p, "m").is_null())
            throw ValidationError("problem: give either F or n and m, not both");
    } else {
        const long n = integer(p, "n", 6, "problem", 1), m = integer(p, "m", 3, "problem", 1);
        f.resize(m, n);
        for (long i = 0; i < m; ++i) f.row(i) = standard_normal(rng, n).transpose();
    }
    GaussianDist prior = prior_from(cfg.prior, f.cols());
    const SpdMatrix noise = noise_from(p, f.rows(), 0.1, "noise_std");
    const Vector truth = prior.sample_one(rng);
    const Vector y = data_from(p, f.rows(), f * truth, noise, rng);
    Problem prob = finish("linear", std::move(prior), std::make_shared<LinearModel>(f), noise, y);
    prob.linear_map = f;
    prob.truth = truth;
    return prob;
}

Problem build_polynomial(const ExperimentConfig& cfg) {
    const Json& p = cfg.problem;
    const long degree = integer(p, "degree", 1, "problem", 0);
    const double coeff = num(p, "coefficient", 1.0, "problem");
    const double var = num(p, "noise_var", 1.0, "problem");
    if (!(var > 0.0)) throw ValidationError("problem.noise_var must be positive");
    if (child(p, "data").is_null()) throw ValidationError("problem.data is required for the polynomial problem");
    GaussianDist prior = prior_from(cfg.prior, 1);
    const SpdMatrix noise(Matrix::Constant(1, 1, var));
    Rng rng = truth_rng(cfg);
    const Vector y = data_from(p, 1, Vector::Zero(1), noise, rng);
    auto model = std::make_shared<PolynomialModel>(static_cast<int>(degree), coeff);
    Problem prob = finish("polynomial", std::move(prior), model, noise, y);
    if (degree == 1) prob.linear_map = Matrix::Constant(1, 1, coeff);
    return prob;
}

Problem build_elliptic(const ExperimentConfig& cfg) {
    const Json& p = cfg.problem;
    const long nodes = integer(p, "grid_nodes", 101, "problem", 3);
    const double l = num(p, "corr_length", 0.02, "problem");
    const std::string kname = text(p, "kernel", "exponential", "problem", {"exponential", "squared_exponential"});
    const KernelKind kind = kname == "exponential" ? KernelKind::exponential_l1 : KernelKind::squared_exponential;
    const long modes = integer(p, "n_modes", 50, "problem", 1);
    const double noise_fraction = num(p, "noise_fraction", 0.01, "problem");
    if (!(noise_fraction > 0.0)) throw ValidationError("problem.noise_fraction must be positive");
    const double log_std = num(p, "log_std", 0.1, "problem");
    if (!(log_std > 0.0)) throw ValidationError("problem.log_std must be positive");
    Vector sensor_pos = Vector::LinSpaced(7, 0.05, 0.35);
    if (!child(p, "sensors").is_null()) sensor_pos = vec(child(p, "sensors"), "problem.sensors");
    if (sensor_pos.size() == 0) throw ValidationError("problem.sensors: need at least one sensor");
    const Vector grid = uniform_grid(nodes);
    std::vector<Eigen::Index> sensors;
    for (Eigen::Index k = 0; k < sensor_pos.size(); ++k) {
        if (!(sensor_pos(k) >= 0.0 && sensor_pos(k) <= 1.0)) throw ValidationError("problem.sensors: positions must lie in [0, 1]");
        sensors.push_back(static_cast<Eigen::Index>(std::lround(sensor_pos(k) * static_cast<double>(nodes - 1))));
    }
    KlField field = kl_build(grid, l, kind, modes);
    field.eigenvalues *= log_std * log_std;

    // synthetic truth from the untruncated expansion
    Rng rng = truth_rng(cfg);
    KlField full = kl_build(grid, l, kind, nodes);
    full.eigenvalues *= log_std * log_std;
    const Vector truth_field = kl_realize(full, standard_normal(rng, nodes));
    const Vector clean = elliptic1d_forward(truth_field, sensors);
    const double sd = noise_fraction * clean.cwiseAbs().mean();
    const SpdMatrix noise(Matrix((Vector::Constant(clean.size(), sd * sd)).asDiagonal()));
    const Vector y = clean + sd * standard_normal(rng, clean.size());

    auto model = std::make_shared<Elliptic1dModel>(field, sensors);
    Problem prob = finish("elliptic1d", GaussianDist::standard(modes), model, noise, y);
    prob.field = std::move(field);
    prob.sensor_positions = sensor_pos;
    prob.truth = truth_field;
    return prob;
}

Problem build_gomos(const ExperimentConfig& cfg) {
    const Json& p = cfg.problem;
    const long n_alt = integer(p, "n_alt", 10, "problem", 1);
    const long n_gas = integer(p, "n_gas", 4, "problem", 1);
    const long n_lambda = integer(p, "n_lambda", 30, "problem", 1);
    const double sd = num(p, "noise_std", 0.01, "problem");
    if (!(sd > 0.0)) throw ValidationError("problem.noise_std must be positive");
    const double l = num(p, "corr_length_km", 10.0, "problem");
    Vector depths(n_gas);
    if (!child(p, "optical_depths").is_null()) {
        depths = vec(child(p, "optical_depths"), "problem.optical_depths");
        if (depths.size() != n_gas || (depths.array() <= 0.0).any())
            throw ValidationError("problem.optical_depths: need one positive value per gas");
    } else {
        const double defaults[] = {1.0, 0.3, 0.05, 5e-4};
        for (long g = 0; g < n_gas; ++g) depths(g) = defaults[std::min<long>(g, 3)] * std::pow(0.1, std::max<long>(g - 3, 0));
    }
    const auto seed = static_cast<std::uint64_t>(integer(p, "truth_seed", 1, "problem"));
    const double log_std = num(p, "log_std", 0.3, "problem");
    if (!(log_std > 0.0)) throw ValidationError("problem.log_std must be positive");
    GomosSetup setup = gomos_desk_setup(n_alt, n_gas, n_lambda, depths, l, log_std, seed);
    if (!child(p, "path_lengths_csv").is_null()) {
        setup.path_lengths = read_matrix_csv(text(p, "path_lengths_csv", "", "problem"));
        if (setup.path_lengths.rows() != n_alt || setup.path_lengths.cols() != n_alt)
            throw ValidationError("problem.path_lengths_csv: expected an n_alt x n_alt matrix");
    }
    if (!child(p, "cross_sections_csv").is_null()) {
        setup.cross_sections = read_matrix_csv(text(p, "cross_sections_csv", "", "problem"));
        if (setup.cross_sections.rows() != n_lambda || setup.cross_sections.cols() != n_gas)
            throw ValidationError("problem.cross_sections_csv: expected an n_lambda x n_gas matrix");
    }
    auto model = std::make_shared<GomosModel>(setup.path_lengths, setup.cross_sections);
    GaussianDist prior(setup.prior_mean, SpdMatrix(setup.prior_cov));
    Rng rng = truth_rng(cfg);
    const Vector truth = prior.sample_one(rng);
    const SpdMatrix noise = SpdMatrix(Matrix(Vector::Constant(model->n_out(), sd * sd).asDiagonal()));
    const Vector y = model->evaluate(truth) + sd * standard_normal(rng, model->n_out());
    Problem prob = finish("gomos", std::move(prior), model, noise, y);
    for (long g = 0; g < n_gas; ++g) {
        std::vector<Eigen::Index> block;
        for (long j = 0; j < n_alt; ++j) block.push_back(g * n_alt + j);
        prob.blocks.push_back(block);
        prob.block_names.push_back("gas" + std::to_string(g + 1));
    }
    prob.truth = truth;
    return prob;
}

// ---------------------------------------------------------------------------
// option parsing

RankRule rank_rule_from(const Json& j, Eigen::Index n, RankRule def) {
    RankRule r = def;
    r.mode = text(j, "mode", r.mode == RankMode::plateau ? "plateau" : "threshold", "rank_rule") == "plateau" ? RankMode::plateau
                                                                                                              : RankMode::threshold;
    r.threshold = num(j, "threshold", r.threshold, "rank_rule");
    r.r_min = integer(j, "r_min", r.r_min, "rank_rule", 1);
    r.r_max = std::min<Eigen::Index>(integer(j, "r_max", r.r_max, "rank_rule", 1), n);
    r.r_min = std::min(r.r_min, r.r_max);
    r.plateau_variation = num(j, "variation", r.plateau_variation, "rank_rule");
    r.validate(n);
    return r;
}

IterativeCisOptions iterative_from(const ExperimentConfig& cfg, Eigen::Index n) {
    const Json& m = cfg.method;
    IterativeCisOptions o;
    o.n_init = static_cast<int>(integer(m, "n_init", o.n_init, "method", 2));
    o.n_ite = static_cast<int>(integer(m, "n_ite", o.n_ite, "method", 0));
    o.chain_steps = static_cast<int>(integer(m, "chain_steps", o.chain_steps, "method", 1));
    o.burn_in = num(m, "burn_in", o.burn_in, "method");
    o.max_kept = static_cast<int>(integer(m, "max_kept", o.max_kept, "method", 1));
    o.n_perp = static_cast<int>(integer(m, "n_perp", o.n_perp, "method", 1));
    o.schedule.r_max_first = integer(m, "r_max_first", o.schedule.r_max_first, "method", 1);
    o.schedule.growth = integer(m, "growth", o.schedule.growth, "method", 0);
    o.schedule.r_max_cap = integer(m, "r_max_cap", o.schedule.r_max_cap, "method", 1);
    if (!child(m, "stop_angle").is_null()) o.stop_angle = num(m, "stop_angle", 0.0, "method");
    o.patience = static_cast<int>(integer(m, "patience", o.patience, "method", 1));
    const std::string kernel = text(m, "kernel", "adaptive_rwm", "method", {"adaptive_rwm", "rwm", "pcn"});
    o.kernel.kind = kernel == "rwm" ? ProposalKind::rwm : kernel == "pcn" ? ProposalKind::pcn : ProposalKind::adaptive_rwm;
    o.kernel.scale = num(m, "scale", o.kernel.scale, "method");
    RankRule def;
    def.r_max = n;
    o.rule = rank_rule_from(cfg.rank_rule, n, def);
    return o;
}

SmcOptions smc_from(const ExperimentConfig& cfg, Eigen::Index n) {
    const Json& m = cfg.method;
    SmcOptions o;
    o.n_samp = static_cast<int>(integer(m, "n_samp", o.n_samp, "method", 2));
    o.n_moves = static_cast<int>(integer(m, "n_moves", o.n_moves, "method", 0));
    o.n_perp = static_cast<int>(integer(m, "n_perp", o.n_perp, "method", 1));
    o.tau_fraction = num(m, "tau_fraction", o.tau_fraction, "method");
    o.tau_fraction_degenerate = num(m, "tau_fraction_degenerate", o.tau_fraction_degenerate, "method");
    o.clip = num(m, "clip", o.clip, "method");
    o.pcn_step = num(m, "pcn_step", o.pcn_step, "method");
    o.target_acceptance = num(m, "target_acceptance", o.target_acceptance, "method");
    o.max_stages = static_cast<int>(integer(m, "max_stages", o.max_stages, "method", 1));
    RankRule def{RankMode::threshold, 0.6, 1, std::min<Eigen::Index>(40, n)};
    o.rule = rank_rule_from(cfg.rank_rule, n, def);
    return o;
}

std::filesystem::path prepare_out(const ExperimentConfig& cfg, const RunOptions& opt) {
    std::filesystem::path dir = opt.out_dir ? *opt.out_dir : cfg.output_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

std::uint64_t seed_of(const ExperimentConfig& cfg, const RunOptions& opt) { return opt.seed ? *opt.seed : cfg.seed; }

void write_json(const std::filesystem::path& path, const Json& j) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

std::string fmt(double v, int prec = 6) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

std::string check_line(bool ok, const std::string& name, const std::string& detail) {
    return std::string(ok ? "PASS " : "FAIL ") + name + ": " + detail;
}

std::string projector_path(const ExperimentConfig& cfg, const RunOptions& opt, const Json& section) {
    if (opt.projector_path) return *opt.projector_path;
    const std::string p = text(section, "projector", "", "projector");
    if (!p.empty()) return p;
    return (std::filesystem::path(opt.out_dir ? *opt.out_dir : cfg.output_dir) / "projector.cisproj").string();
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig parse_config(const Json& root) {
    check_keys(root, {"schema_version", "problem", "prior", "method", "rank_rule", "sampler", "blg_check", "compare", "diagnose",
                      "seed", "output_dir"},
               "config");
    const Json& sv = child(root, "schema_version");
    if (!sv.is_number_integer()) throw ValidationError("config.schema_version is required (integer)");
    if (sv.get<long>() != kSchemaVersion)
        throw ValidationError("config.schema_version " + std::to_string(sv.get<long>()) + " is not supported (expected " +
                              std::to_string(kSchemaVersion) + ")");
    ExperimentConfig c;
    c.problem = child(root, "problem");
    if (!c.problem.is_object()) throw ValidationError("config.problem is required");
    c.prior = child(root, "prior");
    c.method = child(root, "method");
    c.rank_rule = child(root, "rank_rule");
    c.sampler = child(root, "sampler");
    c.blg_check = child(root, "blg_check");
    c.compare = child(root, "compare");
    c.diagnose = child(root, "diagnose");
    c.seed = static_cast<std::uint64_t>(integer(root, "seed", 0, "config"));
    c.output_dir = text(root, "output_dir", c.output_dir, "config");
    validate_sections(c);
    return c;
}

ExperimentConfig parse_config_text(const std::string& s) {
    Json root;
    try {
        root = Json::parse(s);
    } catch (const Json::parse_error& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(root);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

Problem build_problem(const ExperimentConfig& cfg) {
    const std::string kind = text(cfg.problem, "kind", "", "problem", kProblemKinds);
    if (kind == "linear") return build_linear(cfg);
    if (kind == "polynomial") return build_polynomial(cfg);
    if (kind == "elliptic1d") return build_elliptic(cfg);
    return build_gomos(cfg);
}

BlgInstance random_blg_instance(Rng& rng, Eigen::Index n, Eigen::Index m) {
    if (n < 1 || m < 1) throw ValidationError("random_blg_instance: dimensions must be positive");
    Matrix f(m, n);
    for (Eigen::Index i = 0; i < m; ++i) f.row(i) = standard_normal(rng, n).transpose();
    Matrix g(n, n);
    for (Eigen::Index i = 0; i < n; ++i) g.row(i) = standard_normal(rng, n).transpose();
    const Matrix q = Eigen::HouseholderQR<Matrix>(g).householderQ();
    Vector ev(n);
    for (Eigen::Index i = 0; i < n; ++i) ev(i) = std::exp(3.0 * uniform01(rng) - 1.5);
    const Matrix c = symmetrize(q * ev.asDiagonal() * q.transpose());
    Vector sd(m);
    for (Eigen::Index i = 0; i < m; ++i) sd(i) = 0.1 + 0.9 * uniform01(rng);
    const SpdMatrix noise(Matrix(sd.array().square().matrix().asDiagonal()));
    GaussianDist prior(standard_normal(rng, n), SpdMatrix(c));
    const Vector truth = prior.sample_one(rng);
    const Vector y = f * truth + (sd.array() * standard_normal(rng, m).array()).matrix();
    return BlgInstance{std::move(f), noise, std::move(prior), y};
}

Projector random_projector(Rng& rng, const SpdMatrix& prior_cov, Eigen::Index r) {
    const Eigen::Index n = prior_cov.dim();
    Matrix g(n, n);
    for (Eigen::Index i = 0; i < n; ++i) g.row(i) = standard_normal(rng, n).transpose();
    const Matrix q = Eigen::HouseholderQR<Matrix>(g).householderQ();
    const Matrix u = prior_cov.chol().transpose().triangularView<Eigen::Upper>().solve(q);
    return Projector(u, r, prior_cov);
}

double region_energy_fraction(const KlField& field, const Projector& proj, double s_lo, double s_hi) {
    if (proj.dim() != field.n_modes()) throw ValidationError("region_energy_fraction: projector/field dimension mismatch");
    if (proj.rank() == 0) return 0.0;
    double acc = 0.0;
    for (Eigen::Index k = 0; k < proj.rank(); ++k) {
        const Vector g = kl_realize(field, proj.v_r().col(k));
        double near = 0.0;
        for (Eigen::Index i = 0; i < g.size(); ++i)
            if (field.grid(i) >= s_lo && field.grid(i) <= s_hi) near += g(i) * g(i);
        const double total = g.squaredNorm();
        acc += total > 0.0 ? near / total : 0.0;
    }
    return acc / static_cast<double>(proj.rank());
}

std::pair<double, double> sensed_region(const Vector& sensor_positions, double margin) {
    if (sensor_positions.size() == 0) throw ValidationError("sensed_region: no sensors");
    return {std::max(0.0, sensor_positions.minCoeff() - margin), std::min(1.0, sensor_positions.maxCoeff() + margin)};
}

GomosSetup gomos_desk_setup(Eigen::Index n_alt, Eigen::Index n_gas, Eigen::Index n_lambda, const Vector& optical_depths,
                            double corr_length_km, double log_std, std::uint64_t seed) {
    if (n_alt < 1 || n_gas < 1 || n_lambda < 1) throw ValidationError("gomos setup: dimensions must be positive");
    if (optical_depths.size() != n_gas) throw ValidationError("gomos setup: need one optical depth per gas");
    if (!(corr_length_km > 0.0)) throw ValidationError("gomos setup: correlation length must be positive");
    if (!(log_std > 0.0)) throw ValidationError("gomos setup: log_std must be positive");
    constexpr double kEarthRadius = 6371.0, kLayer = 10.0, kScaleHeight = 20.0, kNugget = 1e-3;
    GomosSetup s;
    s.altitudes = Vector::LinSpaced(n_alt, kLayer, kLayer * static_cast<double>(n_alt));
    s.path_lengths = Matrix::Zero(n_alt, n_alt);
    for (Eigen::Index j = 0; j < n_alt; ++j) {
        const double rt = kEarthRadius + s.altitudes(j);
        for (Eigen::Index i = j; i < n_alt; ++i) {
            const double lo = kEarthRadius + s.altitudes(i), hi = lo + kLayer;
            s.path_lengths(j, i) = 2.0 * (std::sqrt(hi * hi - rt * rt) - std::sqrt(std::max(0.0, lo * lo - rt * rt)));
        }
    }
    const Matrix k = kernel_matrix(s.altitudes, corr_length_km, KernelKind::squared_exponential);
    s.prior_mean.resize(n_alt * n_gas);
    s.prior_cov = Matrix::Zero(n_alt * n_gas, n_alt * n_gas);
    Rng rng = make_stream(seed, 0x676f6d6f73ull);
    s.cross_sections.resize(n_lambda, n_gas);
    for (Eigen::Index g = 0; g < n_gas; ++g) {
        double column = 0.0;
        for (Eigen::Index i = 0; i < n_alt; ++i) {
            const double mu = -(s.altitudes(i) - s.altitudes(0)) / kScaleHeight;
            s.prior_mean(g * n_alt + i) = mu;
            column += s.path_lengths(0, i) * std::exp(mu);
        }
        s.prior_cov.block(g * n_alt, g * n_alt, n_alt, n_alt) =
            log_std * log_std * (k + kNugget * Matrix::Identity(n_alt, n_alt));
        Vector pattern(n_lambda);
        for (Eigen::Index l = 0; l < n_lambda; ++l) pattern(l) = 0.2 + 0.8 * uniform01(rng);
        s.cross_sections.col(g) = optical_depths(g) * pattern / (pattern.mean() * column);
    }
    return s;
}

// ---------------------------------------------------------------------------
// commands

CommandReport cmd_blg_check(const ExperimentConfig& cfg, const RunOptions& opt) {
    set_worker_count(opt.threads);
    if (text(cfg.problem, "kind", "", "problem") != "linear") throw ValidationError("blg-check requires a linear problem");
    const Json& b = cfg.blg_check;
    const long instances = integer(b, "instances", 50, "blg_check", 0);
    const long n_min = integer(b, "n_min", 2, "blg_check", 1), n_max = integer(b, "n_max", 20, "blg_check", 1);
    const long m_min = integer(b, "m_min", 1, "blg_check", 1), m_max = integer(b, "m_max", 10, "blg_check", 1);
    if (n_min > n_max || m_min > m_max) throw ValidationError("blg_check: min dimension exceeds max dimension");
    const long alternatives = integer(b, "alternatives", 100, "blg_check", 0);
    const bool negative = boolean(b, "negative_control", false, "blg_check");
    std::optional<long> fixed_rank;
    if (!child(b, "rank").is_null()) fixed_rank = integer(b, "rank", 1, "blg_check", 1);

    const Problem base = build_problem(cfg);
    std::vector<BlgInstance> suite;
    suite.push_back(BlgInstance{*base.linear_map, base.lik->noise_cov(), base.prior, base.lik->data()});
    Rng rng = make_stream(seed_of(cfg, opt), 0xb16);
    for (long k = 0; k < instances; ++k) {
        const auto n = static_cast<Eigen::Index>(n_min + static_cast<long>(uniform01(rng) * static_cast<double>(n_max - n_min + 1)));
        const auto m = static_cast<Eigen::Index>(m_min + static_cast<long>(uniform01(rng) * static_cast<double>(m_max - m_min + 1)));
        suite.push_back(random_blg_instance(rng, std::min<Eigen::Index>(n, n_max), std::min<Eigen::Index>(m, m_max)));
    }

    double worst_angle = 0.0, worst_orth = 0.0, worst_forstner = 0.0, worst_alt_margin = INFINITY, worst_kld_gap = -INFINITY;
    double forstner_reported = 0.0;
    Json per = Json::array();
    for (std::size_t k = 0; k < suite.size(); ++k) {
        const BlgInstance& inst = suite[k];
        const Eigen::Index n = inst.f.cols(), m = inst.f.rows();
        Eigen::Index r;
        if (fixed_rank) r = std::min<Eigen::Index>(*fixed_rank, n);
        else r = 1 + static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(std::min(m, n)));
        r = std::clamp<Eigen::Index>(r, 1, n);

        const GaussianDist post = blg_posterior(inst.f, inst.noise_cov, inst.prior, inst.y);
        const Matrix h = inst.f.transpose() * inst.noise_cov.solve(inst.f);
        const PencilProjector cis = cis_projector(post.cov().matrix(), inst.prior.cov(), r);
        const PencilProjector lis = spantini_projector(h, inst.prior.cov(), r);

        const Eigen::Index k_cmp = (r == n) ? n : std::min(r, m);
        const double angle = principal_angles(cis.projector.v_r().leftCols(k_cmp), lis.projector.v_r().leftCols(k_cmp)).norm();
        worst_angle = std::max(worst_angle, angle);
        worst_orth = std::max({worst_orth, cis.projector.orthogonality_defect(), lis.projector.orthogonality_defect()});

        const GaussianDist approx = approx_posterior_blg(cis.projector, post, inst.prior);
        const double df = forstner_distance(approx.cov(), post.cov());
        double expected = 0.0;
        for (Eigen::Index i = r; i < n; ++i) expected += std::pow(std::log(cis.pencil.values(i)), 2);
        worst_forstner = std::max(worst_forstner, std::abs(df - expected));
        if (k == 0) forstner_reported = df;

        for (long a = 0; a < alternatives; ++a) {
            const Projector alt = random_projector(rng, inst.prior.cov(), r);
            worst_orth = std::max(worst_orth, alt.orthogonality_defect());
            const double d_alt = forstner_distance(approx_posterior_blg(alt, post, inst.prior).cov(), post.cov());
            worst_alt_margin = std::min(worst_alt_margin, d_alt - df);
        }

        Projector def1_proj = cis.projector;
        if (negative && r < n) {
            const Matrix reversed = cis.pencil.vectors.rowwise().reverse();
            def1_proj = Projector(reversed, r, inst.prior.cov());
        }
        const double kld_def1 =
            gaussian_kld(post, marginal_likelihood_posterior_blg(inst.f, inst.noise_cov, inst.prior, inst.y, def1_proj));
        const double kld_lis =
            gaussian_kld(post, projected_likelihood_posterior_blg(inst.f, inst.noise_cov, inst.prior, inst.y, cis.projector));
        worst_kld_gap = std::max(worst_kld_gap, kld_def1 - kld_lis * (1.0 + 1e-9) - 1e-12);

        per.push_back({{"n", n}, {"m", m}, {"r", r}, {"angle_norm", angle}, {"forstner", df}, {"forstner_expected", expected},
                       {"kld_def1", kld_def1}, {"kld_projected", kld_lis}});
    }
    if (alternatives == 0) worst_alt_margin = 0.0;

    CommandReport rep;
    const bool ok_angle = worst_angle <= 1e-6, ok_orth = worst_orth <= 1e-8, ok_forstner = worst_forstner <= 1e-8;
    const bool ok_alt = worst_alt_margin >= -1e-8, ok_kld = worst_kld_gap <= 0.0;
    rep.lines.push_back(check_line(ok_angle, "projector-equivalence", "max principal-angle norm " + fmt(worst_angle)));
    rep.lines.push_back(check_line(ok_orth, "orthogonality", "max |Pi C (I - Pi^T)| " + fmt(worst_orth)));
    rep.lines.push_back(check_line(ok_forstner, "forstner-identity", "max deviation " + fmt(worst_forstner) +
                                                                         ", configured instance d_F = " + fmt(forstner_reported)));
    rep.lines.push_back(check_line(ok_alt, "forstner-optimality", "min margin over alternatives " + fmt(worst_alt_margin)));
    rep.lines.push_back(check_line(ok_kld, "kld-comparison", "max KLD excess over projected-likelihood approximation " +
                                                                 fmt(worst_kld_gap)));
    rep.passed = ok_angle && ok_orth && ok_forstner && ok_alt && ok_kld;
    rep.summary = {{"command", "blg-check"},
                   {"passed", rep.passed},
                   {"instances", suite.size()},
                   {"negative_control", negative},
                   {"max_angle_norm", worst_angle},
                   {"max_orthogonality_defect", worst_orth},
                   {"max_forstner_deviation", worst_forstner},
                   {"forstner_configured_instance", forstner_reported},
                   {"min_alternative_margin", worst_alt_margin},
                   {"max_kld_excess", worst_kld_gap},
                   {"per_instance", per}};
    write_json(prepare_out(cfg, opt) / "blg_check.json", rep.summary);
    return rep;
}

namespace {

void emit_projector_plots(const Problem& prob, const Projector& proj, const std::filesystem::path& dir) {
    CsvTable ev{{"index", "eigenvalue"}, Matrix(proj.eigenvalues().size(), 2)};
    for (Eigen::Index i = 0; i < proj.eigenvalues().size(); ++i) {
        ev.rows(i, 0) = static_cast<double>(i + 1);
        ev.rows(i, 1) = proj.eigenvalues()(i);
    }
    write_csv(dir / "fig3_eigenvalues.csv", ev);
    if (!prob.blocks.empty() && proj.rank() > 0) {
        const Matrix mc = modal_contribution(proj, prob.blocks);
        CsvTable t{{"block", "mode", "cumulative_contribution"}, Matrix(mc.size(), 3)};
        Eigen::Index row = 0;
        for (Eigen::Index b = 0; b < mc.rows(); ++b)
            for (Eigen::Index k = 0; k < mc.cols(); ++k) {
                t.rows(row, 0) = static_cast<double>(b + 1);
                t.rows(row, 1) = static_cast<double>(k + 1);
                t.rows(row, 2) = mc(b, k);
                ++row;
            }
        write_csv(dir / "fig10_modal_contribution.csv", t);
    }
    if (prob.field && proj.rank() > 0) {
        CsvTable t{{"s"}, Matrix(prob.field->grid.size(), proj.rank() + 1)};
        t.rows.col(0) = prob.field->grid;
        for (Eigen::Index k = 0; k < proj.rank(); ++k) {
            t.header.push_back("mode" + std::to_string(k + 1));
            t.rows.col(k + 1) = kl_realize(*prob.field, proj.v_r().col(k));
        }
        write_csv(dir / "fig4_informed_modes.csv", t);
    }
}

void describe_projector(const Problem& prob, const Projector& proj, Json& summary) {
    summary["n"] = proj.dim();
    summary["rank"] = proj.rank();
    summary["eigenvalues"] = to_json(proj.eigenvalues());
    summary["orthogonality_defect"] = proj.orthogonality_defect();
    if (prob.linear_map && proj.rank() > 0) {
        const GaussianDist post = blg_posterior(*prob.linear_map, prob.lik->noise_cov(), prob.prior, prob.lik->data());
        const PencilProjector exact = cis_projector(post.cov().matrix(), prob.prior.cov(), proj.rank());
        summary["analytic_principal_angles"] = to_json(principal_angles(exact.projector.v_r(), proj.v_r()));
    }
    if (!prob.blocks.empty() && proj.rank() > 0) {
        const Matrix mc = modal_contribution(proj, prob.blocks);
        Json blocks = Json::object();
        for (std::size_t b = 0; b < prob.blocks.size(); ++b)
            blocks[prob.block_names[b]] = to_json(Vector(mc.row(static_cast<Eigen::Index>(b)).transpose()));
        summary["modal_contribution"] = blocks;
        Json dev = Json::object();
        for (std::size_t b = 0; b < prob.blocks.size(); ++b) dev[prob.block_names[b]] = uniform_deviation(mc.row(static_cast<Eigen::Index>(b)));
        summary["modal_uniform_deviation"] = dev;
        summary["modal_contribution_definition"] =
            "cumulative share of the squared euclidean norm of the V_r columns restricted to each block";
    }
    if (prob.field && proj.rank() > 0) {
        const auto [lo, hi] = sensed_region(prob.sensor_positions);
        summary["sensed_region"] = {lo, hi};
        summary["sensed_region_energy_fraction"] = region_energy_fraction(*prob.field, proj, lo, hi);
        summary["sensed_region_uniform_share"] = hi - lo;
    }
}

}  // namespace

CommandReport cmd_reduce(const ExperimentConfig& cfg, const RunOptions& opt) {
    set_worker_count(opt.threads);
    const Problem prob = build_problem(cfg);
    const std::filesystem::path dir = prepare_out(cfg, opt);
    const Eigen::Index n = prob.prior.dim();
    const std::string method = text(cfg.method, "name", "cis", "method");
    Rng rng = make_stream(seed_of(cfg, opt), 0x72656475ull);
    CommandReport rep;
    rep.summary["command"] = "reduce";
    rep.summary["method"] = method;

    if (method == "gis-fd") {
        const long n_samples = integer(cfg.method, "n_samples", 1000, "method", 2);
        const long r = std::min<long>(integer(cfg.method, "rank", 1, "method", 1), n);
        const Matrix xs = prob.prior.sample(rng, n_samples);
        const Vector ll = batch_log_likelihood(*prob.lik, xs);
        WeightedSampleSet set;
        set.append(xs, ll, Vector::Constant(n_samples, log_mean_exp(ll)), 1.0);
        const Vector w = wmc_weights(set);
        Matrix grads(n_samples, n);
        parallel_for(static_cast<std::size_t>(n_samples), [&](std::size_t i) {
            const auto k = static_cast<Eigen::Index>(i);
            grads.row(k) = prob.lik->grad_log_likelihood(xs.row(k).transpose()).transpose();
        });
        const PencilProjector gis = spantini_projector(wmc_fisher(grads, w), prob.prior.cov(), r);
        save_projector(dir / "projector.cisproj", gis.projector);
        describe_projector(prob, gis.projector, rep.summary);
        rep.summary["model_evaluations"] = prob.model->count();
        rep.lines.push_back("gis-fd: r = " + std::to_string(r) + ", " + std::to_string(prob.model->count()) +
                            " model evaluations (likelihoods + finite-difference gradients)");
        if (opt.emit_plot_data) emit_projector_plots(prob, gis.projector, dir);
        write_json(dir / "summary.json", rep.summary);
        return rep;
    }

    std::ofstream records(dir / "records.jsonl");
    if (!records) throw IoError("cannot write records.jsonl");
    auto sink = [&](const IterationRecord& rec) {
        records << record_to_json_line(rec) << '\n';
        records.flush();
        log(LogLevel::info, "iteration " + std::to_string(rec.iteration) + ": r = " + std::to_string(rec.rank) +
                                ", evaluations = " + std::to_string(rec.evaluations));
    };

    std::optional<Projector> proj;
    std::vector<IterationRecord> recs;
    std::uint64_t evals = 0;
    if (method == "cis") {
        const IterativeCisOptions o = iterative_from(cfg, n);
        CisRunResult res = iterative_cis(prob.prior, *prob.lik, o, rng, sink);
        proj = std::move(res.projector);
        recs = std::move(res.records);
        evals = res.evaluations;
        rep.summary["iterations"] = recs.size();
        rep.summary["samples_in_covariance"] = res.archive.size();
    } else {
        const SmcOptions o = smc_from(cfg, n);
        SmcResult res = cis_smc(prob.prior, *prob.lik, o, rng, sink);
        proj = std::move(res.projector);
        recs = std::move(res.records);
        evals = res.evaluations;
        rep.summary["betas"] = res.betas;
        rep.summary["stages"] = res.betas.size() - 1;
        rep.summary["samples_in_covariance"] = res.archive.size();
    }
    save_projector(dir / "projector.cisproj", *proj);
    describe_projector(prob, *proj, rep.summary);
    rep.summary["likelihood_evaluations"] = evals;
    rep.summary["model_evaluations"] = prob.model->count();
    if (recs.size() >= 2) {
        const auto conv = convergence_report(recs);
        rep.summary["stop_flag"] = conv.back().stop;
        if (recs.back().angles.size()) rep.summary["last_max_angle"] = recs.back().angles.maxCoeff();
        if (opt.emit_plot_data) {
            CsvTable t{{"iteration", "rank", "e_sqrt_w", "var_sqrt_w", "e_cond_var_w", "angle_norm", "max_angle", "evaluations", "stop"},
                       Matrix(static_cast<Eigen::Index>(conv.size()), 9)};
            for (std::size_t i = 0; i < conv.size(); ++i) {
                const auto& c = conv[i];
                t.rows.row(static_cast<Eigen::Index>(i)) << c.iteration, static_cast<double>(c.rank), c.e_sqrt_w, c.var_sqrt_w,
                    c.e_cond_var_w, c.angle_norm, c.max_angle, static_cast<double>(c.evaluations), c.stop ? 1.0 : 0.0;
            }
            write_csv(dir / "fig5_convergence.csv", t);
        }
    }
    if (opt.emit_plot_data) emit_projector_plots(prob, *proj, dir);
    write_json(dir / "summary.json", rep.summary);
    rep.lines.push_back(method + ": r = " + std::to_string(proj->rank()) + " of n = " + std::to_string(n) + " after " +
                        std::to_string(recs.size()) + " iterations");
    rep.lines.push_back("likelihood evaluations: " + std::to_string(evals));
    rep.lines.push_back("projector written to " + (dir / "projector.cisproj").string());
    return rep;
}

namespace {

// Log-field values at three locations (near the sensed boundary, mid-domain,
// far end) for prior draws (source 0) and sampler output (source 1).
void emit_field_marginals(const KlField& field, const GaussianDist& prior, const Matrix& xs, Rng& rng,
                          const std::filesystem::path& dir) {
    const double locations[3] = {0.1, 0.5, 0.95};
    const Eigen::Index n_prior = std::min<Eigen::Index>(std::max<Eigen::Index>(xs.rows(), 1), 5000);
    const Matrix prior_xs = prior.sample(rng, n_prior);
    CsvTable t{{"location", "s", "source", "log_field"}, Matrix(3 * (n_prior + xs.rows()), 4)};
    Eigen::Index row = 0;
    for (int l = 0; l < 3; ++l) {
        Eigen::Index node = 0;
        (field.grid.array() - locations[l]).abs().minCoeff(&node);
        const Vector weights = field.modes.row(node).transpose().cwiseProduct(field.eigenvalues.cwiseSqrt());
        auto add = [&](const Matrix& m, double source) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) t.rows.row(row++) << l + 1.0, field.grid(node), source, m.row(i).dot(weights);
        };
        add(prior_xs, 0.0);
        add(xs, 1.0);
    }
    write_csv(dir / "fig6_marginals.csv", t);
}

}  // namespace

CommandReport cmd_sample(const ExperimentConfig& cfg, const RunOptions& opt) {
    set_worker_count(opt.threads);
    const Problem prob = build_problem(cfg);
    const Json& s = cfg.sampler;
    const Projector proj = load_projector(projector_path(cfg, opt, s), prob.prior.cov());
    const std::filesystem::path dir = prepare_out(cfg, opt);
    const std::string mode = text(s, "mode", "delayed", "sampler");
    const long n_steps = integer(s, "n_steps", 10000, "sampler", 1);
    const double burn = num(s, "burn_in", 0.1, "sampler");
    if (!(burn >= 0.0 && burn < 1.0)) throw ValidationError("sampler.burn_in must lie in [0, 1)");
    ProposalKernel kernel;
    kernel.kind = text(s, "kernel", "rwm", "sampler") == "pcn" ? ProposalKind::pcn : ProposalKind::rwm;
    kernel.scale = num(s, "scale", kernel.kind == ProposalKind::pcn ? 0.3 : 0.5, "sampler");
    const long max_lag = integer(s, "max_lag", 50, "sampler", 0);
    Rng rng = make_stream(seed_of(cfg, opt), 0x73616d70ull);

    CommandReport rep;
    rep.summary["command"] = "sample";
    rep.summary["mode"] = mode;
    rep.summary["rank"] = proj.rank();
    Matrix xs;
    const Eigen::Index first = static_cast<Eigen::Index>(burn * static_cast<double>(n_steps));
    if (mode == "delayed") {
        if (proj.rank() == 0) throw ValidationError("sampler: delayed acceptance needs a projector of rank >= 1");
        const DelayedAcceptanceResult da = delayed_acceptance(*prob.lik, prob.prior, proj, kernel, static_cast<int>(n_steps), rng);
        xs = da.x.bottomRows(n_steps - first);
        Json st = {{"count", da.log_ratio.size()},
                   {"stage1_acceptance", da.stage1_acceptance},
                   {"stage2_acceptance", da.stage2_acceptance}};
        if (da.log_ratio.size()) {
            std::vector<double> r(da.log_ratio.data(), da.log_ratio.data() + da.log_ratio.size());
            std::sort(r.begin(), r.end());
            auto q = [&](double p) { return std::exp(r[static_cast<std::size_t>(p * static_cast<double>(r.size() - 1))]); };
            st["ratio_q10"] = q(0.1);
            st["ratio_median"] = q(0.5);
            st["ratio_q90"] = q(0.9);
        }
        rep.summary["stage2_ratio"] = st;
        rep.summary["likelihood_evaluations"] = da.evaluations;
        rep.lines.push_back("delayed acceptance: stage-1 acceptance " + fmt(da.stage1_acceptance, 3) + ", stage-2 acceptance " +
                            fmt(da.stage2_acceptance, 3));
        if (st.contains("ratio_median")) rep.lines.push_back("median stage-2 ratio " + fmt(st["ratio_median"].get<double>(), 4));
    } else {
        const long n_perp = integer(s, "n_perp", 1, "sampler", 1);
        if (proj.rank() == 0) {
            const long count = std::max<long>(1, (n_steps - first) * n_perp);
            xs = assemble_full_posterior(proj, Matrix(count, 0), prob.prior, 1, rng);
        } else {
            const ReducedChain chain = pseudo_marginal_mh(*prob.lik, prob.prior, proj, kernel, static_cast<int>(n_steps), rng);
            xs = assemble_full_posterior(proj, chain.z_r.bottomRows(n_steps - first), prob.prior, static_cast<int>(n_perp), rng);
            rep.summary["acceptance"] = chain.acceptance;
            rep.summary["likelihood_evaluations"] = chain.evaluations;
        }
        rep.lines.push_back("approximate sampling: " + std::to_string(xs.rows()) + " samples");
    }

    CsvTable samples{{}, xs};
    for (Eigen::Index j = 0; j < xs.cols(); ++j) samples.header.push_back("x" + std::to_string(j));
    write_csv(dir / "samples.csv", samples);

    const Vector mean = xs.colwise().mean().transpose();
    const Matrix centered = xs.rowwise() - mean.transpose();
    const Vector var = centered.array().square().colwise().sum().transpose() / std::max<double>(1.0, static_cast<double>(xs.rows() - 1));
    rep.summary["mean"] = to_json(mean);
    rep.summary["variance"] = to_json(var);

    const Eigen::Index dims = std::min<Eigen::Index>(xs.cols(), 5);
    const long lag = std::min<long>(max_lag, static_cast<long>(xs.rows()) - 1);
    if (lag >= 0) {
        CsvTable acf{{"lag"}, Matrix(lag + 1, dims + 1)};
        for (long k = 0; k <= lag; ++k) acf.rows(k, 0) = static_cast<double>(k);
        for (Eigen::Index j = 0; j < dims; ++j) {
            acf.header.push_back("x" + std::to_string(j));
            acf.rows.col(j + 1) = autocorrelation(xs.col(j), static_cast<int>(lag)).acf;
        }
        write_csv(dir / (opt.emit_plot_data ? "fig7_acf.csv" : "acf.csv"), acf);
    }

    if (opt.emit_plot_data && prob.field) emit_field_marginals(*prob.field, prob.prior, xs, rng, dir);

    if (prob.linear_map) {
        const GaussianDist post = blg_posterior(*prob.linear_map, prob.lik->noise_cov(), prob.prior, prob.lik->data());
        const Vector sd = post.cov().matrix().diagonal().array().sqrt();
        const double z = ((mean - post.mean()).array() / sd.array()).abs().maxCoeff();
        rep.summary["analytic_mean"] = to_json(post.mean());
        rep.summary["analytic_variance"] = to_json(Vector(post.cov().matrix().diagonal()));
        rep.summary["max_mean_deviation_in_posterior_sd"] = z;
        rep.lines.push_back("max |mean - analytic| / posterior sd = " + fmt(z, 4));
    }
    write_json(dir / "sample_summary.json", rep.summary);
    return rep;
}

CommandReport cmd_compare(const ExperimentConfig& cfg, const RunOptions& opt) {
    set_worker_count(opt.threads);
    const Problem prob = build_problem(cfg);
    const std::filesystem::path dir = prepare_out(cfg, opt);
    const Json& c = cfg.compare;
    const std::string estimator = text(c, "estimator", "wmc", "compare");
    const long n_samples = integer(c, "n_samples", 1000, "compare", 2);
    const Eigen::Index n = prob.prior.dim();
    Rng rng = make_stream(seed_of(cfg, opt), 0x636f6d70ull);

    Matrix c_hat, h_hat;
    std::uint64_t cis_evals = 0, gis_evals = 0;
    if (estimator == "analytic") {
        if (!prob.linear_map) throw ValidationError("compare: the analytic estimator needs a linear problem");
        c_hat = blg_posterior(*prob.linear_map, prob.lik->noise_cov(), prob.prior, prob.lik->data()).cov().matrix();
        h_hat = prob.linear_map->transpose() * prob.lik->noise_cov().solve(*prob.linear_map);
    } else {
        const Matrix xs = prob.prior.sample(rng, n_samples);
        prob.model->reset();
        const Vector ll = batch_log_likelihood(*prob.lik, xs);
        cis_evals = prob.model->count();
        WeightedSampleSet set;
        set.append(xs, ll, Vector::Constant(n_samples, log_mean_exp(ll)), 1.0);
        const Vector w = wmc_weights(set);
        c_hat = weighted_cov(xs, w);
        prob.model->reset();
        Matrix grads(n_samples, n);
        parallel_for(static_cast<std::size_t>(n_samples), [&](std::size_t i) {
            const auto k = static_cast<Eigen::Index>(i);
            grads.row(k) = prob.lik->grad_log_likelihood(xs.row(k).transpose()).transpose();
        });
        gis_evals = prob.model->count() + cis_evals;
        h_hat = wmc_fisher(grads, w);
    }

    Eigen::Index r;
    PencilProjector cis = [&] {
        if (!child(c, "rank").is_null()) return cis_projector(c_hat, prob.prior.cov(), std::min<Eigen::Index>(integer(c, "rank", 1, "compare", 1), n));
        RankRule def;
        def.r_max = std::min<Eigen::Index>(10, n);
        return cis_projector(c_hat, prob.prior.cov(), rank_rule_from(cfg.rank_rule, n, def));
    }();
    r = cis.projector.rank();
    const PencilProjector gis = spantini_projector(h_hat, prob.prior.cov(), r);
    const Vector angles = principal_angles(cis.projector.v_r(), gis.projector.v_r());

    CommandReport rep;
    rep.summary = {{"command", "compare"},
                   {"estimator", estimator},
                   {"rank", r},
                   {"principal_angles", to_json(angles)},
                   {"angle_norm", angles.norm()},
                   {"cis_eigenvalues", to_json(cis.pencil.values)},
                   {"gis_eigenvalues", to_json(gis.pencil.values)},
                   {"cis_likelihood_evaluations", cis_evals},
                   {"gis_model_evaluations", gis_evals}};
    CsvTable spectra{{"index", "cis_lambda", "gis_delta", "gis_lambda_equivalent"}, Matrix(n, 4)};
    for (Eigen::Index i = 0; i < n; ++i)
        spectra.rows.row(i) << static_cast<double>(i + 1), cis.pencil.values(i), gis.pencil.values(i),
            1.0 / (1.0 + std::max(0.0, gis.pencil.values(i)));
    write_csv(dir / (opt.emit_plot_data ? "fig3_spectra.csv" : "spectra.csv"), spectra);
    write_json(dir / "compare_summary.json", rep.summary);
    rep.lines.push_back("CIS vs GIS (" + estimator + "), r = " + std::to_string(r) + ": principal-angle norm " + fmt(angles.norm()));
    rep.lines.push_back("evaluations: CIS " + std::to_string(cis_evals) + " likelihoods, GIS " + std::to_string(gis_evals) +
                        " model runs (likelihoods + finite differences)");
    return rep;
}

CommandReport cmd_diagnose(const ExperimentConfig& cfg, const RunOptions& opt) {
    set_worker_count(opt.threads);
    const Problem prob = build_problem(cfg);
    const Json& d = cfg.diagnose;
    const Projector proj = load_projector(projector_path(cfg, opt, d), prob.prior.cov());
    if (proj.rank() == 0) throw ValidationError("diagnose: projector has rank 0");
    const std::filesystem::path dir = prepare_out(cfg, opt);
    const long n_reduced = integer(d, "n_reduced", 200, "diagnose", 1);
    const long n_perp = integer(d, "n_perp", 10, "diagnose", 2);
    const long steps = integer(d, "chain_steps", 2000, "diagnose", 1);
    const double burn = num(d, "burn_in", 0.2, "diagnose");
    if (!(burn >= 0.0 && burn < 1.0)) throw ValidationError("diagnose.burn_in must lie in [0, 1)");
    ProposalKernel kernel;
    kernel.kind = ProposalKind::adaptive_rwm;
    kernel.scale = num(d, "scale", 0.5, "diagnose");
    Rng rng = make_stream(seed_of(cfg, opt), 0x64696167ull);

    const ReducedChain chain = pseudo_marginal_mh(*prob.lik, prob.prior, proj, kernel, static_cast<int>(steps), rng);
    const long first = static_cast<long>(burn * static_cast<double>(steps));
    const long avail = steps - first, kept = std::min(n_reduced, avail);
    std::vector<Eigen::Index> idx;
    for (long j = 0; j < kept; ++j) idx.push_back(first + j * avail / kept);
    const Matrix zr = gather_rows(chain.z_r, idx);
    const Matrix xs = assemble_full_posterior(proj, zr, prob.prior, static_cast<int>(n_perp), rng);
    const Vector ll = batch_log_likelihood(*prob.lik, xs);
    const Matrix grid = Eigen::Map<const Matrix>(ll.data(), n_perp, kept).transpose();
    const BoundEstimate b = bound_estimate(grid);

    Vector w(ll.size());
    for (long i = 0; i < kept; ++i) {
        const Vector row = grid.row(i).transpose();
        const double lme = log_mean_exp(row);
        for (long j = 0; j < n_perp; ++j) w(i * n_perp + j) = std::exp(row(j) - lme);
    }
    const WeightStats ws = weight_stats(w);
    const HellingerEstimate he = hellinger_sq_from_weights(w);
    const Autocorrelation acf = autocorrelation(chain.z_r.col(0).tail(steps - first), static_cast<int>(std::min<long>(50, steps - first - 1)));

    CommandReport rep;
    rep.summary = {{"command", "diagnose"},
                   {"rank", proj.rank()},
                   {"bound", {{"e_sqrt_w", b.e_sqrt_w}, {"var_sqrt_w", b.var_sqrt_w}, {"e_cond_var_w", b.e_cond_var_w},
                              {"n_mc", b.n_mc}, {"hellinger_sq_bound", b.hellinger_sq_bound}, {"clipped", b.clipped},
                              {"first_term_se", b.first_term_se}}},
                   {"hellinger_sq", he.value},
                   {"hellinger_unreliable", he.unreliable},
                   {"weights", {{"ess", ws.ess}, {"fraction_above_one", ws.fraction_above_one},
                                {"max_normalized", ws.max_normalized}, {"entropy", ws.entropy}}},
                   {"chain_acceptance", chain.acceptance},
                   {"acf_z1", to_json(acf.acf)}};
    if (!prob.blocks.empty()) describe_projector(prob, proj, rep.summary);
    write_json(dir / "diagnostics.json", rep.summary);
    if (opt.emit_plot_data) {
        std::vector<double> sorted(w.data(), w.data() + w.size());
        std::sort(sorted.begin(), sorted.end());
        CsvTable t{{"rank", "weight"}, Matrix(static_cast<Eigen::Index>(sorted.size()), 2)};
        for (std::size_t i = 0; i < sorted.size(); ++i) t.rows.row(static_cast<Eigen::Index>(i)) << static_cast<double>(i + 1), sorted[i];
        write_csv(dir / "fig2_weights.csv", t);
    }
    rep.lines.push_back("Hellinger^2 bound " + fmt(b.hellinger_sq_bound, 4) + " (E sqrt w = " + fmt(b.e_sqrt_w, 4) +
                        ", Var sqrt w = " + fmt(b.var_sqrt_w, 4) + ", E Var_perp w = " + fmt(b.e_cond_var_w, 4) + ")");
    rep.lines.push_back("weight ESS " + fmt(ws.ess, 5) + " of " + std::to_string(w.size()));
    return rep;
}

}  // namespace cis
