#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cis/gaussian.hpp"
#include "cis/models.hpp"
#include "cis/pipelines.hpp"
#include "cis/reduction.hpp"

namespace cis {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Parsed and validated experiment configuration. Unknown keys anywhere in
/// the tree are rejected with a ValidationError naming the offending path.
struct ExperimentConfig {
    Json problem;
    Json prior;     // null when absent
    Json method;    // null when absent
    Json rank_rule;
    Json sampler;
    Json blg_check;
    Json compare;
    Json diagnose;
    std::uint64_t seed = 0;
    std::string output_dir = "cis-out";
};

ExperimentConfig parse_config(const Json& root);
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& text);

/// A fully built inverse problem: prior, forward model (wrapped for
/// evaluation counting), likelihood and whatever structure the reports need.
struct Problem {
    std::string kind;
    GaussianDist prior;
    std::shared_ptr<CountingModel> model;
    std::shared_ptr<GaussianLikelihood> lik;
    std::optional<Matrix> linear_map;  // linear problems: F
    std::optional<KlField> field;      // elliptic problems
    Vector sensor_positions;           // elliptic problems
    std::vector<std::vector<Eigen::Index>> blocks;
    std::vector<std::string> block_names;
    std::optional<Vector> truth;
};

Problem build_problem(const ExperimentConfig& cfg);

struct BlgInstance {
    Matrix f;
    SpdMatrix noise_cov;
    GaussianDist prior;
    Vector y;
};

/// Random linear-Gaussian instance: F with N(0, 1) entries, a random SPD
/// prior covariance, diagonal noise and data drawn from the model.
BlgInstance random_blg_instance(Rng& rng, Eigen::Index n, Eigen::Index m);

/// Random rank-r projector whose basis is C_pi-orthonormal.
Projector random_projector(Rng& rng, const SpdMatrix& prior_cov, Eigen::Index r);

/// Fraction of the energy of each informed mode, mapped to the physical grid,
/// that lies in [s_lo, s_hi]; averaged over the modes of V_r.
double region_energy_fraction(const KlField& field, const Projector& proj, double s_lo, double s_hi);

/// Grid interval spanned by the sensors, widened by `margin` on both sides
/// and clipped to [0, 1].
std::pair<double, double> sensed_region(const Vector& sensor_positions, double margin = 0.05);

/// Desk-scale Beer's-law instance: spherical-shell path lengths for tangent
/// altitudes 10..(10 n_alt) km and positive random cross sections scaled to
/// the requested optical depths at the lowest tangent altitude.
struct GomosSetup {
    Matrix path_lengths;
    Matrix cross_sections;
    Vector altitudes;
    Vector prior_mean;
    Matrix prior_cov;
};
GomosSetup gomos_desk_setup(Eigen::Index n_alt, Eigen::Index n_gas, Eigen::Index n_lambda, const Vector& optical_depths,
                            double corr_length_km, double log_std, std::uint64_t seed);

struct RunOptions {
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    std::optional<std::string> out_dir;
    bool emit_plot_data = false;
    std::optional<std::string> projector_path;
};

struct CommandReport {
    bool passed = true;
    std::vector<std::string> lines;  // human-readable, printed by the CLI
    Json summary = Json::object();
};

CommandReport cmd_blg_check(const ExperimentConfig& cfg, const RunOptions& opt);
CommandReport cmd_reduce(const ExperimentConfig& cfg, const RunOptions& opt);
CommandReport cmd_sample(const ExperimentConfig& cfg, const RunOptions& opt);
CommandReport cmd_compare(const ExperimentConfig& cfg, const RunOptions& opt);
CommandReport cmd_diagnose(const ExperimentConfig& cfg, const RunOptions& opt);

}  // namespace cis
