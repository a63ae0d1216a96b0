#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "cis/diagnostics.hpp"
#include "cis/gaussian.hpp"
#include "cis/models.hpp"
#include "cis/reduction.hpp"
#include "cis/samplers.hpp"

namespace cis {

/// One iteration (iterative CIS) or stage (SMC) of a subspace construction.
struct IterationRecord {
    int iteration = 0;
    double beta = 1.0;
    Vector eigenvalues;           // ascending pencil spectrum
    Eigen::Index rank = 0;
    Eigen::Index r_max = 0;
    Vector angles;                // principal angles to the previous V_r (empty on the first)
    std::optional<BoundEstimate> bound;
    double ess = 0.0;             // of the weights used for the covariance estimate
    Eigen::Index samples_used = 0;
    double acceptance = 0.0;
    std::uint64_t evaluations = 0;  // cumulative likelihood evaluations
    Matrix v_r;
};

using RecordSink = std::function<void(const IterationRecord&)>;

/// Rank bounds over iterations: r_max_first at the first iteration, then
/// min(r + growth, r_max_cap).
struct RankSchedule {
    Eigen::Index r_max_first = 5;
    Eigen::Index growth = 2;
    Eigen::Index r_max_cap = 10;
};

struct IterativeCisOptions {
    int n_init = 100;
    int n_ite = 40;
    RankRule rule;
    RankSchedule schedule;
    int chain_steps = 200;
    double burn_in = 0.2;
    int max_kept = 80;
    int n_perp = 3;
    /// Without an explicit covariance the rwm step is scale / sqrt(r).
    ProposalKernel kernel = [] {
        ProposalKernel k;
        k.kind = ProposalKind::adaptive_rwm;
        k.scale = 1.0;
        return k;
    }();
    /// Stop early once every principal angle to the previous subspace stays
    /// below this value (with unchanged rank) for `patience` iterations.
    std::optional<double> stop_angle;
    int patience = 3;
};

struct CisRunResult {
    Projector projector;
    PencilEigen pencil;
    std::vector<IterationRecord> records;
    WeightedSampleSet archive;
    std::uint64_t evaluations = 0;
};

/// Iterative construction: prior samples, then repeated WMC covariance
/// estimation from the whole archive, pencil solve, reduced sampling with the
/// mean-completion likelihood, and conditional-prior completion.
/// Throws DegeneracyError when the prior-sample weights have ESS < 2.
CisRunResult iterative_cis(const GaussianDist& prior, const GaussianLikelihood& lik, const IterativeCisOptions& opt, Rng& rng,
                           const RecordSink& sink = {});

struct SmcOptions {
    int n_samp = 50;
    int n_moves = 10;
    int n_perp = 100;
    RankRule rule{RankMode::threshold, 0.6, 1, 40};
    double tau_fraction = 0.5;
    double tau_fraction_degenerate = 0.25;
    double degenerate_max_weight = 0.5;
    double clip = 10.0;
    double pcn_step = 0.5;
    double target_acceptance = 0.25;
    int max_stages = 100;
};

struct SmcResult {
    Projector projector;
    PencilEigen pencil;
    std::vector<IterationRecord> records;
    std::vector<double> betas;  // beta^(0) = 0, ..., 1
    WeightedSampleSet archive;
    std::uint64_t evaluations = 0;
};

/// Tempered construction. Each stage reweights all archived samples to the
/// current exponent, re-solves the pencil, resamples, moves particles with pCN
/// in the reduced space and completes them from the conditional prior. A last
/// pencil solve at beta = 1 produces the returned projector.
/// Throws NonConvergenceError after max_stages stages.
SmcResult cis_smc(const GaussianDist& prior, const GaussianLikelihood& lik, const SmcOptions& opt, Rng& rng,
                  const RecordSink& sink = {});

/// x^(i,j) = V_r z_r^(i) + V_perp z_perp^(j) for all pairs, z_perp drawn from
/// the conditional prior, or fixed at its mean when deterministic (then
/// n_perp_per must be 1). Rows ordered by i, then j.
Matrix assemble_full_posterior(const Projector& proj, const Matrix& z_r, const GaussianDist& prior, int n_perp_per, Rng& rng,
                               bool deterministic = false);

struct ConvergenceThresholds {
    double max_variance = 0.25;
    double min_expectation = 0.85;
};

struct ConvergenceRow {
    int iteration = 0;
    Eigen::Index rank = 0;
    double e_sqrt_w = 0.0;
    double var_sqrt_w = 0.0;
    double e_cond_var_w = 0.0;
    double angle_norm = 0.0;
    double max_angle = 0.0;
    std::uint64_t evaluations = 0;
    bool stop = false;
};

/// Per-iteration bound terms and angles with an advisory stop flag: both
/// variance terms below max_variance and E(sqrt w) above min_expectation.
std::vector<ConvergenceRow> convergence_report(const std::vector<IterationRecord>& records,
                                               const ConvergenceThresholds& thresholds = {});

}  // namespace cis
