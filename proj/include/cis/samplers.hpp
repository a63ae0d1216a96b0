#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "cis/gaussian.hpp"
#include "cis/linalg.hpp"
#include "cis/models.hpp"
#include "cis/projector.hpp"
#include "cis/random.hpp"

namespace cis {

using LogDensity = std::function<double(const Vector&)>;

enum class ProposalKind { rwm, pcn, adaptive_rwm };

/// Proposal for Metropolis-Hastings.
///
/// rwm: x' = x + scale * L xi, L L^T = cov (identity when unset).
/// pcn: x' = m + sqrt(1 - scale^2) (x - m) + scale * L xi, reversible with
///      respect to N(mean, cov); requires scale in (0, 1].
/// adaptive_rwm: rwm whose covariance becomes 2.38^2 / d times the running
///      chain covariance (plus jitter) once adapt_start * n_steps steps passed.
struct ProposalKernel {
    ProposalKind kind = ProposalKind::rwm;
    double scale = 1.0;
    std::optional<Matrix> cov;
    std::optional<Vector> mean;  // pcn reference mean, zero when unset
    double adapt_start = 0.2;
    double jitter = 1e-8;
    /// pcn only: adapt scale towards this acceptance rate during the chain.
    std::optional<double> target_acceptance;
};

struct ChainResult {
    Matrix states;        // n_steps x d, state after each step
    Vector log_density;   // target log density of each stored state
    double acceptance = 0.0;
    double final_scale = 0.0;
    std::uint64_t target_evaluations = 0;
};

/// Metropolis-Hastings chain on an arbitrary log density.
ChainResult mh_chain(const LogDensity& target, const ProposalKernel& kernel, const Vector& init, int n_steps, Rng& rng);

struct ReducedChain {
    Matrix z_r;             // n_steps x r
    Vector log_lik_approx;  // mean-completion log-likelihood at each state
    double acceptance = 0.0;
    std::uint64_t evaluations = 0;
};

/// MH on z_r targeting N(U_r^T mu, I) * L(V_r z_r + V_perp E[z_perp]).
/// Starts at init (or the reduced prior mean).
ReducedChain pseudo_marginal_mh(const GaussianLikelihood& lik, const GaussianDist& prior, const Projector& proj,
                                const ProposalKernel& kernel, int n_steps, Rng& rng,
                                const std::optional<Vector>& init = std::nullopt);

struct DelayedAcceptanceResult {
    Matrix x;             // n_steps x n
    Matrix z_r;           // n_steps x r
    Vector log_ratio;     // log of the second-stage ratio for every stage-1 acceptance
    double stage1_acceptance = 0.0;
    double stage2_acceptance = 0.0;  // among stage-1 acceptances
    std::uint64_t evaluations = 0;
};

/// Two-stage MH with the mean-completion likelihood as the screening stage.
/// Stationary for the exact posterior. The kernel acts on z_r and must not
/// adapt (rwm or pcn).
DelayedAcceptanceResult delayed_acceptance(const GaussianLikelihood& lik, const GaussianDist& prior, const Projector& proj,
                                           const ProposalKernel& kernel, int n_steps, Rng& rng,
                                           const std::optional<Vector>& init = std::nullopt);

/// Effective sample size of exp(log_w).
double ess_from_log(const Vector& log_w);

/// Next tempering exponent: ESS of exp(beta * log_lik - log_lik_approx_tempered)
/// is driven to tau by bisection on (prev_beta, 1]. Returns 1 when ESS(1) >= tau.
/// Without a sign change the grid minimizer of (ESS - tau)^2 is returned, so
/// the result is always > prev_beta.
double update_beta(double prev_beta, const Vector& log_lik, const Vector& log_lik_approx_tempered, double tau);

enum class ResampleScheme { multinomial, systematic };

/// Self-normalizes and caps weights at c / N by water-filling: capped entries
/// sit exactly at c / N and the rest are rescaled to keep the total at 1.
Vector clip_weights(const Vector& w, double c);

/// Indices of N resampled particles.
std::vector<Eigen::Index> resample(const Vector& weights, ResampleScheme scheme, std::optional<double> clip, Rng& rng);

/// Rows of particles at the given indices.
Matrix gather_rows(const Matrix& particles, const std::vector<Eigen::Index>& idx);

/// One pCN step for every row of z (parallel, one stream per particle),
/// reference N(ref_mean, ref_cov). Updates z and log_target in place and
/// returns the number of accepted moves.
int pcn_sweep(Matrix& z, Vector& log_target, const LogDensity& target, const Vector& ref_mean, const SpdMatrix& ref_cov,
              double step, std::uint64_t seed, std::uint64_t sweep);

}  // namespace cis
