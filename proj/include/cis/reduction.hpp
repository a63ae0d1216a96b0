#pragma once

#include <optional>
#include <vector>

#include "cis/gaussian.hpp"
#include "cis/linalg.hpp"
#include "cis/models.hpp"
#include "cis/projector.hpp"
#include "cis/random.hpp"

namespace cis {

/// Full-space samples with the log-likelihoods needed to weight them.
///
/// Samples are grouped in batches (one per iteration or SMC stage). Each batch
/// was generated from an approximate posterior proportional to
/// prior * exp(beta_gen * log_lik_approx); weights are normalized per batch.
struct WeightedSampleSet {
    Matrix samples;          // N x n
    Vector log_lik;          // log L at each sample
    Vector log_lik_approx;   // log L_{Pi_r} of the generating approximation
    Vector beta_gen;         // tempering exponent of the generating approximation
    std::vector<int> batch;  // batch id per sample
    double beta_target = 1.0;

    Eigen::Index size() const noexcept { return samples.rows(); }
    Eigen::Index dim() const noexcept { return samples.cols(); }
    int batch_count() const;

    /// Appends a batch; returns its id.
    int append(const Matrix& xs, const Vector& ll, const Vector& ll_approx, double beta);
    void validate() const;
};

double log_sum_exp(const Vector& v);
double log_mean_exp(const Vector& v);

/// omega_i = exp(beta_target * log_lik_i - beta_gen_i * log_lik_approx_i),
/// rescaled so that each batch has mean weight 1 and then scaled by
/// ESS_b / N_b, so batches count in proportion to their effective size.
/// Throws DegeneracyError if a batch has no positive weight.
Vector wmc_weights(const WeightedSampleSet& set);

/// sum w_i x_i / sum w_i over the rows of xs.
Vector weighted_mean(const Matrix& xs, const Vector& w);
/// Weighted covariance with the factor S / (S^2 - S_2), S = sum w, S_2 = sum w^2.
Matrix weighted_cov(const Matrix& xs, const Vector& w);
/// sum w_i g_i g_i^T / sum w_i.
Matrix wmc_fisher(const Matrix& grads, const Vector& w);

enum class RankMode { plateau, threshold };

struct RankRule {
    RankMode mode = RankMode::plateau;
    double threshold = 0.6;
    Eigen::Index r_min = 1;
    Eigen::Index r_max = 5;
    /// Relative variation that still counts as part of the informed spectrum.
    double plateau_variation = 0.10;

    void validate(Eigen::Index n) const;
};

/// Rank from an ascending pencil spectrum.
///
/// plateau: i* maximizes (l_{i+1} - l_i) / l_i; r is the end of the run of
/// consecutive relative variations > plateau_variation starting at i*.
/// threshold: number of eigenvalues <= threshold. Clamped to [r_min, r_max].
Eigen::Index select_rank(const Vector& ascending, const RankRule& rule);

struct PencilProjector {
    Projector projector;
    PencilEigen pencil;
};

/// Projector onto the eigenvectors of (C_hat, C_prior) with the smallest
/// eigenvalues. C_hat is symmetrized and floored at 1e-12 * lambda_max.
PencilProjector cis_projector(const Matrix& c_hat, const SpdMatrix& prior_cov, const RankRule& rule);
PencilProjector cis_projector(const Matrix& c_hat, const SpdMatrix& prior_cov, Eigen::Index r);

/// Likelihood-informed projector from the pencil (H, C_prior^{-1}), descending.
/// The returned basis is U = C_prior^{-1} W, so V = W.
PencilProjector spantini_projector(const Matrix& h, const SpdMatrix& prior_cov, Eigen::Index r);
/// C_prior - sum_{i<=r} delta_i / (1 + delta_i) w_i w_i^T.
Matrix spantini_cov_approx(const Matrix& h, const SpdMatrix& prior_cov, Eigen::Index r);

/// Exact posterior of y = F x + eps, eps ~ N(0, C_eps), x ~ prior.
GaussianDist blg_posterior(const Matrix& f, const SpdMatrix& noise_cov, const GaussianDist& prior, const Vector& y);

/// Pi mu_P + (I - Pi) mu_prior and Pi C_P Pi^T + (I - Pi) C_prior (I - Pi)^T.
GaussianDist approx_posterior_blg(const Projector& proj, const GaussianDist& posterior, const GaussianDist& prior);

/// Posterior under the marginalized likelihood L_{Pi_r}(z_r), computed by
/// integrating z_perp out of the linear model analytically.
GaussianDist marginal_likelihood_posterior_blg(const Matrix& f, const SpdMatrix& noise_cov, const GaussianDist& prior,
                                               const Vector& y, const Projector& proj);
/// Posterior under the projected likelihood L(Pi x).
GaussianDist projected_likelihood_posterior_blg(const Matrix& f, const SpdMatrix& noise_cov, const GaussianDist& prior,
                                                const Vector& y, const Projector& proj);

enum class ApproxMode { prior_mean, monte_carlo };

/// log L_{Pi_r}(z_r). prior_mean evaluates L once at z_perp = E(z_perp);
/// monte_carlo averages L over n_draws conditional-prior draws of z_perp.
double approx_log_likelihood(const GaussianLikelihood& lik, const GaussianDist& prior, const Projector& proj,
                             const Vector& z_r, ApproxMode mode, int n_draws, Rng& rng);

}  // namespace cis
