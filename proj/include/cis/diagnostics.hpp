#pragma once

#include <vector>

#include "cis/gaussian.hpp"
#include "cis/linalg.hpp"
#include "cis/projector.hpp"

namespace cis {

struct HellingerEstimate {
    double value = 0.0;       // 1 - sqrt(1 - Var(sqrt w))
    double var_sqrt_w = 0.0;  // after clipping to [0, 1]
    double mean_w = 0.0;
    bool clipped = false;     // raw Var(sqrt w) fell outside [0, 1]
    bool unreliable = false;  // |mean(w) - 1| > 0.5
};

/// Squared Hellinger distance from weights w = dP/dQ under Q. With
/// probabilities q the expectations are sums over states; otherwise sample
/// means over the given draws.
HellingerEstimate hellinger_sq_from_weights(const Vector& w);
HellingerEstimate hellinger_sq_from_weights(const Vector& w, const Vector& q);

/// Bound on the expected squared Hellinger distance between the posterior and
/// the approximation built from n_mc conditional completions.
struct BoundEstimate {
    double e_sqrt_w = 0.0;
    double var_sqrt_w = 0.0;
    double e_cond_var_w = 0.0;
    int n_mc = 0;
    double hellinger_sq_bound = 0.0;
    double first_term_se = 0.0;  // standard error of the first term across reduced samples
    bool clipped = false;
};

/// log_lik: n_reduced x n_completions matrix of log L at V_r z_r^(i) +
/// V_perp z_perp^(i,j), z_perp^(i,j) drawn from the conditional prior. The
/// weight of each completion is its likelihood divided by the mean likelihood
/// of its row. n_mc defaults to the number of completions.
BoundEstimate bound_estimate(const Matrix& log_lik, int n_mc = 0);

double ess(const Vector& w);

struct WeightStats {
    double ess = 0.0;
    double fraction_above_one = 0.0;  // of N * normalized weight
    double max_normalized = 0.0;
    double entropy = 0.0;             // of the normalized weights, nats
};
WeightStats weight_stats(const Vector& w);

/// KL(p || q) in closed form.
double gaussian_kld(const GaussianDist& p, const GaussianDist& q);

struct Autocorrelation {
    Vector acf;  // lags 0..max_lag
    bool constant = false;
};
/// Biased ACF estimator.
Autocorrelation autocorrelation(const Vector& chain, int max_lag);

/// Share of the squared euclidean norm of each V_r column that falls in each
/// block of coordinates, cumulated over modes and normalized per block so the
/// last entry of every block is 1. Result: blocks x r.
Matrix modal_contribution(const Projector& proj, const std::vector<std::vector<Eigen::Index>>& blocks);

/// Largest gap between a cumulative contribution row and the uniform ramp
/// (k + 1) / r; 0 for perfectly even contributions.
double uniform_deviation(const Vector& cumulative);

}  // namespace cis
