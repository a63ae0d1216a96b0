#pragma once

#include <optional>

#include "cis/linalg.hpp"
#include "cis/projector.hpp"
#include "cis/random.hpp"

namespace cis {

class GaussianDist {
public:
    GaussianDist(Vector mean, SpdMatrix cov);
    GaussianDist(Vector mean, const Matrix& cov) : GaussianDist(std::move(mean), SpdMatrix(cov)) {}

    static GaussianDist standard(Eigen::Index n) { return GaussianDist(Vector::Zero(n), SpdMatrix::identity(n)); }

    Eigen::Index dim() const noexcept { return mean_.size(); }
    const Vector& mean() const noexcept { return mean_; }
    const SpdMatrix& cov() const noexcept { return cov_; }

    double log_pdf(const Vector& x) const;
    /// count x dim matrix, one draw per row.
    Matrix sample(Rng& rng, Eigen::Index count) const;
    Vector sample_one(Rng& rng) const;

private:
    Vector mean_;
    SpdMatrix cov_;
};

/// z_r and (optionally) z_perp for one point of the reduced parametrization.
struct ReducedCoordinates {
    Vector z_r;
    std::optional<Vector> z_perp;

    static ReducedCoordinates from_full(const Projector& proj, const Vector& x);
    Vector to_full(const Projector& proj) const;
};

/// Throws ValidationError unless proj was built against prior's covariance.
void require_matching_prior(const GaussianDist& prior, const Projector& proj);

/// Conditional prior of z_perp given z_r. For a Gaussian prior in the
/// C_pi-orthonormal basis the coordinates are independent with unit
/// variance, so this is N(U_perp^T mu_pi, I) for every z_r.
GaussianDist conditional_perp(const GaussianDist& prior, const Projector& proj, const Vector& z_r);

/// Marginal prior of z_r: N(U_r^T mu_pi, I).
GaussianDist reduced_prior(const GaussianDist& prior, const Projector& proj);

/// Conditional-prior mean of z_perp, the deterministic completion.
Vector perp_prior_mean(const GaussianDist& prior, const Projector& proj);

}  // namespace cis
