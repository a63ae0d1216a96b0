#include "cis/gaussian.hpp"

#include <cmath>
#include <numbers>

#include "cis/errors.hpp"

namespace cis {

Projector::Projector(const Matrix& basis, Eigen::Index r, const SpdMatrix& prior_cov, Vector eigenvalues)
    : r_(r), u_(basis), prior_cov_(prior_cov), eigenvalues_(std::move(eigenvalues)) {
    const Eigen::Index n = prior_cov.dim();
    if (basis.rows() != n || basis.cols() != n) throw ValidationError("Projector: basis must be n x n with n = prior dimension");
    if (r < 0 || r > n) throw ValidationError("Projector: rank out of range");
    if (!basis.allFinite()) throw ValidationError("Projector: non-finite basis");
    v_ = prior_cov.matrix() * u_;
    pi_ = v_.leftCols(r) * u_.leftCols(r).transpose();
    const double defect = gram_defect();
    if (defect > 1e-6) throw ValidationError("Projector: basis is not C_pi-orthonormal (Gram defect " + std::to_string(defect) + ")");
}

Projector Projector::from_images(const Matrix& v_full, Eigen::Index r, const SpdMatrix& prior_cov, Vector eigenvalues) {
    if (v_full.rows() != prior_cov.dim() || v_full.cols() != prior_cov.dim())
        throw ValidationError("Projector: V has dimensions incompatible with the prior");
    return Projector(prior_cov.solve(v_full), r, prior_cov, std::move(eigenvalues));
}

Vector Projector::reduce_r(const Vector& x) const {
    if (x.size() != dim()) throw ValidationError("Projector::reduce_r: dimension mismatch");
    return u_r().transpose() * x;
}

Vector Projector::reduce_perp(const Vector& x) const {
    if (x.size() != dim()) throw ValidationError("Projector::reduce_perp: dimension mismatch");
    return u_perp().transpose() * x;
}

Vector Projector::reconstruct(const Vector& z_r, const Vector& z_perp) const {
    if (z_r.size() != r_ || z_perp.size() != dim() - r_) throw ValidationError("Projector::reconstruct: dimension mismatch");
    return v_r() * z_r + v_perp() * z_perp;
}

double Projector::orthogonality_defect() const {
    const Eigen::Index n = dim();
    const Matrix m = pi_ * prior_cov_.matrix() * (Matrix::Identity(n, n) - pi_.transpose());
    return m.size() ? m.cwiseAbs().maxCoeff() : 0.0;
}

double Projector::idempotency_defect() const {
    const Matrix m = pi_ * pi_ - pi_;
    return m.size() ? m.cwiseAbs().maxCoeff() : 0.0;
}

double Projector::gram_defect() const {
    const Matrix g = u_.transpose() * v_;
    if (g.size() == 0) return 0.0;
    return (g - Matrix::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();
}

GaussianDist::GaussianDist(Vector mean, SpdMatrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    if (mean_.size() != cov_.dim()) throw ValidationError("GaussianDist: mean/covariance dimension mismatch");
}

double GaussianDist::log_pdf(const Vector& x) const {
    if (x.size() != dim()) throw ValidationError("GaussianDist::log_pdf: dimension mismatch");
    const double n = static_cast<double>(dim());
    return -0.5 * (n * std::log(2.0 * std::numbers::pi) + cov_.log_det() + cov_.inv_quad(x - mean_));
}

Matrix GaussianDist::sample(Rng& rng, Eigen::Index count) const {
    if (count < 1) throw ValidationError("GaussianDist::sample: count must be >= 1");
    Matrix out(count, dim());
    for (Eigen::Index k = 0; k < count; ++k) out.row(k) = sample_one(rng).transpose();
    return out;
}

Vector GaussianDist::sample_one(Rng& rng) const {
    return mean_ + cov_.chol().triangularView<Eigen::Lower>() * standard_normal(rng, dim());
}

ReducedCoordinates ReducedCoordinates::from_full(const Projector& proj, const Vector& x) {
    return {proj.reduce_r(x), proj.reduce_perp(x)};
}

Vector ReducedCoordinates::to_full(const Projector& proj) const {
    if (!z_perp) throw ValidationError("ReducedCoordinates::to_full: z_perp missing");
    return proj.reconstruct(z_r, *z_perp);
}

void require_matching_prior(const GaussianDist& prior, const Projector& proj) {
    if (proj.dim() != prior.dim()) throw ValidationError("projector/prior dimension mismatch");
    const Matrix& a = proj.prior_cov().matrix();
    const Matrix& b = prior.cov().matrix();
    const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
    if (a.size() && (a - b).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw ValidationError("projector was not built against this prior covariance");
}

GaussianDist conditional_perp(const GaussianDist& prior, const Projector& proj, const Vector& z_r) {
    require_matching_prior(prior, proj);
    if (z_r.size() != proj.rank()) throw ValidationError("conditional_perp: z_r has wrong length");
    const Eigen::Index k = proj.dim() - proj.rank();
    return GaussianDist(perp_prior_mean(prior, proj), SpdMatrix::identity(k));
}

GaussianDist reduced_prior(const GaussianDist& prior, const Projector& proj) {
    require_matching_prior(prior, proj);
    return GaussianDist(Vector(proj.u_r().transpose() * prior.mean()), SpdMatrix::identity(proj.rank()));
}

Vector perp_prior_mean(const GaussianDist& prior, const Projector& proj) {
    return proj.u_perp().transpose() * prior.mean();
}

}  // namespace cis
