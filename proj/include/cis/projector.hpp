#pragma once

#include "cis/linalg.hpp"

namespace cis {

/// Rank-r oblique projector Pi_r = C_pi U_r U_r^T built from a complete
/// C_pi-orthonormal basis U = [U_r, U_perp].
///
/// Reduced coordinates are z = U^T x; a point is rebuilt as
/// x = V_r z_r + V_perp z_perp with V = C_pi U.
class Projector {
public:
    /// basis: n x n matrix whose first r columns span the informed directions.
    Projector(const Matrix& basis, Eigen::Index r, const SpdMatrix& prior_cov, Vector eigenvalues = {});

    /// Rebuilds a projector from V = [V_r, V_perp] (as stored in bundles).
    static Projector from_images(const Matrix& v_full, Eigen::Index r, const SpdMatrix& prior_cov, Vector eigenvalues = {});

    Eigen::Index rank() const noexcept { return r_; }
    Eigen::Index dim() const noexcept { return u_.rows(); }

    auto u_r() const { return u_.leftCols(r_); }
    auto u_perp() const { return u_.rightCols(dim() - r_); }
    auto v_r() const { return v_.leftCols(r_); }
    auto v_perp() const { return v_.rightCols(dim() - r_); }
    const Matrix& basis() const noexcept { return u_; }
    const Matrix& images() const noexcept { return v_; }
    const Matrix& pi() const noexcept { return pi_; }
    const SpdMatrix& prior_cov() const noexcept { return prior_cov_; }
    /// Pencil eigenvalues the projector was selected from (may be empty).
    const Vector& eigenvalues() const noexcept { return eigenvalues_; }

    Vector reduce_r(const Vector& x) const;
    Vector reduce_perp(const Vector& x) const;
    Vector reconstruct(const Vector& z_r, const Vector& z_perp) const;

    /// max |Pi C_pi (I - Pi^T)|, zero for a C_pi-orthogonal split.
    double orthogonality_defect() const;
    /// max |Pi^2 - Pi|.
    double idempotency_defect() const;
    /// max |U^T C_pi U - I|.
    double gram_defect() const;

private:
    Eigen::Index r_;
    Matrix u_;
    Matrix v_;
    Matrix pi_;
    SpdMatrix prior_cov_;
    Vector eigenvalues_;
};

}  // namespace cis
