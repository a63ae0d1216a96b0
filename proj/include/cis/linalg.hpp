#pragma once

#include <optional>

#include <Eigen/Dense>

namespace cis {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Relative tolerance used to accept a matrix as symmetric.
inline constexpr double kSymmetryTolerance = 1e-10;
/// Pencils whose second matrix is worse conditioned than this are rejected.
inline constexpr double kMaxConditionNumber = 1e12;

/// Dense symmetric positive definite matrix with its Cholesky factor.
///
/// The input is validated for symmetry, symmetrized by averaging with its
/// transpose and factorized on construction. Instances are immutable, so the
/// cached factor stays valid and can be shared across threads.
class SpdMatrix {
public:
    explicit SpdMatrix(const Matrix& m);

    static SpdMatrix identity(Eigen::Index n) { return SpdMatrix(Matrix::Identity(n, n)); }

    Eigen::Index dim() const noexcept { return m_.rows(); }
    const Matrix& matrix() const noexcept { return m_; }
    /// Lower-triangular Cholesky factor L with A = L L^T.
    const Matrix& chol() const noexcept { return l_; }

    double log_det() const noexcept { return log_det_; }
    Vector solve(const Vector& b) const;
    Matrix solve(const Matrix& b) const;
    Matrix inverse() const;
    /// Quadratic form v^T A^{-1} v.
    double inv_quad(const Vector& v) const;

private:
    Matrix m_;
    Matrix l_;
    double log_det_ = 0.0;
};

enum class Order { ascending, descending };

/// Generalized eigenpairs of a symmetric pencil (A, B) with B SPD.
struct PencilEigen {
    Vector values;
    Matrix vectors;  // columns, B-orthonormal
    Order order = Order::ascending;
};

/// Orthonormal (euclidean or weighted) set of column vectors.
struct SubspaceBasis {
    Matrix columns;
    std::optional<Matrix> weight;  // inner product matrix when B-orthonormal

    Eigen::Index rank() const noexcept { return columns.cols(); }
    /// max |G - I| for the Gram matrix G under the declared inner product.
    double gram_defect() const;
};

/// max_ij |A_ij - A_ji| relative to max |A_ij|.
double asymmetry(const Matrix& a);
/// Throws ValidationError when the relative asymmetry exceeds kSymmetryTolerance.
void require_symmetric(const Matrix& a, const char* what);
Matrix symmetrize(const Matrix& a);

/// Symmetrizes and floors the spectrum at floor_rel * lambda_max.
Matrix repair_psd(const Matrix& a, double floor_rel = 1e-12);

/// Solves A u = lambda B u by Cholesky whitening of B and a dense symmetric
/// eigensolver. Eigenvectors satisfy U^T B U = I and carry a fixed sign: the
/// first nonzero component of each column is positive.
PencilEigen generalized_eig(const Matrix& a, const SpdMatrix& b, Order order);

/// Sum of squared logs of the generalized eigenvalues of (A, B).
double forstner_distance(const SpdMatrix& a, const SpdMatrix& b);

/// Principal angles between span(U) and span(V), ascending, in [0, pi/2].
/// Bases are orthonormalized internally; min(rank U, rank V) angles are
/// returned.
Vector principal_angles(const Matrix& u, const Matrix& v);

/// Euclidean orthonormal basis of span(A) from a rank-revealing QR.
Matrix orthonormal_basis(const Matrix& a);

/// Flips column signs so the first nonzero entry of each column is positive.
void canonicalize_signs(Matrix& vectors);

}  // namespace cis
