#include "cis/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cis/errors.hpp"

namespace cis {

namespace {

bool all_finite(const Matrix& a) { return a.allFinite(); }

}  // namespace

double asymmetry(const Matrix& a) {
    if (a.size() == 0) return 0.0;
    const double scale = a.cwiseAbs().maxCoeff();
    if (scale == 0.0) return 0.0;
    return (a - a.transpose()).cwiseAbs().maxCoeff() / scale;
}

void require_symmetric(const Matrix& a, const char* what) {
    if (a.rows() != a.cols()) {
        std::ostringstream os;
        os << what << ": matrix is not square (" << a.rows() << "x" << a.cols() << ")";
        throw ValidationError(os.str());
    }
    if (!all_finite(a)) throw ValidationError(std::string(what) + ": non-finite entries");
    const double asym = asymmetry(a);
    if (asym > kSymmetryTolerance) {
        std::ostringstream os;
        os << what << ": relative asymmetry " << asym << " exceeds " << kSymmetryTolerance;
        throw ValidationError(os.str());
    }
}

Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

Matrix repair_psd(const Matrix& a, double floor_rel) {
    const Matrix s = symmetrize(a);
    Eigen::SelfAdjointEigenSolver<Matrix> es(s);
    if (es.info() != Eigen::Success) throw FactorizationError("repair_psd: eigensolver failed");
    Vector ev = es.eigenvalues();
    const double top = ev.maxCoeff();
    if (!(top > 0.0)) throw FactorizationError("repair_psd: matrix has no positive eigenvalue");
    const double floor = floor_rel * top;
    bool changed = false;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < floor) {
            ev(i) = floor;
            changed = true;
        }
    }
    if (!changed) return s;
    const Matrix& q = es.eigenvectors();
    return symmetrize(q * ev.asDiagonal() * q.transpose());
}

SpdMatrix::SpdMatrix(const Matrix& m) {
    require_symmetric(m, "SpdMatrix");
    m_ = symmetrize(m);
    l_ = Matrix::Zero(m_.rows(), m_.cols());
    if (m_.size() == 0) return;
    Eigen::LLT<Matrix> llt(m_);
    if (llt.info() != Eigen::Success) throw FactorizationError("SpdMatrix: Cholesky factorization failed (matrix not positive definite)");
    l_ = llt.matrixL();
    const Vector d = l_.diagonal();
    if ((d.array() <= 0.0).any() || !d.allFinite())
        throw FactorizationError("SpdMatrix: non-positive Cholesky pivot");
    log_det_ = 2.0 * d.array().log().sum();
}

Vector SpdMatrix::solve(const Vector& b) const {
    if (b.size() != dim()) throw ValidationError("SpdMatrix::solve: dimension mismatch");
    Vector y = l_.triangularView<Eigen::Lower>().solve(b);
    return l_.transpose().triangularView<Eigen::Upper>().solve(y);
}

Matrix SpdMatrix::solve(const Matrix& b) const {
    if (b.rows() != dim()) throw ValidationError("SpdMatrix::solve: dimension mismatch");
    Matrix y = l_.triangularView<Eigen::Lower>().solve(b);
    return l_.transpose().triangularView<Eigen::Upper>().solve(y);
}

Matrix SpdMatrix::inverse() const { return symmetrize(solve(Matrix(Matrix::Identity(dim(), dim())))); }

double SpdMatrix::inv_quad(const Vector& v) const {
    if (v.size() != dim()) throw ValidationError("SpdMatrix::inv_quad: dimension mismatch");
    const Vector y = l_.triangularView<Eigen::Lower>().solve(v);
    return y.squaredNorm();
}

double SubspaceBasis::gram_defect() const {
    if (columns.cols() == 0) return 0.0;
    const Matrix g = weight ? Matrix(columns.transpose() * (*weight) * columns) : Matrix(columns.transpose() * columns);
    return (g - Matrix::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();
}

void canonicalize_signs(Matrix& vectors) {
    for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
        const double scale = vectors.col(j).cwiseAbs().maxCoeff();
        if (scale == 0.0) continue;
        for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
            if (std::abs(vectors(i, j)) > 1e-10 * scale) {
                if (vectors(i, j) < 0.0) vectors.col(j) *= -1.0;
                break;
            }
        }
    }
}

PencilEigen generalized_eig(const Matrix& a, const SpdMatrix& b, Order order) {
    if (a.rows() != b.dim() || a.cols() != b.dim()) throw ValidationError("generalized_eig: dimension mismatch");
    require_symmetric(a, "generalized_eig (A)");

    Eigen::SelfAdjointEigenSolver<Matrix> bspec(b.matrix(), Eigen::EigenvaluesOnly);
    const double bmin = bspec.eigenvalues().minCoeff();
    const double bmax = bspec.eigenvalues().maxCoeff();
    if (!(bmin > 0.0) || bmax / bmin > kMaxConditionNumber) {
        std::ostringstream os;
        os << "generalized_eig: B is near-singular (condition number " << (bmin > 0.0 ? bmax / bmin : INFINITY) << ")";
        throw FactorizationError(os.str());
    }

    // M = L^{-1} A L^{-T}
    const auto lower = b.chol().triangularView<Eigen::Lower>();
    Matrix tmp = lower.solve(symmetrize(a));
    Matrix whitened = lower.solve(tmp.transpose());
    whitened = symmetrize(whitened);

    Eigen::SelfAdjointEigenSolver<Matrix> es(whitened);
    if (es.info() != Eigen::Success) throw FactorizationError("generalized_eig: symmetric eigensolver failed");

    const Eigen::Index n = a.rows();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    const Vector& ev = es.eigenvalues();
    if (order == Order::descending)
        std::stable_sort(idx.begin(), idx.end(), [&](auto i, auto j) { return ev(i) > ev(j); });
    else
        std::stable_sort(idx.begin(), idx.end(), [&](auto i, auto j) { return ev(i) < ev(j); });

    // back-transform: u = L^{-T} y
    const Matrix back = b.chol().transpose().triangularView<Eigen::Upper>().solve(es.eigenvectors());

    PencilEigen out;
    out.order = order;
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        out.values(k) = ev(idx[static_cast<std::size_t>(k)]);
        out.vectors.col(k) = back.col(idx[static_cast<std::size_t>(k)]);
    }
    canonicalize_signs(out.vectors);
    return out;
}

double forstner_distance(const SpdMatrix& a, const SpdMatrix& b) {
    if (a.dim() != b.dim()) throw ValidationError("forstner_distance: dimension mismatch");
    const PencilEigen pe = generalized_eig(a.matrix(), b, Order::ascending);
    if ((pe.values.array() <= 0.0).any()) throw FactorizationError("forstner_distance: non-positive generalized eigenvalue");
    return pe.values.array().log().square().sum();
}

Matrix orthonormal_basis(const Matrix& a) {
    if (a.cols() == 0 || a.rows() == 0) return Matrix(a.rows(), 0);
    Eigen::ColPivHouseholderQR<Matrix> qr(a);
    qr.setThreshold(1e-12);
    const Eigen::Index rank = qr.rank();
    Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), rank);
    return q;
}

Vector principal_angles(const Matrix& u, const Matrix& v) {
    if (u.rows() != v.rows()) throw ValidationError("principal_angles: ambient dimension mismatch");
    Matrix qa = orthonormal_basis(u);
    Matrix qb = orthonormal_basis(v);
    if (qa.cols() == 0 || qb.cols() == 0) throw ValidationError("principal_angles: zero-rank subspace");
    if (qa.cols() > qb.cols()) std::swap(qa, qb);
    const Eigen::Index p = qa.cols();

    const Matrix m = qa.transpose() * qb;
    Eigen::JacobiSVD<Matrix> cos_svd(m);
    const Vector cosines = cos_svd.singularValues();  // descending

    // sines from the component of span(qa) orthogonal to span(qb), accurate for small angles
    const Matrix resid = qa - qb * (qb.transpose() * qa);
    Eigen::JacobiSVD<Matrix> sin_svd(resid);
    Vector sines = sin_svd.singularValues();  // descending
    std::sort(sines.data(), sines.data() + sines.size());

    Vector angles(p);
    for (Eigen::Index i = 0; i < p; ++i) {
        const double c = std::clamp(i < cosines.size() ? cosines(i) : 0.0, -1.0, 1.0);
        if (c * c > 0.5 && i < sines.size())
            angles(i) = std::asin(std::clamp(sines(i), 0.0, 1.0));
        else
            angles(i) = std::acos(c);
    }
    std::sort(angles.data(), angles.data() + angles.size());
    return angles;
}

}  // namespace cis
