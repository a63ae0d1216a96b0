#pragma once

#include <cmath>

#include "cis/linalg.hpp"
#include "cis/random.hpp"

namespace cis::test {

using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using LVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Matrix g(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) g.row(i) = standard_normal(rng, cols).transpose();
    return g;
}

inline Matrix random_spd(Rng& rng, Eigen::Index n, double shift = 0.5) {
    const Matrix g = random_matrix(rng, n, n);
    return g * g.transpose() / static_cast<double>(n) + shift * Matrix::Identity(n, n);
}

inline double mean_of(const Vector& v) { return v.mean(); }

inline double variance_of(const Vector& v) {
    return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
}

/// Sample covariance of the rows.
inline Matrix sample_cov(const Matrix& xs) {
    const Vector mu = xs.colwise().mean().transpose();
    const Matrix c = xs.rowwise() - mu.transpose();
    return c.transpose() * c / static_cast<double>(xs.rows() - 1);
}

}  // namespace cis::test
