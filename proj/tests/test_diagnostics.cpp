#include <cmath>

#include "cis/diagnostics.hpp"
#include "cis/errors.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cis;
using namespace cis::test;

TEST_CASE("Hellinger distance from importance weights") {
    SUBCASE("two-point hand case") {
        Vector w(2), q(2);
        w << 2.0, 0.0;
        q << 0.5, 0.5;
        const HellingerEstimate h = hellinger_sq_from_weights(w, q);
        CHECK(h.var_sqrt_w == doctest::Approx(0.5));
        CHECK(h.value == doctest::Approx(1.0 - std::sqrt(0.5)));
        CHECK_FALSE(h.clipped);
        CHECK(hellinger_sq_from_weights(w).value == doctest::Approx(1.0 - std::sqrt(0.5)));
    }
    SUBCASE("discrete distributions against the Bhattacharyya form") {
        Rng rng = make_stream(200, 0);
        Vector p(6), q(6);
        for (Eigen::Index i = 0; i < 6; ++i) {
            p(i) = uniform01(rng) + 0.05;
            q(i) = uniform01(rng) + 0.05;
        }
        p /= p.sum();
        q /= q.sum();
        const Vector w = p.cwiseQuotient(q);
        const double oracle = 1.0 - p.cwiseProduct(q).cwiseSqrt().sum();
        CHECK(hellinger_sq_from_weights(w, q).value == doctest::Approx(oracle).epsilon(1e-12));
    }
    SUBCASE("identical distributions") {
        const HellingerEstimate h = hellinger_sq_from_weights(Vector::Ones(5));
        CHECK(h.value == doctest::Approx(0.0));
        CHECK_FALSE(h.unreliable);
    }
    SUBCASE("flags") {
        Vector w(2);
        w << 9.0, 0.0;
        const HellingerEstimate h = hellinger_sq_from_weights(w);
        CHECK(h.unreliable);
        CHECK(h.clipped);
        CHECK(h.value == doctest::Approx(1.0));
        CHECK_THROWS_AS(hellinger_sq_from_weights(-Vector::Ones(2)), ValidationError);
        CHECK_THROWS_AS(hellinger_sq_from_weights(Vector::Ones(2), Vector::Ones(2)), ValidationError);
    }
}

TEST_CASE("Hellinger bound estimate") {
    SUBCASE("uninformed complement gives a zero bound") {
        const BoundEstimate b = bound_estimate(Matrix::Constant(5, 4, -3.0));
        CHECK(b.hellinger_sq_bound == doctest::Approx(0.0));
        CHECK(b.e_cond_var_w == doctest::Approx(0.0));
        CHECK(b.n_mc == 4);
    }
    SUBCASE("single row hand case") {
        Matrix ll(1, 2);
        ll << std::log(3.0), 0.0;
        const BoundEstimate b = bound_estimate(ll, 10);
        // row weights (1.5, 0.5)
        const double e_sqrt = 0.5 * (std::sqrt(1.5) + std::sqrt(0.5));
        const double var_sqrt = 1.0 - e_sqrt * e_sqrt;
        CHECK(b.e_sqrt_w == doctest::Approx(e_sqrt));
        CHECK(b.var_sqrt_w == doctest::Approx(var_sqrt));
        CHECK(b.e_cond_var_w == doctest::Approx(0.5));
        CHECK(b.hellinger_sq_bound == doctest::Approx(1.0 - std::sqrt(1.0 - var_sqrt) + 2.0 / 10.0 * 0.5));
    }
    SUBCASE("row shift invariance") {
        Rng rng = make_stream(201, 0);
        const Matrix ll = random_matrix(rng, 6, 5);
        Matrix shifted = ll;
        shifted.row(2).array() += 700.0;
        CHECK(bound_estimate(ll).hellinger_sq_bound == doctest::Approx(bound_estimate(shifted).hellinger_sq_bound));
        CHECK(bound_estimate(ll).first_term_se > 0.0);
    }
    SUBCASE("validation") {
        CHECK_THROWS_AS(bound_estimate(Matrix::Zero(3, 1)), ValidationError);
        Matrix bad = Matrix::Zero(2, 2);
        bad.row(0).setConstant(-std::numeric_limits<double>::infinity());
        CHECK_THROWS_AS(bound_estimate(bad), DegeneracyError);
    }
}

TEST_CASE("effective sample size and weight statistics") {
    Vector w(7);
    w << 4.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0;
    CHECK(ess(w) == doctest::Approx(100.0 / 22.0));
    CHECK(ess(1e-300 * w) == doctest::Approx(100.0 / 22.0));
    CHECK(ess(Vector::Ones(9)) == doctest::Approx(9.0));
    const WeightStats st = weight_stats(w);
    CHECK(st.max_normalized == doctest::Approx(0.4));
    CHECK(st.fraction_above_one == doctest::Approx(1.0 / 7.0));
    CHECK(st.entropy == doctest::Approx(-0.4 * std::log(0.4) - 0.6 * std::log(0.1)));
    CHECK_THROWS_AS(ess(Vector::Zero(3)), DegeneracyError);
    CHECK_THROWS_AS(ess(Vector()), ValidationError);
}

TEST_CASE("Gaussian Kullback-Leibler divergence") {
    CHECK(gaussian_kld(GaussianDist::standard(1), GaussianDist(Vector::Ones(1), SpdMatrix::identity(1))) == doctest::Approx(0.5));
    Rng rng = make_stream(210, 0);
    const GaussianDist p(standard_normal(rng, 4), random_spd(rng, 4));
    const GaussianDist q(standard_normal(rng, 4), random_spd(rng, 4));
    CHECK(gaussian_kld(p, p) == doctest::Approx(0.0));

    const LMatrix cp = p.cov().matrix().cast<long double>();
    const LMatrix cq = q.cov().matrix().cast<long double>();
    const LVector d = (q.mean() - p.mean()).cast<long double>();
    const LMatrix cqi = cq.inverse();
    const long double oracle =
        0.5L * ((cqi * cp).trace() + d.dot(cqi * d) - 4.0L + std::log(cq.determinant()) - std::log(cp.determinant()));
    CHECK(gaussian_kld(p, q) == doctest::Approx(static_cast<double>(oracle)).epsilon(1e-12));
    CHECK(gaussian_kld(p, q) != doctest::Approx(gaussian_kld(q, p)));
    CHECK_THROWS_AS(gaussian_kld(p, GaussianDist::standard(3)), ValidationError);
}

TEST_CASE("autocorrelation") {
    SUBCASE("AR(1) process") {
        Rng rng = make_stream(220, 0);
        const Eigen::Index n = 200000;
        const double rho = 0.9;
        Vector x(n);
        std::normal_distribution<double> nd;
        x(0) = nd(rng) / std::sqrt(1.0 - rho * rho);
        for (Eigen::Index i = 1; i < n; ++i) x(i) = rho * x(i - 1) + nd(rng);
        const Autocorrelation a = autocorrelation(x, 10);
        CHECK(a.acf(0) == 1.0);
        for (int k = 1; k <= 10; ++k) CHECK(std::abs(a.acf(k) - std::pow(rho, k)) < 0.03);
        CHECK_FALSE(a.constant);
    }
    SUBCASE("constant chain") {
        const Autocorrelation a = autocorrelation(Vector::Constant(20, 2.0), 5);
        CHECK(a.constant);
        CHECK(a.acf(0) == 1.0);
        CHECK(a.acf(3) == 0.0);
    }
    SUBCASE("too short") { CHECK_THROWS_AS(autocorrelation(Vector::Ones(3), 3), ValidationError); }
}

TEST_CASE("modal contribution per block") {
    Matrix h(4, 4);
    h << 1, 1, 1, 1, 1, -1, 1, -1, 1, 1, -1, -1, 1, -1, -1, 1;
    h /= 2.0;
    const Projector even(h, 2, SpdMatrix::identity(4));
    const Matrix c = modal_contribution(even, {{0, 1}, {2, 3}});
    CHECK((c.col(0).array() - 0.5).abs().maxCoeff() < 1e-12);
    CHECK((c.col(1).array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(uniform_deviation(c.row(0).transpose()) < 1e-12);

    const Projector axis(Matrix::Identity(4, 4), 2, SpdMatrix::identity(4));
    const Matrix a = modal_contribution(axis, {{0, 2}, {1, 3}});
    CHECK(a(0, 0) == doctest::Approx(1.0));
    CHECK(a(1, 0) == doctest::Approx(0.0));
    CHECK(a(1, 1) == doctest::Approx(1.0));
    CHECK(uniform_deviation(a.row(0).transpose()) == doctest::Approx(0.5));
    CHECK_THROWS_AS(modal_contribution(axis, {{7}}), ValidationError);
    CHECK_THROWS_AS(uniform_deviation(Vector()), ValidationError);
}
