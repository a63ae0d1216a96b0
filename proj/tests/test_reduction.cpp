#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "cis/diagnostics.hpp"
#include "cis/errors.hpp"
#include "cis/reduction.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cis;
using namespace cis::test;

namespace {

struct Blg {
    Matrix f;
    SpdMatrix noise;
    GaussianDist prior;
    Vector y;
};

Blg random_blg(Rng& rng, Eigen::Index m, Eigen::Index n, double noise_var = 0.1) {
    Matrix f = random_matrix(rng, m, n);
    const GaussianDist prior(standard_normal(rng, n), random_spd(rng, n));
    const Vector y = f * prior.sample_one(rng) + std::sqrt(noise_var) * standard_normal(rng, m);
    return {std::move(f), SpdMatrix(noise_var * Matrix::Identity(m, m)), prior, y};
}

Projector identity_split(Eigen::Index n, Eigen::Index r) {
    return Projector(Matrix::Identity(n, n), r, SpdMatrix::identity(n));
}

}  // namespace

TEST_CASE("log-sum-exp is stable") {
    Vector v(3);
    v << 1000.0, 1000.0, 1000.0;
    CHECK(log_sum_exp(v) == doctest::Approx(1000.0 + std::log(3.0)));
    CHECK(log_mean_exp(v) == doctest::Approx(1000.0));
    v << -std::numeric_limits<double>::infinity(), 0.0, -std::numeric_limits<double>::infinity();
    CHECK(log_sum_exp(v) == doctest::Approx(0.0));
    CHECK(std::isinf(log_sum_exp(Vector())));
}

TEST_CASE("weighted mean and covariance") {
    SUBCASE("two-point hand case") {
        Matrix xs(2, 1);
        xs << 0.0, 2.0;
        const Vector w = Vector::Ones(2);
        CHECK(weighted_mean(xs, w)(0) == doctest::Approx(1.0));
        CHECK(weighted_cov(xs, w)(0, 0) == doctest::Approx(2.0));
    }
    SUBCASE("equal weights reproduce the unbiased sample covariance") {
        Rng rng = make_stream(10, 0);
        const Matrix xs = random_matrix(rng, 50, 4);
        const Vector w = Vector::Constant(50, 0.3);
        CHECK((weighted_cov(xs, w) - sample_cov(xs)).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("random weights against an extended-precision formula") {
        Rng rng = make_stream(11, 0);
        const Matrix xs = random_matrix(rng, 40, 3);
        Vector w(40);
        for (Eigen::Index i = 0; i < 40; ++i) w(i) = 0.1 + uniform01(rng);
        const LMatrix xl = xs.cast<long double>();
        const LVector wl = w.cast<long double>();
        const long double s = wl.sum(), s2 = wl.squaredNorm();
        const LVector mu = xl.transpose() * wl / s;
        LMatrix c = LMatrix::Zero(3, 3);
        for (Eigen::Index i = 0; i < 40; ++i) {
            const LVector d = xl.row(i).transpose() - mu;
            c += wl(i) * d * d.transpose();
        }
        c *= s / (s * s - s2);
        CHECK((weighted_mean(xs, w) - mu.cast<double>()).cwiseAbs().maxCoeff() < 1e-14);
        CHECK((weighted_cov(xs, w) - c.cast<double>()).cwiseAbs().maxCoeff() < 1e-13);
    }
    SUBCASE("scale invariance in the weights") {
        Rng rng = make_stream(12, 0);
        const Matrix xs = random_matrix(rng, 20, 2);
        Vector w(20);
        for (Eigen::Index i = 0; i < 20; ++i) w(i) = uniform01(rng);
        CHECK((weighted_cov(xs, w) - weighted_cov(xs, 7.5 * w)).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("invalid weights") {
        Matrix xs(2, 1);
        xs << 0.0, 1.0;
        CHECK_THROWS_AS(weighted_mean(xs, Vector::Ones(3)), ValidationError);
        Vector neg(2);
        neg << 1.0, -1.0;
        CHECK_THROWS_AS(weighted_cov(xs, neg), ValidationError);
        CHECK_THROWS_AS(weighted_mean(xs, Vector::Zero(2)), DegeneracyError);
        Vector one(2);
        one << 1.0, 0.0;
        CHECK_THROWS_AS(weighted_cov(xs, one), DegeneracyError);
    }
}

TEST_CASE("wmc_fisher averages outer products") {
    Matrix g(2, 2);
    g << 1.0, 0.0, 0.0, 2.0;
    Vector w(2);
    w << 1.0, 3.0;
    const Matrix fim = wmc_fisher(g, w);
    CHECK(fim(0, 0) == doctest::Approx(0.25));
    CHECK(fim(1, 1) == doctest::Approx(3.0));
    CHECK(fim(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("importance weights of the pooled sample") {
    SUBCASE("exact approximation gives unit weights") {
        WeightedSampleSet set;
        Vector ll(4);
        ll << -1.0, -2.0, -3.0, -4.0;
        set.append(Matrix::Zero(4, 2), ll, ll, 1.0);
        const Vector w = wmc_weights(set);
        CHECK((w.array() - 1.0).abs().maxCoeff() < 1e-14);
    }
    SUBCASE("per-batch normalization scaled by effective size") {
        WeightedSampleSet set;
        set.append(Matrix::Zero(2, 1), Vector::Zero(2), Vector::Zero(2), 1.0);
        Vector ll(2);
        ll << std::log(3.0), 0.0;
        set.append(Matrix::Zero(2, 1), ll, Vector::Zero(2), 1.0);
        CHECK(set.batch_count() == 2);
        const Vector w = wmc_weights(set);
        // second batch: (1.5, 0.5) after normalization, ESS 1.6 of 2
        CHECK(w(0) == doctest::Approx(1.0));
        CHECK(w(1) == doctest::Approx(1.0));
        CHECK(w(2) == doctest::Approx(1.2));
        CHECK(w(3) == doctest::Approx(0.4));
    }
    SUBCASE("tempered generator and target exponent") {
        WeightedSampleSet set;
        Vector ll(2), lla(2);
        ll << -2.0, -4.0;
        lla << -2.0, -4.0;
        set.append(Matrix::Zero(2, 1), ll, lla, 0.5);
        set.beta_target = 1.0;
        const Vector w = wmc_weights(set);
        // log w = 0.5 * ll -> ratio e^{1}
        CHECK(w(0) / w(1) == doctest::Approx(std::exp(1.0)));
    }
    SUBCASE("weights survive huge log-likelihoods") {
        WeightedSampleSet set;
        Vector ll(2);
        ll << -1e5, -1e5 - 1.0;
        set.append(Matrix::Zero(2, 1), ll, Vector::Zero(2), 1.0);
        const Vector w = wmc_weights(set);
        CHECK(w.allFinite());
        CHECK(w(0) / w(1) == doctest::Approx(std::exp(1.0)));
    }
    SUBCASE("a batch with no finite weight is degenerate") {
        WeightedSampleSet set;
        set.append(Matrix::Zero(2, 1), Vector::Constant(2, -std::numeric_limits<double>::infinity()), Vector::Zero(2), 1.0);
        CHECK_THROWS_AS(wmc_weights(set), DegeneracyError);
    }
    SUBCASE("append validates shapes") {
        WeightedSampleSet set;
        CHECK_THROWS_AS(set.append(Matrix::Zero(2, 1), Vector::Zero(3), Vector::Zero(2), 1.0), ValidationError);
        set.append(Matrix::Zero(2, 1), Vector::Zero(2), Vector::Zero(2), 1.0);
        CHECK_THROWS_AS(set.append(Matrix::Zero(2, 3), Vector::Zero(2), Vector::Zero(2), 1.0), ValidationError);
        CHECK_THROWS_AS(wmc_weights(WeightedSampleSet{}), ValidationError);
    }
}

TEST_CASE("rank selection") {
    Vector spec(6);
    spec << 0.01, 0.02, 0.05, 0.98, 0.99, 1.0;
    SUBCASE("plateau ends at the largest relative jump") {
        RankRule rule;
        rule.r_max = 6;
        CHECK(select_rank(spec, rule) == 3);
    }
    SUBCASE("threshold counts eigenvalues below it") {
        RankRule rule;
        rule.mode = RankMode::threshold;
        rule.threshold = 0.6;
        rule.r_max = 6;
        CHECK(select_rank(spec, rule) == 3);
        rule.threshold = 0.015;
        CHECK(select_rank(spec, rule) == 1);
        rule.threshold = 0.001;
        CHECK(select_rank(spec, rule) == 1);  // clamped to r_min
    }
    SUBCASE("clamping to r_max") {
        RankRule rule;
        rule.r_max = 2;
        CHECK(select_rank(spec, rule) == 2);
    }
    SUBCASE("flat spectrum falls back to r_min") {
        RankRule rule;
        rule.r_min = 2;
        rule.r_max = 4;
        CHECK(select_rank(Vector::Ones(6), rule) == 2);
    }
    SUBCASE("invalid rules") {
        RankRule rule;
        rule.r_min = 0;
        CHECK_THROWS_AS(select_rank(spec, rule), ValidationError);
        rule.r_min = 3;
        rule.r_max = 2;
        CHECK_THROWS_AS(select_rank(spec, rule), ValidationError);
        rule.r_min = 1;
        rule.r_max = 7;
        CHECK_THROWS_AS(select_rank(spec, rule), ValidationError);
        CHECK_THROWS_AS(select_rank(Vector(), RankRule{}), ValidationError);
    }
}

TEST_CASE("linear-Gaussian posterior") {
    SUBCASE("scalar case") {
        Matrix f(1, 1);
        f << 0.05;
        Vector y(1);
        y << 30.0;
        const GaussianDist post = blg_posterior(f, SpdMatrix::identity(1), GaussianDist::standard(1), y);
        CHECK(post.cov().matrix()(0, 0) == doctest::Approx(0.997506).epsilon(1e-6));
        CHECK(post.mean()(0) == doctest::Approx(1.49626).epsilon(1e-5));
    }
    SUBCASE("random case against the Kalman form") {
        Rng rng = make_stream(20, 0);
        const Blg b = random_blg(rng, 3, 5);
        const GaussianDist post = blg_posterior(b.f, b.noise, b.prior, b.y);
        const LMatrix f = b.f.cast<long double>();
        const LMatrix c = b.prior.cov().matrix().cast<long double>();
        const LMatrix s = f * c * f.transpose() + b.noise.matrix().cast<long double>();
        const LMatrix k = c * f.transpose() * s.inverse();
        const LVector mu = b.prior.mean().cast<long double>() + k * (b.y.cast<long double>() - f * b.prior.mean().cast<long double>());
        const LMatrix cp = c - k * f * c;
        CHECK((post.mean() - mu.cast<double>()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((post.cov().matrix() - cp.cast<double>()).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(blg_posterior(Matrix::Ones(2, 3), SpdMatrix::identity(2), GaussianDist::standard(2), Vector::Zero(2)),
                        ValidationError);
    }
}

TEST_CASE("projector from the covariance pencil") {
    Rng rng = make_stream(30, 0);
    const Eigen::Index n = 6, m = 2;
    const Blg b = random_blg(rng, m, n);
    const GaussianDist post = blg_posterior(b.f, b.noise, b.prior, b.y);

    SUBCASE("spectrum matches an independent generalized eigensolver") {
        const PencilProjector pp = cis_projector(post.cov().matrix(), b.prior.cov(), 2);
        Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(post.cov().matrix(), b.prior.cov().matrix());
        CHECK((pp.pencil.values - ges.eigenvalues()).cwiseAbs().maxCoeff() < 1e-10);
        // the posterior contracts the prior: eigenvalues in (0, 1], n - m of them at 1
        CHECK(pp.pencil.values.minCoeff() > 0.0);
        CHECK(pp.pencil.values.maxCoeff() < 1.0 + 1e-10);
        CHECK((pp.pencil.values.tail(n - m).array() - 1.0).abs().maxCoeff() < 1e-9);
        CHECK(pp.pencil.values(m - 1) < 1.0 - 1e-6);
    }
    SUBCASE("projector identities") {
        const PencilProjector pp = cis_projector(post.cov().matrix(), b.prior.cov(), 3);
        const Projector& p = pp.projector;
        CHECK(p.rank() == 3);
        CHECK(p.gram_defect() < 1e-10);
        CHECK(p.idempotency_defect() < 1e-10);
        CHECK(p.orthogonality_defect() < 1e-10);
        // Pi^T is the C_pi^{-1}-orthogonal projector onto the same split
        const Matrix lhs = p.pi().transpose() * b.prior.cov().inverse();
        CHECK((lhs - lhs.transpose()).cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("rank rule and validation") {
        RankRule rule;
        rule.mode = RankMode::threshold;
        rule.threshold = 0.99;
        rule.r_max = n;
        const PencilProjector pp = cis_projector(post.cov().matrix(), b.prior.cov(), rule);
        CHECK(pp.projector.rank() == m);
        CHECK_THROWS_AS(cis_projector(post.cov().matrix(), b.prior.cov(), 0), ValidationError);
        CHECK_THROWS_AS(cis_projector(post.cov().matrix(), b.prior.cov(), n + 1), ValidationError);
        CHECK_THROWS_AS(cis_projector(Matrix::Identity(3, 3), b.prior.cov(), 1), ValidationError);
    }
    SUBCASE("exact projector at the rank of F reproduces the posterior") {
        const PencilProjector pp = cis_projector(post.cov().matrix(), b.prior.cov(), m);
        const GaussianDist approx = approx_posterior_blg(pp.projector, post, b.prior);
        CHECK(gaussian_kld(post, approx) < 1e-9);
        CHECK((approx.mean() - post.mean()).cwiseAbs().maxCoeff() < 1e-8);
    }
    SUBCASE("an empirical covariance close to exact gives a close subspace") {
        Rng rs = make_stream(31, 0);
        const Matrix xs = post.sample(rs, 200000);
        const PencilProjector est = cis_projector(sample_cov(xs), b.prior.cov(), m);
        const PencilProjector exact = cis_projector(post.cov().matrix(), b.prior.cov(), m);
        CHECK(principal_angles(est.projector.v_r(), exact.projector.v_r()).maxCoeff() < 0.05);
    }
}

TEST_CASE("likelihood-informed projector") {
    SUBCASE("diagonal hand case") {
        Matrix h = Matrix::Zero(3, 3);
        h.diagonal() << 3.0, 1.0, 0.0;
        const Matrix c1 = spantini_cov_approx(h, SpdMatrix::identity(3), 1);
        Matrix expect = Matrix::Identity(3, 3);
        expect(0, 0) = 0.25;
        CHECK((c1 - expect).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((spantini_cov_approx(h, SpdMatrix::identity(3), 0) - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
        const PencilProjector pp = spantini_projector(h, SpdMatrix::identity(3), 1);
        CHECK(pp.pencil.values(0) == doctest::Approx(3.0));
        CHECK(std::abs(pp.projector.v_r()(0, 0)) == doctest::Approx(1.0));
    }
    SUBCASE("full rank recovers the exact posterior covariance") {
        Rng rng = make_stream(40, 0);
        const Blg b = random_blg(rng, 3, 4);
        const Matrix h = b.f.transpose() * b.noise.solve(b.f);
        const GaussianDist post = blg_posterior(b.f, b.noise, b.prior, b.y);
        CHECK((spantini_cov_approx(h, b.prior.cov(), 4) - post.cov().matrix()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((spantini_cov_approx(h, b.prior.cov(), 3) - post.cov().matrix()).cwiseAbs().maxCoeff() < 1e-10);
        const PencilProjector pp = spantini_projector(h, b.prior.cov(), 2);
        CHECK(pp.projector.gram_defect() < 1e-10);
        CHECK(pp.projector.orthogonality_defect() < 1e-10);
    }
    SUBCASE("rank out of range") {
        CHECK_THROWS_AS(spantini_cov_approx(Matrix::Identity(2, 2), SpdMatrix::identity(2), 3), ValidationError);
        CHECK_THROWS_AS(spantini_projector(Matrix::Identity(2, 2), SpdMatrix::identity(2), -1), ValidationError);
    }
}

TEST_CASE("approximate posteriors of the linear model") {
    Rng rng = make_stream(50, 0);
    const Eigen::Index n = 5;
    const Blg b = random_blg(rng, 3, n);
    const GaussianDist post = blg_posterior(b.f, b.noise, b.prior, b.y);
    const PencilProjector pp = cis_projector(post.cov().matrix(), b.prior.cov(), 2);

    SUBCASE("full-rank and empty splits") {
        const Projector p_full = Projector(pp.projector.basis(), n, b.prior.cov());
        const GaussianDist a_full = approx_posterior_blg(p_full, post, b.prior);
        CHECK(gaussian_kld(post, a_full) < 1e-9);
        const Projector p_none = Projector(pp.projector.basis(), 0, b.prior.cov());
        const GaussianDist a_none = approx_posterior_blg(p_none, post, b.prior);
        CHECK((a_none.mean() - b.prior.mean()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((a_none.cov().matrix() - b.prior.cov().matrix()).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("marginalized likelihood keeps the exact reduced marginal") {
        const Projector& p = pp.projector;
        const GaussianDist ml = marginal_likelihood_posterior_blg(b.f, b.noise, b.prior, b.y, p);
        const Matrix ur = p.u_r();
        const Matrix up = p.u_perp();
        CHECK((ur.transpose() * ml.mean() - ur.transpose() * post.mean()).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((ur.transpose() * ml.cov().matrix() * ur - ur.transpose() * post.cov().matrix() * ur).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((up.transpose() * ml.mean() - up.transpose() * b.prior.mean()).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((up.transpose() * ml.cov().matrix() * up - Matrix::Identity(n - 2, n - 2)).cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("projected likelihood against the direct formula") {
        const Projector& p = pp.projector;
        const GaussianDist pl = projected_likelihood_posterior_blg(b.f, b.noise, b.prior, b.y, p);
        const LMatrix fp = (b.f * p.pi()).cast<long double>();
        const LMatrix cpi_inv = b.prior.cov().matrix().cast<long double>().inverse();
        const LMatrix ceps_inv = b.noise.matrix().cast<long double>().inverse();
        const LMatrix prec = fp.transpose() * ceps_inv * fp + cpi_inv;
        const LMatrix cov = prec.inverse();
        const LVector mu = cov * (fp.transpose() * ceps_inv * b.y.cast<long double>() + cpi_inv * b.prior.mean().cast<long double>());
        CHECK((pl.mean() - mu.cast<double>()).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((pl.cov().matrix() - cov.cast<double>()).cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("mismatched prior is rejected") {
        CHECK_THROWS_AS(approx_posterior_blg(identity_split(n, 2), post, b.prior), ValidationError);
    }
}

TEST_CASE("approximate log-likelihood in reduced coordinates") {
    Matrix f(1, 2);
    f << 0.6, 0.8;
    const double noise_var = 0.5;
    Vector y(1);
    y << 0.7;
    const GaussianDist prior = GaussianDist::standard(2);
    const GaussianLikelihood lik(std::make_shared<LinearModel>(f), y, SpdMatrix(noise_var * Matrix::Identity(1, 1)));
    const Projector p = identity_split(2, 1);
    Vector z(1);
    z << 0.3;

    SUBCASE("prior-mean completion") {
        Rng rng = make_stream(60, 0);
        Vector x(2);
        x << 0.3, 0.0;
        CHECK(approx_log_likelihood(lik, prior, p, z, ApproxMode::prior_mean, 0, rng) == doctest::Approx(lik.log_likelihood(x)));
    }
    SUBCASE("Monte Carlo completion converges to the marginal likelihood") {
        // y | z_r ~ N(0.6 z_r, noise + 0.8^2)
        const double var = noise_var + 0.64;
        const double r = y(0) - 0.6 * z(0);
        const double exact = -0.5 * (std::log(2.0 * std::numbers::pi * var) + r * r / var);
        Rng rng = make_stream(61, 0);
        const double coarse = approx_log_likelihood(lik, prior, p, z, ApproxMode::monte_carlo, 100, rng);
        const double fine = approx_log_likelihood(lik, prior, p, z, ApproxMode::monte_carlo, 200000, rng);
        CHECK(fine == doctest::Approx(exact).epsilon(2e-3));
        CHECK(std::abs(coarse - exact) < 0.2);
        CHECK_THROWS_AS(approx_log_likelihood(lik, prior, p, z, ApproxMode::monte_carlo, 0, rng), ValidationError);
        CHECK_THROWS_AS(approx_log_likelihood(lik, prior, p, Vector::Zero(2), ApproxMode::prior_mean, 0, rng), ValidationError);
    }
}
