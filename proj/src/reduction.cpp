#include "cis/reduction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cis/diagnostics.hpp"
#include "cis/errors.hpp"
#include "cis/parallel.hpp"

namespace cis {

int WeightedSampleSet::batch_count() const {
    return batch.empty() ? 0 : *std::max_element(batch.begin(), batch.end()) + 1;
}

int WeightedSampleSet::append(const Matrix& xs, const Vector& ll, const Vector& ll_approx, double beta) {
    if (xs.rows() != ll.size() || xs.rows() != ll_approx.size())
        throw ValidationError("WeightedSampleSet::append: inconsistent batch sizes");
    if (size() > 0 && xs.cols() != dim()) throw ValidationError("WeightedSampleSet::append: dimension mismatch");
    const int id = batch_count();
    const Eigen::Index n0 = size(), k = xs.rows();
    samples.conservativeResize(n0 + k, xs.cols());
    samples.bottomRows(k) = xs;
    log_lik.conservativeResize(n0 + k);
    log_lik.tail(k) = ll;
    log_lik_approx.conservativeResize(n0 + k);
    log_lik_approx.tail(k) = ll_approx;
    beta_gen.conservativeResize(n0 + k);
    beta_gen.tail(k).setConstant(beta);
    batch.insert(batch.end(), static_cast<std::size_t>(k), id);
    return id;
}

void WeightedSampleSet::validate() const {
    const Eigen::Index n = size();
    if (log_lik.size() != n || log_lik_approx.size() != n || beta_gen.size() != n || static_cast<Eigen::Index>(batch.size()) != n)
        throw ValidationError("WeightedSampleSet: field lengths disagree");
    if (n == 0) throw ValidationError("WeightedSampleSet: empty");
}

double log_sum_exp(const Vector& v) {
    if (v.size() == 0) return -std::numeric_limits<double>::infinity();
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

double log_mean_exp(const Vector& v) { return log_sum_exp(v) - std::log(static_cast<double>(v.size())); }

Vector wmc_weights(const WeightedSampleSet& set) {
    set.validate();
    const Eigen::Index n = set.size();
    Vector logw(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double a = set.beta_target * set.log_lik(i);
        const double b = set.beta_gen(i) * set.log_lik_approx(i);
        logw(i) = (std::isnan(a) || std::isnan(b)) ? -std::numeric_limits<double>::infinity() : a - b;
        if (std::isnan(logw(i))) logw(i) = -std::numeric_limits<double>::infinity();
    }
    Vector w(n);
    for (int id = 0; id < set.batch_count(); ++id) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < n; ++i)
            if (set.batch[static_cast<std::size_t>(i)] == id) rows.push_back(i);
        if (rows.empty()) continue;
        Vector lw(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) lw(static_cast<Eigen::Index>(k)) = logw(rows[k]);
        const double lme = log_mean_exp(lw);
        if (!std::isfinite(lme)) throw DegeneracyError("wmc_weights: all weights of a batch underflow", 0.0);
        Vector wb = (lw.array() - lme).exp().matrix();
        // batches enter the pooled estimate in proportion to their effective size
        wb *= ess(wb) / static_cast<double>(wb.size());
        for (std::size_t k = 0; k < rows.size(); ++k) w(rows[k]) = wb(static_cast<Eigen::Index>(k));
    }
    return w;
}

namespace {

void check_weights(const Matrix& xs, const Vector& w, const char* what) {
    if (xs.rows() != w.size()) throw ValidationError(std::string(what) + ": weight count does not match sample count");
    if (w.size() == 0) throw ValidationError(std::string(what) + ": no samples");
    if (!w.allFinite() || (w.array() < 0.0).any()) throw ValidationError(std::string(what) + ": weights must be finite and nonnegative");
    if (!(w.sum() > 0.0)) throw DegeneracyError(std::string(what) + ": all weights are zero", 0.0);
}

}  // namespace

Vector weighted_mean(const Matrix& xs, const Vector& w) {
    check_weights(xs, w, "weighted_mean");
    return xs.transpose() * w / w.sum();
}

Matrix weighted_cov(const Matrix& xs, const Vector& w) {
    check_weights(xs, w, "weighted_cov");
    const double s = w.sum();
    const double s2 = w.squaredNorm();
    const double denom = s * s - s2;
    if (!(denom > 1e-12 * s * s)) throw DegeneracyError("weighted_cov: weights concentrate on a single sample", s * s / s2);
    const Vector mu = xs.transpose() * w / s;
    const Matrix centered = xs.rowwise() - mu.transpose();
    const Matrix c = centered.transpose() * w.asDiagonal() * centered * (s / denom);
    return symmetrize(c);
}

Matrix wmc_fisher(const Matrix& grads, const Vector& w) {
    check_weights(grads, w, "wmc_fisher");
    return symmetrize(grads.transpose() * w.asDiagonal() * grads / w.sum());
}

// ---------------------------------------------------------------------------

void RankRule::validate(Eigen::Index n) const {
    if (r_min < 1 || r_min > r_max || r_max > n) {
        std::ostringstream os;
        os << "RankRule: need 1 <= r_min <= r_max <= n (got " << r_min << ", " << r_max << ", n = " << n << ")";
        throw ValidationError(os.str());
    }
    if (mode == RankMode::threshold && !(threshold > 0.0)) throw ValidationError("RankRule: threshold must be positive");
    if (!(plateau_variation > 0.0)) throw ValidationError("RankRule: plateau variation must be positive");
}

Eigen::Index select_rank(const Vector& ascending, const RankRule& rule) {
    const Eigen::Index n = ascending.size();
    if (n == 0) throw ValidationError("select_rank: empty spectrum");
    rule.validate(n);
    Eigen::Index r = rule.r_min;
    if (rule.mode == RankMode::threshold) {
        r = (ascending.array() <= rule.threshold).count();
    } else if (n >= 2) {
        Vector var(n - 1);
        for (Eigen::Index i = 0; i + 1 < n; ++i) {
            const double lo = std::max(ascending(i), std::numeric_limits<double>::min());
            var(i) = (ascending(i + 1) - ascending(i)) / lo;
        }
        Eigen::Index i_star = 0;
        var.maxCoeff(&i_star);
        if (var(i_star) > rule.plateau_variation) {
            Eigen::Index last = i_star;
            while (last + 1 < var.size() && var(last + 1) > rule.plateau_variation) ++last;
            r = last + 1;
        }
    }
    return std::clamp(r, rule.r_min, rule.r_max);
}

namespace {

PencilProjector build_cis(const Matrix& c_hat, const SpdMatrix& prior_cov, const RankRule* rule, Eigen::Index r_fixed) {
    if (c_hat.rows() != prior_cov.dim() || c_hat.cols() != prior_cov.dim())
        throw ValidationError("cis_projector: covariance dimensions differ from the prior");
    require_symmetric(c_hat, "cis_projector");
    PencilEigen pe = generalized_eig(repair_psd(c_hat), prior_cov, Order::ascending);
    const Eigen::Index r = rule ? select_rank(pe.values, *rule) : r_fixed;
    if (r < 1) throw ValidationError("cis_projector: rank rule selected an empty subspace");
    if (r > prior_cov.dim()) throw ValidationError("cis_projector: rank exceeds dimension");
    Projector proj(pe.vectors, r, prior_cov, pe.values);
    return {std::move(proj), std::move(pe)};
}

}  // namespace

PencilProjector cis_projector(const Matrix& c_hat, const SpdMatrix& prior_cov, const RankRule& rule) {
    return build_cis(c_hat, prior_cov, &rule, 0);
}

PencilProjector cis_projector(const Matrix& c_hat, const SpdMatrix& prior_cov, Eigen::Index r) {
    return build_cis(c_hat, prior_cov, nullptr, r);
}

PencilProjector spantini_projector(const Matrix& h, const SpdMatrix& prior_cov, Eigen::Index r) {
    if (r < 0 || r > prior_cov.dim()) throw ValidationError("spantini_projector: rank out of range");
    const SpdMatrix prec(prior_cov.inverse());
    PencilEigen pe = generalized_eig(h, prec, Order::descending);
    const Matrix u = prec.matrix() * pe.vectors;
    Projector proj(u, r, prior_cov, pe.values);
    return {std::move(proj), std::move(pe)};
}

Matrix spantini_cov_approx(const Matrix& h, const SpdMatrix& prior_cov, Eigen::Index r) {
    if (r < 0 || r > prior_cov.dim()) throw ValidationError("spantini_cov_approx: rank out of range");
    const SpdMatrix prec(prior_cov.inverse());
    const PencilEigen pe = generalized_eig(h, prec, Order::descending);
    Matrix c = prior_cov.matrix();
    for (Eigen::Index i = 0; i < r; ++i) {
        const double d = std::max(pe.values(i), 0.0);
        c -= d / (1.0 + d) * pe.vectors.col(i) * pe.vectors.col(i).transpose();
    }
    return symmetrize(c);
}

GaussianDist blg_posterior(const Matrix& f, const SpdMatrix& noise_cov, const GaussianDist& prior, const Vector& y) {
    if (f.cols() != prior.dim() || f.rows() != noise_cov.dim() || y.size() != f.rows())
        throw ValidationError("blg_posterior: dimension mismatch");
    const Matrix prior_prec = prior.cov().inverse();
    const Matrix precision = symmetrize(f.transpose() * noise_cov.solve(f) + prior_prec);
    const SpdMatrix prec(precision);
    const Matrix cov = prec.inverse();
    const Vector rhs = f.transpose() * noise_cov.solve(y) + prior_prec * prior.mean();
    return GaussianDist(prec.solve(rhs), SpdMatrix(cov));
}

GaussianDist approx_posterior_blg(const Projector& proj, const GaussianDist& posterior, const GaussianDist& prior) {
    require_matching_prior(prior, proj);
    if (posterior.dim() != prior.dim()) throw ValidationError("approx_posterior_blg: dimension mismatch");
    const Eigen::Index n = prior.dim();
    const Matrix& pi = proj.pi();
    const Matrix q = Matrix::Identity(n, n) - pi;
    const Vector mean = pi * posterior.mean() + q * prior.mean();
    const Matrix cov = pi * posterior.cov().matrix() * pi.transpose() + q * prior.cov().matrix() * q.transpose();
    return GaussianDist(mean, SpdMatrix(symmetrize(cov)));
}

GaussianDist marginal_likelihood_posterior_blg(const Matrix& f, const SpdMatrix& noise_cov, const GaussianDist& prior,
                                               const Vector& y, const Projector& proj) {
    require_matching_prior(prior, proj);
    const Eigen::Index r = proj.rank();
    const Matrix v_r = proj.v_r();
    const Matrix v_perp = proj.v_perp();
    const Vector m_r = proj.u_r().transpose() * prior.mean();
    const Vector m_perp = proj.u_perp().transpose() * prior.mean();

    // y | z_r ~ N(F V_r z_r + F V_perp m_perp, C_eps + F V_perp V_perp^T F^T)
    const Matrix fp = f * v_perp;
    const SpdMatrix noise_eff(symmetrize(noise_cov.matrix() + fp * fp.transpose()));
    Vector mean_r = m_r;
    Matrix cov_r = Matrix::Identity(r, r);
    if (r > 0) {
        const GaussianDist post_r = blg_posterior(f * v_r, noise_eff, GaussianDist(m_r, SpdMatrix::identity(r)), y - fp * m_perp);
        mean_r = post_r.mean();
        cov_r = post_r.cov().matrix();
    }
    const Vector mean = v_r * mean_r + v_perp * m_perp;
    const Matrix cov = v_r * cov_r * v_r.transpose() + v_perp * v_perp.transpose();
    return GaussianDist(mean, SpdMatrix(symmetrize(cov)));
}

GaussianDist projected_likelihood_posterior_blg(const Matrix& f, const SpdMatrix& noise_cov, const GaussianDist& prior,
                                                const Vector& y, const Projector& proj) {
    require_matching_prior(prior, proj);
    return blg_posterior(f * proj.pi(), noise_cov, prior, y);
}

double approx_log_likelihood(const GaussianLikelihood& lik, const GaussianDist& prior, const Projector& proj,
                             const Vector& z_r, ApproxMode mode, int n_draws, Rng& rng) {
    require_matching_prior(prior, proj);
    if (z_r.size() != proj.rank()) throw ValidationError("approx_log_likelihood: z_r has wrong length");
    const Vector m_perp = perp_prior_mean(prior, proj);
    if (mode == ApproxMode::prior_mean || m_perp.size() == 0) return lik.log_likelihood(proj.reconstruct(z_r, m_perp));
    if (n_draws < 1) throw ValidationError("approx_log_likelihood: need at least one draw");
    Matrix xs(n_draws, proj.dim());
    for (int i = 0; i < n_draws; ++i)
        xs.row(i) = proj.reconstruct(z_r, m_perp + standard_normal(rng, m_perp.size())).transpose();
    return log_mean_exp(batch_log_likelihood(lik, xs));
}

}  // namespace cis
