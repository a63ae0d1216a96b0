#include "cis/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cis/errors.hpp"
#include "cis/parallel.hpp"
#include "cis/reduction.hpp"

namespace cis {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Matrix factor_or_throw(const Matrix& cov, const char* what) {
    try {
        return SpdMatrix(cov).chol();
    } catch (const FactorizationError&) {
        throw ValidationError(std::string(what) + ": proposal covariance is not positive definite");
    }
}

/// Stateful proposal built from a ProposalKernel for a chain of dimension d.
class Proposer {
public:
    Proposer(const ProposalKernel& k, Eigen::Index d, int n_steps) : k_(k), d_(d) {
        if (!(k.scale > 0.0)) throw ValidationError("proposal scale must be positive");
        if (k.kind == ProposalKind::pcn && k.scale > 1.0) throw ValidationError("pCN step must lie in (0, 1]");
        if (k.cov && (k.cov->rows() != d || k.cov->cols() != d)) throw ValidationError("proposal covariance has wrong dimension");
        if (k.mean && k.mean->size() != d) throw ValidationError("pCN reference mean has wrong dimension");
        chol_ = k.cov ? factor_or_throw(*k.cov, "proposal") : Matrix::Identity(d, d);
        if (k.kind == ProposalKind::pcn) {
            ref_mean_ = k.mean ? *k.mean : Vector::Zero(d);
            ref_ = k.cov ? SpdMatrix(*k.cov) : SpdMatrix::identity(d);
        }
        scale_ = k.scale;
        adapt_from_ = std::max<long>(static_cast<long>(k.adapt_start * n_steps), static_cast<long>(2 * d + 2));
        run_mean_ = Vector::Zero(d);
        run_m2_ = Matrix::Zero(d, d);
    }

    Vector propose(const Vector& x, Rng& rng) const {
        const Vector xi = chol_.triangularView<Eigen::Lower>() * standard_normal(rng, d_);
        if (k_.kind == ProposalKind::pcn) return ref_mean_ + std::sqrt(1.0 - scale_ * scale_) * (x - ref_mean_) + scale_ * xi;
        return x + scale_ * xi;
    }

    /// log q(x | x') - log q(x' | x).
    double log_q_ratio(const Vector& x, const Vector& xp) const {
        if (k_.kind != ProposalKind::pcn) return 0.0;
        return -0.5 * ref_.inv_quad(x - ref_mean_) + 0.5 * ref_.inv_quad(xp - ref_mean_);
    }

    void observe(const Vector& x, bool accepted, long step) {
        ++seen_;
        const Vector delta = x - run_mean_;
        run_mean_ += delta / static_cast<double>(seen_);
        run_m2_ += delta * (x - run_mean_).transpose();
        if (k_.kind == ProposalKind::adaptive_rwm && seen_ >= adapt_from_) {
            const Matrix c = run_m2_ / static_cast<double>(seen_ - 1) + k_.jitter * Matrix::Identity(d_, d_);
            Eigen::LLT<Matrix> llt(symmetrize(c) * (2.38 * 2.38 / static_cast<double>(d_)));
            if (llt.info() == Eigen::Success) {
                chol_ = llt.matrixL();
                scale_ = 1.0;
            }
        }
        if (k_.kind == ProposalKind::pcn && k_.target_acceptance) {
            const double gain = 1.0 / std::sqrt(static_cast<double>(step + 1));
            scale_ = std::clamp(scale_ * std::exp(gain * ((accepted ? 1.0 : 0.0) - *k_.target_acceptance)), 1e-4, 1.0);
        }
    }

    double scale() const noexcept { return scale_; }

private:
    ProposalKernel k_;
    Eigen::Index d_;
    Matrix chol_;
    Vector ref_mean_;
    SpdMatrix ref_{Matrix(0, 0)};
    double scale_;
    long adapt_from_;
    long seen_ = 0;
    Vector run_mean_;
    Matrix run_m2_;
};

bool accept(double log_alpha, Rng& rng) {
    if (std::isnan(log_alpha)) return false;
    return log_alpha >= 0.0 || std::log(uniform01(rng)) < log_alpha;
}

}  // namespace

ChainResult mh_chain(const LogDensity& target, const ProposalKernel& kernel, const Vector& init, int n_steps, Rng& rng) {
    if (n_steps < 1) throw ValidationError("mh_chain: n_steps must be >= 1");
    if (!init.allFinite()) throw ValidationError("mh_chain: non-finite initial state");
    const Eigen::Index d = init.size();
    Proposer prop(kernel, d, n_steps);
    ChainResult out;
    out.states.resize(n_steps, d);
    out.log_density.resize(n_steps);

    Vector x = init;
    double lp = target(x);
    out.target_evaluations = 1;
    if (!std::isfinite(lp)) throw ValidationError("mh_chain: target is not finite at the initial state");
    long accepted = 0;
    for (int k = 0; k < n_steps; ++k) {
        const Vector xp = prop.propose(x, rng);
        const double lpp = target(xp);
        ++out.target_evaluations;
        const bool ok = accept(lpp - lp + prop.log_q_ratio(x, xp), rng);
        if (ok) {
            x = xp;
            lp = lpp;
            ++accepted;
        }
        prop.observe(x, ok, k);
        out.states.row(k) = x.transpose();
        out.log_density(k) = lp;
    }
    out.acceptance = static_cast<double>(accepted) / n_steps;
    out.final_scale = prop.scale();
    return out;
}

ReducedChain pseudo_marginal_mh(const GaussianLikelihood& lik, const GaussianDist& prior, const Projector& proj,
                                const ProposalKernel& kernel, int n_steps, Rng& rng, const std::optional<Vector>& init) {
    require_matching_prior(prior, proj);
    if (lik.dim() != prior.dim()) throw ValidationError("pseudo_marginal_mh: likelihood/prior dimension mismatch");
    const Eigen::Index r = proj.rank();
    if (r < 1) throw ValidationError("pseudo_marginal_mh: projector has rank 0");
    const Vector m_r = proj.u_r().transpose() * prior.mean();
    const Vector m_perp = perp_prior_mean(prior, proj);
    const Vector z0 = init ? *init : m_r;
    if (z0.size() != r) throw ValidationError("pseudo_marginal_mh: initial state has wrong length");

    auto log_lik_m = [&](const Vector& z) { return lik.log_likelihood(proj.reconstruct(z, m_perp)); };
    auto target = [&](const Vector& z) { return -0.5 * (z - m_r).squaredNorm() + log_lik_m(z); };

    ProposalKernel k = kernel;
    if (k.kind == ProposalKind::pcn && !k.mean && !k.cov) k.mean = m_r;
    const ChainResult chain = mh_chain(target, k, z0, n_steps, rng);

    ReducedChain out;
    out.z_r = chain.states;
    out.log_lik_approx.resize(n_steps);
    for (int i = 0; i < n_steps; ++i)
        out.log_lik_approx(i) = chain.log_density(i) + 0.5 * (out.z_r.row(i).transpose() - m_r).squaredNorm();
    out.acceptance = chain.acceptance;
    out.evaluations = chain.target_evaluations;
    return out;
}

DelayedAcceptanceResult delayed_acceptance(const GaussianLikelihood& lik, const GaussianDist& prior, const Projector& proj,
                                           const ProposalKernel& kernel, int n_steps, Rng& rng,
                                           const std::optional<Vector>& init) {
    require_matching_prior(prior, proj);
    if (n_steps < 1) throw ValidationError("delayed_acceptance: n_steps must be >= 1");
    if (kernel.kind == ProposalKind::adaptive_rwm)
        throw ValidationError("delayed_acceptance: adaptive proposals are not supported (use rwm or pcn)");
    const Eigen::Index r = proj.rank(), n = proj.dim();
    if (r < 1) throw ValidationError("delayed_acceptance: projector has rank 0");
    const Vector m_r = proj.u_r().transpose() * prior.mean();
    const Vector m_perp = perp_prior_mean(prior, proj);

    ProposalKernel k = kernel;
    if (k.kind == ProposalKind::pcn && !k.mean && !k.cov) k.mean = m_r;
    k.target_acceptance.reset();
    Proposer prop(k, r, n_steps);

    DelayedAcceptanceResult out;
    out.x.resize(n_steps, n);
    out.z_r.resize(n_steps, r);
    std::vector<double> ratios;

    Vector z = init ? *init : m_r;
    if (z.size() != r) throw ValidationError("delayed_acceptance: initial state has wrong length");
    Vector zp_perp = m_perp + standard_normal(rng, m_perp.size());
    Vector x = proj.reconstruct(z, zp_perp);
    double ll_m = lik.log_likelihood(proj.reconstruct(z, m_perp));
    double ll = lik.log_likelihood(x);
    out.evaluations = 2;
    if (!std::isfinite(ll_m) || !std::isfinite(ll)) throw ValidationError("delayed_acceptance: likelihood not finite at start");

    long acc1 = 0, acc2 = 0;
    for (int step = 0; step < n_steps; ++step) {
        const Vector zp = prop.propose(z, rng);
        const double ll_mp = lik.log_likelihood(proj.reconstruct(zp, m_perp));
        ++out.evaluations;
        const double log_a1 = (-0.5 * (zp - m_r).squaredNorm() + ll_mp) - (-0.5 * (z - m_r).squaredNorm() + ll_m) +
                              prop.log_q_ratio(z, zp);
        if (accept(log_a1, rng)) {
            ++acc1;
            const Vector perp = m_perp + standard_normal(rng, m_perp.size());
            const Vector xp = proj.reconstruct(zp, perp);
            const double llp = lik.log_likelihood(xp);
            ++out.evaluations;
            const double log_beta = (llp + ll_m) - (ll + ll_mp);
            ratios.push_back(log_beta);
            if (accept(log_beta, rng)) {
                ++acc2;
                z = zp;
                x = xp;
                ll = llp;
                ll_m = ll_mp;
            }
        }
        out.x.row(step) = x.transpose();
        out.z_r.row(step) = z.transpose();
    }
    out.log_ratio = Eigen::Map<const Vector>(ratios.data(), static_cast<Eigen::Index>(ratios.size()));
    out.stage1_acceptance = static_cast<double>(acc1) / n_steps;
    out.stage2_acceptance = acc1 ? static_cast<double>(acc2) / static_cast<double>(acc1) : 0.0;
    return out;
}

double ess_from_log(const Vector& log_w) {
    const double m = log_w.maxCoeff();
    if (!std::isfinite(m)) throw DegeneracyError("ess: all weights are zero", 0.0);
    const Vector w = (log_w.array() - m).exp();
    return w.sum() * w.sum() / w.squaredNorm();
}

double update_beta(double prev_beta, const Vector& log_lik, const Vector& log_lik_approx_tempered, double tau) {
    const Eigen::Index n = log_lik.size();
    if (!(prev_beta >= 0.0 && prev_beta < 1.0)) throw ValidationError("update_beta: prev_beta must lie in [0, 1)");
    if (log_lik_approx_tempered.size() != n || n < 1) throw ValidationError("update_beta: inconsistent inputs");
    if (!(tau > 0.0 && tau < static_cast<double>(n))) throw ValidationError("update_beta: tau must lie in (0, N)");
    auto ess_at = [&](double beta) {
        Vector lw = beta * log_lik - log_lik_approx_tempered;
        for (Eigen::Index i = 0; i < n; ++i)
            if (std::isnan(lw(i))) lw(i) = kNegInf;
        return ess_from_log(lw);
    };
    if (ess_at(1.0) >= tau) return 1.0;
    double lo = prev_beta, hi = 1.0;
    if (ess_at(lo) - tau > 0.0) {
        for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
            const double mid = 0.5 * (lo + hi);
            (ess_at(mid) >= tau ? lo : hi) = mid;
        }
        if (lo > prev_beta) return lo;
        return hi;
    }
    double best = 1.0, best_err = std::numeric_limits<double>::infinity();
    constexpr int kGrid = 200;
    for (int k = 1; k <= kGrid; ++k) {
        const double b = prev_beta + (1.0 - prev_beta) * k / kGrid;
        const double e = ess_at(b) - tau;
        if (e * e < best_err) {
            best_err = e * e;
            best = b;
        }
    }
    return best;
}

Vector clip_weights(const Vector& w, double c) {
    const Eigen::Index n = w.size();
    if (n == 0) throw ValidationError("clip_weights: empty weights");
    if (!(c > 0.0)) throw ValidationError("clip_weights: clip constant must be positive");
    if ((w.array() < 0.0).any() || !w.allFinite()) throw ValidationError("clip_weights: weights must be finite and nonnegative");
    const double total = w.sum();
    if (!(total > 0.0)) throw DegeneracyError("clip_weights: all weights are zero", 0.0);
    Vector p = w / total;
    const double cap = c / static_cast<double>(n);
    if (cap >= 1.0) return p;
    std::vector<bool> capped(static_cast<std::size_t>(n), false);
    for (int guard = 0; guard <= n; ++guard) {
        double free_mass = 0.0;
        long n_capped = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (capped[static_cast<std::size_t>(i)]) ++n_capped;
            else free_mass += p(i);
        }
        const double remaining = 1.0 - cap * static_cast<double>(n_capped);
        if (!(free_mass > 0.0)) break;
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (capped[static_cast<std::size_t>(i)]) {
                p(i) = cap;
                continue;
            }
            p(i) *= remaining / free_mass;
            if (p(i) > cap) {
                capped[static_cast<std::size_t>(i)] = true;
                changed = true;
            }
        }
        if (!changed) break;
        for (Eigen::Index i = 0; i < n; ++i)
            if (capped[static_cast<std::size_t>(i)]) p(i) = cap;
    }
    return p;
}

std::vector<Eigen::Index> resample(const Vector& weights, ResampleScheme scheme, std::optional<double> clip, Rng& rng) {
    const Eigen::Index n = weights.size();
    const Vector p = clip ? clip_weights(weights, *clip) : clip_weights(weights, static_cast<double>(n));
    std::vector<double> cdf(static_cast<std::size_t>(n));
    std::partial_sum(p.data(), p.data() + n, cdf.begin());
    cdf.back() = 1.0;
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    auto locate = [&](double u) {
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        return static_cast<Eigen::Index>(std::min<std::ptrdiff_t>(it - cdf.begin(), n - 1));
    };
    if (scheme == ResampleScheme::systematic) {
        const double u0 = uniform01(rng) / static_cast<double>(n);
        for (Eigen::Index k = 0; k < n; ++k) idx[static_cast<std::size_t>(k)] = locate(u0 + static_cast<double>(k) / n);
    } else {
        for (Eigen::Index k = 0; k < n; ++k) idx[static_cast<std::size_t>(k)] = locate(uniform01(rng));
    }
    return idx;
}

Matrix gather_rows(const Matrix& particles, const std::vector<Eigen::Index>& idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), particles.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = particles.row(idx[k]);
    return out;
}

int pcn_sweep(Matrix& z, Vector& log_target, const LogDensity& target, const Vector& ref_mean, const SpdMatrix& ref_cov,
              double step, std::uint64_t seed, std::uint64_t sweep) {
    if (!(step > 0.0 && step <= 1.0)) throw ValidationError("pcn_sweep: step must lie in (0, 1]");
    if (z.rows() != log_target.size() || z.cols() != ref_mean.size() || ref_cov.dim() != ref_mean.size())
        throw ValidationError("pcn_sweep: dimension mismatch");
    const Eigen::Index n = z.rows(), d = z.cols();
    std::vector<char> ok(static_cast<std::size_t>(n), 0);
    const double rho = std::sqrt(1.0 - step * step);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        const auto row = static_cast<Eigen::Index>(i);
        Rng rng = make_stream(seed, sweep * 0x100000000ull + i);
        const Vector x = z.row(row).transpose();
        const Vector xi = ref_cov.chol().triangularView<Eigen::Lower>() * standard_normal(rng, d);
        const Vector xp = ref_mean + rho * (x - ref_mean) + step * xi;
        const double lpp = target(xp);
        const double log_a = lpp - log_target(row) - 0.5 * ref_cov.inv_quad(x - ref_mean) + 0.5 * ref_cov.inv_quad(xp - ref_mean);
        if (accept(log_a, rng)) {
            z.row(row) = xp.transpose();
            log_target(row) = lpp;
            ok[i] = 1;
        }
    });
    return static_cast<int>(std::count(ok.begin(), ok.end(), 1));
}

}  // namespace cis
