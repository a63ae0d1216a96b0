#include "cis/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cis/errors.hpp"
#include "cis/parallel.hpp"

namespace cis {

namespace {

struct Estimate {
    PencilProjector pp;
    Vector weights;
    double ess = 0.0;
};

Estimate estimate_projector(const WeightedSampleSet& archive, const SpdMatrix& prior_cov, const RankRule& rule) {
    Vector w = wmc_weights(archive);
    const double e = ess(w);
    return Estimate{cis_projector(weighted_cov(archive.samples, w), prior_cov, rule), std::move(w), e};
}

Vector angles_between(const std::optional<Matrix>& prev, const Projector& proj) {
    if (!prev || prev->cols() == 0) return {};
    return principal_angles(*prev, proj.v_r());
}

}  // namespace

CisRunResult iterative_cis(const GaussianDist& prior, const GaussianLikelihood& lik, const IterativeCisOptions& opt, Rng& rng,
                           const RecordSink& sink) {
    const Eigen::Index n = prior.dim();
    if (lik.dim() != n) throw ValidationError("iterative_cis: likelihood/prior dimension mismatch");
    if (opt.n_init < 2) throw ValidationError("iterative_cis: n_init must be >= 2");
    if (opt.n_ite < 0 || opt.chain_steps < 1 || opt.max_kept < 1 || opt.n_perp < 1)
        throw ValidationError("iterative_cis: iteration and sampling counts must be positive");
    if (!(opt.burn_in >= 0.0 && opt.burn_in < 1.0)) throw ValidationError("iterative_cis: burn_in must lie in [0, 1)");
    if (opt.schedule.r_max_first < 1 || opt.schedule.r_max_cap < 1 || opt.schedule.growth < 0)
        throw ValidationError("iterative_cis: invalid rank schedule");

    auto rule_for = [&](Eigen::Index r_max) {
        RankRule rule = opt.rule;
        rule.r_max = std::clamp<Eigen::Index>(r_max, 1, n);
        rule.r_min = std::min(rule.r_min, rule.r_max);
        return rule;
    };

    WeightedSampleSet archive;
    const Matrix x0 = prior.sample(rng, opt.n_init);
    const Vector ll0 = batch_log_likelihood(lik, x0);
    std::uint64_t evals = static_cast<std::uint64_t>(opt.n_init);
    archive.append(x0, ll0, Vector::Constant(opt.n_init, log_mean_exp(ll0)), 1.0);
    {
        const double e = ess(wmc_weights(archive));
        if (e < 2.0) {
            std::ostringstream os;
            os << "iterative_cis: prior-sample weights are degenerate; rerun with method cis-smc";
            throw DegeneracyError(os.str(), e);
        }
    }

    std::vector<IterationRecord> records;
    std::optional<Matrix> prev_v;
    std::optional<Estimate> current;
    Eigen::Index r_prev = 0;
    int calm = 0;

    for (int it = 1; it <= opt.n_ite; ++it) {
        const Eigen::Index r_max =
            it == 1 ? opt.schedule.r_max_first : std::min(r_prev + opt.schedule.growth, opt.schedule.r_max_cap);
        const RankRule rule = rule_for(r_max);
        current = estimate_projector(archive, prior.cov(), rule);
        const Projector& proj = current->pp.projector;
        const Eigen::Index r = proj.rank();

        Eigen::Index best = 0;
        current->weights.maxCoeff(&best);
        const Vector z0 = proj.reduce_r(archive.samples.row(best).transpose());
        ProposalKernel kernel = opt.kernel;
        if (!kernel.cov && kernel.kind != ProposalKind::pcn)
            kernel.scale = opt.kernel.scale / std::sqrt(static_cast<double>(r));
        const ReducedChain chain = pseudo_marginal_mh(lik, prior, proj, kernel, opt.chain_steps, rng, z0);
        evals += chain.evaluations;

        const int burn = static_cast<int>(opt.burn_in * opt.chain_steps);
        const int avail = opt.chain_steps - burn;
        const int kept = std::min(opt.max_kept, avail);
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(kept));
        for (int j = 0; j < kept; ++j)
            idx[static_cast<std::size_t>(j)] = burn + static_cast<Eigen::Index>(static_cast<long>(j) * avail / kept);

        const Matrix zr = gather_rows(chain.z_r, idx);
        const Matrix xs = assemble_full_posterior(proj, zr, prior, opt.n_perp, rng);
        const Vector ll = batch_log_likelihood(lik, xs);
        evals += static_cast<std::uint64_t>(xs.rows());
        Vector ll_approx(xs.rows());
        for (int j = 0; j < kept; ++j)
            ll_approx.segment(static_cast<Eigen::Index>(j) * opt.n_perp, opt.n_perp)
                .setConstant(chain.log_lik_approx(idx[static_cast<std::size_t>(j)]));

        IterationRecord rec;
        rec.iteration = it;
        rec.beta = 1.0;
        rec.eigenvalues = current->pp.pencil.values;
        rec.rank = r;
        rec.r_max = rule.r_max;
        rec.angles = angles_between(prev_v, proj);
        if (opt.n_perp >= 2) {
            const Matrix grid = Eigen::Map<const Matrix>(ll.data(), opt.n_perp, kept).transpose();
            rec.bound = bound_estimate(grid);
        }
        rec.ess = current->ess;
        rec.samples_used = archive.size();
        rec.acceptance = chain.acceptance;
        rec.evaluations = evals;
        rec.v_r = proj.v_r();
        if (sink) sink(rec);
        records.push_back(rec);

        archive.append(xs, ll, ll_approx, 1.0);

        const bool same_rank = r == r_prev;
        const bool small = rec.angles.size() > 0 && opt.stop_angle && rec.angles.maxCoeff() < *opt.stop_angle;
        calm = (same_rank && small) ? calm + 1 : 0;
        prev_v = rec.v_r;
        r_prev = r;
        if (opt.stop_angle && calm >= opt.patience) break;
    }

    if (!current) current = estimate_projector(archive, prior.cov(), rule_for(opt.schedule.r_max_first));
    return CisRunResult{std::move(current->pp.projector), std::move(current->pp.pencil), std::move(records), std::move(archive),
                        evals};
}

SmcResult cis_smc(const GaussianDist& prior, const GaussianLikelihood& lik, const SmcOptions& opt, Rng& rng,
                  const RecordSink& sink) {
    const Eigen::Index n = prior.dim();
    if (lik.dim() != n) throw ValidationError("cis_smc: likelihood/prior dimension mismatch");
    if (opt.n_samp < 2) throw ValidationError("cis_smc: n_samp must be >= 2");
    if (opt.n_moves < 0 || opt.n_perp < 1 || opt.max_stages < 1) throw ValidationError("cis_smc: invalid counts");
    if (!(opt.tau_fraction > 0.0 && opt.tau_fraction < 1.0) ||
        !(opt.tau_fraction_degenerate > 0.0 && opt.tau_fraction_degenerate < 1.0))
        throw ValidationError("cis_smc: ESS fractions must lie in (0, 1)");
    if (!(opt.pcn_step > 0.0 && opt.pcn_step <= 1.0)) throw ValidationError("cis_smc: pcn_step must lie in (0, 1]");
    RankRule rule = opt.rule;
    rule.r_max = std::min(rule.r_max, n);
    rule.r_min = std::min(rule.r_min, rule.r_max);
    rule.validate(n);

    auto choose_tau = [&](const Vector& log_w, Eigen::Index count) {
        const Vector w = (log_w.array() - log_w.maxCoeff()).exp();
        const double frac = w.maxCoeff() / w.sum() > opt.degenerate_max_weight ? opt.tau_fraction_degenerate : opt.tau_fraction;
        return frac * static_cast<double>(count);
    };

    WeightedSampleSet archive;
    const Matrix x0 = prior.sample(rng, opt.n_samp);
    const Vector ll0 = batch_log_likelihood(lik, x0);
    std::uint64_t evals = static_cast<std::uint64_t>(opt.n_samp);
    archive.append(x0, ll0, Vector::Constant(opt.n_samp, log_mean_exp(ll0)), 0.0);

    std::vector<double> betas{0.0};
    const Vector zeros = Vector::Zero(opt.n_samp);
    double beta_next = update_beta(0.0, ll0, zeros, choose_tau(zeros, opt.n_samp));
    Eigen::Index last_begin = 0, last_size = opt.n_samp;

    std::vector<IterationRecord> records;
    std::optional<Matrix> prev_v;
    double step = opt.pcn_step;
    int t = 0;

    while (beta_next < 1.0) {
        ++t;
        if (t > opt.max_stages) {
            std::ostringstream os;
            os << "cis_smc: tempering did not reach beta = 1 within " << opt.max_stages << " stages (beta = " << betas.back()
               << ")";
            throw NonConvergenceError(os.str());
        }
        const double beta = beta_next;
        betas.push_back(beta);
        archive.beta_target = beta;
        const Estimate est = estimate_projector(archive, prior.cov(), rule);
        const Projector& proj = est.pp.projector;
        const Eigen::Index r = proj.rank();
        const Vector m_r = proj.u_r().transpose() * prior.mean();
        const Vector m_perp = perp_prior_mean(prior, proj);

        // redraw the previous stage's particles
        const Vector w_last = est.weights.segment(last_begin, last_size);
        const std::vector<Eigen::Index> picks = resample(w_last, ResampleScheme::systematic, opt.clip, rng);
        Matrix z(opt.n_samp, r);
        for (int i = 0; i < opt.n_samp; ++i)
            z.row(i) = proj.reduce_r(archive.samples.row(last_begin + picks[static_cast<std::size_t>(i)]).transpose()).transpose();

        auto target = [&](const Vector& zr) {
            return -0.5 * (zr - m_r).squaredNorm() + beta * lik.log_likelihood(proj.reconstruct(zr, m_perp));
        };
        Vector log_target(opt.n_samp);
        parallel_for(static_cast<std::size_t>(opt.n_samp), [&](std::size_t i) {
            log_target(static_cast<Eigen::Index>(i)) = target(z.row(static_cast<Eigen::Index>(i)).transpose());
        });
        evals += static_cast<std::uint64_t>(opt.n_samp);

        // pCN reference: weighted moments of the whole previous batch in z_r
        Matrix z_prev(last_size, r);
        for (Eigen::Index i = 0; i < last_size; ++i)
            z_prev.row(i) = proj.reduce_r(archive.samples.row(last_begin + i).transpose()).transpose();
        const Vector ref_mean = weighted_mean(z_prev, w_last);
        Matrix ref_cov = Matrix::Identity(r, r);
        if (ess(w_last) >= 2.0) ref_cov = weighted_cov(z_prev, w_last);
        ref_cov += std::max(1e-10, 1e-6 * ref_cov.trace() / static_cast<double>(r)) * Matrix::Identity(r, r);
        const SpdMatrix ref(ref_cov);
        const std::uint64_t seed = rng();
        long accepted = 0;
        for (int m = 0; m < opt.n_moves; ++m) {
            const int acc = pcn_sweep(z, log_target, target, ref_mean, ref, step, seed, static_cast<std::uint64_t>(m));
            accepted += acc;
            evals += static_cast<std::uint64_t>(opt.n_samp);
            const double rate = static_cast<double>(acc) / opt.n_samp;
            step = std::clamp(step * std::exp(2.0 * (rate - opt.target_acceptance)), 1e-3, 1.0);
        }

        Vector ll_m(opt.n_samp);
        for (int i = 0; i < opt.n_samp; ++i) ll_m(i) = (log_target(i) + 0.5 * (z.row(i).transpose() - m_r).squaredNorm()) / beta;

        const Matrix xs = assemble_full_posterior(proj, z, prior, opt.n_perp, rng);
        const Vector ll = batch_log_likelihood(lik, xs);
        evals += static_cast<std::uint64_t>(xs.rows());
        Vector ll_approx(xs.rows());
        for (int i = 0; i < opt.n_samp; ++i) {
            auto seg = ll_approx.segment(static_cast<Eigen::Index>(i) * opt.n_perp, opt.n_perp);
            if (opt.n_perp >= 2) {
                // MC estimate of the tempered approximate likelihood from the completions
                const Vector row = beta * ll.segment(static_cast<Eigen::Index>(i) * opt.n_perp, opt.n_perp);
                seg.setConstant(log_mean_exp(row) / beta);
            } else {
                seg.setConstant(ll_m(i));
            }
        }

        IterationRecord rec;
        rec.iteration = t;
        rec.beta = beta;
        rec.eigenvalues = est.pp.pencil.values;
        rec.rank = r;
        rec.r_max = rule.r_max;
        rec.angles = angles_between(prev_v, proj);
        if (opt.n_perp >= 2) {
            const Matrix grid = Eigen::Map<const Matrix>(ll.data(), opt.n_perp, opt.n_samp).transpose();
            rec.bound = bound_estimate(grid);
        }
        rec.ess = est.ess;
        rec.samples_used = archive.size();
        rec.acceptance = opt.n_moves ? static_cast<double>(accepted) / (static_cast<double>(opt.n_moves) * opt.n_samp) : 0.0;
        rec.evaluations = evals;
        rec.v_r = proj.v_r();
        if (sink) sink(rec);
        records.push_back(rec);
        prev_v = rec.v_r;

        last_begin = archive.size();
        last_size = xs.rows();
        archive.append(xs, ll, ll_approx, beta);

        // ESS over particles, each represented by its approximate likelihood
        Vector ll_part(opt.n_samp);
        for (int i = 0; i < opt.n_samp; ++i) ll_part(i) = ll_approx(static_cast<Eigen::Index>(i) * opt.n_perp);
        const Vector tempered = beta * ll_part;
        beta_next = update_beta(beta, ll_part, tempered, choose_tau(Vector(beta * ll_part - tempered), opt.n_samp));
    }

    betas.push_back(1.0);
    archive.beta_target = 1.0;
    Estimate fin = estimate_projector(archive, prior.cov(), rule);
    IterationRecord rec;
    rec.iteration = t + 1;
    rec.beta = 1.0;
    rec.eigenvalues = fin.pp.pencil.values;
    rec.rank = fin.pp.projector.rank();
    rec.r_max = rule.r_max;
    rec.angles = angles_between(prev_v, fin.pp.projector);
    rec.ess = fin.ess;
    rec.samples_used = archive.size();
    rec.evaluations = evals;
    rec.v_r = fin.pp.projector.v_r();
    if (sink) sink(rec);
    records.push_back(rec);

    return SmcResult{std::move(fin.pp.projector), std::move(fin.pp.pencil), std::move(records), std::move(betas),
                     std::move(archive), evals};
}

Matrix assemble_full_posterior(const Projector& proj, const Matrix& z_r, const GaussianDist& prior, int n_perp_per, Rng& rng,
                               bool deterministic) {
    require_matching_prior(prior, proj);
    if (z_r.cols() != proj.rank()) throw ValidationError("assemble_full_posterior: reduced samples have wrong width");
    if (n_perp_per < 1) throw ValidationError("assemble_full_posterior: n_perp_per must be >= 1");
    if (deterministic && n_perp_per != 1) throw ValidationError("assemble_full_posterior: deterministic completion needs n_perp_per = 1");
    const Vector m_perp = perp_prior_mean(prior, proj);
    Matrix out(z_r.rows() * n_perp_per, proj.dim());
    for (Eigen::Index i = 0; i < z_r.rows(); ++i) {
        const Vector base = proj.v_r() * z_r.row(i).transpose();
        for (int j = 0; j < n_perp_per; ++j) {
            const Vector perp = deterministic ? m_perp : Vector(m_perp + standard_normal(rng, m_perp.size()));
            out.row(i * n_perp_per + j) = (base + proj.v_perp() * perp).transpose();
        }
    }
    return out;
}

std::vector<ConvergenceRow> convergence_report(const std::vector<IterationRecord>& records, const ConvergenceThresholds& th) {
    if (records.size() < 2) throw ValidationError("convergence_report: need at least two iterations");
    std::vector<ConvergenceRow> rows;
    for (const auto& rec : records) {
        ConvergenceRow row;
        row.iteration = rec.iteration;
        row.rank = rec.rank;
        row.evaluations = rec.evaluations;
        if (rec.angles.size()) {
            row.angle_norm = rec.angles.norm();
            row.max_angle = rec.angles.maxCoeff();
        }
        if (rec.bound) {
            row.e_sqrt_w = rec.bound->e_sqrt_w;
            row.var_sqrt_w = rec.bound->var_sqrt_w;
            row.e_cond_var_w = rec.bound->e_cond_var_w;
            row.stop = row.var_sqrt_w < th.max_variance && row.e_cond_var_w < th.max_variance && row.e_sqrt_w > th.min_expectation;
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace cis
