#include "cis/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "cis/errors.hpp"

namespace cis {

namespace {

HellingerEstimate finish_hellinger(double mean_w, double mean_sqrt_w) {
    HellingerEstimate h;
    h.mean_w = mean_w;
    const double raw = mean_w - mean_sqrt_w * mean_sqrt_w;
    h.clipped = raw < 0.0 || raw > 1.0;
    h.var_sqrt_w = std::clamp(raw, 0.0, 1.0);
    h.unreliable = std::abs(mean_w - 1.0) > 0.5;
    h.value = 1.0 - std::sqrt(1.0 - h.var_sqrt_w);
    return h;
}

void check_nonnegative(const Vector& w, const char* what) {
    if (w.size() == 0) throw ValidationError(std::string(what) + ": empty weights");
    if (!w.allFinite() || (w.array() < 0.0).any()) throw ValidationError(std::string(what) + ": weights must be finite and nonnegative");
}

}  // namespace

HellingerEstimate hellinger_sq_from_weights(const Vector& w) {
    check_nonnegative(w, "hellinger_sq_from_weights");
    return finish_hellinger(w.mean(), w.array().sqrt().mean());
}

HellingerEstimate hellinger_sq_from_weights(const Vector& w, const Vector& q) {
    check_nonnegative(w, "hellinger_sq_from_weights");
    if (q.size() != w.size()) throw ValidationError("hellinger_sq_from_weights: probability vector has wrong length");
    if ((q.array() < 0.0).any() || std::abs(q.sum() - 1.0) > 1e-12)
        throw ValidationError("hellinger_sq_from_weights: probabilities must be nonnegative and sum to 1");
    return finish_hellinger(q.dot(w), q.dot(Vector(w.array().sqrt())));
}

BoundEstimate bound_estimate(const Matrix& log_lik, int n_mc) {
    const Eigen::Index n = log_lik.rows(), m = log_lik.cols();
    if (m < 2) throw ValidationError("bound_estimate: need at least two completions per reduced sample");
    if (n < 1) throw ValidationError("bound_estimate: no reduced samples");
    BoundEstimate b;
    b.n_mc = n_mc > 0 ? n_mc : static_cast<int>(m);
    Vector row_sqrt(n), row_var(n), row_w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector ll = log_lik.row(i).transpose();
        const double top = ll.maxCoeff();
        if (!std::isfinite(top)) throw DegeneracyError("bound_estimate: zero likelihood for every completion of a sample", 0.0);
        Vector w = (ll.array() - top).exp();
        w /= w.mean();
        row_w(i) = w.mean();
        row_sqrt(i) = w.array().sqrt().mean();
        row_var(i) = (w.array() - w.mean()).square().sum() / static_cast<double>(m - 1);
    }
    b.e_sqrt_w = row_sqrt.mean();
    const double raw = row_w.mean() - b.e_sqrt_w * b.e_sqrt_w;
    b.clipped = raw < 0.0 || raw > 1.0;
    b.var_sqrt_w = std::clamp(raw, 0.0, 1.0);
    b.e_cond_var_w = row_var.mean();
    b.hellinger_sq_bound = 1.0 - std::sqrt(1.0 - b.var_sqrt_w) + 2.0 / b.n_mc * b.e_cond_var_w;
    if (n > 1) {
        const double sd = std::sqrt((row_sqrt.array() - b.e_sqrt_w).square().sum() / static_cast<double>(n - 1));
        b.first_term_se = sd / std::sqrt(static_cast<double>(n));
    }
    return b;
}

double ess(const Vector& w) {
    check_nonnegative(w, "ess");
    const double s = w.sum();
    if (!(s > 0.0)) throw DegeneracyError("ess: all weights are zero", 0.0);
    const double scale = w.maxCoeff();
    const Vector v = w / scale;
    return v.sum() * v.sum() / v.squaredNorm();
}

WeightStats weight_stats(const Vector& w) {
    WeightStats st;
    st.ess = ess(w);
    const Vector p = w / w.sum();
    const double n = static_cast<double>(w.size());
    st.fraction_above_one = static_cast<double>((p.array() * n > 1.0).count()) / n;
    st.max_normalized = p.maxCoeff();
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (p(i) > 0.0) st.entropy -= p(i) * std::log(p(i));
    return st;
}

double gaussian_kld(const GaussianDist& p, const GaussianDist& q) {
    if (p.dim() != q.dim()) throw ValidationError("gaussian_kld: dimension mismatch");
    const double n = static_cast<double>(p.dim());
    const double trace = q.cov().solve(p.cov().matrix()).trace();
    const double maha = q.cov().inv_quad(q.mean() - p.mean());
    return std::max(0.0, 0.5 * (trace + maha - n + q.cov().log_det() - p.cov().log_det()));
}

Autocorrelation autocorrelation(const Vector& chain, int max_lag) {
    if (max_lag < 0 || chain.size() <= max_lag) throw ValidationError("autocorrelation: chain must be longer than max_lag");
    Autocorrelation out;
    out.acf = Vector::Zero(max_lag + 1);
    const Vector c = chain.array() - chain.mean();
    const double c0 = c.squaredNorm();
    out.acf(0) = 1.0;
    if (c0 <= 0.0) {
        out.constant = true;
        return out;
    }
    const Eigen::Index n = chain.size();
    for (int k = 1; k <= max_lag; ++k) out.acf(k) = c.head(n - k).dot(c.tail(n - k)) / c0;
    return out;
}

Matrix modal_contribution(const Projector& proj, const std::vector<std::vector<Eigen::Index>>& blocks) {
    const Eigen::Index r = proj.rank();
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(blocks.size()), r);
    const Matrix v = proj.v_r();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        double running = 0.0;
        for (Eigen::Index k = 0; k < r; ++k) {
            for (Eigen::Index i : blocks[b]) {
                if (i < 0 || i >= proj.dim()) throw ValidationError("modal_contribution: block index out of range");
                running += v(i, k) * v(i, k);
            }
            out(static_cast<Eigen::Index>(b), k) = running;
        }
        if (running > 0.0) out.row(static_cast<Eigen::Index>(b)) /= running;
    }
    return out;
}

double uniform_deviation(const Vector& cumulative) {
    const Eigen::Index r = cumulative.size();
    if (r == 0) throw ValidationError("uniform_deviation: empty row");
    double worst = 0.0;
    for (Eigen::Index k = 0; k < r; ++k)
        worst = std::max(worst, std::abs(cumulative(k) - static_cast<double>(k + 1) / static_cast<double>(r)));
    return worst;
}

}  // namespace cis
