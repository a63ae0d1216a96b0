#include "cis/models.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "cis/errors.hpp"
#include "cis/parallel.hpp"

namespace cis {

Matrix ForwardModel::jacobian(const Vector& x) const { return fd_jacobian(*this, x); }

Matrix fd_jacobian(const ForwardModel& model, const Vector& x, double h_rel) {
    if (!(h_rel > 0.0)) throw ValidationError("fd_jacobian: h_rel must be positive");
    if (x.size() != model.n_in()) throw ValidationError("fd_jacobian: input dimension mismatch");
    Matrix jac(model.n_out(), model.n_in());
    Vector xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = h_rel * std::max(1.0, std::abs(x(i)));
        xp(i) = x(i) + h;
        const Vector fp = model.evaluate(xp);
        xp(i) = x(i) - h;
        const Vector fm = model.evaluate(xp);
        xp(i) = x(i);
        jac.col(i) = (fp - fm) / (2.0 * h);
    }
    return jac;
}

Vector LinearModel::evaluate(const Vector& x) const {
    if (x.size() != n_in()) throw ValidationError("LinearModel: input dimension mismatch");
    return f_ * x;
}

Vector FunctionModel::evaluate(const Vector& x) const {
    if (x.size() != n_in_) throw ValidationError("FunctionModel: input dimension mismatch");
    Vector y = fn_(x);
    if (y.size() != n_out_) throw ValidationError("FunctionModel: callable returned wrong output length");
    return y;
}

PolynomialModel::PolynomialModel(int degree, double coefficient) : degree_(degree), coefficient_(coefficient) {
    if (degree < 0) throw ValidationError("PolynomialModel: negative degree");
}

Vector PolynomialModel::evaluate(const Vector& x) const {
    if (x.size() != 1) throw ValidationError("PolynomialModel: input must be scalar");
    return Vector::Constant(1, coefficient_ * std::pow(x(0), degree_));
}

Matrix PolynomialModel::jacobian(const Vector& x) const {
    if (x.size() != 1) throw ValidationError("PolynomialModel: input must be scalar");
    const double d = degree_ == 0 ? 0.0 : coefficient_ * degree_ * std::pow(x(0), degree_ - 1);
    return Matrix::Constant(1, 1, d);
}

Vector CountingModel::evaluate(const Vector& x) const {
    count_.fetch_add(1);
    return inner_->evaluate(x);
}

Matrix CountingModel::jacobian(const Vector& x) const {
    // finite differences through this wrapper so every forward solve is counted
    return fd_jacobian(*this, x);
}

// ---------------------------------------------------------------------------

Matrix gomos_forward(const Matrix& a, const Matrix& l, const Matrix& b) {
    if (a.rows() != a.cols()) throw ValidationError("gomos_forward: A must be square (N_alt x N_alt)");
    if (b.rows() != a.rows()) throw ValidationError("gomos_forward: B must have N_alt rows");
    if (b.cols() != l.cols()) throw ValidationError("gomos_forward: B and L disagree on the number of gases");
    const Matrix depth = l * b.transpose() * a.transpose();  // optical depth, N_lambda x N_alt
    return (-depth.array()).exp().matrix();
}

GomosModel::GomosModel(Matrix path_lengths, Matrix cross_sections) : a_(std::move(path_lengths)), l_(std::move(cross_sections)) {
    if (a_.rows() != a_.cols()) throw ValidationError("GomosModel: path-length matrix must be square");
    if ((a_.array() < 0.0).any() || (l_.array() < 0.0).any()) throw ValidationError("GomosModel: negative physical entries");
}

Matrix GomosModel::concentrations(const Vector& x) const {
    if (x.size() != n_in()) throw ValidationError("GomosModel: input dimension mismatch");
    Matrix b(n_alt(), n_gas());
    for (Eigen::Index g = 0; g < n_gas(); ++g)
        for (Eigen::Index j = 0; j < n_alt(); ++j) b(j, g) = std::exp(x(g * n_alt() + j));
    return b;
}

Vector GomosModel::evaluate(const Vector& x) const {
    const Matrix t = gomos_forward(a_, l_, concentrations(x));
    return Eigen::Map<const Vector>(t.data(), t.size());
}

Matrix GomosModel::jacobian(const Vector& x) const {
    const Matrix b = concentrations(x);
    const Matrix t = gomos_forward(a_, l_, b);
    Matrix jac = Matrix::Zero(n_out(), n_in());
    for (Eigen::Index j = 0; j < n_alt(); ++j)
        for (Eigen::Index lam = 0; lam < n_lambda(); ++lam) {
            const Eigen::Index row = j * n_lambda() + lam;
            for (Eigen::Index g = 0; g < n_gas(); ++g)
                for (Eigen::Index i = 0; i < n_alt(); ++i)
                    jac(row, g * n_alt() + i) = -t(lam, j) * a_(j, i) * l_(lam, g) * b(i, g);
        }
    return jac;
}

// ---------------------------------------------------------------------------

Matrix kernel_matrix(const Vector& grid, double corr_length, KernelKind kind) {
    if (!(corr_length > 0.0)) throw ValidationError("kernel_matrix: correlation length must be positive");
    const Eigen::Index n = grid.size();
    Matrix k(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            const double d = std::abs(grid(i) - grid(j));
            k(i, j) = kind == KernelKind::exponential_l1 ? std::exp(-d / corr_length)
                                                         : std::exp(-0.5 * d * d / (corr_length * corr_length));
        }
    return k;
}

KlField kl_build(const Vector& grid, double corr_length, KernelKind kind, Eigen::Index n_modes) {
    if (n_modes < 1 || n_modes > grid.size()) throw ValidationError("kl_build: n_modes must lie in [1, grid size]");
    const Matrix k = kernel_matrix(grid, corr_length, kind);
    Eigen::SelfAdjointEigenSolver<Matrix> es(k);
    if (es.info() != Eigen::Success) throw FactorizationError("kl_build: eigensolver failed");
    const Vector& ev = es.eigenvalues();  // ascending
    const double top = ev(ev.size() - 1);
    if (ev(0) < -1e-10 * top) {
        std::ostringstream os;
        os << "kl_build: kernel is not PSD on the grid (min eigenvalue " << ev(0) << ")";
        throw ValidationError(os.str());
    }
    KlField field;
    field.grid = grid;
    field.corr_length = corr_length;
    field.kernel = kind;
    field.eigenvalues.resize(n_modes);
    field.modes.resize(grid.size(), n_modes);
    for (Eigen::Index i = 0; i < n_modes; ++i) {
        const Eigen::Index src = ev.size() - 1 - i;
        field.eigenvalues(i) = std::max(0.0, ev(src));
        field.modes.col(i) = es.eigenvectors().col(src);
    }
    canonicalize_signs(field.modes);
    return field;
}

Vector kl_realize(const KlField& field, const Vector& x) {
    if (x.size() != field.n_modes()) throw ValidationError("kl_realize: coefficient vector has wrong length");
    return field.modes * (field.eigenvalues.array().sqrt() * x.array()).matrix();
}

Vector uniform_grid(Eigen::Index count) {
    if (count < 2) throw ValidationError("uniform_grid: need at least two points");
    return Vector::LinSpaced(count, 0.0, 1.0);
}

Vector elliptic1d_solve(const Vector& log_f) {
    const Eigen::Index n = log_f.size();
    if (n < 3) throw ValidationError("elliptic1d: grid must have at least 3 nodes");
    if (!log_f.allFinite()) throw ValidationError("elliptic1d: non-finite log-permeability");
    const double dx = 1.0 / static_cast<double>(n - 1);
    const double g = 1.0;
    const Vector f = log_f.array().exp();
    Vector face(n - 1);
    for (Eigen::Index k = 0; k + 1 < n; ++k) face(k) = 2.0 * f(k) * f(k + 1) / (f(k) + f(k + 1));

    // unknowns h_1 .. h_{n-1}; tridiagonal (sub, diag, sup)
    const Eigen::Index m = n - 1;
    Vector sub(m), diag(m), sup(m), rhs(m);
    for (Eigen::Index row = 0; row < m; ++row) {
        const Eigen::Index node = row + 1;
        if (node < n - 1) {
            diag(row) = face(node - 1) + face(node);
            sub(row) = -face(node - 1);
            sup(row) = -face(node);
            rhs(row) = g * dx * dx;
        } else {
            // zero flux through the right end, half control volume
            diag(row) = face(node - 1);
            sub(row) = -face(node - 1);
            sup(row) = 0.0;
            rhs(row) = 0.5 * g * dx * dx;
        }
    }
    // Thomas algorithm
    for (Eigen::Index row = 1; row < m; ++row) {
        const double w = sub(row) / diag(row - 1);
        diag(row) -= w * sup(row - 1);
        rhs(row) -= w * rhs(row - 1);
    }
    Vector h = Vector::Zero(n);
    h(m) = rhs(m - 1) / diag(m - 1);
    for (Eigen::Index row = m - 2; row >= 0; --row) h(row + 1) = (rhs(row) - sup(row) * h(row + 2)) / diag(row);
    return h;
}

Vector elliptic1d_forward(const Vector& log_f, const std::vector<Eigen::Index>& sensors) {
    const Vector h = elliptic1d_solve(log_f);
    Vector out(static_cast<Eigen::Index>(sensors.size()));
    for (std::size_t k = 0; k < sensors.size(); ++k) {
        if (sensors[k] < 0 || sensors[k] >= h.size()) throw ValidationError("elliptic1d: sensor index out of range");
        out(static_cast<Eigen::Index>(k)) = h(sensors[k]);
    }
    return out;
}

Elliptic1dModel::Elliptic1dModel(KlField field, std::vector<Eigen::Index> sensors)
    : field_(std::move(field)), sensors_(std::move(sensors)) {
    if (sensors_.empty()) throw ValidationError("Elliptic1dModel: no sensors");
    for (auto s : sensors_)
        if (s < 0 || s >= field_.grid.size()) throw ValidationError("Elliptic1dModel: sensor index out of range");
}

Vector Elliptic1dModel::evaluate(const Vector& x) const { return elliptic1d_forward(kl_realize(field_, x), sensors_); }

// ---------------------------------------------------------------------------

GaussianLikelihood::GaussianLikelihood(ModelPtr model, Vector data, SpdMatrix noise_cov)
    : model_(std::move(model)), data_(std::move(data)), noise_(std::move(noise_cov)) {
    if (!model_) throw ValidationError("GaussianLikelihood: null model");
    if (data_.size() != model_->n_out() || noise_.dim() != data_.size())
        throw ValidationError("GaussianLikelihood: data/noise dimensions do not match the model output");
    log_norm_ = -0.5 * (static_cast<double>(data_.size()) * std::log(2.0 * std::numbers::pi) + noise_.log_det());
}

double GaussianLikelihood::log_likelihood_from_output(const Vector& fx) const {
    return log_norm_ - 0.5 * noise_.inv_quad(fx - data_);
}

double GaussianLikelihood::log_likelihood(const Vector& x) const {
    if (x.size() != dim()) throw ValidationError("log_likelihood: input dimension mismatch");
    return log_likelihood_from_output(model_->evaluate(x));
}

Vector GaussianLikelihood::grad_log_likelihood(const Vector& x) const {
    const Matrix jac = model_->jacobian(x);
    return jac.transpose() * noise_.solve(Vector(data_ - model_->evaluate(x)));
}

Vector batch_log_likelihood(const GaussianLikelihood& lik, const Matrix& xs) {
    Vector out(xs.rows());
    parallel_for(static_cast<std::size_t>(xs.rows()), [&](std::size_t i) {
        const auto k = static_cast<Eigen::Index>(i);
        out(k) = lik.log_likelihood(xs.row(k).transpose());
    });
    return out;
}

}  // namespace cis
