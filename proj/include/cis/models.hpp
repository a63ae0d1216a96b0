#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "cis/gaussian.hpp"
#include "cis/linalg.hpp"
#include "cis/random.hpp"

namespace cis {

/// Map F: R^n -> R^m. Implementations must be deterministic and safe to
/// evaluate concurrently.
class ForwardModel {
public:
    virtual ~ForwardModel() = default;
    virtual Eigen::Index n_in() const = 0;
    virtual Eigen::Index n_out() const = 0;
    virtual Vector evaluate(const Vector& x) const = 0;
    /// m x n Jacobian; central finite differences unless overridden.
    virtual Matrix jacobian(const Vector& x) const;
};

using ModelPtr = std::shared_ptr<const ForwardModel>;

/// Central differences with step h_rel * max(1, |x_i|) per coordinate.
Matrix fd_jacobian(const ForwardModel& model, const Vector& x, double h_rel = 1e-5);

class LinearModel final : public ForwardModel {
public:
    explicit LinearModel(Matrix f) : f_(std::move(f)) {}
    Eigen::Index n_in() const override { return f_.cols(); }
    Eigen::Index n_out() const override { return f_.rows(); }
    Vector evaluate(const Vector& x) const override;
    Matrix jacobian(const Vector&) const override { return f_; }
    const Matrix& matrix() const noexcept { return f_; }

private:
    Matrix f_;
};

/// Wraps an arbitrary callable; used for toys and tests.
class FunctionModel final : public ForwardModel {
public:
    using Fn = std::function<Vector(const Vector&)>;
    FunctionModel(Eigen::Index n_in, Eigen::Index n_out, Fn fn) : n_in_(n_in), n_out_(n_out), fn_(std::move(fn)) {}
    Eigen::Index n_in() const override { return n_in_; }
    Eigen::Index n_out() const override { return n_out_; }
    Vector evaluate(const Vector& x) const override;

private:
    Eigen::Index n_in_, n_out_;
    Fn fn_;
};

/// 1D monomial F(x) = coefficient * x^degree.
class PolynomialModel final : public ForwardModel {
public:
    PolynomialModel(int degree, double coefficient);
    Eigen::Index n_in() const override { return 1; }
    Eigen::Index n_out() const override { return 1; }
    Vector evaluate(const Vector& x) const override;
    Matrix jacobian(const Vector& x) const override;

private:
    int degree_;
    double coefficient_;
};

/// Forwards to another model and counts evaluations.
class CountingModel final : public ForwardModel {
public:
    explicit CountingModel(ModelPtr inner) : inner_(std::move(inner)) {}
    Eigen::Index n_in() const override { return inner_->n_in(); }
    Eigen::Index n_out() const override { return inner_->n_out(); }
    Vector evaluate(const Vector& x) const override;
    Matrix jacobian(const Vector& x) const override;
    std::uint64_t count() const noexcept { return count_.load(); }
    void reset() noexcept { count_.store(0); }

private:
    ModelPtr inner_;
    mutable std::atomic<std::uint64_t> count_{0};
};

// ---------------------------------------------------------------------------
// Beer's-law transmission model

/// T = exp(-L B^T A^T), the N_lambda x N_alt matrix equal to the reshaped
/// exp(-(A kron L) vec(B^T)). A: N_alt x N_alt path lengths, L: N_lambda x N_g
/// cross sections, B: N_alt x N_g concentrations.
Matrix gomos_forward(const Matrix& a, const Matrix& l, const Matrix& b);

/// Input: log-concentrations, gas-major (x[g * N_alt + j] = log B(j, g)).
/// Output: vec(T) column-major (index j * N_lambda + lambda).
class GomosModel final : public ForwardModel {
public:
    GomosModel(Matrix path_lengths, Matrix cross_sections);
    Eigen::Index n_in() const override { return n_alt() * n_gas(); }
    Eigen::Index n_out() const override { return n_lambda() * n_alt(); }
    Vector evaluate(const Vector& x) const override;
    Matrix jacobian(const Vector& x) const override;

    Eigen::Index n_alt() const noexcept { return a_.rows(); }
    Eigen::Index n_gas() const noexcept { return l_.cols(); }
    Eigen::Index n_lambda() const noexcept { return l_.rows(); }
    const Matrix& path_lengths() const noexcept { return a_; }
    const Matrix& cross_sections() const noexcept { return l_; }
    Matrix concentrations(const Vector& x) const;

private:
    Matrix a_;
    Matrix l_;
};

// ---------------------------------------------------------------------------
// Karhunen-Loeve fields and the 1D elliptic model

enum class KernelKind { exponential_l1, squared_exponential };

Matrix kernel_matrix(const Vector& grid, double corr_length, KernelKind kind);

struct KlField {
    Vector grid;
    double corr_length = 0.0;
    KernelKind kernel = KernelKind::exponential_l1;
    Vector eigenvalues;  // descending, >= 0
    Matrix modes;        // grid.size() x n_modes, orthonormal columns

    Eigen::Index n_modes() const noexcept { return eigenvalues.size(); }
};

KlField kl_build(const Vector& grid, double corr_length, KernelKind kind, Eigen::Index n_modes);
/// sum_i sqrt(lambda_i) phi_i x_i at the grid points.
Vector kl_realize(const KlField& field, const Vector& x);

/// Uniform grid of `count` points on [0, 1].
Vector uniform_grid(Eigen::Index count);

/// Solves -(f h')' = 1 on [0, 1] with h(0) = 0 and h'(1) = 0 on the uniform
/// grid carrying log_f, using harmonic-mean face permeabilities. Returns the
/// head at the sensor indices.
Vector elliptic1d_forward(const Vector& log_f, const std::vector<Eigen::Index>& sensors);
/// Full nodal head field.
Vector elliptic1d_solve(const Vector& log_f);

/// KL coordinates -> log-permeability -> heads at sensors.
class Elliptic1dModel final : public ForwardModel {
public:
    Elliptic1dModel(KlField field, std::vector<Eigen::Index> sensors);
    Eigen::Index n_in() const override { return field_.n_modes(); }
    Eigen::Index n_out() const override { return static_cast<Eigen::Index>(sensors_.size()); }
    Vector evaluate(const Vector& x) const override;
    const KlField& field() const noexcept { return field_; }
    const std::vector<Eigen::Index>& sensors() const noexcept { return sensors_; }

private:
    KlField field_;
    std::vector<Eigen::Index> sensors_;
};

// ---------------------------------------------------------------------------

/// log N(y; F(x), C_eps) including the normalization constant.
class GaussianLikelihood {
public:
    GaussianLikelihood(ModelPtr model, Vector data, SpdMatrix noise_cov);

    double log_likelihood(const Vector& x) const;
    /// grad log L = J^T C_eps^{-1} (y - F(x)).
    Vector grad_log_likelihood(const Vector& x) const;
    double log_likelihood_from_output(const Vector& fx) const;

    const ForwardModel& model() const noexcept { return *model_; }
    const ModelPtr& model_ptr() const noexcept { return model_; }
    const Vector& data() const noexcept { return data_; }
    const SpdMatrix& noise_cov() const noexcept { return noise_; }
    Eigen::Index dim() const noexcept { return model_->n_in(); }

private:
    ModelPtr model_;
    Vector data_;
    SpdMatrix noise_;
    double log_norm_;
};

/// Evaluates log L at every row of xs (parallel over rows, ordered output).
Vector batch_log_likelihood(const GaussianLikelihood& lik, const Matrix& xs);

}  // namespace cis
