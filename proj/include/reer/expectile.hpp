#pragma once

// Asymmetric squared loss, its IRLS solver, and the plug-in sandwich
// covariance of the resulting estimator.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reer/errors.hpp"
#include "reer/linalg.hpp"

namespace reer {

/// Expectile level tau, strictly inside (0, 1).
class ExpectileLevel {
public:
    explicit ExpectileLevel(double tau) : tau_(tau) {
        if (!(tau > 0.0 && tau < 1.0))
            throw InvalidArgument("expectile level must lie in (0, 1), got " + std::to_string(tau));
    }

    double value() const noexcept { return tau_; }

    friend bool operator==(ExpectileLevel a, ExpectileLevel b) noexcept { return a.tau_ == b.tau_; }

private:
    double tau_;
};

/// One arriving block of data: design matrix and response.
template <typename Scalar>
class Batch {
public:
    Batch(Mat<Scalar> x, Vec<Scalar> y) : x_(std::move(x)), y_(std::move(y)) {
        if (x_.rows() < 1) throw InvalidArgument("batch must contain at least one row");
        if (x_.cols() < 1) throw InvalidArgument("batch must contain at least one column");
        if (x_.rows() != y_.size())
            throw DimensionMismatch("batch has " + std::to_string(x_.rows()) + " design rows but " +
                                    std::to_string(y_.size()) + " responses");
        if (!x_.allFinite() || !y_.allFinite())
            throw InvalidArgument("batch contains non-finite values");
    }

    const Mat<Scalar>& x() const noexcept { return x_; }
    const Vec<Scalar>& y() const noexcept { return y_; }
    Index rows() const noexcept { return x_.rows(); }
    Index cols() const noexcept { return x_.cols(); }

    /// Stacks batches in order into a single batch.
    static Batch pool(std::span<const Batch> batches) {
        if (batches.empty()) throw InvalidArgument("cannot pool an empty batch sequence");
        const Index p = batches.front().cols();
        Index n = 0;
        for (const auto& b : batches) {
            if (b.cols() != p) throw DimensionMismatch("pooled batches differ in column count");
            n += b.rows();
        }
        Mat<Scalar> x(n, p);
        Vec<Scalar> y(n);
        Index row = 0;
        for (const auto& b : batches) {
            x.middleRows(row, b.rows()) = b.x();
            y.segment(row, b.rows()) = b.y();
            row += b.rows();
        }
        return Batch(std::move(x), std::move(y));
    }

private:
    Mat<Scalar> x_;
    Vec<Scalar> y_;
};

using Batchd = Batch<double>;

template <typename Scalar>
class Coefficients {
public:
    Coefficients(Vec<Scalar> beta, ExpectileLevel tau) : beta_(std::move(beta)), tau_(tau) {
        if (beta_.size() < 1) throw InvalidArgument("coefficient vector is empty");
        if (!beta_.allFinite()) throw InvalidArgument("coefficient vector has non-finite entries");
    }

    const Vec<Scalar>& beta() const noexcept { return beta_; }
    ExpectileLevel tau() const noexcept { return tau_; }
    Index size() const noexcept { return beta_.size(); }
    Scalar operator[](Index i) const { return beta_(i); }

    friend bool operator==(const Coefficients& a, const Coefficients& b) {
        return a.tau_ == b.tau_ && a.beta_.size() == b.beta_.size() && a.beta_ == b.beta_;
    }

private:
    Vec<Scalar> beta_;
    ExpectileLevel tau_;
};

using Coefficientsd = Coefficients<double>;

/// IRLS stopping rule and warm start. Without `init` the fit starts from OLS.
template <typename Scalar>
struct IrlsConfig {
    double tol = 1e-8;
    int max_iter = 100;
    std::optional<Vec<Scalar>> init;

    void validate() const {
        if (!(tol > 0.0)) throw InvalidArgument("IRLS tolerance must be positive");
        if (max_iter < 1) throw InvalidArgument("IRLS max_iter must be >= 1");
    }
};

using IrlsConfigd = IrlsConfig<double>;

/// rho_tau(u) = u^2 |tau - I(u < 0)| / 2.
template <typename Scalar>
Scalar asymmetric_loss(Scalar u, ExpectileLevel tau) {
    const Scalar t = static_cast<Scalar>(tau.value());
    return Scalar(0.5) * u * u * (u < Scalar(0) ? Scalar(1) - t : t);
}

/// |tau - I(u < 0)|. A zero residual gets weight tau.
template <typename Scalar>
Scalar asymmetric_weight(Scalar u, ExpectileLevel tau) {
    const Scalar t = static_cast<Scalar>(tau.value());
    return u < Scalar(0) ? Scalar(1) - t : t;
}

template <typename Scalar>
Vec<Scalar> residuals(const Batch<Scalar>& batch, const Vec<Scalar>& beta) {
    if (beta.size() != batch.cols())
        throw DimensionMismatch("batch has " + std::to_string(batch.cols()) +
                                " columns, coefficients have " + std::to_string(beta.size()));
    return batch.y() - batch.x() * beta;
}

template <typename Scalar>
Vec<Scalar> residual_weights(const Vec<Scalar>& r, ExpectileLevel tau) {
    return r.unaryExpr([tau](Scalar u) { return asymmetric_weight(u, tau); });
}

/// Unnormalised weighted moments of one batch at a given coefficient vector.
template <typename Scalar>
struct Moments {
    SymMatrix<Scalar> w_mat;  ///< sum_i w_i x_i x_i^T
    Vec<Scalar> u_vec;        ///< sum_i w_i x_i y_i
};

template <typename Scalar>
Moments<Scalar> batch_moments(const Batch<Scalar>& batch, const Coefficients<Scalar>& beta) {
    const Vec<Scalar> w = residual_weights(residuals(batch, beta.beta()), beta.tau());
    Vec<Scalar> u = batch.x().transpose() * w.cwiseProduct(batch.y());
    return {weighted_gram(batch.x(), w), std::move(u)};
}

/// Only the W part of batch_moments.
template <typename Scalar>
SymMatrix<Scalar> weighted_hessian(const Batch<Scalar>& batch, const Coefficients<Scalar>& beta) {
    return weighted_gram(batch.x(), residual_weights(residuals(batch, beta.beta()), beta.tau()));
}

/// (1/n) sum_i rho_tau(y_i - x_i^T beta).
template <typename Scalar>
Scalar mean_loss(const Batch<Scalar>& batch, const Coefficients<Scalar>& beta) {
    const Vec<Scalar> r = residuals(batch, beta.beta());
    const ExpectileLevel tau = beta.tau();
    return r.unaryExpr([tau](Scalar u) { return asymmetric_loss(u, tau); }).mean();
}

/// Gradient of mean_loss: -(1/n) (U(beta) - W(beta) beta).
template <typename Scalar>
Vec<Scalar> loss_gradient(const Batch<Scalar>& batch, const Coefficients<Scalar>& beta) {
    const Moments<Scalar> m = batch_moments(batch, beta);
    return -(m.u_vec - m.w_mat * beta.beta()) / static_cast<Scalar>(batch.rows());
}

template <typename Scalar>
struct IrlsResult {
    Coefficients<Scalar> coefficients;
    int iterations;  ///< reweighted solves after the warm start
    Scalar last_delta;
};

namespace detail {

template <typename Scalar>
void require_full_rank(const SymMatrix<Scalar>& gram) {
    if (!has_full_rank(gram))
        throw SingularMatrix("design is rank deficient (p = " + std::to_string(gram.dim()) + ")");
}

}  // namespace detail

template <typename Scalar>
IrlsResult<Scalar> irls_fit_detailed(const Batch<Scalar>& data, ExpectileLevel tau,
                                     const IrlsConfig<Scalar>& cfg = {}) {
    cfg.validate();
    const Index p = data.cols();
    Vec<Scalar> beta;
    if (cfg.init) {
        if (cfg.init->size() != p)
            throw DimensionMismatch("IRLS init has " + std::to_string(cfg.init->size()) +
                                    " entries, design has " + std::to_string(p) + " columns");
        beta = *cfg.init;
        detail::require_full_rank(weighted_hessian(data, Coefficients<Scalar>(beta, tau)));
    } else {
        const SymMatrix<Scalar> gram = weighted_gram(data.x(), Vec<Scalar>(Vec<Scalar>::Ones(data.rows())));
        detail::require_full_rank(gram);
        beta = spd_solve(gram, Vec<Scalar>(data.x().transpose() * data.y()));
    }

    Scalar delta = std::numeric_limits<Scalar>::infinity();
    for (int it = 1; it <= cfg.max_iter; ++it) {
        const Moments<Scalar> m = batch_moments(data, Coefficients<Scalar>(beta, tau));
        Vec<Scalar> next = spd_solve(m.w_mat, m.u_vec);
        delta = (next - beta).template lpNorm<Eigen::Infinity>();
        beta = std::move(next);
        if (delta < static_cast<Scalar>(cfg.tol))
            return {Coefficients<Scalar>(std::move(beta), tau), it, delta};
    }
    throw NoConvergence(cfg.max_iter, static_cast<double>(delta),
                        std::vector<double>(beta.data(), beta.data() + beta.size()));
}

/// Full-data expectile fit: rows of all batches are pooled before solving.
template <typename Scalar>
Coefficients<Scalar> irls_fit(std::span<const Batch<Scalar>> batches, ExpectileLevel tau,
                              const IrlsConfig<Scalar>& cfg = {}) {
    if (batches.size() == 1) return irls_fit_detailed(batches.front(), tau, cfg).coefficients;
    return irls_fit_detailed(Batch<Scalar>::pool(batches), tau, cfg).coefficients;
}

template <typename Scalar>
Coefficients<Scalar> irls_fit(const std::vector<Batch<Scalar>>& batches, ExpectileLevel tau,
                              const IrlsConfig<Scalar>& cfg = {}) {
    return irls_fit(std::span<const Batch<Scalar>>(batches), tau, cfg);
}

template <typename Scalar>
Coefficients<Scalar> irls_fit(const Batch<Scalar>& batch, ExpectileLevel tau,
                              const IrlsConfig<Scalar>& cfg = {}) {
    return irls_fit_detailed(batch, tau, cfg).coefficients;
}

/// Plug-in estimate of Var(beta_hat): (1/N) Sw^-1 Omega Sw^-1 with
/// Sw = (1/N) sum w x x^T and Omega = (1/N) sum w^2 e^2 x x^T.
template <typename Scalar>
SymMatrix<Scalar> sandwich_covariance(std::span<const Batch<Scalar>> batches,
                                      const Coefficients<Scalar>& beta) {
    if (batches.empty()) throw InvalidArgument("sandwich_covariance needs at least one batch");
    const Index p = beta.size();
    SymMatrix<Scalar> bread(p);
    SymMatrix<Scalar> meat(p);
    for (const auto& b : batches) {
        const Vec<Scalar> r = residuals(b, beta.beta());
        const Vec<Scalar> w = residual_weights(r, beta.tau());
        bread = bread + weighted_gram(b.x(), w);
        meat = meat + weighted_gram(b.x(), Vec<Scalar>(w.cwiseProduct(r).array().square()));
    }
    detail::require_full_rank(bread);
    // The 1/N factors cancel: (1/N) (S/N)^-1 (O/N) (S/N)^-1 = S^-1 O S^-1.
    const Mat<Scalar> left = spd_solve(bread, meat.matrix());
    const Mat<Scalar> both = spd_solve(bread, Mat<Scalar>(left.transpose()));
    return SymMatrix<Scalar>::symmetrized(both);
}

template <typename Scalar>
SymMatrix<Scalar> sandwich_covariance(const std::vector<Batch<Scalar>>& batches,
                                      const Coefficients<Scalar>& beta) {
    return sandwich_covariance(std::span<const Batch<Scalar>>(batches), beta);
}

template <typename Scalar>
SymMatrix<Scalar> sandwich_covariance(const Batch<Scalar>& batch, const Coefficients<Scalar>& beta) {
    return sandwich_covariance(std::span<const Batch<Scalar>>(&batch, 1), beta);
}

}  // namespace reer
