#pragma once

// Small dense symmetric algebra on top of Eigen. Dimensions here are the
// number of regression coefficients, so everything is O(p^3) at worst.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "reer/errors.hpp"

namespace reer {

using Index = Eigen::Index;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vecd = Vec<double>;
using Matd = Mat<double>;

/// Dense p x p matrix that is symmetric bit-for-bit.
///
/// There is no mutable element access. Every way of building one either
/// mirrors a single triangle or combines existing symmetric matrices with
/// element-wise operations, so entry (i, j) and (j, i) never diverge.
template <typename Scalar>
class SymMatrix {
public:
    using MatrixType = Mat<Scalar>;

    explicit SymMatrix(Index dim) : m_(MatrixType::Zero(dim, dim)) {
        if (dim < 1) throw InvalidArgument("SymMatrix dimension must be >= 1");
    }

    static SymMatrix zero(Index dim) { return SymMatrix(dim); }

    static SymMatrix identity(Index dim) {
        SymMatrix s(dim);
        s.m_.diagonal().setOnes();
        return s;
    }

    static SymMatrix diagonal(const Vec<Scalar>& d) {
        SymMatrix s(d.size());
        s.m_.diagonal() = d;
        return s;
    }

    /// Takes the lower triangle of `m` and mirrors it.
    template <typename Derived>
    static SymMatrix from_lower(const Eigen::MatrixBase<Derived>& m) {
        if (m.rows() != m.cols())
            throw DimensionMismatch("from_lower needs a square matrix");
        SymMatrix s(m.rows());
        s.m_.template triangularView<Eigen::Lower>() = m;
        s.mirror_lower();
        return s;
    }

    /// (m + m^T) / 2, which IEEE addition makes exactly symmetric.
    template <typename Derived>
    static SymMatrix symmetrized(const Eigen::MatrixBase<Derived>& m) {
        if (m.rows() != m.cols())
            throw DimensionMismatch("symmetrized needs a square matrix");
        SymMatrix s(m.rows());
        s.m_ = (m + m.transpose()) / Scalar(2);
        return s;
    }

    Index dim() const noexcept { return m_.rows(); }
    const MatrixType& matrix() const noexcept { return m_; }
    Scalar operator()(Index i, Index j) const { return m_(i, j); }
    Scalar trace() const { return m_.trace(); }

    template <typename Other>
    SymMatrix<Other> cast() const {
        return SymMatrix<Other>::from_lower(m_.template cast<Other>());
    }

    friend SymMatrix operator+(const SymMatrix& a, const SymMatrix& b) {
        check_same(a, b);
        SymMatrix s(a.dim());
        s.m_ = a.m_ + b.m_;
        return s;
    }

    friend SymMatrix operator-(const SymMatrix& a, const SymMatrix& b) {
        check_same(a, b);
        SymMatrix s(a.dim());
        s.m_ = a.m_ - b.m_;
        return s;
    }

    friend SymMatrix operator*(Scalar c, const SymMatrix& a) {
        SymMatrix s(a.dim());
        s.m_ = c * a.m_;
        return s;
    }

    friend Vec<Scalar> operator*(const SymMatrix& a, const Vec<Scalar>& x) {
        if (x.size() != a.dim())
            throw DimensionMismatch("SymMatrix * Vec: dimension mismatch");
        return a.m_ * x;
    }

    friend bool operator==(const SymMatrix& a, const SymMatrix& b) {
        return a.dim() == b.dim() && a.m_ == b.m_;
    }

private:
    void mirror_lower() {
        for (Index j = 0; j < m_.cols(); ++j)
            for (Index i = j + 1; i < m_.rows(); ++i) m_(j, i) = m_(i, j);
    }

    static void check_same(const SymMatrix& a, const SymMatrix& b) {
        if (a.dim() != b.dim())
            throw DimensionMismatch("SymMatrix dimensions differ: " + std::to_string(a.dim()) +
                                    " vs " + std::to_string(b.dim()));
    }

    template <typename>
    friend class SymMatrix;

    template <typename S, typename D>
    friend SymMatrix<S> weighted_gram(const Eigen::MatrixBase<D>&, const Vec<S>&);

    MatrixType m_;
};

using SymMatrixd = SymMatrix<double>;

namespace detail {

template <typename Scalar>
constexpr Scalar solve_residual_tol() {
    // 1e-9 for double; float cannot meet that, so scale with epsilon.
    constexpr Scalar eps = std::numeric_limits<Scalar>::epsilon();
    return eps * Scalar(1e3) > Scalar(1e-9) ? eps * Scalar(1e3) : Scalar(1e-9);
}

template <typename Scalar>
bool residual_ok(const Mat<Scalar>& a, const Mat<Scalar>& x, const Mat<Scalar>& b) {
    for (Index c = 0; c < b.cols(); ++c) {
        const Scalar bnorm = b.col(c).template lpNorm<Eigen::Infinity>();
        const Scalar rnorm = (a * x.col(c) - b.col(c)).template lpNorm<Eigen::Infinity>();
        if (!(rnorm <= solve_residual_tol<Scalar>() * (Scalar(1) + bnorm))) return false;
    }
    return true;
}

template <typename Scalar>
std::optional<Mat<Scalar>> try_ldlt_solve(const Mat<Scalar>& factored, const Mat<Scalar>& original,
                                          const Mat<Scalar>& b) {
    Eigen::LDLT<Mat<Scalar>> f(factored);
    if (f.info() != Eigen::Success || !f.isPositive()) return std::nullopt;
    Mat<Scalar> x = f.solve(b);
    if (!x.allFinite() || !residual_ok(original, x, b)) return std::nullopt;
    return x;
}

}  // namespace detail

/// Solves a * X = B for symmetric positive-definite `a`.
///
/// LDL^T first; if that fails or misses the residual bound
/// ||a x - b||_inf <= 1e-9 (1 + ||b||_inf), one retry with diagonal jitter
/// 1e-10 * trace(a) / p. Throws SingularMatrix if both attempts fail.
template <typename Scalar>
Mat<Scalar> spd_solve(const SymMatrix<Scalar>& a, const Mat<Scalar>& b) {
    if (b.rows() != a.dim())
        throw DimensionMismatch("spd_solve: rhs has " + std::to_string(b.rows()) +
                                " rows, matrix is " + std::to_string(a.dim()));
    if (!a.matrix().allFinite() || !b.allFinite())
        throw SingularMatrix("spd_solve: non-finite input");

    if (auto x = detail::try_ldlt_solve<Scalar>(a.matrix(), a.matrix(), b)) return *x;

    const Scalar jitter = Scalar(1e-10) * a.trace() / Scalar(a.dim());
    if (jitter > Scalar(0)) {
        Mat<Scalar> jittered = a.matrix();
        jittered.diagonal().array() += jitter;
        if (auto x = detail::try_ldlt_solve<Scalar>(jittered, a.matrix(), b)) return *x;
    }
    throw SingularMatrix("spd_solve: matrix is singular to working precision (p = " +
                         std::to_string(a.dim()) + ")");
}

template <typename Scalar>
Vec<Scalar> spd_solve(const SymMatrix<Scalar>& a, const Vec<Scalar>& b) {
    return spd_solve(a, Mat<Scalar>(b)).col(0);
}

template <typename Scalar>
SymMatrix<Scalar> spd_inverse(const SymMatrix<Scalar>& a) {
    return SymMatrix<Scalar>::symmetrized(
        spd_solve(a, Mat<Scalar>(Mat<Scalar>::Identity(a.dim(), a.dim()))));
}

/// acc + w * x x^T.
template <typename Scalar>
SymMatrix<Scalar> accumulate_outer(const SymMatrix<Scalar>& acc, const Vec<Scalar>& x, Scalar w) {
    if (x.size() != acc.dim())
        throw DimensionMismatch("accumulate_outer: vector has " + std::to_string(x.size()) +
                                " entries, matrix is " + std::to_string(acc.dim()));
    if (!(w >= Scalar(0))) throw InvalidArgument("accumulate_outer: weight must be non-negative");
    Mat<Scalar> lower = acc.matrix();
    for (Index j = 0; j < x.size(); ++j)
        for (Index i = j; i < x.size(); ++i) lower(i, j) += w * x(i) * x(j);
    return SymMatrix<Scalar>::from_lower(lower);
}

/// sum_i w_i x_i x_i^T over the rows x_i of `x`, computed on the lower
/// triangle only.
template <typename Scalar, typename Derived>
SymMatrix<Scalar> weighted_gram(const Eigen::MatrixBase<Derived>& x, const Vec<Scalar>& w) {
    if (x.rows() != w.size())
        throw DimensionMismatch("weighted_gram: " + std::to_string(x.rows()) + " rows but " +
                                std::to_string(w.size()) + " weights");
    SymMatrix<Scalar> out(x.cols());
    const Mat<Scalar> xw = x.array().colwise() * w.array();
    out.m_.template triangularView<Eigen::Lower>() = x.transpose() * xw;
    out.mirror_lower();
    return out;
}

/// Scale-invariant rank test: the correlation-normalised matrix must have
/// every LDL^T pivot above 1e4 * epsilon.
template <typename Scalar>
bool has_full_rank(const SymMatrix<Scalar>& a) {
    const Vec<Scalar> d = a.matrix().diagonal();
    if (!a.matrix().allFinite() || (d.array() <= Scalar(0)).any()) return false;
    const Vec<Scalar> s = d.array().rsqrt();
    const Mat<Scalar> normalized = s.asDiagonal() * a.matrix() * s.asDiagonal();
    Eigen::LDLT<Mat<Scalar>> f(normalized);
    if (f.info() != Eigen::Success) return false;
    const Scalar tol = Scalar(1e4) * std::numeric_limits<Scalar>::epsilon();
    return f.vectorD().minCoeff() > tol;
}

}  // namespace reer
