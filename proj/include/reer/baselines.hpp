#pragma once

// One-shot aggregation baselines. Each batch is fitted on its own and the
// local fits are combined by a matrix-weighted average whose numerator and
// denominator are plain sums, so states can be merged in any order.
//
//   PAER: [sum w_t X_t'X_t/n_t]^-1 [sum w_t (X_t'X_t/n_t) beta_t]
//   DCER: [sum Q_t^-1]^-1 [sum Q_t^-1 beta_t],  Q_t = per-batch sandwich covariance

#include <cstdint>
#include <string>

#include "reer/expectile.hpp"
#include "reer/linalg.hpp"

namespace reer {

enum class PaerWeight {
    FinalFraction,       ///< w_t proportional to n_t
    CumulativeFraction,  ///< w_t = n_t / N_t, with N_t rows seen up to batch t
};

template <typename Scalar>
struct PaerState {
    SymMatrix<Scalar> acc_mat;
    Vec<Scalar> acc_vec;
    std::int64_t n_seen = 0;
    std::int64_t batches_seen = 0;
    ExpectileLevel tau;
    PaerWeight weight_mode = PaerWeight::FinalFraction;

    static PaerState empty(Index p, ExpectileLevel tau, PaerWeight mode = PaerWeight::FinalFraction) {
        return {SymMatrix<Scalar>(p), Vec<Scalar>::Zero(p), 0, 0, tau, mode};
    }

    Index dim() const noexcept { return acc_mat.dim(); }

    friend bool operator==(const PaerState& a, const PaerState& b) {
        return a.acc_mat == b.acc_mat && a.acc_vec == b.acc_vec && a.n_seen == b.n_seen &&
               a.batches_seen == b.batches_seen && a.tau == b.tau && a.weight_mode == b.weight_mode;
    }
};

template <typename Scalar>
struct DcerState {
    SymMatrix<Scalar> acc_mat;
    Vec<Scalar> acc_vec;
    std::int64_t n_seen = 0;
    std::int64_t batches_seen = 0;
    ExpectileLevel tau;

    static DcerState empty(Index p, ExpectileLevel tau) {
        return {SymMatrix<Scalar>(p), Vec<Scalar>::Zero(p), 0, 0, tau};
    }

    Index dim() const noexcept { return acc_mat.dim(); }

    friend bool operator==(const DcerState& a, const DcerState& b) {
        return a.acc_mat == b.acc_mat && a.acc_vec == b.acc_vec && a.n_seen == b.n_seen &&
               a.batches_seen == b.batches_seen && a.tau == b.tau;
    }
};

using PaerStated = PaerState<double>;
using DcerStated = DcerState<double>;

namespace detail {

template <typename State, typename Scalar>
void check_batch_dim(const State& state, const Batch<Scalar>& batch) {
    if (batch.cols() != state.dim())
        throw DimensionMismatch("batch has " + std::to_string(batch.cols()) +
                                " columns, state has dimension " + std::to_string(state.dim()));
}

template <typename State>
void check_mergeable(const State& a, const State& b) {
    if (a.dim() != b.dim()) throw DimensionMismatch("cannot merge states of different dimension");
    if (!(a.tau == b.tau)) throw InvalidArgument("cannot merge states with different expectile levels");
}

}  // namespace detail

template <typename Scalar>
PaerState<Scalar> paer_update(const PaerState<Scalar>& state, const Batch<Scalar>& batch,
                              const IrlsConfig<Scalar>& cfg = {}) {
    detail::check_batch_dim(state, batch);
    if (batch.rows() < batch.cols()) throw BatchTooSmall(batch.rows(), batch.cols());

    const Coefficients<Scalar> local = irls_fit(batch, state.tau, cfg);
    const Scalar n = static_cast<Scalar>(batch.rows());
    const std::int64_t n_total = state.n_seen + batch.rows();
    const Scalar omega = state.weight_mode == PaerWeight::FinalFraction
                             ? n
                             : n / static_cast<Scalar>(n_total);
    const SymMatrix<Scalar> gram =
        (omega / n) * weighted_gram(batch.x(), Vec<Scalar>(Vec<Scalar>::Ones(batch.rows())));

    PaerState<Scalar> next = state;
    next.acc_mat = state.acc_mat + gram;
    next.acc_vec = state.acc_vec + gram * local.beta();
    next.n_seen = n_total;
    next.batches_seen = state.batches_seen + 1;
    return next;
}

template <typename Scalar>
Coefficients<Scalar> paer_finalize(const PaerState<Scalar>& state) {
    if (state.batches_seen < 1) throw InvalidArgument("PAER state has no batches");
    return Coefficients<Scalar>(spd_solve(state.acc_mat, state.acc_vec), state.tau);
}

template <typename Scalar>
PaerState<Scalar> merge(const PaerState<Scalar>& a, const PaerState<Scalar>& b) {
    detail::check_mergeable(a, b);
    if (a.weight_mode != b.weight_mode)
        throw InvalidArgument("cannot merge PAER states with different weight modes");
    return {a.acc_mat + b.acc_mat, a.acc_vec + b.acc_vec, a.n_seen + b.n_seen,
            a.batches_seen + b.batches_seen, a.tau, a.weight_mode};
}

template <typename Scalar>
DcerState<Scalar> dcer_update(const DcerState<Scalar>& state, const Batch<Scalar>& batch,
                              const IrlsConfig<Scalar>& cfg = {}) {
    detail::check_batch_dim(state, batch);
    if (batch.rows() <= batch.cols()) throw BatchTooSmall(batch.rows(), batch.cols() + 1);

    const Coefficients<Scalar> local = irls_fit(batch, state.tau, cfg);
    const SymMatrix<Scalar> precision = spd_inverse(sandwich_covariance(batch, local));

    DcerState<Scalar> next = state;
    next.acc_mat = state.acc_mat + precision;
    next.acc_vec = state.acc_vec + precision * local.beta();
    next.n_seen = state.n_seen + batch.rows();
    next.batches_seen = state.batches_seen + 1;
    return next;
}

template <typename Scalar>
Coefficients<Scalar> dcer_finalize(const DcerState<Scalar>& state) {
    if (state.batches_seen < 1) throw InvalidArgument("DCER state has no batches");
    return Coefficients<Scalar>(spd_solve(state.acc_mat, state.acc_vec), state.tau);
}

template <typename Scalar>
DcerState<Scalar> merge(const DcerState<Scalar>& a, const DcerState<Scalar>& b) {
    detail::check_mergeable(a, b);
    return {a.acc_mat + b.acc_mat, a.acc_vec + b.acc_vec, a.n_seen + b.n_seen,
            a.batches_seen + b.batches_seen, a.tau};
}

}  // namespace reer
