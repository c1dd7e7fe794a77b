#pragma once

// Renewable expectile regression. The whole history of the stream is
// summarised by the cumulative weighted Hessian and the current estimate;
// each new batch costs one p x p solve and two weighted passes over the
// batch, never a revisit of earlier data.

#include <cstdint>
#include <string>

#include "reer/expectile.hpp"
#include "reer/linalg.hpp"

namespace reer {

template <typename Scalar>
struct SummaryState {
    SymMatrix<Scalar> h;          ///< sum_t W_t(beta_t), unnormalised
    Coefficients<Scalar> beta;    ///< current renewable estimate
    std::int64_t n_seen = 0;
    std::int64_t batches_seen = 0;

    Index dim() const noexcept { return h.dim(); }
    ExpectileLevel tau() const noexcept { return beta.tau(); }

    friend bool operator==(const SummaryState& a, const SummaryState& b) {
        return a.h == b.h && a.beta == b.beta && a.n_seen == b.n_seen &&
               a.batches_seen == b.batches_seen;
    }
};

using SummaryStated = SummaryState<double>;

/// Fits the first batch by IRLS and stores its weighted Hessian.
template <typename Scalar>
SummaryState<Scalar> init_state(const Batch<Scalar>& first_batch, ExpectileLevel tau,
                                const IrlsConfig<Scalar>& cfg = {}) {
    Coefficients<Scalar> beta = irls_fit(first_batch, tau, cfg);
    SymMatrix<Scalar> h = weighted_hessian(first_batch, beta);
    return {std::move(h), std::move(beta), first_batch.rows(), 1};
}

/// beta_b = [H + W_b(beta_{b-1})]^-1 [H beta_{b-1} + U_b(beta_{b-1})], then
/// H += W_b(beta_b). Batches of any size are accepted once initialised.
template <typename Scalar>
SummaryState<Scalar> renew_update(const SummaryState<Scalar>& state, const Batch<Scalar>& batch) {
    if (state.batches_seen < 1) throw InvalidArgument("renew_update on an uninitialised state");
    if (batch.cols() != state.dim())
        throw DimensionMismatch("batch has " + std::to_string(batch.cols()) +
                                " columns, state has dimension " + std::to_string(state.dim()));

    const Moments<Scalar> m = batch_moments(batch, state.beta);
    const Vec<Scalar> rhs = state.h * state.beta.beta() + m.u_vec;
    Coefficients<Scalar> next(spd_solve(state.h + m.w_mat, rhs), state.tau());
    SymMatrix<Scalar> h = state.h + weighted_hessian(batch, next);
    return {std::move(h), std::move(next), state.n_seen + batch.rows(), state.batches_seen + 1};
}

template <typename Scalar>
const Coefficients<Scalar>& current_estimate(const SummaryState<Scalar>& state) {
    return state.beta;
}

}  // namespace reer
