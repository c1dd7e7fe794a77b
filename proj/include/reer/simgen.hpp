#pragma once

// Synthetic streams y = x'beta* + (x'gamma) eps with x = (1, U(0,1), ...),
// the implied true expectile coefficients, and the Monte-Carlo runner that
// turns replications into BIAS / MSE / time tables.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reer/baselines.hpp"
#include "reer/expectile.hpp"
#include "reer/renewable.hpp"

namespace reer {

enum class ErrorDist { StdNormal, StudentT3 };

/// S1: total rows fixed, batch size varies. S2: batch size fixed, batch count varies.
enum class Scenario { S1, S2 };

enum class Method { Oracle, ReER, PAER, DCER };

std::string method_name(Method m);
std::optional<Method> parse_method(const std::string& name);

/// Rows are generated in blocks of this many; see generate_batch.
inline constexpr std::int64_t kRowBlock = 100;

struct SimConfig {
    int case_id = 1;
    Scenario scenario = Scenario::S2;
    ExpectileLevel tau{0.25};
    int n_k = 300;
    int num_batches = 100;
    int reps = 200;
    std::uint64_t seed = 1;
    Vecd beta_star = Vecd::Constant(3, 0.0);
    Vecd gamma = Vecd::Constant(3, 0.0);

    /// Cases 1/2: homogeneous gamma = (1,0,0); cases 3/4: gamma = (1,0.25,0).
    /// Cases 1/3 use N(0,1) errors, cases 2/4 use t(3).
    static SimConfig for_case(int case_id, Scenario scenario, double tau, int n_k, int num_batches,
                              int reps, std::uint64_t seed);

    ErrorDist error_dist() const;
    Index dim() const noexcept { return beta_star.size(); }
    std::int64_t total_rows() const noexcept {
        return static_cast<std::int64_t>(n_k) * num_batches;
    }
    void validate() const;
};

double error_density(ErrorDist dist, double x);
double error_cdf(ErrorDist dist, double x);

/// E[(X - theta)^+] in closed form.
double upper_partial_moment(ErrorDist dist, double theta);

/// Root of tau E[(X-theta)^+] = (1-tau) E[(theta-X)^+].
double distribution_expectile(ErrorDist dist, ExpectileLevel tau);

/// beta* + e_tau(eps) gamma.
Vecd true_coefficients(const SimConfig& cfg);

/// Rows [batch_index * n_k, (batch_index + 1) * n_k) of replication
/// `rep_index`. Each 100-row block draws from its own engine seeded by
/// hashing (seed, rep, block), so a given row is the same for every batch size.
Batchd generate_batch(const SimConfig& cfg, int batch_index, int rep_index);

std::vector<Batchd> generate_stream(const SimConfig& cfg, int rep_index);

struct RunOptions {
    int threads = 0;  ///< 0: hardware concurrency
    IrlsConfigd irls{};
    PaerWeight paer_weight = PaerWeight::FinalFraction;
};

/// Runs one estimator over a stream from start to finish.
Coefficientsd run_method(Method method, std::span<const Batchd> batches, ExpectileLevel tau,
                         const RunOptions& opts = {});

struct MethodMetrics {
    Method method;
    Vecd bias;
    Vecd mse;
    double mean_time_seconds = 0.0;
    int reps = 0;
};

struct RepFailure {
    int rep;
    Method method;
    std::string message;
};

struct MetricsTable {
    SimConfig config;
    std::vector<MethodMetrics> methods;
    std::vector<RepFailure> failures;
    int reps_used = 0;

    const MethodMetrics& at(Method m) const;
};

/// A replication where any method fails is dropped for every method.
MetricsTable run_experiment(const SimConfig& cfg, const std::vector<Method>& methods,
                            const RunOptions& opts = {});

void write_metrics_csv(const MetricsTable& table, std::ostream& out);

}  // namespace reer
