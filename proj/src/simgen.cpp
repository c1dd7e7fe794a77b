#include "reer/simgen.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numbers>
#include <ostream>
#include <random>
#include <thread>

#include "reer/format.hpp"

namespace reer {

std::string method_name(Method m) {
    switch (m) {
        case Method::Oracle: return "oracle";
        case Method::ReER: return "reer";
        case Method::PAER: return "paer";
        case Method::DCER: return "dcer";
    }
    return "unknown";
}

std::optional<Method> parse_method(const std::string& name) {
    for (Method m : {Method::Oracle, Method::ReER, Method::PAER, Method::DCER})
        if (method_name(m) == name) return m;
    return std::nullopt;
}

SimConfig SimConfig::for_case(int case_id, Scenario scenario, double tau, int n_k, int num_batches,
                              int reps, std::uint64_t seed) {
    SimConfig cfg;
    cfg.case_id = case_id;
    cfg.scenario = scenario;
    cfg.tau = ExpectileLevel(tau);
    cfg.n_k = n_k;
    cfg.num_batches = num_batches;
    cfg.reps = reps;
    cfg.seed = seed;
    cfg.beta_star = Vecd(3);
    cfg.beta_star << 2.0, 1.0, 2.0;
    cfg.gamma = Vecd(3);
    if (case_id == 3 || case_id == 4)
        cfg.gamma << 1.0, 0.25, 0.0;
    else
        cfg.gamma << 1.0, 0.0, 0.0;
    cfg.validate();
    return cfg;
}

ErrorDist SimConfig::error_dist() const {
    return (case_id == 2 || case_id == 4) ? ErrorDist::StudentT3 : ErrorDist::StdNormal;
}

void SimConfig::validate() const {
    if (case_id < 1 || case_id > 4)
        throw InvalidArgument("case must be 1..4, got " + std::to_string(case_id));
    if (n_k < 1) throw InvalidArgument("batch size must be positive");
    if (num_batches < 1) throw InvalidArgument("number of batches must be positive");
    if (reps < 1) throw InvalidArgument("replication count must be positive");
    if (beta_star.size() < 1 || beta_star.size() != gamma.size())
        throw DimensionMismatch("beta_star and gamma must have the same positive dimension");
    const bool heterogeneous = (gamma.tail(gamma.size() - 1).array() != 0.0).any();
    if ((case_id == 1 || case_id == 2) && heterogeneous)
        throw InvalidArgument("cases 1 and 2 need a constant error scale (gamma slopes zero)");
    if ((case_id == 3 || case_id == 4) && !heterogeneous)
        throw InvalidArgument("cases 3 and 4 need a heterogeneous gamma");
}

namespace {

constexpr double kT3Norm = 2.0 / (std::numbers::pi * std::numbers::sqrt3);

std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t block_key(std::uint64_t seed, std::uint64_t rep, std::uint64_t block) {
    return splitmix(splitmix(splitmix(seed) ^ rep) ^ block);
}

/// One block of kRowBlock rows: covariates (without the intercept) and errors.
struct RowBlock {
    Matd u;
    Vecd eps;
};

RowBlock draw_block(const SimConfig& cfg, int rep, std::int64_t block) {
    std::mt19937_64 engine(block_key(cfg.seed, static_cast<std::uint64_t>(rep),
                                     static_cast<std::uint64_t>(block)));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Index q = cfg.dim() - 1;
    const bool student = cfg.error_dist() == ErrorDist::StudentT3;
    RowBlock out{Matd(kRowBlock, q), Vecd(kRowBlock)};
    for (Index i = 0; i < kRowBlock; ++i) {
        for (Index j = 0; j < q; ++j) out.u(i, j) = unif(engine);
        const double z = normal(engine);
        if (student) {
            double chi2 = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double g = normal(engine);
                chi2 += g * g;
            }
            out.eps(i) = z / std::sqrt(chi2 / 3.0);
        } else {
            out.eps(i) = z;
        }
    }
    return out;
}

}  // namespace

double error_density(ErrorDist dist, double x) {
    if (dist == ErrorDist::StdNormal)
        return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    const double s = 1.0 + x * x / 3.0;
    return kT3Norm / (s * s);
}

double error_cdf(ErrorDist dist, double x) {
    if (dist == ErrorDist::StdNormal) return 0.5 * std::erfc(-x / std::numbers::sqrt2);
    const double t = x / std::numbers::sqrt3;
    return 0.5 + (t / (1.0 + t * t) + std::atan(t)) / std::numbers::pi;
}

double upper_partial_moment(ErrorDist dist, double theta) {
    const double survival = error_cdf(dist, -theta);  // both laws are symmetric
    if (dist == ErrorDist::StdNormal) return error_density(dist, theta) - theta * survival;
    // For t(3), int_theta^inf x f(x) dx = (3 + theta^2) f(theta) / 2.
    return 0.5 * (3.0 + theta * theta) * error_density(dist, theta) - theta * survival;
}

double distribution_expectile(ErrorDist dist, ExpectileLevel level) {
    const double tau = level.value();
    // Both laws have mean zero, so E[(theta - X)^+] = E[(X - theta)^+] + theta.
    auto g = [&](double theta) {
        const double upper = upper_partial_moment(dist, theta);
        return tau * upper - (1.0 - tau) * (upper + theta);
    };
    // g is strictly decreasing.
    double lo = -1.0, hi = 1.0;
    while (g(lo) < 0.0) lo *= 2.0;
    while (g(hi) > 0.0) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double v = g(mid);
        if (v == 0.0) return mid;
        (v > 0.0 ? lo : hi) = mid;
        if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(mid)))
            break;
    }
    return 0.5 * (lo + hi);
}

Vecd true_coefficients(const SimConfig& cfg) {
    cfg.validate();
    return cfg.beta_star + distribution_expectile(cfg.error_dist(), cfg.tau) * cfg.gamma;
}

Batchd generate_batch(const SimConfig& cfg, int batch_index, int rep_index) {
    cfg.validate();
    if (batch_index < 0 || rep_index < 0) throw InvalidArgument("negative batch or replication index");
    const Index p = cfg.dim();
    const std::int64_t first = static_cast<std::int64_t>(batch_index) * cfg.n_k;
    const std::int64_t last = first + cfg.n_k;  // exclusive

    Matd x(cfg.n_k, p);
    Vecd y(cfg.n_k);
    x.col(0).setOnes();
    for (std::int64_t block = first / kRowBlock; block * kRowBlock < last; ++block) {
        const RowBlock rows = draw_block(cfg, rep_index, block);
        const std::int64_t lo = std::max(first, block * kRowBlock);
        const std::int64_t hi = std::min(last, (block + 1) * kRowBlock);
        for (std::int64_t r = lo; r < hi; ++r) {
            const Index src = r - block * kRowBlock;
            const Index dst = r - first;
            x.row(dst).tail(p - 1) = rows.u.row(src);
            const double scale = x.row(dst).dot(cfg.gamma);
            y(dst) = x.row(dst).dot(cfg.beta_star) + scale * rows.eps(src);
        }
    }
    return Batchd(std::move(x), std::move(y));
}

std::vector<Batchd> generate_stream(const SimConfig& cfg, int rep_index) {
    std::vector<Batchd> out;
    out.reserve(static_cast<std::size_t>(cfg.num_batches));
    for (int b = 0; b < cfg.num_batches; ++b) out.push_back(generate_batch(cfg, b, rep_index));
    return out;
}

Coefficientsd run_method(Method method, std::span<const Batchd> batches, ExpectileLevel tau,
                         const RunOptions& opts) {
    if (batches.empty()) throw InvalidArgument("run_method needs at least one batch");
    const Index p = batches.front().cols();
    switch (method) {
        case Method::Oracle:
            return irls_fit(batches, tau, opts.irls);
        case Method::ReER: {
            SummaryStated state = init_state(batches.front(), tau, opts.irls);
            for (const auto& b : batches.subspan(1)) state = renew_update(state, b);
            return current_estimate(state);
        }
        case Method::PAER: {
            auto state = PaerStated::empty(p, tau, opts.paer_weight);
            for (const auto& b : batches) state = paer_update(state, b, opts.irls);
            return paer_finalize(state);
        }
        case Method::DCER: {
            auto state = DcerStated::empty(p, tau);
            for (const auto& b : batches) state = dcer_update(state, b, opts.irls);
            return dcer_finalize(state);
        }
    }
    throw InvalidArgument("unknown method");
}

const MethodMetrics& MetricsTable::at(Method m) const {
    for (const auto& row : methods)
        if (row.method == m) return row;
    throw InvalidArgument("method " + method_name(m) + " not in table");
}

namespace {

struct RepOutcome {
    std::vector<Vecd> estimates;
    std::vector<double> seconds;
    std::optional<RepFailure> failure;
};

RepOutcome run_replication(const SimConfig& cfg, const std::vector<Method>& methods,
                           const RunOptions& opts, int rep) {
    const std::vector<Batchd> stream = generate_stream(cfg, rep);
    RepOutcome out;
    for (Method m : methods) {
        try {
            const auto start = std::chrono::steady_clock::now();
            const Coefficientsd est = run_method(m, stream, cfg.tau, opts);
            const auto stop = std::chrono::steady_clock::now();
            out.estimates.push_back(est.beta());
            out.seconds.push_back(std::chrono::duration<double>(stop - start).count());
        } catch (const Error& e) {
            out.failure = RepFailure{rep, m, e.what()};
            return out;
        }
    }
    return out;
}

}  // namespace

MetricsTable run_experiment(const SimConfig& cfg, const std::vector<Method>& requested,
                            const RunOptions& opts) {
    cfg.validate();
    std::vector<Method> methods;
    for (Method m : requested)
        if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
    if (methods.empty()) throw InvalidArgument("no methods requested");

    std::vector<RepOutcome> outcomes(static_cast<std::size_t>(cfg.reps));
    std::atomic<int> next{0};
    std::exception_ptr fatal;
    std::atomic<bool> failed{false};
    auto worker = [&] {
        for (int r = next++; r < cfg.reps && !failed; r = next++) {
            try {
                outcomes[static_cast<std::size_t>(r)] = run_replication(cfg, methods, opts, r);
            } catch (...) {
                if (!failed.exchange(true)) fatal = std::current_exception();
            }
        }
    };
    int threads = opts.threads > 0 ? opts.threads
                                   : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, cfg.reps);
    {
        std::vector<std::jthread> pool;
        for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
        worker();
    }
    if (fatal) std::rethrow_exception(fatal);

    const Vecd truth = true_coefficients(cfg);
    const Index p = cfg.dim();
    MetricsTable table;
    table.config = cfg;
    for (Method m : methods) table.methods.push_back({m, Vecd::Zero(p), Vecd::Zero(p), 0.0, 0});

    for (const auto& o : outcomes) {  // replication order keeps the sums deterministic
        if (o.failure) {
            table.failures.push_back(*o.failure);
            continue;
        }
        ++table.reps_used;
        for (std::size_t k = 0; k < methods.size(); ++k) {
            const Vecd err = o.estimates[k] - truth;
            table.methods[k].bias += err;
            table.methods[k].mse += err.cwiseProduct(err);
            table.methods[k].mean_time_seconds += o.seconds[k];
        }
    }
    for (auto& row : table.methods) {
        row.reps = table.reps_used;
        if (table.reps_used > 0) {
            const double n = table.reps_used;
            row.bias /= n;
            row.mse /= n;
            row.mean_time_seconds /= n;
        }
    }
    return table;
}

void write_metrics_csv(const MetricsTable& table, std::ostream& out) {
    const SimConfig& cfg = table.config;
    auto join = [](const Vecd& v) {
        std::string s;
        for (Index i = 0; i < v.size(); ++i) s += (i ? ";" : "") + format_real(v(i));
        return s;
    };
    out << "# case=" << cfg.case_id << "\n"
        << "# scenario=" << (cfg.scenario == Scenario::S1 ? "s1" : "s2") << "\n"
        << "# tau=" << format_real(cfg.tau.value()) << "\n"
        << "# batch_size=" << cfg.n_k << "\n"
        << "# num_batches=" << cfg.num_batches << "\n"
        << "# reps=" << cfg.reps << "\n"
        << "# seed=" << cfg.seed << "\n"
        << "# beta_star=" << join(cfg.beta_star) << "\n"
        << "# gamma=" << join(cfg.gamma) << "\n"
        << "# true_beta=" << join(true_coefficients(cfg)) << "\n"
        << "# reps_used=" << table.reps_used << "\n"
        << "# failures=" << table.failures.size() << "\n";
    out << "method,coefficient_index,bias,mse,mean_time_seconds,reps\n";
    for (const auto& row : table.methods) {
        for (Index j = 0; j < row.bias.size(); ++j) {
            out << method_name(row.method) << ',' << j << ',' << format_real(row.bias(j)) << ','
                << format_real(row.mse(j)) << ',' << format_real(row.mean_time_seconds) << ','
                << row.reps << '\n';
        }
    }
}

}  // namespace reer
