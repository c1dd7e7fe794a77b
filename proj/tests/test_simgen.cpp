#include <doctest.h>

#include <sstream>

#include "reer/simgen.hpp"
#include "support/oracles.hpp"

using namespace reer;

namespace {

const ErrorDist kDists[] = {ErrorDist::StdNormal, ErrorDist::StudentT3};

std::vector<double> tau_grid(int levels) {
    std::vector<double> g;
    for (int k = 1; k <= levels; ++k) g.push_back(static_cast<double>(k) / (levels + 1));
    return g;
}

}  // namespace

TEST_CASE("quadrature oracle reproduces the frozen high-precision expectiles") {
    CHECK(std::abs(oracle::expectile(ErrorDist::StdNormal, 0.05) - oracle::kNormalE05) < 1e-10);
    CHECK(std::abs(oracle::expectile(ErrorDist::StdNormal, 0.25) - oracle::kNormalE25) < 1e-10);
    CHECK(std::abs(oracle::expectile(ErrorDist::StudentT3, 0.10) - oracle::kT3E10) < 1e-10);
    CHECK(std::abs(oracle::expectile(ErrorDist::StudentT3, 0.25) - oracle::kT3E25) < 1e-10);
}

TEST_CASE("distribution_expectile matches frozen values") {
    CHECK(std::abs(distribution_expectile(ErrorDist::StdNormal, ExpectileLevel(0.05)) - oracle::kNormalE05) < 1e-10);
    CHECK(std::abs(distribution_expectile(ErrorDist::StdNormal, ExpectileLevel(0.1)) - oracle::kNormalE10) < 1e-10);
    CHECK(std::abs(distribution_expectile(ErrorDist::StdNormal, ExpectileLevel(0.25)) - oracle::kNormalE25) < 1e-10);
    CHECK(std::abs(distribution_expectile(ErrorDist::StdNormal, ExpectileLevel(0.75)) + oracle::kNormalE25) < 1e-10);
    CHECK(std::abs(distribution_expectile(ErrorDist::StudentT3, ExpectileLevel(0.05)) - oracle::kT3E05) < 1e-10);
    CHECK(std::abs(distribution_expectile(ErrorDist::StudentT3, ExpectileLevel(0.1)) - oracle::kT3E10) < 1e-10);
    CHECK(std::abs(distribution_expectile(ErrorDist::StudentT3, ExpectileLevel(0.25)) - oracle::kT3E25) < 1e-10);
}

TEST_CASE("distribution_expectile symmetric cases") {
    for (ErrorDist d : kDists) {
        CHECK(distribution_expectile(d, ExpectileLevel(0.5)) == 0.0);
        for (double t : tau_grid(9))
            CHECK(std::abs(distribution_expectile(d, ExpectileLevel(t)) + distribution_expectile(d, ExpectileLevel(1 - t))) < 1e-9);
    }
}

TEST_CASE("distribution_expectile is strictly increasing in tau") {
    for (ErrorDist d : kDists) {
        double prev = -1e300;
        for (double t : tau_grid(17)) {
            const double e = distribution_expectile(d, ExpectileLevel(t));
            CHECK(e > prev);
            prev = e;
        }
    }
}

TEST_CASE("closed-form partial moments agree with quadrature") {
    for (ErrorDist d : kDists) {
        const auto f = oracle::density(d);
        for (double theta : {-3.0, -1.0, -0.2, 0.0, 0.7, 2.5}) {
            double err = 0.0;
            const double q = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
                [&](double x) { return (x - theta) * f(x); }, theta, std::numeric_limits<double>::infinity(), 15,
                1e-14, &err);
            CHECK(std::abs(upper_partial_moment(d, theta) - q) < 1e-11);
            CHECK(std::abs(error_density(d, theta) - f(theta)) < 1e-14);
        }
    }
}

TEST_CASE("SimConfig validation") {
    CHECK_THROWS_AS(SimConfig::for_case(5, Scenario::S2, 0.25, 300, 10, 1, 1), InvalidArgument);
    CHECK_THROWS_AS(SimConfig::for_case(1, Scenario::S2, 0.25, 0, 10, 1, 1), InvalidArgument);
    CHECK_THROWS_AS(SimConfig::for_case(1, Scenario::S2, 1.25, 300, 10, 1, 1), InvalidArgument);
    SimConfig cfg = SimConfig::for_case(1, Scenario::S2, 0.25, 300, 10, 1, 1);
    cfg.gamma(1) = 0.25;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = SimConfig::for_case(3, Scenario::S2, 0.25, 300, 10, 1, 1);
    CHECK(cfg.gamma(1) == 0.25);
    CHECK(cfg.error_dist() == ErrorDist::StdNormal);
    CHECK(SimConfig::for_case(4, Scenario::S2, 0.25, 300, 10, 1, 1).error_dist() == ErrorDist::StudentT3);
}

TEST_CASE("true_coefficients") {
    auto cfg = SimConfig::for_case(1, Scenario::S2, 0.5, 300, 10, 1, 1);
    CHECK(true_coefficients(cfg) == cfg.beta_star);
    cfg = SimConfig::for_case(3, Scenario::S2, 0.5, 300, 10, 1, 1);
    CHECK(true_coefficients(cfg) == cfg.beta_star);
    cfg = SimConfig::for_case(1, Scenario::S2, 0.25, 300, 10, 1, 1);
    const Vecd t = true_coefficients(cfg);
    CHECK(std::abs(t(0) - (2.0 + oracle::kNormalE25)) < 1e-10);
    CHECK(t(1) == 1.0);
    CHECK(t(2) == 2.0);
    cfg = SimConfig::for_case(4, Scenario::S2, 0.25, 300, 10, 1, 1);
    CHECK(std::abs(true_coefficients(cfg)(1) - (1.0 + 0.25 * oracle::kT3E25)) < 1e-10);
}

TEST_CASE("generate_batch layout and determinism") {
    const auto cfg = SimConfig::for_case(3, Scenario::S2, 0.25, 250, 4, 2, 99);
    const Batchd a = generate_batch(cfg, 2, 1);
    CHECK(a.rows() == 250);
    CHECK(a.cols() == 3);
    CHECK((a.x().col(0).array() == 1.0).all());
    CHECK((a.x().rightCols(2).array() >= 0.0).all());
    CHECK((a.x().rightCols(2).array() < 1.0).all());
    const Batchd b = generate_batch(cfg, 2, 1);
    CHECK(a.x() == b.x());
    CHECK(a.y() == b.y());
    CHECK(generate_batch(cfg, 2, 0).y() != a.y());
    CHECK(generate_batch(cfg, 1, 1).y() != a.y());
}

TEST_CASE("a row is the same regardless of batch size") {
    auto small = SimConfig::for_case(2, Scenario::S1, 0.25, 150, 20, 1, 5);
    auto large = SimConfig::for_case(2, Scenario::S1, 0.25, 1000, 3, 1, 5);
    const Batchd pooled = Batchd::pool(generate_stream(small, 0));
    const Batchd big = generate_batch(large, 0, 0);
    CHECK(pooled.x().topRows(1000) == big.x());
    CHECK(pooled.y().head(1000) == big.y());
}

TEST_CASE("homogeneous case has constant error scale") {
    // With gamma = (1,0,0) the error is y - x'beta* and does not depend on x;
    // its sample mean and variance should look like N(0,1).
    const auto cfg = SimConfig::for_case(1, Scenario::S2, 0.25, 20000, 1, 1, 3);
    const Batchd b = generate_batch(cfg, 0, 0);
    const Vecd e = b.y() - b.x() * cfg.beta_star;
    const double mean = e.mean();
    const double var = (e.array() - mean).square().mean();
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
    // t(3) has variance 3
    const auto cfg2 = SimConfig::for_case(2, Scenario::S2, 0.25, 20000, 1, 1, 3);
    const Batchd b2 = generate_batch(cfg2, 0, 0);
    const Vecd e2 = b2.y() - b2.x() * cfg2.beta_star;
    const double below = static_cast<double>((e2.array() < -3.182446305284263).count()) / 20000.0;
    CHECK(std::abs(below - 0.025) < 0.006);  // 97.5% t(3) quantile
}

TEST_CASE("noiseless stream: every method recovers the coefficients") {
    SimConfig cfg = SimConfig::for_case(1, Scenario::S2, 0.25, 100, 10, 1, 4);
    cfg.gamma.setZero();
    const MetricsTable t = run_experiment(cfg, {Method::Oracle, Method::ReER, Method::PAER, Method::DCER});
    REQUIRE(t.reps_used == 1);
    for (const auto& m : t.methods) {
        CHECK(m.mse.maxCoeff() <= 1e-16);
        CHECK(m.bias.cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("run_experiment drops failed replications from every method") {
    // three-row batches cannot support DCER with p = 3
    const SimConfig cfg = SimConfig::for_case(1, Scenario::S2, 0.25, 3, 4, 3, 4);
    const MetricsTable t = run_experiment(cfg, {Method::Oracle, Method::ReER, Method::DCER});
    CHECK(t.reps_used == 0);
    REQUIRE(t.failures.size() == 3);
    CHECK(t.failures[0].method == Method::DCER);
    CHECK(t.failures[0].rep == 0);
    CHECK(t.failures[2].rep == 2);

    const MetricsTable ok = run_experiment(cfg, {Method::Oracle, Method::ReER, Method::PAER});
    CHECK(ok.reps_used == 3);
    CHECK(ok.failures.empty());
    for (const auto& m : ok.methods) CHECK(m.reps == 3);
}

TEST_CASE("metrics are reproducible and obey the variance decomposition") {
    const auto cfg = SimConfig::for_case(4, Scenario::S2, 0.1, 120, 15, 12, 77);
    const std::vector<Method> all{Method::Oracle, Method::ReER, Method::PAER, Method::DCER};
    RunOptions one_thread;
    one_thread.threads = 1;
    RunOptions three;
    three.threads = 3;
    const MetricsTable a = run_experiment(cfg, all, one_thread);
    const MetricsTable b = run_experiment(cfg, all, three);
    REQUIRE(a.methods.size() == 4);
    for (std::size_t k = 0; k < a.methods.size(); ++k) {
        CHECK(a.methods[k].method == all[k]);
        CHECK(a.methods[k].bias == b.methods[k].bias);
        CHECK(a.methods[k].mse == b.methods[k].mse);
        CHECK(a.methods[k].mean_time_seconds >= 0.0);
        for (Index j = 0; j < 3; ++j)
            CHECK(a.methods[k].mse(j) >= a.methods[k].bias(j) * a.methods[k].bias(j) - 1e-15);
    }
}

TEST_CASE("metrics CSV layout") {
    const auto cfg = SimConfig::for_case(1, Scenario::S2, 0.25, 100, 5, 2, 7);
    const MetricsTable t = run_experiment(cfg, {Method::Oracle, Method::ReER});
    std::ostringstream out;
    write_metrics_csv(t, out);
    std::istringstream in(out.str());
    std::string line;
    int meta = 0, rows = 0;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.rfind("#", 0) == 0) {
            ++meta;
            CHECK_FALSE(header);
        } else if (!header) {
            CHECK(line == "method,coefficient_index,bias,mse,mean_time_seconds,reps");
            header = true;
        } else {
            ++rows;
        }
    }
    CHECK(meta >= 8);
    CHECK(rows == 6);
    CHECK(out.str().find("# case=1") != std::string::npos);
}

TEST_CASE("consistency trend between short and long streams") {
    // MSE at K = 2000 below MSE at K = 100 for every method except DCER under t(3).
    for (int c : {1, 2}) {
        const auto shortcfg = SimConfig::for_case(c, Scenario::S2, 0.25, 300, 100, 20, 31);
        const auto longcfg = SimConfig::for_case(c, Scenario::S2, 0.25, 300, 2000, 20, 31);
        std::vector<Method> methods{Method::Oracle, Method::ReER, Method::PAER};
        if (c == 1) methods.push_back(Method::DCER);
        const auto a = run_experiment(shortcfg, methods);
        const auto b = run_experiment(longcfg, methods);
        for (Method m : methods)
            for (Index j = 0; j < 3; ++j) CHECK(b.at(m).mse(j) < a.at(m).mse(j));
    }
}
