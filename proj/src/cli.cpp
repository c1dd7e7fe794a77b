#include "reer/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "reer/format.hpp"
#include "reer/persist.hpp"
#include "reer/simgen.hpp"
#include "reer/stream.hpp"

namespace reer {
namespace {

/// Thrown for flag combinations CLI11 cannot express; maps to exit 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const CLI::Validator kOpenUnit(
    [](const std::string& s) -> std::string {
        try {
            const double v = std::stod(s);
            if (v > 0.0 && v < 1.0) return {};
        } catch (const std::exception&) {
        }
        return "expectile level must lie in (0, 1), got " + s;
    },
    "TAU in (0,1)");

std::vector<Method> parse_method_list(const std::string& list) {
    std::vector<Method> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto m = parse_method(item);
        if (!m) throw UsageError("unknown method \"" + item + "\" (expected oracle, reer, paer, dcer)");
        out.push_back(*m);
    }
    if (out.empty()) throw UsageError("--methods is empty");
    return out;
}

PaerWeight parse_paer_weight(const std::string& s) {
    return s == "cumulative" ? PaerWeight::CumulativeFraction : PaerWeight::FinalFraction;
}

int default_threads() {
    if (const char* env = std::getenv("REER_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) return n;
        } catch (const std::exception&) {
        }
    }
    return 0;
}

struct SimulateArgs {
    int case_id = 0;
    std::string scenario = "s2";
    double tau = 0.25;
    int batch_size = 300;
    int num_batches = 0;
    long long total_n = 0;
    int reps = 200;
    std::uint64_t seed = 1;
    std::string methods = "oracle,dcer,paer,reer";
    std::string paer_weights = "final";
    int threads = 0;
    double tol = 1e-8;
    int max_iter = 100;
    std::string out;
};

struct StreamArgs {
    std::string data, response, batch_column, method = "reer", state, state_out, trace;
    std::string paer_weights = "final";
    std::vector<std::string> features;
    long long batch_size = 0;
    double tau = 0.0;
    bool no_intercept = false, drop_bad_rows = false;
    double tol = 1e-8;
    int max_iter = 100;
};

struct EvalArgs {
    std::string state, coefficients, data, response, method, out;
    std::vector<std::string> features;
    bool no_intercept = false;
};

int cmd_simulate(const SimulateArgs& a, CLI::App* sub, std::ostream& out, std::ostream& err) {
    const bool has_k = sub->count("--num-batches") > 0;
    const bool has_n = sub->count("--total-n") > 0;
    if (has_k == has_n) throw UsageError("give exactly one of --num-batches or --total-n");
    int num_batches = a.num_batches;
    if (has_n) {
        if (a.total_n % a.batch_size != 0)
            throw UsageError("--total-n must be a multiple of --batch-size");
        num_batches = static_cast<int>(a.total_n / a.batch_size);
    }
    const std::vector<Method> methods = parse_method_list(a.methods);

    SimConfig cfg = SimConfig::for_case(a.case_id, a.scenario == "s1" ? Scenario::S1 : Scenario::S2,
                                        a.tau, a.batch_size, num_batches, a.reps, a.seed);
    RunOptions opts;
    opts.threads = a.threads > 0 ? a.threads : default_threads();
    opts.irls.tol = a.tol;
    opts.irls.max_iter = a.max_iter;
    opts.paer_weight = parse_paer_weight(a.paer_weights);

    const MetricsTable table = run_experiment(cfg, methods, opts);
    std::ofstream file(a.out);
    if (!file) throw Error("cannot open " + a.out + " for writing");
    write_metrics_csv(table, file);
    if (!file) throw Error("failed writing " + a.out);

    out << "wrote " << a.out << " (" << table.reps_used << " of " << cfg.reps << " replications)\n";
    for (const auto& f : table.failures)
        err << "replication " << f.rep << " failed in " << method_name(f.method) << ": " << f.message
            << "\n";
    return table.failures.empty() ? 0 : 1;
}

StreamSpec make_spec(const std::string& data, const std::string& response,
                     const std::vector<std::string>& features, bool no_intercept) {
    StreamSpec spec;
    spec.source = data;
    spec.response_column = response;
    spec.feature_columns = features;
    spec.add_intercept = !no_intercept;
    return spec;
}

int cmd_stream(const StreamArgs& a, CLI::App* sub, std::ostream& out) {
    const bool by_size = sub->count("--batch-size") > 0;
    const bool by_column = sub->count("--batch-column") > 0;
    if (by_size == by_column) throw UsageError("give exactly one of --batch-size or --batch-column");
    if (by_size && a.batch_size < 1) throw UsageError("--batch-size must be positive");
    const bool resume = sub->count("--state") > 0;
    if (!resume && sub->count("--tau") == 0) throw UsageError("--tau is required unless resuming with --state");

    StreamOptions opts;
    opts.spec = make_spec(a.data, a.response, a.features, a.no_intercept);
    if (by_size)
        opts.spec.batch_size = a.batch_size;
    else
        opts.spec.batch_column = a.batch_column;
    opts.spec.drop_bad_rows = a.drop_bad_rows;
    opts.method = *parse_method(a.method);
    if (sub->count("--tau")) opts.tau = ExpectileLevel(a.tau);
    opts.irls.tol = a.tol;
    opts.irls.max_iter = a.max_iter;
    opts.paer_weight = parse_paer_weight(a.paer_weights);
    if (resume) opts.resume = load_state(a.state);
    if (!a.trace.empty()) opts.trace_path = a.trace;
    if (!a.state_out.empty()) opts.state_out = a.state_out;

    const StreamSummary s = run_stream(opts);
    const Coefficientsd est = state_estimate(s.final_state);
    out << "batches=" << s.batches << " rows=" << s.rows << " dropped_rows=" << s.dropped_rows
        << " tau=" << format_real(est.tau().value()) << "\nbeta=";
    for (Index j = 0; j < est.size(); ++j) out << (j ? "," : "") << format_real(est[j]);
    out << "\n";
    return 0;
}

Coefficientsd load_coefficients(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    try {
        const nlohmann::json doc = nlohmann::json::parse(in);
        const auto beta = doc.at("beta").get<std::vector<double>>();
        return Coefficientsd(Eigen::Map<const Vecd>(beta.data(), static_cast<Index>(beta.size())),
                             ExpectileLevel(doc.at("tau").get<double>()));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": malformed coefficients file: " + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(path + ": " + e.what());
    }
}

int cmd_eval(const EvalArgs& a, CLI::App* sub, std::ostream& out) {
    const bool has_state = sub->count("--state") > 0;
    if (has_state == (sub->count("--coefficients") > 0))
        throw UsageError("give exactly one of --state or --coefficients");

    std::string method = a.method;
    std::optional<Coefficientsd> coef;
    if (has_state) {
        const AnyState state = load_state(a.state);
        if (method.empty()) method = state_kind(state);
        coef = state_estimate(state);
    } else {
        if (method.empty()) method = "coefficients";
        coef = load_coefficients(a.coefficients);
    }
    StreamSpec spec = make_spec(a.data, a.response, a.features, a.no_intercept);
    spec.batch_size = 1;  // replaced by evaluate_mpe
    const EvalReport r = evaluate_mpe(*coef, method, spec);

    out << "method=" << r.method << " tau=" << format_real(r.tau) << " n_test=" << r.n_test
        << " mpe=" << format_real(r.mpe) << "\n";
    if (!a.out.empty()) {
        nlohmann::json doc = {{"method", r.method}, {"tau", r.tau}, {"mpe", r.mpe}, {"n_test", r.n_test}};
        std::ofstream file(a.out);
        if (!file) throw Error("cannot open " + a.out + " for writing");
        file << doc.dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Streaming expectile regression: simulation, stream replay and evaluation", "reer"};
    app.require_subcommand(1);

    SimulateArgs sim;
    CLI::App* simulate = app.add_subcommand("simulate", "Monte-Carlo experiment, writes a metrics CSV");
    simulate->add_option("--case", sim.case_id, "Design case 1-4")->required()->check(CLI::Range(1, 4));
    simulate->add_option("--scenario", sim.scenario, "s1 (fixed N) or s2 (fixed batch size)")
        ->check(CLI::IsMember({"s1", "s2"}));
    simulate->add_option("--tau", sim.tau, "Expectile level")->check(kOpenUnit);
    simulate->add_option("--batch-size", sim.batch_size, "Rows per batch")->check(CLI::PositiveNumber);
    simulate->add_option("--num-batches", sim.num_batches, "Batches per stream")->check(CLI::PositiveNumber);
    simulate->add_option("--total-n", sim.total_n, "Total rows per stream (alternative to --num-batches)")
        ->check(CLI::PositiveNumber);
    simulate->add_option("--reps", sim.reps, "Replications")->check(CLI::PositiveNumber);
    simulate->add_option("--seed", sim.seed, "Base seed");
    simulate->add_option("--methods", sim.methods, "Comma list of oracle,reer,paer,dcer");
    simulate->add_option("--paer-weights", sim.paer_weights, "final or cumulative")
        ->check(CLI::IsMember({"final", "cumulative"}));
    simulate->add_option("--threads", sim.threads, "Worker threads (default REER_THREADS or all cores)")
        ->check(CLI::NonNegativeNumber);
    simulate->add_option("--tol", sim.tol, "IRLS tolerance")->check(CLI::PositiveNumber);
    simulate->add_option("--max-iter", sim.max_iter, "IRLS iteration cap")->check(CLI::PositiveNumber);
    simulate->add_option("--out", sim.out, "Metrics CSV path")->required();

    StreamArgs st;
    CLI::App* stream = app.add_subcommand("stream", "Replay a CSV file as a batch stream");
    stream->add_option("--data", st.data, "Input CSV")->required();
    stream->add_option("--response", st.response, "Response column")->required();
    stream->add_option("--features", st.features, "Feature columns")->required()->delimiter(',');
    auto* bs = stream->add_option("--batch-size", st.batch_size, "Chunk rows into batches of this size");
    auto* bc = stream->add_option("--batch-column", st.batch_column, "Start a new batch when this column changes");
    bs->excludes(bc);
    stream->add_flag("--no-intercept", st.no_intercept, "Do not prepend a ones column");
    stream->add_option("--method", st.method, "reer, paer or dcer")->check(CLI::IsMember({"reer", "paer", "dcer"}));
    stream->add_option("--tau", st.tau, "Expectile level")->check(kOpenUnit);
    stream->add_option("--state", st.state, "Resume from a saved state");
    stream->add_option("--state-out", st.state_out, "Write the final state here");
    stream->add_option("--trace", st.trace, "Write the per-batch estimate trajectory here");
    stream->add_flag("--drop-bad-rows", st.drop_bad_rows, "Skip rows with missing or non-numeric values");
    stream->add_option("--paer-weights", st.paer_weights, "final or cumulative")
        ->check(CLI::IsMember({"final", "cumulative"}));
    stream->add_option("--tol", st.tol, "IRLS tolerance")->check(CLI::PositiveNumber);
    stream->add_option("--max-iter", st.max_iter, "IRLS iteration cap")->check(CLI::PositiveNumber);

    EvalArgs ev;
    CLI::App* eval = app.add_subcommand("eval", "Mean expectile prediction error on a test CSV");
    eval->add_option("--state", ev.state, "Saved state (reer, paer or dcer)");
    eval->add_option("--coefficients", ev.coefficients, "JSON file {\"tau\": t, \"beta\": [...]}");
    eval->add_option("--data", ev.data, "Test CSV")->required();
    eval->add_option("--response", ev.response, "Response column")->required();
    eval->add_option("--features", ev.features, "Feature columns")->required()->delimiter(',');
    eval->add_flag("--no-intercept", ev.no_intercept, "Do not prepend a ones column");
    eval->add_option("--method", ev.method, "Label for the report");
    eval->add_option("--out", ev.out, "Write the report as JSON here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    CLI::App* active = simulate->parsed() ? simulate : stream->parsed() ? stream : eval;
    try {
        if (active == simulate) return cmd_simulate(sim, simulate, out, err);
        if (active == stream) return cmd_stream(st, stream, out);
        return cmd_eval(ev, eval, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n" << active->help();
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"reer"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace reer
