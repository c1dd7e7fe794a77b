#include "reer/stream.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string_view>

#include "reer/format.hpp"

namespace reer {

void StreamSpec::validate() const {
    if (batch_column.has_value() == batch_size.has_value())
        throw InvalidArgument("exactly one of batch column or batch size must be given");
    if (batch_size && *batch_size < 1) throw InvalidArgument("batch size must be positive");
    if (response_column.empty()) throw InvalidArgument("response column is required");
    if (feature_columns.empty()) throw InvalidArgument("at least one feature column is required");
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::optional<double> parse_number(std::string_view field) {
    if (field.empty()) return std::nullopt;
    if (field.front() == '+') field.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size() || !std::isfinite(v))
        return std::nullopt;
    return v;
}

bool blank(std::string_view line) { return trim(line).empty(); }

}  // namespace

CsvBatchReader::CsvBatchReader(StreamSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    in_.open(spec_.source);
    if (!in_) throw Error("cannot open " + spec_.source.string());

    std::string header;
    if (!std::getline(in_, header)) throw FormatError(spec_.source.string() + ": missing header row");
    if (header.size() >= 3 && header.compare(0, 3, "\xEF\xBB\xBF") == 0) header.erase(0, 3);
    const auto names = split(header);
    n_fields_ = names.size();
    auto find = [&](const std::string& name) -> std::size_t {
        const auto it = std::find(names.begin(), names.end(), std::string_view(name));
        if (it == names.end()) throw FormatError("column \"" + name + "\" not found in header");
        return static_cast<std::size_t>(it - names.begin());
    };
    value_idx_.push_back(find(spec_.response_column));
    for (const auto& f : spec_.feature_columns) value_idx_.push_back(find(f));
    if (spec_.batch_column) key_idx_ = find(*spec_.batch_column);
}

std::optional<CsvBatchReader::ParsedRow> CsvBatchReader::read_row() {
    std::string line;
    while (std::getline(in_, line)) {
        ++line_no_;
        if (blank(line)) continue;
        const auto fields = split(line);
        std::string problem;
        ParsedRow row;
        if (fields.size() != n_fields_) {
            problem = "expected " + std::to_string(n_fields_) + " fields, found " +
                      std::to_string(fields.size());
        } else {
            row.values.reserve(value_idx_.size());
            for (std::size_t idx : value_idx_) {
                const auto v = parse_number(fields[idx]);
                if (!v) {
                    problem = "missing or non-numeric value \"" + std::string(fields[idx]) + "\"";
                    break;
                }
                row.values.push_back(*v);
            }
            if (key_idx_) row.key = std::string(fields[*key_idx_]);
            row.line = line_no_;
        }
        if (problem.empty()) {
            ++rows_read_;
            return row;
        }
        if (!spec_.drop_bad_rows) throw MalformedRow(line_no_, problem);
        ++dropped_rows_;
    }
    return std::nullopt;
}

Batchd CsvBatchReader::build(std::vector<double>& flat, std::size_t rows) const {
    const Index p = spec_.dim();
    const Index k = static_cast<Index>(value_idx_.size());
    const Index offset = spec_.add_intercept ? 1 : 0;
    Matd x(static_cast<Index>(rows), p);
    Vecd y(static_cast<Index>(rows));
    for (Index i = 0; i < static_cast<Index>(rows); ++i) {
        const double* row = flat.data() + i * k;
        y(i) = row[0];
        if (spec_.add_intercept) x(i, 0) = 1.0;
        for (Index j = 1; j < k; ++j) x(i, offset + j - 1) = row[j];
    }
    flat.clear();
    return Batchd(std::move(x), std::move(y));
}

std::optional<Batchd> CsvBatchReader::next() {
    std::vector<double> flat;
    std::size_t rows = 0;
    auto append = [&](const ParsedRow& r) {
        flat.insert(flat.end(), r.values.begin(), r.values.end());
        ++rows;
        peak_rows_ = std::max(peak_rows_, rows);
    };

    if (spec_.batch_size) {
        while (static_cast<std::int64_t>(rows) < *spec_.batch_size) {
            auto r = read_row();
            if (!r) break;
            append(*r);
        }
    } else {
        std::optional<ParsedRow> first = pending_ ? std::move(pending_) : read_row();
        pending_.reset();
        if (!first) return std::nullopt;
        const std::string key = first->key;
        if (finished_keys_.count(key))
            throw MalformedRow(first->line, "batch value \"" + key +
                                             "\" reappears after its batch ended; group rows contiguously");
        append(*first);
        while (auto r = read_row()) {
            if (r->key != key) {
                pending_ = std::move(r);
                break;
            }
            append(*r);
        }
        finished_keys_.insert(key);
    }
    if (rows == 0) return std::nullopt;
    return build(flat, rows);
}

namespace {

AnyState first_update(const StreamOptions& opts, ExpectileLevel tau, const Batchd& batch) {
    switch (opts.method) {
        case Method::ReER: return init_state(batch, tau, opts.irls);
        case Method::PAER:
            return paer_update(PaerStated::empty(batch.cols(), tau, opts.paer_weight), batch, opts.irls);
        case Method::DCER: return dcer_update(DcerStated::empty(batch.cols(), tau), batch, opts.irls);
        case Method::Oracle: break;
    }
    throw InvalidArgument("streaming supports reer, paer and dcer only");
}

AnyState next_update(const StreamOptions& opts, const AnyState& state, const Batchd& batch) {
    if (const auto* s = std::get_if<SummaryStated>(&state)) return renew_update(*s, batch);
    if (const auto* s = std::get_if<PaerStated>(&state)) return paer_update(*s, batch, opts.irls);
    return dcer_update(std::get<DcerStated>(state), batch, opts.irls);
}

std::int64_t batches_of(const AnyState& state) {
    return std::visit([](const auto& s) { return s.batches_seen; }, state);
}

}  // namespace

StreamSummary run_stream(const StreamOptions& opts) {
    if (opts.method == Method::Oracle)
        throw InvalidArgument("streaming supports reer, paer and dcer only");
    opts.spec.validate();

    std::optional<AnyState> state = opts.resume;
    std::optional<ExpectileLevel> tau = opts.tau;
    if (state) {
        const std::string kind = state_kind(*state);
        if (kind != method_name(opts.method))
            throw FormatError("saved state is a " + kind + " state, requested method is " +
                              method_name(opts.method));
        if (state_dim(*state) != opts.spec.dim())
            throw FormatError("saved state has p = " + std::to_string(state_dim(*state)) +
                              ", stream has p = " + std::to_string(opts.spec.dim()));
        if (tau && !(*tau == state_tau(*state)))
            throw FormatError("saved state has tau = " + format_real(state_tau(*state).value()) +
                              ", requested tau = " + format_real(tau->value()));
        if (const auto* s = std::get_if<PaerStated>(&*state); s && s->weight_mode != opts.paer_weight)
            throw FormatError("saved PAER state uses a different weight mode");
        tau = state_tau(*state);
    }
    if (!tau) throw InvalidArgument("an expectile level is required when not resuming");

    CsvBatchReader reader(opts.spec);
    std::ofstream trace;
    if (opts.trace_path) {
        trace.open(*opts.trace_path);
        if (!trace) throw Error("cannot open " + opts.trace_path->string() + " for writing");
        trace << "batch_index,n";
        for (Index j = 0; j < opts.spec.dim(); ++j) trace << ",beta_" << j;
        trace << '\n';
    }

    std::size_t batches = 0, rows = 0;
    while (auto batch = reader.next()) {
        if (batch->cols() != opts.spec.dim()) throw DimensionMismatch("batch width mismatch");
        state = state ? next_update(opts, *state, *batch) : first_update(opts, *tau, *batch);
        ++batches;
        rows += static_cast<std::size_t>(batch->rows());
        if (trace.is_open()) {
            const Coefficientsd est = state_estimate(*state);
            trace << batches_of(*state) << ',' << batch->rows();
            for (Index j = 0; j < est.size(); ++j) trace << ',' << format_real(est[j]);
            trace << '\n';
        }
    }
    if (!state) throw FormatError(opts.spec.source.string() + ": no data rows");
    if (opts.state_out) save_state(*state, *opts.state_out);
    return {*state, batches, rows, reader.peak_rows(), reader.dropped_rows()};
}

EvalReport evaluate_mpe(const Coefficientsd& coef, const std::string& method, StreamSpec spec) {
    spec.batch_column.reset();
    spec.batch_size = 65536;
    if (spec.dim() != coef.size())
        throw FormatError("coefficients have p = " + std::to_string(coef.size()) +
                          ", test data has p = " + std::to_string(spec.dim()));
    CsvBatchReader reader(spec);
    double total = 0.0;
    std::int64_t n = 0;
    while (auto batch = reader.next()) {
        total += mean_loss(*batch, coef) * static_cast<double>(batch->rows());
        n += batch->rows();
    }
    if (n == 0) throw FormatError(spec.source.string() + ": no data rows");
    return {coef.tau().value(), total / static_cast<double>(n), n, method};
}

}  // namespace reer
