#pragma once

// Replaying a CSV file as a stream of batches, feeding the batches through
// an online estimator, and scoring coefficients on held-out data.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "reer/persist.hpp"
#include "reer/simgen.hpp"

namespace reer {

/// Which CSV columns feed the model and how rows are cut into batches.
struct StreamSpec {
    std::filesystem::path source;
    std::optional<std::string> batch_column;  ///< contiguous runs of equal values form a batch
    std::optional<std::int64_t> batch_size;   ///< or fixed-size chunks in file order
    std::string response_column;
    std::vector<std::string> feature_columns;
    bool add_intercept = true;
    bool drop_bad_rows = false;

    void validate() const;
    Index dim() const noexcept {
        return static_cast<Index>(feature_columns.size()) + (add_intercept ? 1 : 0);
    }
};

/// Reads a comma-separated file with a header row, one batch at a time.
/// At most one batch worth of rows is held in memory.
class CsvBatchReader {
public:
    explicit CsvBatchReader(StreamSpec spec);

    std::optional<Batchd> next();

    std::size_t peak_rows() const noexcept { return peak_rows_; }
    std::size_t dropped_rows() const noexcept { return dropped_rows_; }
    std::size_t rows_read() const noexcept { return rows_read_; }

private:
    struct ParsedRow {
        std::vector<double> values;  ///< response first, then features
        std::string key;
        std::size_t line = 0;
    };

    std::optional<ParsedRow> read_row();
    Batchd build(std::vector<double>& flat, std::size_t rows) const;

    StreamSpec spec_;
    std::ifstream in_;
    std::size_t line_no_ = 1;
    std::size_t n_fields_ = 0;
    std::vector<std::size_t> value_idx_;
    std::optional<std::size_t> key_idx_;
    std::optional<ParsedRow> pending_;
    std::unordered_set<std::string> finished_keys_;
    std::size_t peak_rows_ = 0;
    std::size_t dropped_rows_ = 0;
    std::size_t rows_read_ = 0;
};

struct StreamOptions {
    StreamSpec spec;
    Method method = Method::ReER;  ///< reer, paer or dcer
    std::optional<ExpectileLevel> tau;  ///< may be omitted when resuming
    IrlsConfigd irls{};
    PaerWeight paer_weight = PaerWeight::FinalFraction;
    std::optional<AnyState> resume;
    std::optional<std::filesystem::path> trace_path;
    std::optional<std::filesystem::path> state_out;
};

struct StreamSummary {
    AnyState final_state;
    std::size_t batches = 0;
    std::size_t rows = 0;
    std::size_t peak_rows = 0;
    std::size_t dropped_rows = 0;
};

StreamSummary run_stream(const StreamOptions& opts);

struct EvalReport {
    double tau = 0.0;
    double mpe = 0.0;
    std::int64_t n_test = 0;
    std::string method;
};

/// Mean asymmetric loss of `coef` on every row of the spec's file.
EvalReport evaluate_mpe(const Coefficientsd& coef, const std::string& method, StreamSpec spec);

}  // namespace reer
