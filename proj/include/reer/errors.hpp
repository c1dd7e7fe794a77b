#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace reer {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The accumulated information matrix cannot be solved to working precision.
class SingularMatrix : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A batch is too small for an estimator that fits each batch on its own.
class BatchTooSmall : public Error {
public:
    BatchTooSmall(std::size_t rows, std::size_t required)
        : Error("batch has " + std::to_string(rows) + " rows, need at least " +
                std::to_string(required)),
          rows_(rows), required_(required) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t required() const noexcept { return required_; }

private:
    std::size_t rows_;
    std::size_t required_;
};

/// IRLS hit max_iter. Carries the last iterate so the caller may still use it.
class NoConvergence : public Error {
public:
    NoConvergence(int iterations, double last_delta, std::vector<double> last_iterate)
        : Error("IRLS did not converge after " + std::to_string(iterations) +
                " iterations (last step " + std::to_string(last_delta) + ")"),
          iterations_(iterations), last_delta_(last_delta), last_iterate_(std::move(last_iterate)) {}

    int iterations() const noexcept { return iterations_; }
    double last_delta() const noexcept { return last_delta_; }
    const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }

private:
    int iterations_;
    double last_delta_;
    std::vector<double> last_iterate_;
};

/// Persisted state or input file does not match the expected schema.
class FormatError : public Error {
public:
    using Error::Error;
};

class MalformedRow : public FormatError {
public:
    MalformedRow(std::size_t line, const std::string& what)
        : FormatError("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace reer
