#pragma once

#include <stdexcept>
#include <string>

namespace rmcse {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, int line = 0)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class InvalidBranchError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, double last_mismatch)
        : Error(what), last_mismatch_(last_mismatch) {}
    double last_mismatch() const noexcept { return last_mismatch_; }

private:
    double last_mismatch_;
};

class ModelError : public Error {
public:
    using Error::Error;
};

class InvalidArgumentError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

/// Raised when the measurement set does not determine all 2n rectangular states.
class UnobservableError : public Error {
public:
    UnobservableError(const std::string& what, int rank, int states)
        : Error(what), rank_(rank), states_(states) {}
    int rank() const noexcept { return rank_; }
    int states() const noexcept { return states_; }

private:
    int rank_;
    int states_;
};

class ExtractionError : public Error {
public:
    using Error::Error;
};

}  // namespace rmcse
