#pragma once
#include <stdexcept>
#include <string>

namespace parley {

// Failure categories map 1:1 onto CLI exit codes.
enum class ErrorKind {
    config = 1,        // bad configuration or violated precondition
    data = 2,          // unreadable/invalid datasets, schema violations, pairing failures
    provider = 3,      // backend transport failures, unknown models, exhausted retries
    parse_budget = 4,  // evaluator output unparseable beyond the retry budget
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}

    ErrorKind kind() const { return kind_; }
    int exit_code() const { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(std::string message) : Error(ErrorKind::config, std::move(message)) {}
};

class DataError : public Error {
public:
    explicit DataError(std::string message) : Error(ErrorKind::data, std::move(message)) {}
};

class ProviderError : public Error {
public:
    explicit ProviderError(std::string message, bool retryable = false)
        : Error(ErrorKind::provider, std::move(message)), retryable_(retryable) {}

    bool retryable() const { return retryable_; }

private:
    bool retryable_;
};

class ParseBudgetError : public Error {
public:
    explicit ParseBudgetError(std::string message)
        : Error(ErrorKind::parse_budget, std::move(message)) {}
};

}  // namespace parley
