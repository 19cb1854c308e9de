#pragma once

#include <stdexcept>
#include <string>

namespace refinery {

/// Base of every error raised by the library. `exit_code()` is what the CLI
/// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

/// Record or config content violates an invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A JSONL line could not be parsed.
class ParseError : public ValidationError {
public:
    ParseError(std::size_t line, const std::string& what)
        : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Numerical precondition failure inside fusion, GRPO or metrics.
class ComputeError : public Error {
public:
    using Error::Error;
};

/// An expert backend failed after exhausting its retries.
class BackendError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

class IoError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

}  // namespace refinery

namespace refinery {

/// Wraps the failure of a named pipeline stage, keeping the cause's exit code.
class StageError : public Error {
public:
    StageError(std::string stage, const Error& cause)
        : Error("stage '" + stage + "' failed: " + cause.what()), stage_(std::move(stage)), code_(cause.exit_code()) {}
    const std::string& stage() const noexcept { return stage_; }
    int exit_code() const noexcept override { return code_; }

private:
    std::string stage_;
    int code_;
};

}  // namespace refinery
