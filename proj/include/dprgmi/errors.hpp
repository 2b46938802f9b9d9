#pragma once

#include <stdexcept>
#include <string>

namespace dprgmi {

// Exit codes used by the CLI: 0 success, 2 config error, 3 numerical or
// divergence error, 4 I/O error.
enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 2,
    kExitNumeric = 3,
    kExitIo = 4,
};

class Error : public std::runtime_error {
public:
    Error(std::string message, int exit_code)
        : std::runtime_error(std::move(message)), exit_code_(exit_code) {}

    int exit_code() const { return exit_code_; }

private:
    int exit_code_;
};

// Invalid configuration, shape mismatches, violated preconditions.
class ConfigError : public Error {
public:
    explicit ConfigError(std::string message) : Error(std::move(message), kExitConfig) {}
};

// Divergence, calibration failure, degenerate data or geometry.
class NumericError : public Error {
public:
    explicit NumericError(std::string message) : Error(std::move(message), kExitNumeric) {}
};

// File format violations, missing files, truncation.
class IoError : public Error {
public:
    explicit IoError(std::string message) : Error(std::move(message), kExitIo) {}
};

}  // namespace dprgmi
