#pragma once

#include <stdexcept>
#include <string>

namespace cwgf {

// Raised for malformed configuration: bad files, unknown keys, invalid
// parameter combinations. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
    ConfigError(const std::string& what, int line, const std::string& field)
        : std::runtime_error(what + " (line " + std::to_string(line) + ", field '" + field + "')"),
          line_(line),
          field_(field) {}

    int line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    int line_ = -1;
    std::string field_;
};

// Raised when a numeric routine fails to meet its contract (iterative solver
// stall, non-finite state, singular matrix). The CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
    NumericError(const std::string& what, double residual)
        : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"),
          residual_(residual) {}

    // Attaches the solver iteration at which the failure occurred.
    NumericError with_iteration(long k) const {
        NumericError out("iteration " + std::to_string(k) + ": " + std::string(what()));
        out.residual_ = residual_;
        out.iteration_ = k;
        return out;
    }

    double residual() const { return residual_; }
    long iteration() const { return iteration_; }

private:
    double residual_ = 0.0;
    long iteration_ = -1;
};

} // namespace cwgf
