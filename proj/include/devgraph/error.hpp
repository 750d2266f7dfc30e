#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace devgraph {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid arguments or inconsistent inputs (shape, length, range).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Text-format parse failure; `line()` is 1-based.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A nonlinear or iterative solve failed to reach its tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::vector<double> residuals)
        : Error(what), residuals_(std::move(residuals)) {}
    const std::vector<double>& residuals() const noexcept { return residuals_; }
    double last_residual() const noexcept { return residuals_.empty() ? 0.0 : residuals_.back(); }

private:
    std::vector<double> residuals_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(int epoch, double lr)
        : Error("loss diverged to NaN/Inf at epoch " + std::to_string(epoch) +
                " (lr=" + std::to_string(lr) + ")"),
          epoch_(epoch), lr_(lr) {}
    int epoch() const noexcept { return epoch_; }
    double lr() const noexcept { return lr_; }

private:
    int epoch_;
    double lr_;
};

} // namespace devgraph
