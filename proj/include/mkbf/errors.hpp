#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mkbf {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// All trajectory segments were unusable (fewer than two samples each).
class EmptyDataError : public Error {
public:
    using Error::Error;
};

/// A retained singular value is numerically zero relative to the largest one.
class IllConditionedError : public Error {
public:
    IllConditionedError(std::size_t index, double sigma, double sigma_max)
        : Error("singular value " + std::to_string(index) + " (" + std::to_string(sigma) +
                ") is below machine precision relative to sigma_1 = " + std::to_string(sigma_max)),
          index_(index) {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

class NonDiagonalizableError : public Error {
public:
    NonDiagonalizableError(double condition)
        : Error("system matrix is not diagonalizable: eigenvector condition number " +
                std::to_string(condition)),
          condition_(condition) {}

    double condition() const noexcept { return condition_; }

private:
    double condition_;
};

/// Lifted state blew up (NaN/Inf or norm above the divergence threshold).
class DivergenceError : public Error {
public:
    DivergenceError(std::size_t step, const std::string& what)
        : Error("divergence at step " + std::to_string(step) + ": " + what), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

class ImplicitSolveError : public Error {
public:
    /// `estimate` is a reciprocal condition estimate of the step matrix.
    explicit ImplicitSolveError(double estimate)
        : Error("implicit step matrix is singular to working precision (reciprocal condition " +
                std::to_string(estimate) + ")"),
          estimate_(estimate) {}

    double estimate() const noexcept { return estimate_; }

private:
    double estimate_;
};

/// The hybrid network parameter matrix does not exist for the requested partition.
class NonExistenceError : public Error {
public:
    using Error::Error;
};

class InsufficientExcitationError : public Error {
public:
    using Error::Error;
};

class InitializationError : public Error {
public:
    using Error::Error;
};

class StepFailureError : public Error {
public:
    StepFailureError(double time, const std::string& what)
        : Error("Newton failed at t = " + std::to_string(time) + " s: " + what), time_(time) {}

    double time() const noexcept { return time_; }

private:
    double time_;
};

/// Raised by the connected predictor when any surrogate step fails.
class PredictionAbort : public Error {
public:
    PredictionAbort(std::size_t node, std::size_t step, const std::string& what)
        : Error("prediction aborted at node " + std::to_string(node) + ", step " +
                std::to_string(step) + ": " + what),
          node_(node),
          step_(step) {}

    std::size_t node() const noexcept { return node_; }
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t node_;
    std::size_t step_;
};

/// A required input file does not exist or cannot be opened.
class MissingFileError : public Error {
public:
    explicit MissingFileError(const std::string& path)
        : Error("cannot open " + path), path_(path) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

}  // namespace mkbf
