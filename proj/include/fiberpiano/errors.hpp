#pragma once

#include <stdexcept>
#include <string>

namespace fiberpiano {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Vector or matrix sizes that do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Requested more guided modes than the fiber supports.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// Sampling grid too coarse for the fundamental mode.
class ResolutionError : public Error {
public:
    using Error::Error;
};

/// Detector placed outside the sampling grid, or positions that do not line up.
class GeometryError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Statistic undefined for the given data (zero mean, zero variance).
class DegenerateError : public Error {
public:
    using Error::Error;
};

class InfeasibleSpectrumError : public Error {
public:
    using Error::Error;
};

class ZeroProbabilityHeraldError : public Error {
public:
    using Error::Error;
};

/// Raised by the optimizer when a cost evaluation throws; carries particle context.
class CostEvaluationError : public Error {
public:
    CostEvaluationError(const std::string& what, int iteration, int particle)
        : Error(what), iteration_(iteration), particle_(particle) {}

    int iteration() const noexcept { return iteration_; }
    int particle() const noexcept { return particle_; }

private:
    int iteration_;
    int particle_;
};

/// Invalid configuration document. `path()` names the offending field, e.g. "pso.inertia".
class ConfigError : public Error {
public:
    ConfigError(std::string path, const std::string& message)
        : Error(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

}  // namespace fiberpiano
