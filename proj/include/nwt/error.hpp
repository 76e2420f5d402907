#pragma once

#include <stdexcept>
#include <string>

namespace nwt {

/// Base of every error raised by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Inconsistent dimensions, invalid parameters, malformed configs.
class ConfigurationError : public Error
{
public:
    using Error::Error;
};

/// A model function returned a non-finite value.
class EvaluationError : public Error
{
public:
    using Error::Error;
};

/// Argument outside the domain of an operation (e.g. t outside [0,T]).
class DomainError : public Error
{
public:
    using Error::Error;
};

/// exp(-beta*H) is not integrable, or the integral overflowed.
class IntegrabilityError : public Error
{
public:
    using Error::Error;
};

/// Numerical estimation did not reach the requested tolerance.
class EstimationError : public Error
{
public:
    EstimationError(const std::string& what, double achieved)
        : Error(what + " (achieved error estimate " + std::to_string(achieved) + ")")
        , achieved_(achieved)
    {
    }

    double achieved_tolerance() const noexcept { return achieved_; }

private:
    double achieved_;
};

/// A trajectory is missing a time point required by a protocol.
class AlignmentError : public Error
{
public:
    AlignmentError(const std::string& what, double time)
        : Error(what), time_(time)
    {
    }

    double time() const noexcept { return time_; }

private:
    double time_;
};

class StatisticsError : public Error
{
public:
    using Error::Error;
};

/// Estimator refused a kernel that does not conserve the canonical distribution.
class KernelRefusedError : public Error
{
public:
    using Error::Error;
};

/// An observable exceeded its declared bound.
class ObservableError : public Error
{
public:
    using Error::Error;
};

/// A combinatorial guard was exceeded.
class SizeError : public Error
{
public:
    using Error::Error;
};

} // namespace nwt
