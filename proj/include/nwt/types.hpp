#pragma once

#include "nwt/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace nwt {

/// Dense real vector tagged with the role it plays, so that a phase-space
/// point cannot be passed where a control parameter is expected.
template <class Tag>
class RealVector
{
public:
    RealVector() = default;
    explicit RealVector(std::vector<double> values) : values_(std::move(values)) {}
    RealVector(std::initializer_list<double> values) : values_(values) {}
    explicit RealVector(std::span<const double> values) : values_(values.begin(), values.end()) {}

    static RealVector zeros(std::size_t n) { return RealVector(std::vector<double>(n, 0.0)); }

    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    auto begin() noexcept { return values_.begin(); }
    auto end() noexcept { return values_.end(); }
    auto begin() const noexcept { return values_.begin(); }
    auto end() const noexcept { return values_.end(); }

    std::span<const double> view() const noexcept { return values_; }
    std::span<double> view() noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }

    bool all_finite() const
    {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const RealVector&, const RealVector&) = default;

    RealVector& operator+=(const RealVector& other)
    {
        check_same_size(other);
        for (std::size_t i = 0; i < values_.size(); ++i)
            values_[i] += other.values_[i];
        return *this;
    }

    RealVector& operator-=(const RealVector& other)
    {
        check_same_size(other);
        for (std::size_t i = 0; i < values_.size(); ++i)
            values_[i] -= other.values_[i];
        return *this;
    }

    RealVector& operator*=(double s)
    {
        for (auto& v : values_)
            v *= s;
        return *this;
    }

    friend RealVector operator+(RealVector a, const RealVector& b) { return a += b; }
    friend RealVector operator-(RealVector a, const RealVector& b) { return a -= b; }
    friend RealVector operator*(RealVector a, double s) { return a *= s; }
    friend RealVector operator*(double s, RealVector a) { return a *= s; }

private:
    void check_same_size(const RealVector& other) const
    {
        if (other.size() != size())
            throw ConfigurationError("vector size mismatch: " + std::to_string(size()) + " vs " +
                                     std::to_string(other.size()));
    }

    std::vector<double> values_;
};

struct ControlTag;
struct PhaseTag;

/// Externally controlled parameter, a point of Lambda in R^l.
using ControlParam = RealVector<ControlTag>;
/// Point of the phase space. Finite state spaces store the state index as
/// the single coordinate.
using PhasePoint = RealVector<PhaseTag>;

/// L1 norm of a difference; the variation measure used for protocols.
template <class Tag>
double l1_distance(const RealVector<Tag>& a, const RealVector<Tag>& b)
{
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        sum += std::abs(a[i] - b[i]);
    return sum;
}

inline std::string format_vector(std::span<const double> v)
{
    std::ostringstream out;
    out.precision(17);
    out << '(';
    for (std::size_t i = 0; i < v.size(); ++i)
        out << (i ? ", " : "") << v[i];
    out << ')';
    return out.str();
}

/// Axis-aligned box of admissible control values.
struct ControlBox
{
    ControlParam lower;
    ControlParam upper;

    std::size_t dim() const noexcept { return lower.size(); }

    bool contains(const ControlParam& lam, double slack = 1e-12) const
    {
        if (lam.size() != dim())
            return false;
        for (std::size_t k = 0; k < dim(); ++k)
            if (lam[k] < lower[k] - slack || lam[k] > upper[k] + slack)
                return false;
        return true;
    }

    ControlParam center() const { return 0.5 * (lower + upper); }
};

} // namespace nwt
