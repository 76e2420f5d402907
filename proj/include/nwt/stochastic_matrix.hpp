#pragma once

#include "nwt/error.hpp"
#include "nwt/hamiltonian.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace nwt {

/// Row-stochastic n x n matrix, rows indexed by the source state.
class StochasticMatrix
{
public:
    static constexpr double kRowSumTolerance = 1e-14;

    StochasticMatrix(std::size_t n, std::vector<double> entries) : n_(n), a_(std::move(entries))
    {
        if (n_ == 0 || a_.size() != n_ * n_)
            throw ConfigurationError("stochastic matrix: expected " + std::to_string(n_ * n_) + " entries");
        for (std::size_t i = 0; i < n_; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < n_; ++j) {
                const double v = (*this)(i, j);
                if (!(v >= 0.0) || !std::isfinite(v))
                    throw ConfigurationError("stochastic matrix: invalid entry at (" + std::to_string(i) + ", " +
                                             std::to_string(j) + ")");
                row += v;
            }
            if (std::abs(row - 1.0) > kRowSumTolerance * static_cast<double>(n_))
                throw ConfigurationError("stochastic matrix: row " + std::to_string(i) + " sums to " +
                                         std::to_string(row));
        }
    }

    static StochasticMatrix from_rows(const std::vector<std::vector<double>>& rows)
    {
        const std::size_t n = rows.size();
        std::vector<double> a;
        a.reserve(n * n);
        for (const auto& r : rows) {
            if (r.size() != n)
                throw ConfigurationError("stochastic matrix must be square");
            a.insert(a.end(), r.begin(), r.end());
        }
        return StochasticMatrix(n, std::move(a));
    }

    static StochasticMatrix identity(std::size_t n)
    {
        std::vector<double> a(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            a[i * n + i] = 1.0;
        return StochasticMatrix(n, std::move(a));
    }

    /// Every entry 1/n; the default symmetric proposal.
    static StochasticMatrix uniform(std::size_t n)
    {
        return StochasticMatrix(n, std::vector<double>(n * n, 1.0 / static_cast<double>(n)));
    }

    std::size_t size() const noexcept { return n_; }
    double operator()(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }
    const std::vector<double>& entries() const noexcept { return a_; }

    bool is_symmetric(double tol = 1e-14) const
    {
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = i + 1; j < n_; ++j)
                if (std::abs((*this)(i, j) - (*this)(j, i)) > tol)
                    return false;
        return true;
    }

    double max_row_sum_error() const
    {
        double worst = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < n_; ++j)
                row += (*this)(i, j);
            worst = std::max(worst, std::abs(row - 1.0));
        }
        return worst;
    }

    /// Row vector times matrix.
    std::vector<double> left_multiply(const std::vector<double>& v) const
    {
        std::vector<double> out(n_, 0.0);
        for (std::size_t i = 0; i < n_; ++i) {
            const double vi = v[i];
            if (vi == 0.0)
                continue;
            for (std::size_t j = 0; j < n_; ++j)
                out[j] += vi * a_[i * n_ + j];
        }
        return out;
    }

private:
    std::size_t n_;
    std::vector<double> a_;
};

namespace detail {

/// Metropolis construction from a symmetric proposal for energies e:
/// off-diagonal P(i,j) = prop(i,j) * min(1, exp(-beta (e_j - e_i))),
/// diagonal takes the remainder of the row.
inline StochasticMatrix metropolis_from_energies(const std::vector<double>& e, double beta,
                                                 const StochasticMatrix& proposal)
{
    const std::size_t n = e.size();
    if (proposal.size() != n)
        throw ConfigurationError("proposal has " + std::to_string(proposal.size()) + " states, model has " +
                                 std::to_string(n));
    if (!proposal.is_symmetric(1e-14))
        throw ConfigurationError("Metropolis proposal must be symmetric");
    std::vector<double> a(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double off = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i)
                continue;
            const double de = e[j] - e[i];
            const double acc = de <= 0.0 ? 1.0 : std::exp(-beta * de);
            a[i * n + j] = proposal(i, j) * acc;
            off += a[i * n + j];
        }
        a[i * n + i] = std::max(0.0, 1.0 - off);
    }
    return StochasticMatrix(n, std::move(a));
}

inline std::vector<double> state_energies(const HamiltonianModel& m, const ControlParam& lam)
{
    std::vector<double> e(m.n_states());
    for (std::size_t s = 0; s < e.size(); ++s)
        e[s] = m.state_energy(s, lam);
    return e;
}

} // namespace detail

/// Metropolis matrix at frozen lambda; q_lambda is stationary by detailed
/// balance.
inline StochasticMatrix metropolis_matrix(const HamiltonianModel& m, const ControlParam& lam,
                                          const StochasticMatrix& proposal)
{
    if (!m.is_finite())
        throw ConfigurationError("metropolis_matrix requires a finite-state model");
    return detail::metropolis_from_energies(detail::state_energies(m, lam), m.beta(), proposal);
}

/// Metropolis matrix targeting the tilted energy E(s) - bias * s. It does
/// not conserve q_lambda for bias != 0; used as a negative control.
inline StochasticMatrix broken_matrix(const HamiltonianModel& m, const ControlParam& lam,
                                      const StochasticMatrix& proposal, double bias)
{
    if (!m.is_finite())
        throw ConfigurationError("broken_matrix requires a finite-state model");
    auto e = detail::state_energies(m, lam);
    for (std::size_t s = 0; s < e.size(); ++s)
        e[s] -= bias * static_cast<double>(s);
    return detail::metropolis_from_energies(e, m.beta(), proposal);
}

} // namespace nwt
