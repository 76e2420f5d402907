#pragma once

#include "nwt/error.hpp"
#include "nwt/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace nwt {

namespace detail {

inline void check_time_grid(const std::vector<double>& times, const char* what)
{
    if (times.size() < 2)
        throw ConfigurationError(std::string(what) + ": need at least the points 0 and T");
    if (times.front() != 0.0)
        throw ConfigurationError(std::string(what) + ": first point must be t = 0");
    for (std::size_t i = 1; i < times.size(); ++i) {
        if (!std::isfinite(times[i]))
            throw ConfigurationError(std::string(what) + ": non-finite time at position " + std::to_string(i));
        if (!(times[i] > times[i - 1]))
            throw ConfigurationError(std::string(what) + ": times must be strictly increasing (position " +
                                     std::to_string(i) + ")");
    }
}

inline void check_values(const std::vector<ControlParam>& values, std::size_t expected, const char* what)
{
    if (values.size() != expected)
        throw ConfigurationError(std::string(what) + ": expected " + std::to_string(expected) + " values, got " +
                                 std::to_string(values.size()));
    const std::size_t dim = values.front().size();
    if (dim == 0)
        throw ConfigurationError(std::string(what) + ": control values must have at least one component");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i].size() != dim)
            throw ConfigurationError(std::string(what) + ": inconsistent control dimension at position " +
                                     std::to_string(i));
        if (!values[i].all_finite())
            throw ConfigurationError(std::string(what) + ": non-finite control value at position " +
                                     std::to_string(i));
    }
}

} // namespace detail

/// Right-continuous step function: value values[i] on [t_i, t_{i+1}) and
/// values[n] at t_n = T.
class StepProtocol
{
public:
    StepProtocol(std::vector<double> breakpoints, std::vector<ControlParam> values)
        : breakpoints_(std::move(breakpoints)), values_(std::move(values))
    {
        detail::check_time_grid(breakpoints_, "step protocol");
        detail::check_values(values_, breakpoints_.size(), "step protocol");
    }

    static StepProtocol constant(double T, const ControlParam& c) { return StepProtocol({0.0, T}, {c, c}); }

    double duration() const noexcept { return breakpoints_.back(); }
    std::size_t control_dim() const noexcept { return values_.front().size(); }
    /// Number of constancy intervals [t_i, t_{i+1}).
    std::size_t segments() const noexcept { return breakpoints_.size() - 1; }
    const std::vector<double>& breakpoints() const noexcept { return breakpoints_; }
    const std::vector<ControlParam>& values() const noexcept { return values_; }

    ControlParam value_at(double t) const { return values_[index_at(t)]; }

    ControlParam left_limit_at(double t) const
    {
        if (!(t > 0.0) || t > duration())
            throw DomainError("left limit requested at t=" + std::to_string(t) + " outside (0, T]");
        // last breakpoint strictly before t
        auto it = std::lower_bound(breakpoints_.begin(), breakpoints_.end(), t);
        return values_[static_cast<std::size_t>(it - breakpoints_.begin()) - 1];
    }

    /// Index i with t in [t_i, t_{i+1}), or n at T.
    std::size_t index_at(double t) const
    {
        if (!(t >= 0.0) || t > duration())
            throw DomainError("time t=" + std::to_string(t) + " outside [0, T]");
        auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t);
        return static_cast<std::size_t>(it - breakpoints_.begin()) - 1;
    }

    double total_variation() const
    {
        double tv = 0.0;
        for (std::size_t i = 1; i < values_.size(); ++i)
            tv += l1_distance(values_[i], values_[i - 1]);
        return tv;
    }

private:
    std::vector<double> breakpoints_;
    std::vector<ControlParam> values_;
};

/// Continuous path of bounded variation, linear between nodes.
class ContinuousBVProtocol
{
public:
    ContinuousBVProtocol(std::vector<double> nodes, std::vector<ControlParam> node_values)
        : nodes_(std::move(nodes)), values_(std::move(node_values))
    {
        detail::check_time_grid(nodes_, "continuous protocol");
        detail::check_values(values_, nodes_.size(), "continuous protocol");
    }

    static ContinuousBVProtocol constant(double T, const ControlParam& c) { return {{0.0, T}, {c, c}}; }

    static ContinuousBVProtocol linear(double T, const ControlParam& from, const ControlParam& to)
    {
        return {{0.0, T}, {from, to}};
    }

    double duration() const noexcept { return nodes_.back(); }
    std::size_t control_dim() const noexcept { return values_.front().size(); }
    const std::vector<double>& nodes() const noexcept { return nodes_; }
    const std::vector<ControlParam>& node_values() const noexcept { return values_; }

    ControlParam value_at(double t) const
    {
        if (!(t >= 0.0) || t > duration())
            throw DomainError("time t=" + std::to_string(t) + " outside [0, T]");
        const std::size_t k = segment_at(t);
        const double t0 = nodes_[k];
        const double t1 = nodes_[k + 1];
        if (t == t0)
            return values_[k];
        if (t == t1)
            return values_[k + 1];
        const double w = (t - t0) / (t1 - t0);
        ControlParam out = values_[k];
        for (std::size_t c = 0; c < out.size(); ++c)
            out[c] += w * (values_[k + 1][c] - values_[k][c]);
        return out;
    }

    /// d lambda / dt on the segment containing t (right derivative).
    ControlParam slope_at(double t) const
    {
        const std::size_t k = segment_at(t);
        return (values_[k + 1] - values_[k]) * (1.0 / (nodes_[k + 1] - nodes_[k]));
    }

    double total_variation() const
    {
        double tv = 0.0;
        for (std::size_t i = 1; i < values_.size(); ++i)
            tv += l1_distance(values_[i], values_[i - 1]);
        return tv;
    }

    /// Index k of the segment [s_k, s_{k+1}] containing t; the last segment at T.
    std::size_t segment_at(double t) const
    {
        auto it = std::upper_bound(nodes_.begin(), nodes_.end(), t);
        const std::size_t k = it == nodes_.begin() ? 0 : static_cast<std::size_t>(it - nodes_.begin()) - 1;
        return std::min(k, nodes_.size() - 2);
    }

private:
    std::vector<double> nodes_;
    std::vector<ControlParam> values_;
};

/// Control path lambda = lambda_c + lambda_step on [0, T].
class Protocol
{
public:
    Protocol(ContinuousBVProtocol continuous, StepProtocol steps)
        : continuous_(std::move(continuous)), steps_(std::move(steps))
    {
        if (continuous_.duration() != steps_.duration())
            throw ConfigurationError("continuous and step parts have different durations");
        if (continuous_.control_dim() != steps_.control_dim())
            throw ConfigurationError("continuous and step parts have different control dimensions");
    }

    static Protocol constant(double T, const ControlParam& c)
    {
        return {ContinuousBVProtocol::constant(T, c), StepProtocol::constant(T, ControlParam::zeros(c.size()))};
    }

    static Protocol from_steps(StepProtocol steps)
    {
        const double T = steps.duration();
        const std::size_t l = steps.control_dim();
        return {ContinuousBVProtocol::constant(T, ControlParam::zeros(l)), std::move(steps)};
    }

    static Protocol from_continuous(ContinuousBVProtocol c)
    {
        const double T = c.duration();
        const std::size_t l = c.control_dim();
        return {std::move(c), StepProtocol::constant(T, ControlParam::zeros(l))};
    }

    double duration() const noexcept { return steps_.duration(); }
    std::size_t control_dim() const noexcept { return steps_.control_dim(); }
    const ContinuousBVProtocol& continuous_part() const noexcept { return continuous_; }
    const StepProtocol& step_part() const noexcept { return steps_; }

    /// Right-continuous value lambda(t).
    ControlParam value_at(double t) const { return continuous_.value_at(t) + steps_.value_at(t); }

    /// lambda(t - 0).
    ControlParam left_limit_at(double t) const
    {
        if (!(t > 0.0))
            throw DomainError("left limit requested at t=" + std::to_string(t) + " <= 0");
        return continuous_.value_at(t) + steps_.left_limit_at(t);
    }

    double total_variation() const { return continuous_.total_variation() + steps_.total_variation(); }

    /// Jump points with a nonzero jump, followed by T (always included, with
    /// a possibly zero jump).
    std::vector<double> discontinuity_points() const
    {
        std::vector<double> out;
        const auto& bp = steps_.breakpoints();
        const auto& v = steps_.values();
        for (std::size_t i = 1; i + 1 < bp.size(); ++i)
            if (!(v[i] == v[i - 1]))
                out.push_back(bp[i]);
        out.push_back(duration());
        return out;
    }

    /// True when lambda_c has zero variation; the protocol is then a step
    /// function.
    bool is_step_function() const { return continuous_.total_variation() == 0.0; }

    /// Node and breakpoint times; lambda is linear in between.
    std::vector<double> kink_times() const
    {
        std::vector<double> out = continuous_.nodes();
        out.insert(out.end(), steps_.breakpoints().begin(), steps_.breakpoints().end());
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    /// Every value and left limit stays inside the box.
    bool within(const ControlBox& box) const
    {
        for (double t : kink_times()) {
            if (!box.contains(value_at(t)))
                return false;
            if (t > 0.0 && !box.contains(left_limit_at(t)))
                return false;
        }
        return true;
    }

private:
    ContinuousBVProtocol continuous_;
    StepProtocol steps_;
};

/// Step approximation lambda^n on the uniform n-cell grid of [0, T],
/// refined with every jump point of p; lambda^n(t_i) = lambda(t_i) at every
/// node. A protocol that already is a step function is returned unchanged.
inline StepProtocol step_approximation(const Protocol& p, std::size_t n)
{
    if (n == 0)
        throw ConfigurationError("step approximation needs n >= 1");
    const double T = p.duration();
    std::vector<double> grid;
    if (p.is_step_function()) {
        grid = p.step_part().breakpoints();
    } else {
        grid.reserve(n + 1);
        for (std::size_t i = 0; i <= n; ++i)
            grid.push_back(i == n ? T : T * static_cast<double>(i) / static_cast<double>(n));
        const double snap = 1e-12 * T;
        for (double jump : p.discontinuity_points()) {
            auto it = std::lower_bound(grid.begin(), grid.end(), jump);
            if (it != grid.end() && std::abs(*it - jump) <= snap) {
                *it = jump;
            } else if (it != grid.begin() && std::abs(*(it - 1) - jump) <= snap) {
                *(it - 1) = jump;
            } else {
                grid.insert(it, jump);
            }
        }
    }
    std::vector<ControlParam> values;
    values.reserve(grid.size());
    for (double t : grid)
        values.push_back(p.value_at(t));
    return StepProtocol(std::move(grid), std::move(values));
}

/// sup_t |p(t) - sp(t)| in the max-component norm. The difference is
/// piecewise linear, so checking values and left limits at all kinks of
/// both is exact.
inline double sup_distance(const Protocol& p, const StepProtocol& sp)
{
    std::vector<double> times = p.kink_times();
    times.insert(times.end(), sp.breakpoints().begin(), sp.breakpoints().end());
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    double sup = 0.0;
    auto update = [&sup](const ControlParam& a, const ControlParam& b) {
        for (std::size_t k = 0; k < a.size(); ++k)
            sup = std::max(sup, std::abs(a[k] - b[k]));
    };
    for (double t : times) {
        update(p.value_at(t), sp.value_at(t));
        if (t > 0.0)
            update(p.left_limit_at(t), sp.left_limit_at(t));
    }
    return sup;
}

/// Integrand of a Stieltjes integral: t -> R^l.
using StieltjesIntegrand = std::function<ControlParam(double t)>;

/// Integral of <g(t), d lambda_c(t)> over [grid.front(), grid.back()] with
/// the midpoint rule on the caller's grid merged with the nodes of
/// lambda_c. Exact when g is linear on every cell.
inline double stieltjes_integrate(const StieltjesIntegrand& g, const Protocol& p, std::span<const double> grid)
{
    if (grid.size() < 2)
        throw ConfigurationError("Stieltjes integration needs at least two grid points");
    const double a = grid.front();
    const double b = grid.back();
    if (!(a >= 0.0) || b > p.duration() || !(a < b))
        throw DomainError("integration range outside [0, T]");
    std::vector<double> pts(grid.begin(), grid.end());
    for (double s : p.continuous_part().nodes())
        if (s > a && s < b)
            pts.push_back(s);
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

    const auto& lc = p.continuous_part();
    double sum = 0.0;
    ControlParam left = lc.value_at(pts.front());
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const ControlParam right = lc.value_at(pts[i + 1]);
        const double mid = 0.5 * (pts[i] + pts[i + 1]);
        bool moves = false;
        for (std::size_t k = 0; k < left.size(); ++k)
            moves = moves || right[k] != left[k];
        if (moves) {
            const ControlParam gv = g(mid);
            if (gv.size() != left.size())
                throw ConfigurationError("Stieltjes integrand has wrong dimension");
            if (!gv.all_finite())
                throw EvaluationError("non-finite Stieltjes integrand at t=" + std::to_string(mid));
            for (std::size_t k = 0; k < left.size(); ++k)
                sum += gv[k] * (right[k] - left[k]);
        }
        left = right;
    }
    return sum;
}

/// Same on a uniform grid of `cells` cells over [0, T].
inline double stieltjes_integrate(const StieltjesIntegrand& g, const Protocol& p, std::size_t cells = 1000)
{
    if (cells == 0)
        throw ConfigurationError("Stieltjes integration needs at least one cell");
    std::vector<double> grid(cells + 1);
    for (std::size_t i = 0; i <= cells; ++i)
        grid[i] = i == cells ? p.duration() : p.duration() * static_cast<double>(i) / static_cast<double>(cells);
    return stieltjes_integrate(g, p, grid);
}

} // namespace nwt
