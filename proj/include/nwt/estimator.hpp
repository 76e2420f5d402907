#pragma once

#include "nwt/error.hpp"
#include "nwt/hamiltonian.hpp"
#include "nwt/kernel.hpp"
#include "nwt/parallel.hpp"
#include "nwt/protocol.hpp"
#include "nwt/stats.hpp"
#include "nwt/work.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace nwt {

/// Width of every acceptance band, in standard errors.
inline constexpr double kBandSigmas = 4.0;

struct EstimatorOptions
{
    /// Permit kernels that do not conserve q_lambda (negative controls).
    bool allow_broken_kernel = false;
    /// 0 selects default_workers().
    std::size_t workers = 0;
    /// Keep per-trajectory samples in the report (for CSV dumps).
    bool keep_samples = false;
};

struct EstimatorReport
{
    std::size_t n_samples = 0;
    double beta = 1.0;

    double mean_exp_w = 1.0;
    double stderr_exp_w = 0.0;
    double log_mean_exp_w = 0.0;
    double relative_stderr_exp_w = 0.0;
    /// -(1/beta) ln mean_exp_w, and its delta-method standard error.
    double delta_f_estimate = 0.0;
    double delta_f_stderr = 0.0;
    std::optional<double> delta_f_exact;

    double mean_w = 0.0;
    double stderr_w = 0.0;

    double mean_exp_w0 = 1.0;
    double stderr_exp_w0 = 0.0;
    double log_mean_exp_w0 = 0.0;

    /// (mean_exp_w - exp(-beta dF_exact)) / stderr_exp_w.
    std::optional<double> z_score;
    /// (mean_exp_w0 - 1) / stderr_exp_w0.
    double z_score_bk = 0.0;
    /// Largest single exp(-beta W) weight over the total.
    double tail_weight = 0.0;

    std::vector<std::string> warnings;
    std::vector<WorkSample> samples;

    /// mean_w >= delta_f_estimate - 4 (stderr_w + delta_f_stderr).
    bool second_law_holds() const
    {
        return mean_w >= delta_f_estimate - kBandSigmas * (stderr_w + delta_f_stderr);
    }
};

namespace detail {

/// (exp(log_mean) - exp(log_target)) / stderr, with stderr = rel * exp(log_mean).
inline double z_from_logs(double log_mean, double log_target, double relative_stderr)
{
    const double diff = std::expm1(log_target - log_mean); // (target - mean) / mean
    if (relative_stderr == 0.0)
        return diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), -diff);
    return -diff / relative_stderr;
}

inline void validate_run(const HamiltonianModel& model, const Protocol& p, const SamplerConfig& cfg, std::size_t n,
                         const EstimatorOptions& opt)
{
    if (n < 2)
        throw ConfigurationError("estimator needs N >= 2 trajectories");
    if (cfg.grid_steps == 0)
        throw ConfigurationError("grid_steps must be >= 1");
    if (!cfg.kernel.conserves_canonical() && !opt.allow_broken_kernel)
        throw KernelRefusedError("kernel '" + cfg.kernel.name() +
                                 "' does not conserve the canonical distribution; refusing to estimate "
                                 "(set the explicit override to run it as a negative control)");
    cfg.kernel.check_compatible(model);
    if (p.control_dim() != model.control_dim())
        throw ConfigurationError("protocol control dimension " + std::to_string(p.control_dim()) +
                                 " does not match model '" + model.name() + "' (" +
                                 std::to_string(model.control_dim()) + ")");
    if (!p.within(model.lambda_box()))
        throw ConfigurationError("protocol leaves the control box of model '" + model.name() + "'");
}

} // namespace detail

/// Samples N trajectories under p and evaluates both works on each. The
/// result is ordered by trajectory index and independent of the worker
/// count.
inline std::vector<WorkSample> sample_work(const HamiltonianModel& model, const Protocol& p, const SamplerConfig& cfg,
                                           std::size_t n, const EstimatorOptions& opt = {})
{
    detail::validate_run(model, p, cfg, n, opt);
    const StepProtocol discretized = step_approximation(p, cfg.grid_steps);
    std::vector<WorkSample> samples(n);
    parallel_for(n, opt.workers ? opt.workers : default_workers(), [&](std::size_t i) {
        const Trajectory traj = sample_trajectory(model, p, discretized, cfg, i);
        samples[i] = work_sample(traj, p, model, i);
    });
    return samples;
}

/// Report from already computed samples. Exponential averages are taken in
/// log space, so a single extreme work value cannot overflow them.
inline EstimatorReport summarize_work(std::span<const WorkSample> samples, double beta,
                                      std::optional<double> delta_f_exact = std::nullopt)
{
    if (samples.size() < 2)
        throw StatisticsError("need at least two work samples");
    const std::size_t n = samples.size();
    std::vector<double> w(n), a(n), a0(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = samples[i].w;
        a[i] = -beta * samples[i].w;
        a0[i] = -beta * samples[i].w0;
    }
    const ExponentialAverage ew = exponential_average(a);
    const ExponentialAverage ew0 = exponential_average(a0);

    EstimatorReport r;
    r.n_samples = n;
    r.beta = beta;
    r.log_mean_exp_w = ew.log_mean;
    r.mean_exp_w = ew.mean;
    r.stderr_exp_w = ew.standard_error;
    r.relative_stderr_exp_w = ew.relative_stderr;
    r.delta_f_estimate = 0.0 - ew.log_mean / beta; // +0 rather than -0 for W = 0
    r.delta_f_stderr = ew.relative_stderr / beta;
    r.delta_f_exact = delta_f_exact;
    r.mean_w = mean(w);
    r.stderr_w = jackknife_stderr(w);
    r.log_mean_exp_w0 = ew0.log_mean;
    r.mean_exp_w0 = ew0.mean;
    r.stderr_exp_w0 = ew0.standard_error;
    r.z_score_bk = detail::z_from_logs(ew0.log_mean, 0.0, ew0.relative_stderr);
    if (delta_f_exact)
        r.z_score = detail::z_from_logs(ew.log_mean, -beta * *delta_f_exact, ew.relative_stderr);
    r.tail_weight = ew.max_weight_fraction;
    if (!std::isfinite(r.mean_exp_w) || !std::isfinite(r.mean_exp_w0))
        r.warnings.push_back("exponential average exceeds double range; use the log_mean fields");
    if (r.tail_weight > 0.1)
        r.warnings.push_back("a single trajectory carries more than 10% of the exponential weight");
    return r;
}

/// Monte Carlo estimate of <exp(-beta W)> = Z_{lambda(T)} / Z_{lambda(0)}.
inline EstimatorReport jarzynski_estimate(const HamiltonianModel& model, const Protocol& p, const SamplerConfig& cfg,
                                          std::size_t n, const EstimatorOptions& opt = {})
{
    auto samples = sample_work(model, p, cfg, n, opt);
    std::optional<double> exact;
    std::vector<std::string> warnings;
    try {
        exact = model.free_energy_difference(p.value_at(0.0), p.value_at(p.duration()));
    } catch (const Error& e) {
        warnings.push_back(std::string("exact free energy unavailable: ") + e.what());
    }
    EstimatorReport r = summarize_work(samples, model.beta(), exact);
    if (!initial_sampling_is_exact(model, cfg.initial))
        warnings.push_back("initial states come from a burn-in chain; the initial law is only approximately "
                           "canonical");
    if (!cfg.kernel.conserves_canonical())
        warnings.push_back("kernel does not conserve the canonical distribution (negative control)");
    r.warnings.insert(r.warnings.begin(), warnings.begin(), warnings.end());
    if (opt.keep_samples)
        r.samples = std::move(samples);
    return r;
}

/// Monte Carlo estimate of <exp(-beta W_0)>, whose target is 1. The
/// report carries both averages from the same trajectories.
inline EstimatorReport bk_estimate(const HamiltonianModel& model, const Protocol& p, const SamplerConfig& cfg,
                                   std::size_t n, const EstimatorOptions& opt = {})
{
    return jarzynski_estimate(model, p, cfg, n, opt);
}

struct WeightedObservableEstimate
{
    double lhs = 0.0;    ///< mean of f(x_T) exp(-beta W)
    double rhs = 0.0;    ///< E_{lambda(T)}[f] * mean of exp(-beta W)
    double standard_error = 0.0; ///< jackknife error of lhs - rhs
    double expectation_T = 0.0;
    double mean_exp_w = 1.0;
};

/// Compares E[f(x_T) exp(-beta W)] with E_{lambda(T)}[f] E[exp(-beta W)].
/// E_{lambda(T)}[f] is computed deterministically (finite sum or
/// quadrature). f must satisfy |f| <= bound on every sampled x_T.
inline WeightedObservableEstimate weighted_observable_estimate(const HamiltonianModel& model, const Protocol& p,
                                                               const SamplerConfig& cfg, std::size_t n,
                                                               const Observable& f, double bound,
                                                               const EstimatorOptions& opt = {})
{
    if (!(bound > 0.0))
        throw ConfigurationError("observable bound must be positive");
    const auto samples = sample_work(model, p, cfg, n, opt);
    const double beta = model.beta();
    const ControlParam lamT = p.value_at(p.duration());
    WeightedObservableEstimate out;
    out.expectation_T = model.expectation(f, lamT);

    double m = -std::numeric_limits<double>::infinity();
    for (const auto& s : samples)
        m = std::max(m, -beta * s.w);
    std::vector<double> weight(n), fw(n), diff(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double fx = f(samples[i].final_state);
        if (!std::isfinite(fx) || std::abs(fx) > bound)
            throw ObservableError("observable value " + std::to_string(fx) + " exceeds the declared bound " +
                                  std::to_string(bound) + " at trajectory " + std::to_string(i));
        weight[i] = std::exp(-beta * samples[i].w - m);
        fw[i] = fx * weight[i];
        diff[i] = (fx - out.expectation_T) * weight[i];
    }
    const double scale = std::exp(m);
    out.mean_exp_w = mean(weight) * scale;
    out.lhs = mean(fw) * scale;
    out.rhs = out.expectation_T * out.mean_exp_w;
    out.standard_error = jackknife_stderr(diff) * scale;
    return out;
}

struct ConvergenceRow
{
    std::size_t grid_steps = 0;
    double mean_exp_w = 1.0;
    double stderr_exp_w = 0.0;
    double delta_f_estimate = 0.0;
    std::optional<double> z_score;
};

/// jarzynski_estimate at several grid resolutions. Every step
/// approximation keeps lambda(0) and lambda(T), so all rows estimate the
/// same ratio Z_{lambda(T)} / Z_{lambda(0)}.
inline std::vector<ConvergenceRow> convergence_study(const HamiltonianModel& model, const Protocol& p,
                                                     SamplerConfig cfg, std::size_t n,
                                                     const std::vector<std::size_t>& grids,
                                                     const EstimatorOptions& opt = {})
{
    if (grids.empty())
        throw ConfigurationError("convergence study needs at least one grid");
    std::vector<ConvergenceRow> rows;
    for (std::size_t g : grids) {
        cfg.grid_steps = g;
        const EstimatorReport r = jarzynski_estimate(model, p, cfg, n, opt);
        rows.push_back({g, r.mean_exp_w, r.stderr_exp_w, r.delta_f_estimate, r.z_score});
    }
    return rows;
}

} // namespace nwt
