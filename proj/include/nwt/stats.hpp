#pragma once

#include "nwt/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace nwt {

inline double mean(std::span<const double> v)
{
    if (v.empty())
        throw StatisticsError("mean of an empty sample");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Unbiased sample variance.
inline double sample_variance(std::span<const double> v)
{
    if (v.size() < 2)
        throw StatisticsError("variance needs at least two values");
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v)
        ss += (x - m) * (x - m);
    return ss / static_cast<double>(v.size() - 1);
}

/// Delete-1 jackknife standard error of the sample mean. For the plain
/// mean it coincides with s / sqrt(N).
inline double jackknife_stderr(std::span<const double> v)
{
    const std::size_t n = v.size();
    if (n < 2)
        throw StatisticsError("jackknife needs at least two values, got " + std::to_string(n));
    // Work relative to v[0]; the estimate is shift invariant and equal
    // values then give exactly zero.
    const double shift = v[0];
    double total = 0.0;
    for (double x : v)
        total += x - shift;
    const double nm1 = static_cast<double>(n - 1);
    // leave-one-out means theta_i = (total - v_i) / (n - 1)
    double theta_bar = 0.0;
    for (double x : v)
        theta_bar += (total - (x - shift)) / nm1;
    theta_bar /= static_cast<double>(n);
    double ss = 0.0;
    for (double x : v) {
        const double d = (total - (x - shift)) / nm1 - theta_bar;
        ss += d * d;
    }
    return std::sqrt(nm1 / static_cast<double>(n) * ss);
}

/// Standard error from non-overlapping batch means.
inline double batch_means_stderr(std::span<const double> v, std::size_t n_batches = 32)
{
    if (n_batches < 2 || v.size() < n_batches)
        throw StatisticsError("batch means needs at least two batches and one value per batch");
    const std::size_t per = v.size() / n_batches;
    std::vector<double> means(n_batches);
    for (std::size_t b = 0; b < n_batches; ++b)
        means[b] = mean(v.subspan(b * per, per));
    return std::sqrt(sample_variance(means) / static_cast<double>(n_batches));
}

inline double log_sum_exp(std::span<const double> a)
{
    if (a.empty())
        return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(a.begin(), a.end());
    if (!std::isfinite(m))
        return m;
    double s = 0.0;
    for (double x : a)
        s += std::exp(x - m);
    return m + std::log(s);
}

/// Mean of exp(a_i) computed in log space, with its standard error.
/// The linear-scale fields may overflow; the log-scale ones stay finite.
struct ExponentialAverage
{
    double log_mean = 0.0;
    double mean = 1.0;
    double standard_error = 0.0;
    /// stderr / mean, computed without leaving the scaled domain.
    double relative_stderr = 0.0;
    /// Largest single weight over the sum of weights (tail diagnostic).
    double max_weight_fraction = 0.0;
};

inline ExponentialAverage exponential_average(std::span<const double> log_terms)
{
    if (log_terms.size() < 2)
        throw StatisticsError("exponential average needs at least two samples");
    const double m = *std::max_element(log_terms.begin(), log_terms.end());
    if (!std::isfinite(m))
        throw StatisticsError("non-finite log term in exponential average");
    std::vector<double> scaled(log_terms.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < scaled.size(); ++i) {
        scaled[i] = std::exp(log_terms[i] - m);
        sum += scaled[i];
    }
    const double scaled_mean = sum / static_cast<double>(scaled.size());
    const double scaled_se = jackknife_stderr(scaled);
    ExponentialAverage out;
    out.log_mean = m + std::log(scaled_mean);
    out.mean = std::exp(out.log_mean);
    out.standard_error = scaled_se > 0.0 ? std::exp(m + std::log(scaled_se)) : 0.0;
    out.relative_stderr = scaled_se / scaled_mean;
    out.max_weight_fraction = 1.0 / sum;
    return out;
}

} // namespace nwt
