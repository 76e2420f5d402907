#pragma once

#include "nwt/error.hpp"
#include "nwt/random.hpp"
#include "nwt/types.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nwt {

using EnergyFn = std::function<double(std::span<const double> x, std::span<const double> lam)>;
using GradientFn =
    std::function<void(std::span<const double> x, std::span<const double> lam, std::span<double> out)>;
using LogPartitionFn = std::function<double(const ControlParam& lam)>;
using ExactSampler = std::function<void(const ControlParam& lam, RandomStream& rng, std::span<double> out)>;
using Observable = std::function<double(const PhasePoint& x)>;

/// How to integrate exp(-beta*H) over the real line (or plane). The
/// integration variable is u with x = center(lam) + scale(lam) * u.
struct QuadratureSpec
{
    double abs_tol = 1e-10;
    unsigned max_depth = 15;
    std::function<PhasePoint(const ControlParam&)> center;
    std::function<double(const ControlParam&)> scale;
};

/// Everything needed to build a HamiltonianModel. Optional members may be
/// left empty: a missing gradient falls back to central differences, a
/// missing analytic log-partition falls back to quadrature (or a finite
/// sum), a missing sampler forces burn-in initial sampling.
struct ModelDefinition
{
    std::string name = "custom";
    double beta = 1.0;
    std::size_t phase_dim = 1;
    /// Nonzero marks a finite state space {0, ..., n_states-1}.
    std::size_t n_states = 0;
    std::size_t control_dim = 1;

    EnergyFn energy;
    GradientFn dlambda;
    LogPartitionFn log_partition;
    ExactSampler sampler;
    QuadratureSpec quadrature;

    ControlBox lambda_box;
    /// Control values where the energy is not differentiable (piecewise
    /// tables); the construction-time gradient check stays away from them.
    std::vector<double> lambda_kinks;

    bool validate = true;
};

namespace detail {

constexpr double kOverflowGuard = 1e300;

template <class F>
double integrate_real_line(F&& f, const QuadratureSpec& q, double& error_out)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    double error = 0.0;
    double l1 = 0.0;
    const double value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        std::forward<F>(f), -inf, inf, q.max_depth, q.abs_tol, &error, &l1);
    error_out = std::max(error_out, error / std::max(1.0, l1));
    return value;
}

} // namespace detail

/// Parametrized Hamiltonian H(x, lambda) at inverse temperature beta.
/// Immutable after construction; safe for concurrent reads.
class HamiltonianModel
{
public:
    explicit HamiltonianModel(ModelDefinition def) : def_(std::move(def))
    {
        if (!(def_.beta > 0.0) || !std::isfinite(def_.beta))
            throw ConfigurationError("model '" + def_.name + "': beta must be positive and finite");
        if (def_.control_dim == 0)
            throw ConfigurationError("model '" + def_.name + "': control dimension must be >= 1");
        if (is_finite())
            def_.phase_dim = 1;
        if (def_.phase_dim == 0)
            throw ConfigurationError("model '" + def_.name + "': phase dimension must be >= 1");
        if (!def_.energy)
            throw ConfigurationError("model '" + def_.name + "': energy function is required");
        if (def_.lambda_box.dim() == 0) {
            def_.lambda_box.lower = ControlParam(std::vector<double>(def_.control_dim, -1e3));
            def_.lambda_box.upper = ControlParam(std::vector<double>(def_.control_dim, 1e3));
        }
        if (def_.lambda_box.dim() != def_.control_dim || def_.lambda_box.upper.size() != def_.control_dim)
            throw ConfigurationError("model '" + def_.name + "': control box dimension mismatch");
        for (std::size_t k = 0; k < def_.control_dim; ++k) {
            const double lo = def_.lambda_box.lower[k];
            const double hi = def_.lambda_box.upper[k];
            if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi)
                throw ConfigurationError("model '" + def_.name + "': invalid control box");
        }
        if (!is_finite() && !def_.log_partition && def_.phase_dim > 2)
            throw ConfigurationError("model '" + def_.name +
                                     "': quadrature is limited to phase dimension <= 2; supply an "
                                     "analytic log-partition function");
        if (def_.validate) {
            check_integrability();
            check_gradient();
        }
    }

    const std::string& name() const noexcept { return def_.name; }
    double beta() const noexcept { return def_.beta; }
    std::size_t phase_dim() const noexcept { return def_.phase_dim; }
    std::size_t control_dim() const noexcept { return def_.control_dim; }
    std::size_t n_states() const noexcept { return def_.n_states; }
    bool is_finite() const noexcept { return def_.n_states > 0; }
    const ControlBox& lambda_box() const noexcept { return def_.lambda_box; }
    bool has_exact_sampler() const noexcept { return is_finite() || static_cast<bool>(def_.sampler); }
    bool has_analytic_log_partition() const noexcept { return static_cast<bool>(def_.log_partition); }
    const ModelDefinition& definition() const noexcept { return def_; }

    double energy(std::span<const double> x, std::span<const double> lam) const
    {
        check_dims(x, lam);
        const double e = def_.energy(x, lam);
        if (!std::isfinite(e))
            throw EvaluationError("model '" + def_.name + "': non-finite energy at x=" + format_vector(x) +
                                  ", lambda=" + format_vector(lam));
        return e;
    }

    double energy(const PhasePoint& x, const ControlParam& lam) const { return energy(x.view(), lam.view()); }

    void dlambda_energy(std::span<const double> x, std::span<const double> lam, std::span<double> out) const
    {
        check_dims(x, lam);
        if (out.size() != def_.control_dim)
            throw ConfigurationError("gradient buffer has wrong size");
        if (def_.dlambda) {
            def_.dlambda(x, lam, out);
        } else {
            finite_difference_gradient(x, lam, out);
        }
        for (double g : out)
            if (!std::isfinite(g))
                throw EvaluationError("model '" + def_.name + "': non-finite dH/dlambda at x=" +
                                      format_vector(x) + ", lambda=" + format_vector(lam));
    }

    ControlParam dlambda_energy(const PhasePoint& x, const ControlParam& lam) const
    {
        auto out = ControlParam::zeros(def_.control_dim);
        dlambda_energy(x.view(), lam.view(), out.view());
        return out;
    }

    /// Central difference of the energy in lambda; used when no analytic
    /// gradient is supplied and as the reference for gradient checks.
    void finite_difference_gradient(std::span<const double> x, std::span<const double> lam,
                                    std::span<double> out, double rel_step = 1e-5) const
    {
        std::vector<double> shifted(lam.begin(), lam.end());
        for (std::size_t k = 0; k < lam.size(); ++k) {
            const double h = rel_step * std::max(1.0, std::abs(lam[k]));
            shifted[k] = lam[k] + h;
            const double up = energy(x, shifted);
            shifted[k] = lam[k] - h;
            const double down = energy(x, shifted);
            shifted[k] = lam[k];
            out[k] = (up - down) / (2.0 * h);
        }
    }

    /// ln Z_lambda. Analytic when supplied, a log-sum-exp over states for
    /// finite models, Gauss-Kronrod quadrature otherwise (dimension <= 2).
    double log_partition(const ControlParam& lam) const
    {
        check_control(lam);
        if (def_.log_partition) {
            const double v = def_.log_partition(lam);
            if (!std::isfinite(v))
                throw IntegrabilityError("model '" + def_.name + "': non-finite log-partition at lambda=" +
                                         format_vector(lam.view()));
            return v;
        }
        return numeric_log_partition(lam);
    }

    /// ln Z_lambda by direct summation or quadrature, ignoring any analytic
    /// closed form.
    double numeric_log_partition(const ControlParam& lam) const
    {
        check_control(lam);
        if (is_finite()) {
            double emax = -std::numeric_limits<double>::infinity();
            std::vector<double> a(def_.n_states);
            for (std::size_t s = 0; s < def_.n_states; ++s) {
                const double xs = static_cast<double>(s);
                a[s] = -def_.beta * energy(std::span<const double>(&xs, 1), lam.view());
                emax = std::max(emax, a[s]);
            }
            double sum = 0.0;
            for (double v : a)
                sum += std::exp(v - emax);
            return emax + std::log(sum);
        }
        return quadrature(lam, nullptr).log_z;
    }

    /// Delta F = F_{lamT} - F_{lam0} with F = -(1/beta) ln Z.
    double free_energy_difference(const ControlParam& lam0, const ControlParam& lamT) const
    {
        if (lam0 == lamT)
            return 0.0;
        return -(log_partition(lamT) - log_partition(lam0)) / def_.beta;
    }

    /// E_lambda[f] under the canonical distribution, by finite sum or by
    /// quadrature (phase dimension <= 2).
    double expectation(const Observable& f, const ControlParam& lam) const
    {
        check_control(lam);
        if (is_finite()) {
            // unnormalized weights, so that f == 1 gives exactly 1
            std::vector<double> e(def_.n_states);
            for (std::size_t s = 0; s < e.size(); ++s)
                e[s] = state_energy(s, lam);
            const double e_min = *std::min_element(e.begin(), e.end());
            double mass = 0.0;
            double sum = 0.0;
            for (std::size_t s = 0; s < e.size(); ++s) {
                const double w = std::exp(-def_.beta * (e[s] - e_min));
                mass += w;
                sum += w * f(PhasePoint{static_cast<double>(s)});
            }
            return sum / mass;
        }
        if (def_.phase_dim > 2)
            throw ConfigurationError("expectation by quadrature needs phase dimension <= 2");
        const auto q = quadrature(lam, &f);
        return q.f_integral / q.mass;
    }

    /// Canonical probabilities of a finite model.
    std::vector<double> canonical_probabilities(const ControlParam& lam) const
    {
        require_finite("canonical_probabilities");
        const double log_z = numeric_log_partition(lam);
        std::vector<double> p(def_.n_states);
        for (std::size_t s = 0; s < def_.n_states; ++s)
            p[s] = std::exp(-def_.beta * state_energy(s, lam) - log_z);
        return p;
    }

    double state_energy(std::size_t s, const ControlParam& lam) const
    {
        const double xs = static_cast<double>(s);
        return energy(std::span<const double>(&xs, 1), lam.view());
    }

    std::size_t state_index(std::span<const double> x) const
    {
        require_finite("state_index");
        if (x.size() != 1)
            throw ConfigurationError("finite-state point must have one coordinate");
        const double s = x[0];
        if (!(s >= 0.0) || s >= static_cast<double>(def_.n_states) || s != std::floor(s))
            throw DomainError("invalid state index " + std::to_string(s) + " for model '" + def_.name + "'");
        return static_cast<std::size_t>(s);
    }

    /// Exact draw from q_lambda, when the model supports it.
    void sample_exact(const ControlParam& lam, RandomStream& rng, std::span<double> out) const
    {
        check_control(lam);
        if (is_finite()) {
            const auto p = canonical_probabilities(lam);
            double u = rng.uniform();
            std::size_t s = 0;
            for (; s + 1 < p.size(); ++s) {
                if (u < p[s])
                    break;
                u -= p[s];
            }
            out[0] = static_cast<double>(s);
            return;
        }
        if (!def_.sampler)
            throw ConfigurationError("model '" + def_.name + "' has no exact canonical sampler");
        def_.sampler(lam, rng, out);
    }

    /// The same model with the energy shifted by a constant c.
    HamiltonianModel shifted(double c) const
    {
        ModelDefinition d = def_;
        d.name = def_.name + "+shift";
        d.energy = [e = def_.energy, c](std::span<const double> x, std::span<const double> lam) {
            return e(x, lam) + c;
        };
        if (def_.log_partition)
            d.log_partition = [lz = def_.log_partition, c, beta = def_.beta](const ControlParam& lam) {
                return lz(lam) - beta * c;
            };
        return HamiltonianModel(std::move(d));
    }

    void check_control(const ControlParam& lam) const
    {
        if (lam.size() != def_.control_dim)
            throw ConfigurationError("model '" + def_.name + "': control dimension " + std::to_string(lam.size()) +
                                     ", expected " + std::to_string(def_.control_dim));
        if (!lam.all_finite())
            throw ConfigurationError("non-finite control parameter " + format_vector(lam.view()));
    }

private:
    void check_dims(std::span<const double> x, std::span<const double> lam) const
    {
        if (x.size() != def_.phase_dim || lam.size() != def_.control_dim)
            throw ConfigurationError("model '" + def_.name + "': dimension mismatch (x has " +
                                     std::to_string(x.size()) + ", lambda has " + std::to_string(lam.size()) +
                                     "; expected " + std::to_string(def_.phase_dim) + " and " +
                                     std::to_string(def_.control_dim) + ")");
    }

    void require_finite(const char* what) const
    {
        if (!is_finite())
            throw ConfigurationError(std::string(what) + " requires a finite-state model");
    }

    PhasePoint quad_center(const ControlParam& lam) const
    {
        if (def_.quadrature.center)
            return def_.quadrature.center(lam);
        return PhasePoint::zeros(def_.phase_dim);
    }

    double quad_scale(const ControlParam& lam) const
    {
        return def_.quadrature.scale ? def_.quadrature.scale(lam) : 1.0;
    }

    /// Lowest energy over a probe grid around the quadrature center; used
    /// as the shift that keeps exp(-beta*(H - shift)) in range.
    double reference_energy(const ControlParam& lam) const
    {
        const PhasePoint c = quad_center(lam);
        const double s = quad_scale(lam);
        double best = std::numeric_limits<double>::infinity();
        PhasePoint x = c;
        constexpr int half = 40;
        if (def_.phase_dim == 1) {
            for (int i = -half; i <= half; ++i) {
                x[0] = c[0] + s * 0.25 * i;
                best = std::min(best, energy(x, lam));
            }
        } else {
            for (int i = -half; i <= half; i += 2)
                for (int j = -half; j <= half; j += 2) {
                    x[0] = c[0] + s * 0.25 * i;
                    x[1] = c[1] + s * 0.25 * j;
                    best = std::min(best, energy(x, lam));
                }
        }
        return best;
    }

    struct QuadratureResult
    {
        double log_z = 0.0;
        /// Integrals of the shifted weight exp(-beta*(H - h_ref)) in u, and of f times it.
        double mass = 0.0;
        double f_integral = 0.0;
    };

    QuadratureResult quadrature(const ControlParam& lam, const Observable* f) const
    {
        const PhasePoint c = quad_center(lam);
        const double s = quad_scale(lam);
        if (!(s > 0.0) || !std::isfinite(s))
            throw ConfigurationError("quadrature scale must be positive");
        const double h_ref = reference_energy(lam);
        const double beta = def_.beta;
        const auto& q = def_.quadrature;
        double err = 0.0;

        auto weight = [&](const PhasePoint& x) {
            const double h = energy(x, lam);
            return std::exp(-beta * (h - h_ref));
        };

        auto integrate = [&](bool with_f) {
            PhasePoint x = c;
            if (def_.phase_dim == 1) {
                return detail::integrate_real_line(
                    [&](double u) {
                        x[0] = c[0] + s * u;
                        const double w = weight(x);
                        return with_f ? w * (*f)(x) : w;
                    },
                    q, err);
            }
            return detail::integrate_real_line(
                [&](double u) {
                    const double x0 = c[0] + s * u;
                    return detail::integrate_real_line(
                        [&](double v) {
                            x[0] = x0;
                            x[1] = c[1] + s * v;
                            const double w = weight(x);
                            return with_f ? w * (*f)(x) : w;
                        },
                        q, err);
                },
                q, err);
        };

        const double mass = integrate(false);
        if (!std::isfinite(mass) || mass > detail::kOverflowGuard)
            throw IntegrabilityError("model '" + def_.name + "': exp(-beta*H) is not integrable at lambda=" +
                                     format_vector(lam.view()));
        if (!(mass > 0.0))
            throw IntegrabilityError("model '" + def_.name + "': vanishing partition integral at lambda=" +
                                     format_vector(lam.view()));
        if (err > 100.0 * q.abs_tol)
            throw EstimationError("quadrature did not converge for model '" + def_.name + "'", err);
        QuadratureResult out;
        out.mass = mass;
        out.log_z = std::log(mass) + static_cast<double>(def_.phase_dim) * std::log(s) - beta * h_ref;
        if (f) {
            out.f_integral = integrate(true);
            if (!std::isfinite(out.f_integral))
                throw EvaluationError("observable integral is not finite");
        }
        return out;
    }

    void check_integrability() const
    {
        std::vector<ControlParam> probes;
        const auto& box = def_.lambda_box;
        probes.push_back(box.center());
        if (def_.control_dim <= 3) {
            const std::size_t corners = std::size_t{1} << def_.control_dim;
            for (std::size_t mask = 0; mask < corners; ++mask) {
                ControlParam lam = box.lower;
                for (std::size_t k = 0; k < def_.control_dim; ++k)
                    if (mask & (std::size_t{1} << k))
                        lam[k] = box.upper[k];
                probes.push_back(std::move(lam));
            }
        }
        for (const auto& lam : probes) {
            try {
                (void)log_partition(lam);
            } catch (const IntegrabilityError&) {
                throw;
            } catch (const Error& e) {
                throw IntegrabilityError("model '" + def_.name + "': log-partition check failed at lambda=" +
                                         format_vector(lam.view()) + ": " + e.what());
            }
        }
    }

    void check_gradient() const
    {
        if (!def_.dlambda)
            return;
        RandomStream rng(0x5eedULL, 0);
        const auto& box = def_.lambda_box;
        std::vector<double> g(def_.control_dim);
        std::vector<double> fd(def_.control_dim);
        int checked = 0;
        for (int attempt = 0; attempt < 64 && checked < 8; ++attempt) {
            ControlParam lam = ControlParam::zeros(def_.control_dim);
            bool near_kink = false;
            for (std::size_t k = 0; k < def_.control_dim; ++k) {
                lam[k] = box.lower[k] + (box.upper[k] - box.lower[k]) * rng.uniform();
                const double h = 1e-5 * std::max(1.0, std::abs(lam[k]));
                for (double kink : def_.lambda_kinks)
                    near_kink = near_kink || std::abs(lam[k] - kink) < 4.0 * h;
            }
            if (near_kink)
                continue;
            PhasePoint x = PhasePoint::zeros(def_.phase_dim);
            if (is_finite()) {
                x[0] = static_cast<double>(rng.index(def_.n_states));
            } else {
                const PhasePoint c = quad_center(lam);
                const double s = quad_scale(lam);
                for (std::size_t i = 0; i < def_.phase_dim; ++i)
                    x[i] = c[i] + s * rng.normal();
            }
            dlambda_energy(x.view(), lam.view(), g);
            finite_difference_gradient(x.view(), lam.view(), fd);
            for (std::size_t k = 0; k < def_.control_dim; ++k)
                if (std::abs(g[k] - fd[k]) > 1e-6 * std::max(1.0, std::abs(g[k])))
                    throw ConfigurationError("model '" + def_.name + "': dH/dlambda disagrees with finite "
                                             "differences at x=" + format_vector(x.view()) + ", lambda=" +
                                             format_vector(lam.view()));
            ++checked;
        }
    }

    ModelDefinition def_;
};

/// q_lambda for a fixed lambda with a cached ln Z.
class CanonicalDensity
{
public:
    CanonicalDensity(const HamiltonianModel& model, ControlParam lam)
        : model_(&model), lam_(std::move(lam)), log_z_(model.log_partition(lam_))
    {
    }

    const ControlParam& lambda() const noexcept { return lam_; }
    double log_z() const noexcept { return log_z_; }

    double log_density(const PhasePoint& x) const
    {
        return -model_->beta() * model_->energy(x, lam_) - log_z_;
    }

    double density(const PhasePoint& x) const { return std::exp(log_density(x)); }

    /// Total mass of the density, by finite sum or quadrature; 1 up to
    /// numerical error when log_z is correct.
    double total_mass() const { return std::exp(model_->numeric_log_partition(lam_) - log_z_); }

private:
    const HamiltonianModel* model_;
    ControlParam lam_;
    double log_z_;
};

} // namespace nwt
