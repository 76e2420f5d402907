#pragma once

#include "nwt/error.hpp"
#include "nwt/hamiltonian.hpp"
#include "nwt/protocol.hpp"
#include "nwt/random.hpp"
#include "nwt/stochastic_matrix.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nwt {

enum class KernelKind
{
    metropolis,        ///< Gaussian-proposal Metropolis on R^n
    finite_metropolis, ///< Metropolis with a symmetric proposal on a finite state set
    identity,          ///< never moves; trivially conserves every distribution
    broken             ///< deliberately not stationary; negative controls only
};

inline std::string to_string(KernelKind k)
{
    switch (k) {
    case KernelKind::metropolis: return "metropolis";
    case KernelKind::finite_metropolis: return "finite_metropolis";
    case KernelKind::identity: return "identity";
    case KernelKind::broken: return "broken";
    }
    return "unknown";
}

/// Markov transition rule at a frozen control value.
///
/// The metropolis, finite_metropolis and identity kinds conserve the
/// canonical distribution q_lambda. The broken kind does not: on finite
/// state sets it runs Metropolis against the tilted energy E(s) - bias*s,
/// on R^n it is an unadjusted Langevin step with step size `bias`.
class FixedParamKernel
{
public:
    static FixedParamKernel metropolis(double sigma, unsigned substeps = 1)
    {
        if (!(sigma > 0.0) || !std::isfinite(sigma))
            throw ConfigurationError("metropolis kernel needs a positive finite step size, got " +
                                     std::to_string(sigma));
        return FixedParamKernel(KernelKind::metropolis, sigma, check_substeps(substeps), 0.0, std::nullopt);
    }

    static FixedParamKernel finite_metropolis(std::optional<StochasticMatrix> proposal = std::nullopt,
                                              unsigned substeps = 1)
    {
        if (proposal && !proposal->is_symmetric(1e-14))
            throw ConfigurationError("finite Metropolis proposal must be symmetric");
        return FixedParamKernel(KernelKind::finite_metropolis, 0.0, check_substeps(substeps), 0.0,
                                std::move(proposal));
    }

    static FixedParamKernel identity() { return FixedParamKernel(KernelKind::identity, 0.0, 1, 0.0, std::nullopt); }

    static FixedParamKernel broken(double bias, double sigma = 1.0, unsigned substeps = 1,
                                   std::optional<StochasticMatrix> proposal = std::nullopt)
    {
        if (!std::isfinite(bias) || !(sigma > 0.0))
            throw ConfigurationError("broken kernel needs a finite bias and positive sigma");
        return FixedParamKernel(KernelKind::broken, sigma, check_substeps(substeps), bias, std::move(proposal));
    }

    KernelKind kind() const noexcept { return kind_; }
    double sigma() const noexcept { return sigma_; }
    unsigned substeps() const noexcept { return substeps_; }
    double bias() const noexcept { return bias_; }
    const std::optional<StochasticMatrix>& proposal() const noexcept { return proposal_; }
    bool conserves_canonical() const noexcept { return kind_ != KernelKind::broken; }
    std::string name() const { return to_string(kind_); }

    void check_compatible(const HamiltonianModel& m) const
    {
        if (kind_ == KernelKind::metropolis && m.is_finite())
            throw ConfigurationError("metropolis kernel needs a continuous model; use finite_metropolis for '" +
                                     m.name() + "'");
        if (kind_ == KernelKind::finite_metropolis && !m.is_finite())
            throw ConfigurationError("finite_metropolis kernel needs a finite-state model, '" + m.name() +
                                     "' is continuous");
        if (proposal_ && m.is_finite() && proposal_->size() != m.n_states())
            throw ConfigurationError("proposal matrix size does not match the number of states");
    }

    /// Transition matrix at lam for a finite model (one kernel step,
    /// including substeps).
    StochasticMatrix matrix(const HamiltonianModel& m, const ControlParam& lam) const
    {
        if (!m.is_finite())
            throw ConfigurationError("kernel matrix requires a finite-state model");
        check_compatible(m);
        const StochasticMatrix prop = proposal_ ? *proposal_ : StochasticMatrix::uniform(m.n_states());
        StochasticMatrix one = [&] {
            switch (kind_) {
            case KernelKind::identity: return StochasticMatrix::identity(m.n_states());
            case KernelKind::broken: return broken_matrix(m, lam, prop, bias_);
            default: return metropolis_matrix(m, lam, prop);
            }
        }();
        if (substeps_ == 1)
            return one;
        // compose substeps row by row
        const std::size_t n = m.n_states();
        std::vector<double> acc(n * n);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> row(n, 0.0);
            row[i] = 1.0;
            for (unsigned k = 0; k < substeps_; ++k)
                row = one.left_multiply(row);
            std::copy(row.begin(), row.end(), acc.begin() + static_cast<std::ptrdiff_t>(i * n));
        }
        return StochasticMatrix(n, std::move(acc));
    }

private:
    FixedParamKernel(KernelKind kind, double sigma, unsigned substeps, double bias,
                     std::optional<StochasticMatrix> proposal)
        : kind_(kind), sigma_(sigma), substeps_(substeps), bias_(bias), proposal_(std::move(proposal))
    {
    }

    static unsigned check_substeps(unsigned k)
    {
        if (k == 0)
            throw ConfigurationError("kernel substeps must be >= 1");
        return k;
    }

    KernelKind kind_;
    double sigma_;
    unsigned substeps_;
    double bias_;
    std::optional<StochasticMatrix> proposal_;
};

/// Applies one kernel transition at a time for a fixed (kernel, model)
/// pair, reusing scratch buffers.
class KernelStepper
{
public:
    KernelStepper(const FixedParamKernel& kernel, const HamiltonianModel& model)
        : kernel_(&kernel), model_(&model), trial_(model.phase_dim()), grad_(model.phase_dim())
    {
        kernel.check_compatible(model);
    }

    /// One transition x -> x' at frozen lam; x is updated in place.
    void step(std::span<double> x, std::span<const double> lam, RandomStream& rng)
    {
        switch (kernel_->kind()) {
        case KernelKind::identity: return;
        case KernelKind::metropolis: metropolis(x, lam, rng); return;
        case KernelKind::finite_metropolis: finite(x, lam, rng, 0.0); return;
        case KernelKind::broken:
            if (model_->is_finite())
                finite(x, lam, rng, kernel_->bias());
            else
                langevin(x, lam, rng);
            return;
        }
    }

private:
    void metropolis(std::span<double> x, std::span<const double> lam, RandomStream& rng)
    {
        const double beta = model_->beta();
        const double sigma = kernel_->sigma();
        double h = model_->energy(x, lam);
        for (unsigned k = 0; k < kernel_->substeps(); ++k) {
            for (std::size_t i = 0; i < x.size(); ++i)
                trial_[i] = x[i] + sigma * rng.normal();
            const double h_trial = model_->energy(trial_, lam);
            const double dh = h_trial - h;
            const double u = rng.uniform();
            if (dh <= 0.0 || u < std::exp(-beta * dh)) {
                std::copy(trial_.begin(), trial_.end(), x.begin());
                h = h_trial;
            }
        }
    }

    /// Metropolis on states with target energy E(s) - tilt * s.
    void finite(std::span<double> x, std::span<const double> lam, RandomStream& rng, double tilt)
    {
        const double beta = model_->beta();
        const std::size_t n = model_->n_states();
        const auto& prop = kernel_->proposal();
        std::size_t s = model_->state_index(x);
        double e = model_->energy(x, lam) - tilt * static_cast<double>(s);
        for (unsigned k = 0; k < kernel_->substeps(); ++k) {
            std::size_t j = 0;
            if (prop) {
                double u = rng.uniform();
                for (; j + 1 < n; ++j) {
                    if (u < (*prop)(s, j))
                        break;
                    u -= (*prop)(s, j);
                }
            } else {
                j = rng.index(n);
            }
            const double u_acc = rng.uniform();
            if (j == s)
                continue;
            trial_[0] = static_cast<double>(j);
            const double e_trial = model_->energy(trial_, lam) - tilt * static_cast<double>(j);
            const double de = e_trial - e;
            if (de <= 0.0 || u_acc < std::exp(-beta * de)) {
                s = j;
                e = e_trial;
            }
        }
        x[0] = static_cast<double>(s);
    }

    /// Unadjusted Langevin: x' = x - h grad H + sqrt(2h/beta) xi, gradient
    /// by central differences.
    void langevin(std::span<double> x, std::span<const double> lam, RandomStream& rng)
    {
        const double h = kernel_->bias();
        const double beta = model_->beta();
        const double noise = std::sqrt(2.0 * h / beta);
        for (unsigned k = 0; k < kernel_->substeps(); ++k) {
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double dx = 1e-6 * std::max(1.0, std::abs(x[i]));
                std::copy(x.begin(), x.end(), trial_.begin());
                trial_[i] = x[i] + dx;
                const double up = model_->energy(trial_, lam);
                trial_[i] = x[i] - dx;
                const double down = model_->energy(trial_, lam);
                grad_[i] = (up - down) / (2.0 * dx);
            }
            for (std::size_t i = 0; i < x.size(); ++i)
                x[i] += -h * grad_[i] + noise * rng.normal();
        }
    }

    const FixedParamKernel* kernel_;
    const HamiltonianModel* model_;
    std::vector<double> trial_;
    std::vector<double> grad_;
};

/// One kernel transition at frozen lam.
inline PhasePoint kernel_step(const FixedParamKernel& k, const HamiltonianModel& model, PhasePoint x,
                              const ControlParam& lam, RandomStream& rng)
{
    model.check_control(lam);
    if (x.size() != model.phase_dim())
        throw ConfigurationError("phase point has wrong dimension");
    KernelStepper stepper(k, model);
    stepper.step(x.view(), lam.view(), rng);
    return x;
}

/// Time-ordered states; states[j] is the state AT times[j].
class Trajectory
{
public:
    explicit Trajectory(std::size_t dim) : dim_(dim) {}

    void reserve(std::size_t n)
    {
        times_.reserve(n);
        states_.reserve(n * dim_);
    }

    void push(double t, std::span<const double> x)
    {
        if (x.size() != dim_)
            throw ConfigurationError("trajectory state has wrong dimension");
        if (!times_.empty() && !(t > times_.back()))
            throw ConfigurationError("trajectory times must increase");
        times_.push_back(t);
        states_.insert(states_.end(), x.begin(), x.end());
    }

    std::size_t size() const noexcept { return times_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    const std::vector<double>& times() const noexcept { return times_; }
    std::span<const double> state(std::size_t j) const { return {states_.data() + j * dim_, dim_}; }
    std::span<const double> final_state() const { return state(size() - 1); }
    PhasePoint state_point(std::size_t j) const { return PhasePoint(state(j)); }

    /// Index of time t, allowing a relative mismatch of 1e-12.
    std::optional<std::size_t> find_time(double t) const
    {
        auto it = std::lower_bound(times_.begin(), times_.end(), t);
        const double tol = 1e-12 * std::max(1.0, std::abs(t));
        if (it != times_.end() && std::abs(*it - t) <= tol)
            return static_cast<std::size_t>(it - times_.begin());
        if (it != times_.begin() && std::abs(*(it - 1) - t) <= tol)
            return static_cast<std::size_t>(it - times_.begin()) - 1;
        return std::nullopt;
    }

    friend bool operator==(const Trajectory&, const Trajectory&) = default;

private:
    std::size_t dim_;
    std::vector<double> times_;
    std::vector<double> states_;
};

/// How the initial state is drawn from q_{lambda(0)}.
struct InitialSampling
{
    enum class Mode
    {
        automatic, ///< exact when the model supports it, burn-in otherwise
        exact,
        burn_in
    };

    Mode mode = Mode::automatic;
    /// Burn-in chain length; must be set when burn-in is used.
    std::optional<std::size_t> burn_in_steps = 10000;
    /// Chain start; the origin (or state 0) when empty.
    PhasePoint start;
};

/// True when the initial law is exactly q_{lambda(0)}.
inline bool initial_sampling_is_exact(const HamiltonianModel& model, const InitialSampling& init)
{
    switch (init.mode) {
    case InitialSampling::Mode::exact: return true;
    case InitialSampling::Mode::burn_in: return false;
    case InitialSampling::Mode::automatic: return model.has_exact_sampler();
    }
    return false;
}

/// Draw x0 ~ q_{lam0}: exactly for Gaussian and finite models, otherwise by
/// a burn-in chain of `kernel` started at init.start.
inline PhasePoint sample_initial(const HamiltonianModel& model, const ControlParam& lam0, RandomStream& rng,
                                 const InitialSampling& init, const FixedParamKernel& kernel)
{
    PhasePoint x = PhasePoint::zeros(model.phase_dim());
    if (initial_sampling_is_exact(model, init)) {
        model.sample_exact(lam0, rng, x.view());
        return x;
    }
    if (!init.burn_in_steps || *init.burn_in_steps == 0)
        throw ConfigurationError("burn-in initial sampling needs a configured chain length");
    if (!kernel.conserves_canonical())
        throw KernelRefusedError("burn-in initial sampling needs a kernel that conserves q_lambda");
    if (!init.start.empty()) {
        if (init.start.size() != model.phase_dim())
            throw ConfigurationError("burn-in start point has wrong dimension");
        x = init.start;
    }
    KernelStepper stepper(kernel, model);
    for (std::size_t i = 0; i < *init.burn_in_steps; ++i)
        stepper.step(x.view(), lam0.view(), rng);
    return x;
}

inline PhasePoint sample_initial(const HamiltonianModel& model, const ControlParam& lam0, RandomStream& rng)
{
    return sample_initial(model, lam0, rng, InitialSampling{InitialSampling::Mode::exact, std::nullopt, {}},
                          FixedParamKernel::identity());
}

/// Applies the kernel at lambda_i `substeps_per_segment` times on each
/// constancy interval [t_i, t_{i+1}) and records the state at every
/// breakpoint. Nothing moves at a jump: the state recorded at t_{i+1} is
/// used with both lambda_i and lambda_{i+1}.
inline Trajectory propagate_step_protocol(const FixedParamKernel& k, const HamiltonianModel& model,
                                          const PhasePoint& x0, const StepProtocol& sp,
                                          unsigned substeps_per_segment, RandomStream& rng)
{
    if (substeps_per_segment == 0)
        throw ConfigurationError("substeps_per_segment must be >= 1");
    if (x0.size() != model.phase_dim() || !x0.all_finite())
        throw ConfigurationError("initial state must be finite with the model's dimension");
    if (sp.control_dim() != model.control_dim())
        throw ConfigurationError("protocol and model control dimensions differ");
    KernelStepper stepper(k, model);
    const auto& bp = sp.breakpoints();
    const auto& values = sp.values();
    Trajectory traj(model.phase_dim());
    traj.reserve(bp.size());
    std::vector<double> x(x0.begin(), x0.end());
    traj.push(bp[0], x);
    for (std::size_t i = 0; i + 1 < bp.size(); ++i) {
        for (unsigned s = 0; s < substeps_per_segment; ++s)
            stepper.step(x, values[i].view(), rng);
        traj.push(bp[i + 1], x);
    }
    return traj;
}

struct SamplerConfig
{
    std::size_t grid_steps = 100;
    std::uint64_t master_seed = 0;
    FixedParamKernel kernel = FixedParamKernel::identity();
    InitialSampling initial;
};

/// One trajectory under p, simulated through its step approximation. The
/// random stream depends only on (master_seed, index).
inline Trajectory sample_trajectory(const HamiltonianModel& model, const Protocol& p, const StepProtocol& discretized,
                                    const SamplerConfig& cfg, std::uint64_t index)
{
    RandomStream rng(cfg.master_seed, index);
    const PhasePoint x0 = sample_initial(model, p.value_at(0.0), rng, cfg.initial, cfg.kernel);
    return propagate_step_protocol(cfg.kernel, model, x0, discretized, 1, rng);
}

inline Trajectory sample_trajectory(const HamiltonianModel& model, const Protocol& p, const SamplerConfig& cfg,
                                    std::uint64_t index)
{
    if (cfg.grid_steps == 0)
        throw ConfigurationError("grid_steps must be >= 1");
    return sample_trajectory(model, p, step_approximation(p, cfg.grid_steps), cfg, index);
}

} // namespace nwt
