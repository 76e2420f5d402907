#pragma once

#include "nwt/catalog.hpp"
#include "nwt/error.hpp"
#include "nwt/hamiltonian.hpp"
#include "nwt/kernel.hpp"
#include "nwt/protocol.hpp"
#include "nwt/random.hpp"
#include "nwt/stochastic_matrix.hpp"

#include <boost/accumulators/accumulators.hpp>
#include <boost/accumulators/statistics/stats.hpp>
#include <boost/accumulators/statistics/sum_kahan.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

/// Exact verification on finite state spaces: every expectation over paths
/// becomes a product of row vectors, transition matrices and diagonal
/// reweightings.
namespace nwt::oracle {

/// A finite-state view of a HamiltonianModel.
class FiniteStateModel
{
public:
    explicit FiniteStateModel(HamiltonianModel model) : model_(std::move(model))
    {
        if (!model_.is_finite())
            throw ConfigurationError("oracle needs a finite-state model, '" + model_.name() + "' is continuous");
        if (model_.n_states() < 2)
            throw ConfigurationError("oracle needs at least two states");
    }

    std::size_t n_states() const noexcept { return model_.n_states(); }
    double beta() const noexcept { return model_.beta(); }
    const HamiltonianModel& model() const noexcept { return model_; }

    double energy(std::size_t s, const ControlParam& lam) const { return model_.state_energy(s, lam); }
    std::vector<double> energies(const ControlParam& lam) const { return detail::state_energies(model_, lam); }
    std::vector<double> canonical(const ControlParam& lam) const { return model_.canonical_probabilities(lam); }
    double log_partition(const ControlParam& lam) const { return model_.numeric_log_partition(lam); }

private:
    HamiltonianModel model_;
};

/// max_y |sum_x q(x) P(x,y) - q(y)|.
inline double check_stationarity(const StochasticMatrix& P, const FiniteStateModel& m, const ControlParam& lam)
{
    if (P.size() != m.n_states())
        throw ConfigurationError("matrix and model sizes differ");
    const auto q = m.canonical(lam);
    const auto qp = P.left_multiply(q);
    double worst = 0.0;
    for (std::size_t y = 0; y < q.size(); ++y)
        worst = std::max(worst, std::abs(qp[y] - q[y]));
    return worst;
}

/// max_y |sum_x exp(-beta (E(x) - E(y))) P(x,y) - 1|; the stationarity
/// residual at y divided by q(y).
inline double check_unit_ratio(const StochasticMatrix& P, const FiniteStateModel& m, const ControlParam& lam)
{
    if (P.size() != m.n_states())
        throw ConfigurationError("matrix and model sizes differ");
    const auto e = m.energies(lam);
    const double beta = m.beta();
    double worst = 0.0;
    for (std::size_t y = 0; y < e.size(); ++y) {
        double s = 0.0;
        for (std::size_t x = 0; x < e.size(); ++x)
            s += std::exp(-beta * (e[x] - e[y])) * P(x, y);
        worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
}

/// Z_{lambda(T)} / Z_{lambda(0)} for a step protocol.
inline double partition_ratio(const FiniteStateModel& m, const StepProtocol& sp)
{
    return std::exp(m.log_partition(sp.values().back()) - m.log_partition(sp.values().front()));
}

namespace detail {

inline std::vector<StochasticMatrix> segment_matrices(const FiniteStateModel& m, const StepProtocol& sp,
                                                      const FixedParamKernel& k)
{
    std::vector<StochasticMatrix> out;
    out.reserve(sp.segments());
    for (std::size_t i = 0; i < sp.segments(); ++i)
        out.push_back(k.matrix(m.model(), sp.values()[i]));
    return out;
}

/// v(x) = E[1{x_T = x} exp(-beta W)]:
///   q^T P(lambda_0)^s D_1 P(lambda_1)^s D_2 ... P(lambda_{n-1})^s D_n
/// with D_i = diag(exp(-beta (E(., lambda_i) - E(., lambda_{i-1})))).
inline std::vector<double> weighted_terminal(const FiniteStateModel& m, const StepProtocol& sp,
                                             const FixedParamKernel& k, unsigned substeps)
{
    if (substeps == 0)
        throw ConfigurationError("substeps must be >= 1");
    const auto& values = sp.values();
    const double beta = m.beta();
    std::vector<double> v = m.canonical(values.front());
    for (std::size_t i = 0; i < sp.segments(); ++i) {
        const StochasticMatrix P = k.matrix(m.model(), values[i]);
        for (unsigned s = 0; s < substeps; ++s)
            v = P.left_multiply(v);
        if (values[i + 1] == values[i])
            continue;
        const auto e_new = m.energies(values[i + 1]);
        const auto e_old = m.energies(values[i]);
        for (std::size_t x = 0; x < v.size(); ++x)
            v[x] *= std::exp(-beta * (e_new[x] - e_old[x]));
    }
    return v;
}

} // namespace detail

/// Exact E[exp(-beta W)] under kernel k, with `substeps` kernel
/// applications per constancy interval.
inline double exact_exponential_work_average(const FiniteStateModel& m, const StepProtocol& sp,
                                             const FixedParamKernel& k, unsigned substeps = 1)
{
    double sum = 0.0;
    for (double v : detail::weighted_terminal(m, sp, k, substeps))
        sum += v;
    return sum;
}

inline double exact_exponential_work_average(const FiniteStateModel& m, const StepProtocol& sp,
                                             const StochasticMatrix& proposal, unsigned substeps = 1)
{
    return exact_exponential_work_average(m, sp, FixedParamKernel::finite_metropolis(proposal), substeps);
}

/// Number of explicit paths enumerated by brute_force_path_enumeration.
inline double path_count(const FiniteStateModel& m, const StepProtocol& sp, unsigned substeps)
{
    return std::pow(static_cast<double>(m.n_states()),
                    static_cast<double>(sp.segments()) * static_cast<double>(substeps));
}

/// E[exp(-beta W)] by explicit enumeration of every state path. Independent
/// of the vector-matrix route; guarded at n_states^(total steps) <= limit.
inline double brute_force_path_enumeration(const FiniteStateModel& m, const StepProtocol& sp,
                                           const FixedParamKernel& k, unsigned substeps = 1,
                                           double limit = 1e7)
{
    if (substeps == 0)
        throw ConfigurationError("substeps must be >= 1");
    if (path_count(m, sp, substeps) > limit)
        throw SizeError("path enumeration would visit " + std::to_string(path_count(m, sp, substeps)) +
                        " paths per start state, above the guard of " + std::to_string(limit));
    const std::size_t n = m.n_states();
    const std::size_t segs = sp.segments();
    const auto& values = sp.values();
    const auto matrices = detail::segment_matrices(m, sp, k);
    std::vector<std::vector<double>> energies;
    for (const auto& v : values)
        energies.push_back(m.energies(v));
    const double beta = m.beta();
    const auto q0 = m.canonical(values.front());

    // Depth-first over (segment, substep); the work is accumulated at the
    // end of each segment from the state recorded there. Up to 1e7 terms,
    // so the sum is compensated.
    namespace acc = boost::accumulators;
    acc::accumulator_set<double, acc::stats<acc::tag::sum_kahan>> total;
    std::function<void(std::size_t, unsigned, std::size_t, double, double)> walk =
        [&](std::size_t seg, unsigned sub, std::size_t state, double prob, double work) {
            if (seg == segs) {
                total(prob * std::exp(-beta * work));
                return;
            }
            const StochasticMatrix& P = matrices[seg];
            for (std::size_t next = 0; next < n; ++next) {
                const double p = P(state, next);
                if (p == 0.0)
                    continue;
                if (sub + 1 < substeps) {
                    walk(seg, sub + 1, next, prob * p, work);
                } else {
                    const double dw = energies[seg + 1][next] - energies[seg][next];
                    walk(seg + 1, 0, next, prob * p, work + dw);
                }
            }
        };
    for (std::size_t x0 = 0; x0 < n; ++x0)
        walk(0, 0, x0, q0[x0], 0.0);
    return acc::sum_kahan(total);
}

inline double brute_force_path_enumeration(const FiniteStateModel& m, const StepProtocol& sp,
                                           const StochasticMatrix& proposal, unsigned substeps = 1)
{
    return brute_force_path_enumeration(m, sp, FixedParamKernel::finite_metropolis(proposal), substeps);
}

struct WeightedObservable
{
    double lhs = 0.0; ///< E[f(x_T) exp(-beta W)]
    double rhs = 0.0; ///< E_{lambda(T)}[f] * Z_T / Z_0
};

inline WeightedObservable exact_weighted_observable(const FiniteStateModel& m, const StepProtocol& sp,
                                                    const FixedParamKernel& k, unsigned substeps,
                                                    const std::function<double(std::size_t)>& f)
{
    const auto v = detail::weighted_terminal(m, sp, k, substeps);
    const auto qT = m.canonical(sp.values().back());
    WeightedObservable out;
    double expect = 0.0;
    for (std::size_t x = 0; x < v.size(); ++x) {
        out.lhs += v[x] * f(x);
        expect += qT[x] * f(x);
    }
    out.rhs = expect * partition_ratio(m, sp);
    return out;
}

inline WeightedObservable exact_weighted_observable(const FiniteStateModel& m, const StepProtocol& sp,
                                                    const StochasticMatrix& proposal, unsigned substeps,
                                                    const std::function<double(std::size_t)>& f)
{
    return exact_weighted_observable(m, sp, FixedParamKernel::finite_metropolis(proposal), substeps, f);
}

/// Exact E[exp(-beta W_0)]: the Jarzynski weights reweighted at the end by
/// exp(-beta (E(x_T, lambda(0)) - E(x_T, lambda(T)))).
inline double exact_bk_average(const FiniteStateModel& m, const StepProtocol& sp, const FixedParamKernel& k,
                               unsigned substeps = 1)
{
    const auto v = detail::weighted_terminal(m, sp, k, substeps);
    const auto e0 = m.energies(sp.values().front());
    const auto eT = m.energies(sp.values().back());
    double sum = 0.0;
    for (std::size_t x = 0; x < v.size(); ++x)
        sum += v[x] * std::exp(-m.beta() * (e0[x] - eT[x]));
    return sum;
}

inline double exact_bk_average(const FiniteStateModel& m, const StepProtocol& sp, const StochasticMatrix& proposal,
                               unsigned substeps = 1)
{
    return exact_bk_average(m, sp, FixedParamKernel::finite_metropolis(proposal), substeps);
}

/// Law of the state recorded at breakpoint index i (no work weighting).
inline std::vector<double> breakpoint_marginal(const FiniteStateModel& m, const StepProtocol& sp,
                                               const FixedParamKernel& k, unsigned substeps, std::size_t i)
{
    std::vector<double> v = m.canonical(sp.values().front());
    for (std::size_t seg = 0; seg < i; ++seg) {
        const StochasticMatrix P = k.matrix(m.model(), sp.values()[seg]);
        for (unsigned s = 0; s < substeps; ++s)
            v = P.left_multiply(v);
    }
    return v;
}

/// Joint law J(a, b) of the states recorded at breakpoints i < j.
inline std::vector<std::vector<double>> breakpoint_joint(const FiniteStateModel& m, const StepProtocol& sp,
                                                         const FixedParamKernel& k, unsigned substeps,
                                                         std::size_t i, std::size_t j)
{
    const auto first = breakpoint_marginal(m, sp, k, substeps, i);
    const std::size_t n = m.n_states();
    std::vector<std::vector<double>> joint(n, std::vector<double>(n, 0.0));
    for (std::size_t a = 0; a < n; ++a) {
        std::vector<double> v(n, 0.0);
        v[a] = first[a];
        for (std::size_t seg = i; seg < j; ++seg) {
            const StochasticMatrix P = k.matrix(m.model(), sp.values()[seg]);
            for (unsigned s = 0; s < substeps; ++s)
                v = P.left_multiply(v);
        }
        joint[a] = v;
    }
    return joint;
}

/// Seeded random instance: energies uniform in [-2, 2] on a table of
/// lambda = 0..n_jumps, a step protocol on [0, 1] with n_jumps interior
/// jumps (plus T with zero jump), and a symmetrized random-walk proposal.
struct RandomInstance
{
    FiniteStateModel model;
    StepProtocol protocol;
    StochasticMatrix proposal;
};

inline StochasticMatrix random_symmetric_proposal(std::size_t n, RandomStream& rng)
{
    std::vector<double> a(n * n, 0.0);
    double biggest = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            a[i * n + j] = a[j * n + i] = rng.uniform();
            biggest = std::max(biggest, a[i * n + j]);
        }
    const double scale = 1.0 / (static_cast<double>(n) * std::max(biggest, 1e-3));
    for (std::size_t i = 0; i < n; ++i) {
        double off = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) {
                a[i * n + j] *= scale;
                off += a[i * n + j];
            }
        a[i * n + i] = 1.0 - off;
    }
    return StochasticMatrix(n, std::move(a));
}

inline RandomInstance random_instance(std::uint64_t seed, std::size_t n_states, std::size_t n_jumps)
{
    if (n_states < 2 || n_jumps < 1)
        throw ConfigurationError("random instance needs >= 2 states and >= 1 jump");
    RandomStream rng(seed, 0x0a11ceULL);
    std::vector<double> lambdas(n_jumps + 1);
    for (std::size_t k = 0; k <= n_jumps; ++k)
        lambdas[k] = static_cast<double>(k);
    std::vector<std::vector<double>> energies(n_states, std::vector<double>(n_jumps + 1));
    for (auto& row : energies)
        for (double& e : row)
            e = -2.0 + 4.0 * rng.uniform();

    std::vector<double> times(n_jumps);
    for (double& t : times)
        t = 0.05 + 0.9 * rng.uniform();
    std::sort(times.begin(), times.end());
    std::vector<double> bp{0.0};
    for (double t : times)
        if (t > bp.back())
            bp.push_back(t);
    bp.push_back(1.0);
    std::vector<ControlParam> values;
    std::size_t current = rng.index(n_jumps + 1);
    values.push_back(ControlParam{static_cast<double>(current)});
    for (std::size_t i = 1; i + 1 < bp.size(); ++i) {
        std::size_t next = rng.index(n_jumps);
        if (next >= current)
            ++next; // always a real jump
        current = next;
        values.push_back(ControlParam{static_cast<double>(current)});
    }
    values.push_back(values.back());
    auto proposal = random_symmetric_proposal(n_states, rng);
    return RandomInstance{FiniteStateModel(catalog::table(1.0, std::move(lambdas), std::move(energies))),
                          StepProtocol(std::move(bp), std::move(values)), std::move(proposal)};
}

/// State count in [2, 5] and jump count in [1, 6], both drawn from the seed.
inline RandomInstance random_instance(std::uint64_t seed)
{
    RandomStream rng(seed, 0x517eULL);
    const std::size_t n = 2 + rng.index(4);
    const std::size_t jumps = 1 + rng.index(6);
    return random_instance(seed, n, jumps);
}

} // namespace nwt::oracle
