#pragma once

#include "nwt/hamiltonian.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace nwt::catalog {

inline ControlBox uniform_box(std::size_t dim, double lo, double hi)
{
    return ControlBox{ControlParam(std::vector<double>(dim, lo)), ControlParam(std::vector<double>(dim, hi))};
}

/// H(x, lambda) = lambda * |x|^2 / 2 on R^dim, lambda > 0.
inline HamiltonianModel harmonic_stiffness(double beta, std::size_t dim = 1, ControlBox box = {})
{
    ModelDefinition d;
    d.name = "harmonic_stiffness";
    d.beta = beta;
    d.phase_dim = dim;
    d.control_dim = 1;
    d.lambda_box = box.dim() ? std::move(box) : uniform_box(1, 1e-2, 1e2);
    if (!(d.lambda_box.lower[0] > 0.0))
        throw ConfigurationError("harmonic_stiffness needs a strictly positive stiffness range");
    d.energy = [](std::span<const double> x, std::span<const double> lam) {
        double r2 = 0.0;
        for (double xi : x)
            r2 += xi * xi;
        return 0.5 * lam[0] * r2;
    };
    d.dlambda = [](std::span<const double> x, std::span<const double>, std::span<double> out) {
        double r2 = 0.0;
        for (double xi : x)
            r2 += xi * xi;
        out[0] = 0.5 * r2;
    };
    d.log_partition = [beta, dim](const ControlParam& lam) {
        return 0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi / (beta * lam[0]));
    };
    d.sampler = [beta](const ControlParam& lam, RandomStream& rng, std::span<double> out) {
        const double sd = 1.0 / std::sqrt(beta * lam[0]);
        for (double& xi : out)
            xi = sd * rng.normal();
    };
    d.quadrature.scale = [beta](const ControlParam& lam) { return 1.0 / std::sqrt(beta * lam[0]); };
    return HamiltonianModel(std::move(d));
}

/// H(x, lambda) = |x - lambda|^2 / 2 on R^dim, lambda in R^dim.
inline HamiltonianModel harmonic_center(double beta, std::size_t dim = 1, ControlBox box = {})
{
    ModelDefinition d;
    d.name = "harmonic_center";
    d.beta = beta;
    d.phase_dim = dim;
    d.control_dim = dim;
    d.lambda_box = box.dim() ? std::move(box) : uniform_box(dim, -1e2, 1e2);
    d.energy = [](std::span<const double> x, std::span<const double> lam) {
        double r2 = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            r2 += (x[i] - lam[i]) * (x[i] - lam[i]);
        return 0.5 * r2;
    };
    d.dlambda = [](std::span<const double> x, std::span<const double> lam, std::span<double> out) {
        for (std::size_t i = 0; i < x.size(); ++i)
            out[i] = lam[i] - x[i];
    };
    d.log_partition = [beta, dim](const ControlParam&) {
        return 0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi / beta);
    };
    d.sampler = [beta](const ControlParam& lam, RandomStream& rng, std::span<double> out) {
        const double sd = 1.0 / std::sqrt(beta);
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = lam[i] + sd * rng.normal();
    };
    d.quadrature.center = [](const ControlParam& lam) { return PhasePoint(lam.values()); };
    d.quadrature.scale = [beta](const ControlParam&) { return 1.0 / std::sqrt(beta); };
    return HamiltonianModel(std::move(d));
}

/// Finite state space with an arbitrary energy E(s, lambda).
inline HamiltonianModel finite_state(std::string name, double beta, std::size_t n_states,
                                     std::function<double(std::size_t, std::span<const double>)> energy,
                                     ControlBox box, std::function<void(std::size_t, std::span<const double>,
                                                                        std::span<double>)> gradient = {},
                                     std::vector<double> kinks = {})
{
    if (n_states == 0)
        throw ConfigurationError("finite-state model needs at least one state");
    ModelDefinition d;
    d.name = std::move(name);
    d.beta = beta;
    d.n_states = n_states;
    d.control_dim = box.dim() ? box.dim() : 1;
    d.lambda_box = std::move(box);
    d.lambda_kinks = std::move(kinks);
    d.energy = [energy = std::move(energy), n_states](std::span<const double> x, std::span<const double> lam) {
        const double s = x[0];
        if (!(s >= 0.0) || s >= static_cast<double>(n_states) || s != std::floor(s))
            throw DomainError("invalid state index " + std::to_string(s));
        return energy(static_cast<std::size_t>(s), lam);
    };
    if (gradient)
        d.dlambda = [gradient = std::move(gradient)](std::span<const double> x, std::span<const double> lam,
                                                     std::span<double> out) {
            gradient(static_cast<std::size_t>(x[0]), lam, out);
        };
    return HamiltonianModel(std::move(d));
}

/// Two states with E(s0) = 0 and E(s1) = lambda.
inline HamiltonianModel two_state(double beta, ControlBox box = {})
{
    return finite_state(
        "two_state", beta, 2, [](std::size_t s, std::span<const double> lam) { return s == 1 ? lam[0] : 0.0; },
        box.dim() ? std::move(box) : uniform_box(1, -50.0, 50.0),
        [](std::size_t s, std::span<const double>, std::span<double> out) { out[0] = s == 1 ? 1.0 : 0.0; });
}

/// Finite-state energy table E[state][k] at scalar control values
/// lambdas[k], linearly interpolated in between (and extrapolated from the
/// end segments just outside the grid).
inline HamiltonianModel table(double beta, std::vector<double> lambdas, std::vector<std::vector<double>> energies)
{
    if (lambdas.empty())
        throw ConfigurationError("table model needs at least one lambda breakpoint");
    if (!std::is_sorted(lambdas.begin(), lambdas.end()) ||
        std::adjacent_find(lambdas.begin(), lambdas.end()) != lambdas.end())
        throw ConfigurationError("table lambdas must be strictly increasing");
    if (energies.empty())
        throw ConfigurationError("table model needs at least one state");
    for (std::size_t s = 0; s < energies.size(); ++s) {
        if (energies[s].size() != lambdas.size())
            throw ConfigurationError("table row " + std::to_string(s) + " has " + std::to_string(energies[s].size()) +
                                     " entries, expected " + std::to_string(lambdas.size()));
        for (double e : energies[s])
            if (!std::isfinite(e))
                throw ConfigurationError("table row " + std::to_string(s) + " has a non-finite energy");
    }

    // Segment index and weight for lambda; exact at breakpoints.
    auto locate = [lambdas](double lam) -> std::pair<std::size_t, double> {
        if (lambdas.size() == 1)
            return {0, 0.0};
        auto it = std::upper_bound(lambdas.begin(), lambdas.end(), lam);
        std::size_t k = it == lambdas.begin() ? 0 : static_cast<std::size_t>(it - lambdas.begin()) - 1;
        k = std::min(k, lambdas.size() - 2);
        return {k, (lam - lambdas[k]) / (lambdas[k + 1] - lambdas[k])};
    };
    auto energy = [energies, locate](std::size_t s, std::span<const double> lam) {
        const auto [k, w] = locate(lam[0]);
        if (w == 0.0)
            return energies[s][k];
        if (w == 1.0)
            return energies[s][k + 1];
        return energies[s][k] + w * (energies[s][k + 1] - energies[s][k]);
    };
    auto gradient = [energies, lambdas, locate](std::size_t s, std::span<const double> lam, std::span<double> out) {
        if (lambdas.size() == 1) {
            out[0] = 0.0;
            return;
        }
        const std::size_t k = locate(lam[0]).first;
        out[0] = (energies[s][k + 1] - energies[s][k]) / (lambdas[k + 1] - lambdas[k]);
    };
    ControlBox box = uniform_box(1, lambdas.front(), lambdas.back());
    const std::size_t n = energies.size();
    return finite_state("table", beta, n, std::move(energy), std::move(box), std::move(gradient), lambdas);
}

} // namespace nwt::catalog
