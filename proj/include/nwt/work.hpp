#pragma once

#include "nwt/error.hpp"
#include "nwt/hamiltonian.hpp"
#include "nwt/kernel.hpp"
#include "nwt/protocol.hpp"

#include <cstdint>
#include <vector>

namespace nwt {

struct WorkSample
{
    double w = 0.0;  ///< Jarzynski work
    double w0 = 0.0; ///< Bochkov-Kuzovlev work
    std::uint64_t trajectory_index = 0;
    PhasePoint final_state;
};

namespace detail {

inline std::size_t require_time(const Trajectory& traj, double t)
{
    const auto j = traj.find_time(t);
    if (!j)
        throw AlignmentError("trajectory has no state at protocol time t=" + std::to_string(t), t);
    return *j;
}

inline void require_span(const Trajectory& traj, double T)
{
    if (traj.size() < 2 || traj.times().front() != 0.0)
        throw AlignmentError("trajectory must start at t=0", 0.0);
    if (!traj.find_time(T) || *traj.find_time(T) != traj.size() - 1)
        throw AlignmentError("trajectory must end at T=" + std::to_string(T), T);
}

} // namespace detail

/// Sum over the jumps of a step protocol of H(x(t_i), lambda_i) -
/// H(x(t_i), lambda_{i-1}), using the state recorded at each jump time.
inline double work_step_protocol(const Trajectory& traj, const StepProtocol& sp, const HamiltonianModel& model)
{
    detail::require_span(traj, sp.duration());
    const auto& bp = sp.breakpoints();
    const auto& v = sp.values();
    double w = 0.0;
    for (std::size_t i = 1; i < bp.size(); ++i) {
        if (v[i] == v[i - 1])
            continue;
        const std::size_t j = detail::require_time(traj, bp[i]);
        const auto x = traj.state(j);
        w += model.energy(x, v[i].view()) - model.energy(x, v[i - 1].view());
    }
    return w;
}

/// Work split into the Stieltjes part (against lambda_c) and the jump part.
struct WorkParts
{
    double stieltjes = 0.0;
    double jumps = 0.0;
    double total() const { return stieltjes + jumps; }
};

/// Per-cell work increments on the trajectory grid. Cell j covers
/// (t_j, t_{j+1}] and uses the state recorded at t_{j+1}:
///   continuous: H(x_{j+1}, lambda(t_{j+1}-0)) - H(x_{j+1}, lambda(t_j))
///   jump:       H(x_{j+1}, lambda(t_{j+1}))   - H(x_{j+1}, lambda(t_{j+1}-0))
/// Their sum telescopes to H(x_{j+1}, lambda(t_{j+1})) - H(x_{j+1}, lambda(t_j)),
/// so the total equals the step-protocol work of the discretized protocol.
inline std::vector<WorkParts> work_increments(const Trajectory& traj, const Protocol& p,
                                              const HamiltonianModel& model)
{
    detail::require_span(traj, p.duration());
    for (double t : p.discontinuity_points())
        (void)detail::require_time(traj, t);
    const auto& times = traj.times();
    std::vector<WorkParts> out(times.size() - 1);
    ControlParam lam_prev = p.value_at(times[0]);
    for (std::size_t j = 0; j + 1 < times.size(); ++j) {
        const double t = times[j + 1];
        const ControlParam lam_left = p.left_limit_at(t);
        const ControlParam lam = p.value_at(t);
        const auto x = traj.state(j + 1);
        const double h_prev = model.energy(x, lam_prev.view());
        const double h_left = lam_left == lam_prev ? h_prev : model.energy(x, lam_left.view());
        const double h_now = lam == lam_left ? h_left : model.energy(x, lam.view());
        out[j].stieltjes = h_left - h_prev;
        out[j].jumps = h_now - h_left;
        lam_prev = lam;
    }
    return out;
}

inline WorkParts work_parts(const Trajectory& traj, const Protocol& p, const HamiltonianModel& model)
{
    WorkParts sum;
    for (const auto& inc : work_increments(traj, p, model)) {
        sum.stieltjes += inc.stieltjes;
        sum.jumps += inc.jumps;
    }
    return sum;
}

/// Jarzynski work of a trajectory sampled on the step-approximation grid
/// of p. Protocols with no variation and no jumps give 0 directly.
inline double work_jarzynski(const Trajectory& traj, const Protocol& p, const HamiltonianModel& model)
{
    if (p.total_variation() == 0.0)
        return 0.0;
    double w = 0.0;
    for (const auto& inc : work_increments(traj, p, model))
        w += inc.stieltjes + inc.jumps;
    return w;
}

/// W_0 = W - [H(x_T, lambda(T)) - H(x_T, lambda(0))].
inline double work_bochkov_kuzovlev(const Trajectory& traj, const Protocol& p, const HamiltonianModel& model)
{
    const double w = work_jarzynski(traj, p, model);
    const ControlParam lam0 = p.value_at(0.0);
    const ControlParam lamT = p.value_at(p.duration());
    if (lam0 == lamT)
        return w;
    const auto xT = traj.final_state();
    return w - (model.energy(xT, lamT.view()) - model.energy(xT, lam0.view()));
}

/// Both works of one trajectory.
inline WorkSample work_sample(const Trajectory& traj, const Protocol& p, const HamiltonianModel& model,
                              std::uint64_t index)
{
    WorkSample s;
    s.trajectory_index = index;
    s.final_state = PhasePoint(traj.final_state());
    if (p.total_variation() == 0.0)
        return s;
    s.w = work_jarzynski(traj, p, model);
    const ControlParam lam0 = p.value_at(0.0);
    const ControlParam lamT = p.value_at(p.duration());
    s.w0 = lam0 == lamT ? s.w
                        : s.w - (model.energy(s.final_state, lamT) - model.energy(s.final_state, lam0));
    return s;
}

/// Work with the Stieltjes term as a midpoint quadrature of dH/dlambda
/// against d lambda_c, the state held at the right end of each trajectory
/// cell. Agrees with work_jarzynski up to O(mesh) and exactly when H is
/// linear in lambda.
inline double work_by_derivative(const Trajectory& traj, const Protocol& p, const HamiltonianModel& model)
{
    detail::require_span(traj, p.duration());
    const auto& times = traj.times();
    std::vector<double> grad(model.control_dim());
    auto g = [&](double t) {
        auto it = std::lower_bound(times.begin(), times.end(), t);
        const std::size_t j = std::max<std::ptrdiff_t>(1, it - times.begin());
        // lambda on the open cell: continuous part at t, step part from the cell start
        const ControlParam lam = p.continuous_part().value_at(t) + p.step_part().value_at(times[j - 1]);
        model.dlambda_energy(traj.state(j), lam.view(), grad);
        return ControlParam(grad);
    };
    double w = stieltjes_integrate(g, p, times);
    for (const auto& inc : work_increments(traj, p, model))
        w += inc.jumps;
    return w;
}

} // namespace nwt
