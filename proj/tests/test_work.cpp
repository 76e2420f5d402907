#include "nwt/catalog.hpp"
#include "nwt/kernel.hpp"
#include "nwt/oracle.hpp"
#include "nwt/work.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace nwt;

namespace {

Trajectory path(const std::vector<double>& times, const std::vector<double>& states)
{
    Trajectory t(1);
    for (std::size_t j = 0; j < times.size(); ++j)
        t.push(times[j], std::vector<double>{states[j]});
    return t;
}

Trajectory frozen(const StepProtocol& grid, double x)
{
    return path(grid.breakpoints(), std::vector<double>(grid.breakpoints().size(), x));
}

StepProtocol one_jump(double from, double to)
{
    return StepProtocol({0.0, 0.5, 1.0}, {ControlParam{from}, ControlParam{to}, ControlParam{to}});
}

// H(x, lambda) = exp(lambda) x^2 / 2: not linear or quadratic in lambda
HamiltonianModel exp_stiffness()
{
    ModelDefinition d;
    d.name = "exp_stiffness";
    d.energy = [](std::span<const double> x, std::span<const double> lam) {
        return 0.5 * std::exp(lam[0]) * x[0] * x[0];
    };
    d.dlambda = [](std::span<const double> x, std::span<const double> lam, std::span<double> out) {
        out[0] = 0.5 * std::exp(lam[0]) * x[0] * x[0];
    };
    d.log_partition = [](const ControlParam& lam) { return 0.5 * std::log(2.0 * M_PI) - 0.5 * lam[0]; };
    d.lambda_box = catalog::uniform_box(1, -3.0, 3.0);
    return HamiltonianModel(std::move(d));
}

Trajectory sampled(const HamiltonianModel& m, const Protocol& p, std::size_t grid, std::uint64_t index,
                   const FixedParamKernel& k)
{
    SamplerConfig cfg;
    cfg.grid_steps = grid;
    cfg.master_seed = 21;
    cfg.kernel = k;
    return sample_trajectory(m, p, cfg, index);
}

Protocol mixed_protocol()
{
    // continuous ramp plus two jumps, one of them mid-cell for grid 7
    return Protocol(ContinuousBVProtocol({0.0, 0.6, 1.0}, {ControlParam{1.0}, ControlParam{2.0}, ControlParam{1.5}}),
                    StepProtocol({0.0, 0.3, 0.71, 1.0},
                                 {ControlParam{0.0}, ControlParam{0.5}, ControlParam{-0.25}, ControlParam{-0.25}}));
}

} // namespace

TEST(WorkStepProtocol, ConstantProtocolIsZero)
{
    const auto m = catalog::two_state(1.0);
    const auto sp = StepProtocol::constant(1.0, ControlParam{0.7});
    EXPECT_EQ(work_step_protocol(frozen(sp, 1.0), sp, m), 0.0);
}

TEST(WorkStepProtocol, SingleJump)
{
    const auto m = catalog::two_state(1.0);
    const auto sp = one_jump(0.0, 1.0);
    EXPECT_EQ(work_step_protocol(path({0.0, 0.5, 1.0}, {0.0, 1.0, 1.0}), sp, m), 1.0);
    EXPECT_EQ(work_step_protocol(path({0.0, 0.5, 1.0}, {1.0, 0.0, 1.0}), sp, m), 0.0);
}

TEST(WorkStepProtocol, TwoJumpsByHandAndByEnumeration)
{
    const auto model = catalog::table(1.0, {0.0, 1.0, 2.0}, {{0.0, 0.5, -0.3}, {0.7, -0.2, 0.4}, {-0.4, 0.9, 1.1}});
    const StepProtocol sp({0.0, 0.25, 0.6, 1.0}, {ControlParam{0.0}, ControlParam{2.0}, ControlParam{1.0},
                                                   ControlParam{1.0}});
    // state 1 at the first jump, state 2 at the second: (0.4 - 0.7) + (0.9 - 1.1)
    const auto traj = path({0.0, 0.25, 0.6, 1.0}, {0.0, 1.0, 2.0, 2.0});
    EXPECT_NEAR(work_step_protocol(traj, sp, model), -0.5, 1e-15);

    // with a kernel that never moves, E[exp(-W)] is a sum over constant paths
    const oracle::FiniteStateModel fm(model);
    const auto q0 = fm.canonical(ControlParam{0.0});
    double by_paths = 0.0;
    for (std::size_t s = 0; s < 3; ++s) {
        const double x = static_cast<double>(s);
        by_paths += q0[s] * std::exp(-work_step_protocol(frozen(sp, x), sp, model));
    }
    EXPECT_NEAR(by_paths, oracle::brute_force_path_enumeration(fm, sp, FixedParamKernel::identity()), 1e-14);
}

TEST(WorkStepProtocol, MissingBreakpointNamesTime)
{
    const auto m = catalog::two_state(1.0);
    const auto sp = one_jump(0.0, 1.0);
    try {
        work_step_protocol(path({0.0, 0.4, 1.0}, {0.0, 1.0, 1.0}), sp, m);
        FAIL() << "expected AlignmentError";
    } catch (const AlignmentError& e) {
        EXPECT_DOUBLE_EQ(e.time(), 0.5);
        EXPECT_NE(std::string(e.what()).find("t=0.5"), std::string::npos);
    }
    EXPECT_THROW(work_step_protocol(path({0.0, 0.5}, {0.0, 1.0}), sp, m), AlignmentError);
}

TEST(WorkJarzynski, ConstantProtocolIsZeroWithoutTouchingTrajectory)
{
    const auto m = catalog::harmonic_stiffness(1.0);
    const auto p = Protocol::constant(1.0, ControlParam{1.0});
    // deliberately misaligned trajectory: the short-circuit must not look at it
    EXPECT_EQ(work_jarzynski(path({0.0, 0.3}, {5.0, 5.0}), p, m), 0.0);
    EXPECT_EQ(work_bochkov_kuzovlev(path({0.0, 0.3}, {5.0, 5.0}), p, m), 0.0);
}

TEST(WorkJarzynski, PureStepProtocolEqualsStepWork)
{
    const auto m = catalog::two_state(1.0);
    const auto sp = one_jump(0.0, 1.0);
    const auto p = Protocol::from_steps(sp);
    for (double s : {0.0, 1.0}) {
        const auto traj = path({0.0, 0.5, 1.0}, {1.0 - s, s, s});
        EXPECT_EQ(work_jarzynski(traj, p, m), work_step_protocol(traj, sp, m));
    }
}

TEST(WorkJarzynski, FrozenStateOnLinearStiffnessRamp)
{
    const auto m = catalog::harmonic_stiffness(1.0);
    const auto p = Protocol::from_continuous(ContinuousBVProtocol::linear(1.0, ControlParam{1.0}, ControlParam{2.0}));
    for (double x : {0.0, 0.3, -1.7, 4.0})
        EXPECT_NEAR(work_jarzynski(frozen(step_approximation(p, 100), x), p, m), 0.5 * x * x, 1e-12);
}

TEST(WorkBochkovKuzovlev, SingleJumpInUpperState)
{
    const auto m = catalog::two_state(1.0);
    const auto p = Protocol::from_steps(one_jump(0.0, 1.0));
    const auto traj = path({0.0, 0.5, 1.0}, {1.0, 1.0, 1.0});
    EXPECT_EQ(work_jarzynski(traj, p, m), 1.0);
    EXPECT_EQ(work_bochkov_kuzovlev(traj, p, m), 0.0);
}

TEST(WorkBochkovKuzovlev, CyclicProtocolHasNoEndpointTerm)
{
    const auto m = catalog::harmonic_stiffness(1.0);
    const auto p = Protocol::from_continuous(
        ContinuousBVProtocol({0.0, 0.5, 1.0}, {ControlParam{1.0}, ControlParam{3.0}, ControlParam{1.0}}));
    const auto k = FixedParamKernel::metropolis(0.7);
    for (std::uint64_t i = 0; i < 20; ++i) {
        const auto traj = sampled(m, p, 40, i, k);
        EXPECT_EQ(work_bochkov_kuzovlev(traj, p, m), work_jarzynski(traj, p, m));
    }
}

TEST(WorkProperties, StepContinuousConsistency)
{
    const auto m = catalog::harmonic_center(1.0);
    const auto p = mixed_protocol();
    const auto k = FixedParamKernel::metropolis(0.9);
    for (std::size_t grid : {1u, 7u, 64u})
        for (std::uint64_t i = 0; i < 20; ++i) {
            const auto traj = sampled(m, p, grid, i, k);
            const double w = work_jarzynski(traj, p, m);
            EXPECT_NEAR(w, work_step_protocol(traj, step_approximation(p, grid), m),
                        1e-12 * std::max(1.0, std::abs(w)));
        }
}

TEST(WorkProperties, AdditivityOverAnySplitPoint)
{
    const auto m = catalog::harmonic_center(1.0);
    const auto p = mixed_protocol();
    const auto traj = sampled(m, p, 25, 3, FixedParamKernel::metropolis(0.9));
    const auto& t = traj.times();
    // per-cell energy differences computed here from the definition
    std::vector<double> cell(t.size() - 1);
    for (std::size_t j = 0; j + 1 < t.size(); ++j) {
        const PhasePoint x(traj.state(j + 1));
        cell[j] = m.energy(x, p.value_at(t[j + 1])) - m.energy(x, p.value_at(t[j]));
    }
    const double total = work_jarzynski(traj, p, m);
    for (std::size_t k = 1; k + 1 < t.size(); ++k) {
        double before = 0.0, after = 0.0;
        for (std::size_t j = 0; j < cell.size(); ++j)
            (j < k ? before : after) += cell[j];
        EXPECT_NEAR(before + after, total, 1e-12);
    }
    const auto inc = work_increments(traj, p, m);
    for (std::size_t j = 0; j < inc.size(); ++j)
        EXPECT_NEAR(inc[j].stieltjes + inc[j].jumps, cell[j], 1e-12);
}

TEST(WorkProperties, EndpointIdentityPerTrajectory)
{
    const auto m = catalog::harmonic_center(1.0);
    const auto p = mixed_protocol();
    const auto k = FixedParamKernel::metropolis(0.9);
    for (std::uint64_t i = 0; i < 200; ++i) {
        const auto traj = sampled(m, p, 30, i, k);
        const PhasePoint xT(traj.final_state());
        const double gap = m.energy(xT, p.value_at(1.0)) - m.energy(xT, p.value_at(0.0));
        const auto s = work_sample(traj, p, m, i);
        EXPECT_NEAR(s.w - s.w0, gap, 1e-12);
        EXPECT_NEAR(work_jarzynski(traj, p, m) - work_bochkov_kuzovlev(traj, p, m), gap, 1e-12);
        EXPECT_EQ(s.trajectory_index, i);
    }
}

TEST(WorkProperties, IncreasingStiffnessGivesNonNegativeIncrements)
{
    const auto m = catalog::harmonic_stiffness(1.0);
    const auto p = Protocol(
        ContinuousBVProtocol({0.0, 0.5, 1.0}, {ControlParam{1.0}, ControlParam{1.2}, ControlParam{3.0}}),
        StepProtocol({0.0, 0.4, 1.0}, {ControlParam{0.0}, ControlParam{0.5}, ControlParam{0.5}}));
    const auto k = FixedParamKernel::metropolis(1.0);
    for (std::uint64_t i = 0; i < 100; ++i)
        for (const auto& inc : work_increments(sampled(m, p, 13, i, k), p, m)) {
            ASSERT_GE(inc.stieltjes, 0.0);
            ASSERT_GE(inc.jumps, 0.0);
        }
}

TEST(WorkProperties, MisalignedJumpRaises)
{
    const auto m = catalog::harmonic_center(1.0);
    const auto p = mixed_protocol();
    // grid of the continuous part only, missing the jump times
    const auto traj = frozen(step_approximation(Protocol::from_continuous(p.continuous_part()), 10), 0.0);
    EXPECT_THROW(work_jarzynski(traj, p, m), AlignmentError);
}

TEST(WorkByDerivative, ExactForQuadraticDependence)
{
    const auto m = catalog::harmonic_center(1.0);
    const auto p = mixed_protocol();
    const auto k = FixedParamKernel::metropolis(0.9);
    for (std::uint64_t i = 0; i < 20; ++i) {
        const auto traj = sampled(m, p, 16, i, k);
        EXPECT_NEAR(work_by_derivative(traj, p, m), work_jarzynski(traj, p, m), 1e-12);
    }
}

TEST(WorkByDerivative, ConvergesWithMesh)
{
    const auto m = exp_stiffness();
    const auto p = Protocol::from_continuous(ContinuousBVProtocol::linear(1.0, ControlParam{-1.0}, ControlParam{2.0}));
    double previous = HUGE_VAL;
    for (std::size_t grid : {10u, 100u, 1000u}) {
        const auto traj = frozen(step_approximation(p, grid), 1.3);
        const double gap = std::abs(work_by_derivative(traj, p, m) - work_jarzynski(traj, p, m));
        const double mesh = 1.0 / static_cast<double>(grid);
        // bounded by total variation times the mesh modulus of dH/dlambda
        EXPECT_LE(gap, p.total_variation() * 0.5 * 1.3 * 1.3 * std::exp(2.0) * 3.0 * mesh);
        EXPECT_LT(gap, previous);
        previous = gap;
    }
}
