#include "nwt/catalog.hpp"
#include "nwt/oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace nwt;
using namespace nwt::oracle;

namespace {

const double kTwoStateRatio = (1.0 + std::exp(-1.0)) / 2.0;

FiniteStateModel two_state() { return FiniteStateModel(catalog::two_state(1.0)); }

StepProtocol single_jump() { return StepProtocol({0.0, 0.5, 1.0}, {ControlParam{0.0}, ControlParam{1.0}, ControlParam{1.0}}); }

StochasticMatrix half_flip() { return StochasticMatrix::from_rows({{0.5, 0.5}, {0.5, 0.5}}); }

// Z ratio from energies directly, independent of the model's log_partition
double direct_ratio(const FiniteStateModel& m, const StepProtocol& sp)
{
    double z0 = 0.0, zT = 0.0;
    for (std::size_t s = 0; s < m.n_states(); ++s) {
        z0 += std::exp(-m.beta() * m.energy(s, sp.values().front()));
        zT += std::exp(-m.beta() * m.energy(s, sp.values().back()));
    }
    return zT / z0;
}

// E[f(x_T) exp(-beta W)] with the dynamics driven by `dynamics` and the work
// taken from `work`, summed over every path with explicit loops.
double path_sum(const FiniteStateModel& m, const StepProtocol& dynamics, const StepProtocol& work,
                const FixedParamKernel& k, const std::function<double(std::size_t)>& f)
{
    const std::size_t n = m.n_states();
    const auto q0 = m.canonical(dynamics.values().front());
    double total = 0.0;
    std::vector<std::size_t> states(dynamics.segments() + 1);
    std::size_t paths = 1;
    for (std::size_t i = 0; i < states.size(); ++i)
        paths *= n;
    for (std::size_t code = 0; code < paths; ++code) {
        std::size_t c = code;
        for (auto& s : states) {
            s = c % n;
            c /= n;
        }
        double prob = q0[states[0]];
        double w = 0.0;
        for (std::size_t i = 0; i < dynamics.segments(); ++i) {
            prob *= k.matrix(m.model(), dynamics.values()[i])(states[i], states[i + 1]);
            w += m.energy(states[i + 1], work.values()[i + 1]) - m.energy(states[i + 1], work.values()[i]);
        }
        total += prob * std::exp(-m.beta() * w) * f(states.back());
    }
    return total;
}

} // namespace

TEST(MetropolisMatrix, UniformEnergiesReturnProposal)
{
    const auto model = catalog::finite_state("flat", 1.0, 3, [](std::size_t, std::span<const double>) { return 0.2; },
                                             catalog::uniform_box(1, 0.0, 1.0));
    RandomStream rng(1, 0);
    const auto prop = random_symmetric_proposal(3, rng);
    const auto P = metropolis_matrix(model, ControlParam{0.5}, prop);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            EXPECT_EQ(P(i, j), prop(i, j));
}

TEST(MetropolisMatrix, TwoStateEntries)
{
    const auto P = metropolis_matrix(catalog::two_state(1.0), ControlParam{1.0}, half_flip());
    EXPECT_NEAR(P(0, 1), 0.5 * std::exp(-1.0), 1e-16);
    EXPECT_EQ(P(1, 0), 0.5);
    EXPECT_NEAR(P(0, 0), 1.0 - 0.5 * std::exp(-1.0), 1e-16);
    EXPECT_EQ(P(1, 1), 0.5);
}

TEST(MetropolisMatrix, AsymmetricProposalRejected)
{
    const auto asym = StochasticMatrix::from_rows({{0.5, 0.5}, {0.2, 0.8}});
    EXPECT_THROW(metropolis_matrix(catalog::two_state(1.0), ControlParam{1.0}, asym), ConfigurationError);
}

TEST(StochasticMatrix, ValidatesRows)
{
    EXPECT_THROW(StochasticMatrix::from_rows({{0.5, 0.6}, {0.5, 0.5}}), ConfigurationError);
    EXPECT_THROW(StochasticMatrix::from_rows({{1.5, -0.5}, {0.5, 0.5}}), ConfigurationError);
    EXPECT_THROW(StochasticMatrix::from_rows({{1.0}, {0.5, 0.5}}), ConfigurationError);
}

TEST(Checkers, MetropolisIdentityAndBroken)
{
    const auto m = two_state();
    for (double lam : {-2.0, 0.0, 0.3, 1.0, 4.0}) {
        const ControlParam l{lam};
        const auto P = metropolis_matrix(m.model(), l, half_flip());
        EXPECT_LE(check_stationarity(P, m, l), 1e-14);
        EXPECT_LE(check_unit_ratio(P, m, l), 1e-12);
        EXPECT_EQ(check_stationarity(StochasticMatrix::identity(2), m, l), 0.0);
        EXPECT_EQ(check_unit_ratio(StochasticMatrix::identity(2), m, l), 0.0);
    }
    const ControlParam l{1.0};
    const auto B = broken_matrix(m.model(), l, half_flip(), 0.1);
    EXPECT_GT(check_stationarity(B, m, l), 1e-3);
    EXPECT_GT(check_unit_ratio(B, m, l), 1e-3);
}

TEST(Checkers, UnitRatioIsStationarityOverCanonicalWeight)
{
    const auto m = two_state();
    const ControlParam l{0.7};
    const auto B = broken_matrix(m.model(), l, half_flip(), 0.3);
    const auto q = m.canonical(l);
    const auto qp = B.left_multiply(q);
    double worst = 0.0;
    for (std::size_t y = 0; y < 2; ++y)
        worst = std::max(worst, std::abs(qp[y] - q[y]) / q[y]);
    EXPECT_NEAR(check_unit_ratio(B, m, l), worst, 1e-14);
}

TEST(ExactAverage, ConstantProtocolIsOne)
{
    const auto m = two_state();
    EXPECT_EQ(exact_exponential_work_average(m, StepProtocol::constant(1.0, ControlParam{0.4}), half_flip(), 3), 1.0);
    EXPECT_EQ(brute_force_path_enumeration(m, StepProtocol::constant(1.0, ControlParam{0.4}), half_flip(), 3), 1.0);
    EXPECT_EQ(exact_bk_average(m, StepProtocol::constant(1.0, ControlParam{0.4}), half_flip(), 3), 1.0);
}

TEST(ExactAverage, TwoStateSingleJumpAnyKernel)
{
    const auto m = two_state();
    const auto sp = single_jump();
    EXPECT_NEAR(exact_exponential_work_average(m, sp, half_flip()), kTwoStateRatio, 1e-15);
    EXPECT_NEAR(exact_exponential_work_average(m, sp, FixedParamKernel::identity()), kTwoStateRatio, 1e-15);
    EXPECT_NEAR(exact_exponential_work_average(m, sp, FixedParamKernel::finite_metropolis(std::nullopt, 5)),
                kTwoStateRatio, 1e-15);
    EXPECT_NEAR(partition_ratio(m, sp), kTwoStateRatio, 1e-15);
}

TEST(ExactAverage, MatchesPartitionRatioOnRandomInstances)
{
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto inst = random_instance(seed);
        for (unsigned sub : {1u, 3u}) {
            const double v = exact_exponential_work_average(inst.model, inst.protocol, inst.proposal, sub);
            EXPECT_NEAR(v, direct_ratio(inst.model, inst.protocol), 1e-12) << "seed " << seed;
            EXPECT_NEAR(v, partition_ratio(inst.model, inst.protocol), 1e-12) << "seed " << seed;
        }
    }
    const auto four = random_instance(1234, 4, 4);
    EXPECT_NEAR(exact_exponential_work_average(four.model, four.protocol, four.proposal),
                direct_ratio(four.model, four.protocol), 1e-12);
}

TEST(ExactAverage, ZeroJumpBreakpointsChangeNothing)
{
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto inst = random_instance(seed);
        const auto& bp = inst.protocol.breakpoints();
        const auto& v = inst.protocol.values();
        std::vector<double> nbp;
        std::vector<ControlParam> nv;
        for (std::size_t i = 0; i + 1 < bp.size(); ++i) {
            nbp.push_back(bp[i]);
            nv.push_back(v[i]);
            nbp.push_back(0.5 * (bp[i] + bp[i + 1]));
            nv.push_back(v[i]);
        }
        nbp.push_back(bp.back());
        nv.push_back(v.back());
        const StepProtocol refined(nbp, nv);
        EXPECT_NEAR(exact_exponential_work_average(inst.model, refined, inst.proposal, 2),
                    exact_exponential_work_average(inst.model, inst.protocol, inst.proposal, 2), 1e-13);
    }
}

TEST(Enumeration, TwoStatesOneStep)
{
    const auto m = two_state();
    // single segment at lambda = 0 followed by a jump to 1 at T
    const StepProtocol sp({0.0, 1.0}, {ControlParam{0.0}, ControlParam{1.0}});
    EXPECT_EQ(path_count(m, sp, 1), 2.0);
    EXPECT_NEAR(brute_force_path_enumeration(m, sp, half_flip()), exact_exponential_work_average(m, sp, half_flip()),
                1e-15);
}

TEST(Enumeration, AgreesWithMatrixMethodUnderGuard)
{
    const auto three = random_instance(77, 3, 3);
    EXPECT_NEAR(brute_force_path_enumeration(three.model, three.protocol, three.proposal),
                exact_exponential_work_average(three.model, three.protocol, three.proposal), 1e-12);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto inst = random_instance(seed);
        for (unsigned sub : {1u, 2u}) {
            if (path_count(inst.model, inst.protocol, sub) > 1e5)
                continue;
            EXPECT_NEAR(brute_force_path_enumeration(inst.model, inst.protocol, inst.proposal, sub),
                        exact_exponential_work_average(inst.model, inst.protocol, inst.proposal, sub), 1e-12)
                << "seed " << seed;
        }
    }
}

TEST(Enumeration, SizeGuard)
{
    const auto inst = random_instance(5, 5, 6);
    EXPECT_GT(path_count(inst.model, inst.protocol, 2), 1e7);
    EXPECT_THROW(brute_force_path_enumeration(inst.model, inst.protocol, inst.proposal, 2), SizeError);
}

TEST(WeightedObservable, ConstantOneGivesRatio)
{
    const auto inst = random_instance(9, 4, 3);
    const auto r = exact_weighted_observable(inst.model, inst.protocol, inst.proposal, 1, [](std::size_t) { return 1.0; });
    EXPECT_NEAR(r.lhs, direct_ratio(inst.model, inst.protocol), 1e-12);
    EXPECT_NEAR(r.rhs, direct_ratio(inst.model, inst.protocol), 1e-12);
}

TEST(WeightedObservable, TwoStateIndicator)
{
    const auto r =
        exact_weighted_observable(two_state(), single_jump(), half_flip(), 1, [](std::size_t s) { return s == 0 ? 1.0 : 0.0; });
    EXPECT_NEAR(r.rhs, 0.5, 1e-15);
    EXPECT_NEAR(r.lhs, 0.5, 1e-15);
}

TEST(WeightedObservable, RandomInstances)
{
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto inst = random_instance(seed, 4, 1 + seed % 6);
        const auto f = [seed](std::size_t s) { return std::sin(static_cast<double>(s * 3 + seed)); };
        const auto r = exact_weighted_observable(inst.model, inst.protocol, inst.proposal, 2, f);
        EXPECT_NEAR(r.lhs, r.rhs, 1e-12) << "seed " << seed;
    }
}

TEST(WeightedObservable, EndpointValueAtTDoesNotMatter)
{
    const auto model = catalog::table(1.0, {0.0, 1.0, 2.0, 3.0},
                                      {{0.0, 0.5, -0.3, 1.0}, {0.7, -0.2, 0.4, -1.0}, {-0.4, 0.9, 1.1, 0.2}});
    const FiniteStateModel m(model);
    const auto k = FixedParamKernel::finite_metropolis();
    const StepProtocol sp({0.0, 0.3, 0.7, 1.0}, {ControlParam{0.0}, ControlParam{2.0}, ControlParam{1.0},
                                                  ControlParam{1.0}});
    const auto f = [](std::size_t s) { return 1.0 + static_cast<double>(s); };
    const double base = exact_weighted_observable(m, sp, k, 1, f).lhs;
    EXPECT_NEAR(path_sum(m, sp, sp, k, f), base, 1e-13);
    for (double a : {0.0, 2.5, 3.0}) {
        const StepProtocol modified({0.0, 0.3, 0.7, 1.0},
                                    {ControlParam{0.0}, ControlParam{2.0}, ControlParam{1.0}, ControlParam{a}});
        EXPECT_NEAR(path_sum(m, modified, sp, k, f), base, 1e-13) << "a = " << a;
    }
}

TEST(BochkovKuzovlev, ExactAverageIsOne)
{
    EXPECT_NEAR(exact_bk_average(two_state(), single_jump(), half_flip()), 1.0, 1e-14);
    const auto five = random_instance(31, 5, 6);
    EXPECT_NEAR(exact_bk_average(five.model, five.protocol, five.proposal), 1.0, 1e-12);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto inst = random_instance(seed);
        EXPECT_NEAR(exact_bk_average(inst.model, inst.protocol, inst.proposal, 2), 1.0, 1e-12) << "seed " << seed;
    }
}

TEST(NegativeControl, BrokenKernelsMissTheRatio)
{
    const auto m = two_state();
    const auto sp = single_jump();
    for (double bias : {0.05, 0.1, 0.5, 2.0, -0.05}) {
        const auto k = FixedParamKernel::broken(bias, 1.0, 1, half_flip());
        EXPECT_GT(std::abs(exact_exponential_work_average(m, sp, k) - kTwoStateRatio), 1e-4) << "bias " << bias;
    }
}

TEST(Joint, MarginalOfJointIsMarginal)
{
    const auto inst = random_instance(3, 3, 4);
    const auto k = FixedParamKernel::finite_metropolis(inst.proposal);
    const auto J = breakpoint_joint(inst.model, inst.protocol, k, 1, 1, 3);
    const auto first = breakpoint_marginal(inst.model, inst.protocol, k, 1, 1);
    const auto third = breakpoint_marginal(inst.model, inst.protocol, k, 1, 3);
    for (std::size_t a = 0; a < 3; ++a) {
        double row = 0.0, col = 0.0;
        for (std::size_t b = 0; b < 3; ++b) {
            row += J[a][b];
            col += J[b][a];
        }
        EXPECT_NEAR(row, first[a], 1e-14);
        EXPECT_NEAR(col, third[a], 1e-14);
    }
}

TEST(FiniteStateModel, RejectsContinuousAndSingleState)
{
    EXPECT_THROW(FiniteStateModel(catalog::harmonic_stiffness(1.0)), ConfigurationError);
    EXPECT_THROW(FiniteStateModel(catalog::finite_state("one", 1.0, 1, [](std::size_t, std::span<const double>) { return 0.0; },
                                                        catalog::uniform_box(1, 0.0, 1.0))),
                 ConfigurationError);
}
