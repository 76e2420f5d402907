// Two-state system, lambda switched 0 -> 1 halfway: exact average from the
// matrix route next to a Monte Carlo estimate.

#include "nwt/nwt.hpp"

#include <cmath>
#include <cstdio>

int main()
{
    const auto model = nwt::catalog::two_state(1.0);
    const nwt::StepProtocol sp({0.0, 0.5, 1.0}, {nwt::ControlParam{0.0}, nwt::ControlParam{1.0}, nwt::ControlParam{1.0}});
    const auto kernel = nwt::FixedParamKernel::finite_metropolis();

    const nwt::oracle::FiniteStateModel fm(model);
    const double exact = nwt::oracle::exact_exponential_work_average(fm, sp, kernel);
    std::printf("exact <exp(-W)>      %.10f\n", exact);
    std::printf("Z(1)/Z(0)            %.10f\n", nwt::oracle::partition_ratio(fm, sp));

    nwt::SamplerConfig cfg;
    cfg.kernel = kernel;
    cfg.master_seed = 7;
    const auto r = nwt::jarzynski_estimate(model, nwt::Protocol::from_steps(sp), cfg, 100000);
    std::printf("Monte Carlo          %.6f +- %.6f (z = %.2f)\n", r.mean_exp_w, r.stderr_exp_w, *r.z_score);
    std::printf("<exp(-W0)>           %.6f +- %.6f\n", r.mean_exp_w0, r.stderr_exp_w0);
    return 0;
}
