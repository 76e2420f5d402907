// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Reports of the Monte Carlo runs are written to
// acceptance_reports/ and replayed at the end.

#include "nwt/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

using namespace nwt;
using nwt::cli::json;

namespace {

const double kTwoStateRatio = 0.6839397;
const double kHalfLn2 = 0.3465736;
const std::filesystem::path kReportDir = "acceptance_reports";

struct Outcome
{
    bool pass = false;
    std::string detail;
};

class Clock
{
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* format, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

// Z_T / Z_0 summed straight from the energy table
double direct_ratio(const oracle::FiniteStateModel& m, const StepProtocol& sp)
{
    double z0 = 0.0, zT = 0.0;
    for (std::size_t s = 0; s < m.n_states(); ++s) {
        z0 += std::exp(-m.beta() * m.energy(s, sp.values().front()));
        zT += std::exp(-m.beta() * m.energy(s, sp.values().back()));
    }
    return zT / z0;
}

std::vector<oracle::RandomInstance> random_instances()
{
    std::vector<oracle::RandomInstance> out;
    for (std::uint64_t seed = 0; seed < 100; ++seed)
        out.push_back(oracle::random_instance(seed));
    return out;
}

json load_config(const std::string& name)
{
    return cli::load_json_file(std::string(NWT_CONFIG_DIR) + "/" + name);
}

struct Run
{
    cli::RunResult result;
    cli::ExperimentConfig config;
    std::filesystem::path report;
};

Run run_config(json doc, const std::string& mode, const std::string& report_name, bool keep_samples = false)
{
    doc["mode"] = mode;
    doc.erase("outputs");
    cli::ExperimentConfig c = cli::parse_config(doc);
    Run r{cli::execute(c, 0, keep_samples), c, kReportDir / report_name};
    std::ofstream(r.report) << r.result.report.dump(2) << "\n";
    return r;
}

double result(const Run& r, const char* key) { return r.result.report["results"][key].get<double>(); }

Outcome ac1(const std::vector<oracle::RandomInstance>& instances)
{
    Clock clock;
    double worst = 0.0;
    for (const auto& inst : instances) {
        const double v = oracle::exact_exponential_work_average(inst.model, inst.protocol, inst.proposal);
        worst = std::max(worst, std::abs(v - direct_ratio(inst.model, inst.protocol)));
    }
    const double t = clock.seconds();
    return {worst <= 1e-12 && t < 1.0,
            fmt("100 instances, max |exact - Z_T/Z_0| = %.3g (limit 1e-12), %.3f s (limit 1 s)", worst, t)};
}

Outcome ac2(const std::vector<oracle::RandomInstance>& instances)
{
    Clock clock;
    double worst = 0.0;
    int checked = 0;
    for (const auto& inst : instances)
        for (unsigned sub : {1u, 2u}) {
            if (oracle::path_count(inst.model, inst.protocol, sub) > 1e7)
                continue;
            const auto k = FixedParamKernel::finite_metropolis(inst.proposal);
            const double brute = oracle::brute_force_path_enumeration(inst.model, inst.protocol, k, sub, 1e7);
            const double matrix = oracle::exact_exponential_work_average(inst.model, inst.protocol, k, sub);
            worst = std::max(worst, std::abs(brute - matrix));
            ++checked;
        }
    const double t = clock.seconds();
    return {worst <= 1e-12 && t < 10.0,
            fmt("%d instance/substep pairs under the 1e7 path guard, max |matrix - enumeration| = %.3g "
                "(limit 1e-12), %.2f s (limit 10 s)",
                checked, worst, t)};
}

Outcome ac3(const std::vector<oracle::RandomInstance>& instances)
{
    Clock clock;
    double stat = 0.0, unit = 0.0;
    for (const auto& inst : instances)
        for (const auto& lam : inst.protocol.values()) {
            const auto P = metropolis_matrix(inst.model.model(), lam, inst.proposal);
            stat = std::max(stat, oracle::check_stationarity(P, inst.model, lam));
            unit = std::max(unit, oracle::check_unit_ratio(P, inst.model, lam));
        }
    // negative control on the two-state single-jump fixture
    const oracle::FiniteStateModel two(catalog::two_state(1.0));
    const StepProtocol sp({0.0, 0.5, 1.0}, {ControlParam{0.0}, ControlParam{1.0}, ControlParam{1.0}});
    const auto broken = FixedParamKernel::broken(0.1);
    double b_stat = 1.0, b_unit = 1.0;
    for (const auto& lam : {sp.values()[0], sp.values()[1]}) {
        const auto B = broken.matrix(two.model(), lam);
        b_stat = std::min(b_stat, oracle::check_stationarity(B, two, lam));
        b_unit = std::min(b_unit, oracle::check_unit_ratio(B, two, lam));
    }
    const double b_err = std::abs(oracle::exact_exponential_work_average(two, sp, broken) -
                                  (1.0 + std::exp(-1.0)) / 2.0);
    const double t = clock.seconds();
    const bool ok = stat <= 1e-12 && unit <= 1e-12 && b_stat > 1e-3 && b_unit > 1e-3 && b_err > 1e-4 && t < 1.0;
    return {ok, fmt("metropolis stationarity %.3g, unit ratio %.3g (limit 1e-12); bias-0.1 kernel: stationarity "
                    "%.3g, unit ratio %.3g (need > 1e-3), average error %.3g (need > 1e-4); %.3f s (limit 1 s)",
                    stat, unit, b_stat, b_unit, b_err, t)};
}

Outcome ac4(const Run& r, double seconds)
{
    const double mean = result(r, "mean_exp_w");
    const double se = result(r, "stderr_exp_w");
    const bool ok = std::abs(mean - kTwoStateRatio) <= 4.0 * se && se < 0.01 && seconds < 10.0;
    return {ok, fmt("N = %zu, mean_exp_w = %.7f, |diff| = %.3g vs 4*stderr = %.3g, stderr < 0.01, %.2f s "
                    "(limit 10 s)",
                    r.config.n_samples, mean, std::abs(mean - kTwoStateRatio), 4.0 * se, seconds)};
}

Outcome ac5(const Run& r, double seconds)
{
    const double df = result(r, "delta_f_estimate");
    const double df_se = result(r, "delta_f_stderr");
    const double mean_w = result(r, "mean_w");
    const double w_se = result(r, "stderr_w");
    const double combined = std::hypot(w_se, df_se);
    const bool within = std::abs(df - kHalfLn2) <= 4.0 * df_se;
    const bool second_law = mean_w - df >= -4.0 * combined;
    return {within && second_law && seconds < 60.0,
            fmt("grid %zu, N = %zu, delta_f = %.6f vs 0.3465736, |diff| = %.3g (limit %.3g); mean_w - delta_f = "
                "%.4f (lower limit %.4f); %.1f s (limit 60 s)",
                r.config.sampler.grid_steps, r.config.n_samples, df, std::abs(df - kHalfLn2), 4.0 * df_se,
                mean_w - df, -4.0 * combined, seconds)};
}

Outcome ac6(const Run& r, double seconds)
{
    const auto& rows = r.result.report["results"]["rows"];
    if (rows.size() != 2)
        return {false, "convergence run did not produce two rows"};
    const double m10 = rows[0]["mean_exp_w"].get<double>(), s10 = rows[0]["stderr_exp_w"].get<double>();
    const double m100 = rows[1]["mean_exp_w"].get<double>(), s100 = rows[1]["stderr_exp_w"].get<double>();
    const double limit = 4.0 * std::hypot(s10, s100);
    return {std::abs(m10 - m100) <= limit && seconds < 120.0,
            fmt("mean_exp_w grid %d = %.6f, grid %d = %.6f, |diff| = %.3g (limit %.3g), %.1f s (limit 120 s)",
                rows[0]["grid_steps"].get<int>(), m10, rows[1]["grid_steps"].get<int>(), m100, std::abs(m10 - m100),
                limit, seconds)};
}

double endpoint_error(const Run& r)
{
    const auto& p = r.config.protocol;
    const ControlParam lam0 = p.value_at(0.0), lamT = p.value_at(p.duration());
    double worst = 0.0;
    for (const auto& s : r.result.samples) {
        const double gap = r.config.model.energy(s.final_state, lamT) - r.config.model.energy(s.final_state, lam0);
        worst = std::max(worst, std::abs((s.w - s.w0) - gap));
    }
    return worst;
}

Outcome ac7(const std::vector<oracle::RandomInstance>& instances, const Run& two, const Run& harmonic)
{
    double worst = 0.0;
    for (const auto& inst : instances)
        for (unsigned sub : {1u, 3u})
            worst = std::max(worst, std::abs(oracle::exact_bk_average(inst.model, inst.protocol,
                                                                      FixedParamKernel::finite_metropolis(inst.proposal),
                                                                      sub) -
                                             1.0));
    auto z = [](const Run& r) { return std::abs(result(r, "mean_exp_w0") - 1.0) / result(r, "stderr_exp_w0"); };
    const double e2 = endpoint_error(two), eh = endpoint_error(harmonic);
    const bool samples_ok = two.result.samples.size() == two.config.n_samples &&
                            harmonic.result.samples.size() == harmonic.config.n_samples;
    const bool ok = worst <= 1e-12 && z(two) <= 4.0 && z(harmonic) <= 4.0 && e2 <= 1e-10 && eh <= 1e-10 && samples_ok;
    return {ok, fmt("exact max |E[exp(-W0)] - 1| = %.3g (limit 1e-12); MC |mean_exp_w0 - 1|/stderr = %.2f "
                    "(two-state), %.2f (harmonic), limit 4; endpoint identity max error %.3g, %.3g over %zu + %zu "
                    "samples (limit 1e-10)",
                    worst, z(two), z(harmonic), e2, eh, two.result.samples.size(), harmonic.result.samples.size())};
}

Outcome ac8(const std::vector<oracle::RandomInstance>& instances, const Run& mc, double seconds)
{
    Clock clock;
    double worst = 0.0;
    for (const auto& inst : instances) {
        const auto k = FixedParamKernel::finite_metropolis(inst.proposal);
        for (std::size_t s = 0; s < inst.model.n_states(); ++s) {
            const auto w = oracle::exact_weighted_observable(inst.model, inst.protocol, k, 1,
                                                             [s](std::size_t x) { return x == s ? 1.0 : 0.0; });
            worst = std::max(worst, std::abs(w.lhs - w.rhs));
        }
    }
    const double total = seconds + clock.seconds();
    const double lhs = result(mc, "lhs"), rhs = result(mc, "rhs"), se = result(mc, "standard_error");
    const bool ok = worst <= 1e-12 && std::abs(lhs - rhs) <= 4.0 * se && total < 10.0;
    return {ok, fmt("exact max |lhs - rhs| = %.3g over all states of 100 instances (limit 1e-12); MC indicator "
                    "lhs = %.6f, rhs = %.6f, |diff| = %.3g (limit %.3g); %.2f s (limit 10 s)",
                    worst, lhs, rhs, std::abs(lhs - rhs), 4.0 * se, total)};
}

Outcome ac9(const std::vector<std::filesystem::path>& reports)
{
    std::string failures;
    int replays = 0;
    for (const auto& path : reports) {
        const json stored = cli::load_json_file(path.string());
        for (std::size_t workers : {1u, 3u}) {
            const auto r = cli::replay(stored, workers);
            ++replays;
            if (r.exit_code != cli::kExitPass)
                failures += " " + path.filename().string() + "@" + std::to_string(workers) + ":" + r.divergent_field;
        }
    }
    return {failures.empty(), fmt("%d replays of %zu reports with 1 and 3 workers%s%s", replays, reports.size(),
                                  failures.empty() ? ", all bit-identical" : "; divergent:", failures.c_str())};
}

} // namespace

int main()
{
    std::filesystem::create_directories(kReportDir);
    int failed = 0;
    auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("AC%d %s %s: %s\n", id, o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
        std::fflush(stdout);
    };

    const auto instances = random_instances();
    report(1, "exact identity on random step instances", [&] { return ac1(instances); });
    report(2, "matrix method equals path enumeration", [&] { return ac2(instances); });
    report(3, "stationarity checkers and negative control", [&] { return ac3(instances); });

    const json two_state = load_config("two_state.json");
    const json harmonic = load_config("harmonic_stiffness.json");

    Clock c4;
    const Run two = run_config(two_state, "bk", "two_state_bk.json", true);
    const double t4 = c4.seconds();
    report(4, "Monte Carlo vs exact value on the two-state fixture", [&] { return ac4(two, t4); });

    Clock c5;
    const Run ramp = run_config(harmonic, "bk", "harmonic_bk.json", true);
    const double t5 = c5.seconds();
    report(5, "continuous stiffness ramp", [&] { return ac5(ramp, t5); });

    Clock c6;
    json conv = harmonic;
    conv["grids"] = {10, 100};
    const Run grids = run_config(conv, "convergence", "harmonic_convergence.json");
    const double t6 = c6.seconds();
    report(6, "grid unbiasedness", [&] { return ac6(grids, t6); });

    report(7, "Bochkov-Kuzovlev identity", [&] { return ac7(instances, two, ramp); });

    Clock c8;
    json corollary = two_state;
    corollary["observable"] = {{"kind", "indicator"}, {"state", 0}};
    const Run weighted = run_config(corollary, "corollary", "two_state_corollary.json");
    const double t8 = c8.seconds();
    report(8, "weighted observable identity", [&] { return ac8(instances, weighted, t8); });

    const Run exact = run_config(load_config("random_table.json"), "oracle", "table_oracle.json");
    report(9, "deterministic replay", [&] {
        return ac9({two.report, ramp.report, grids.report, weighted.report, exact.report});
    });

    std::printf("%d of 9 criteria failed\n", failed);
    return failed ? 1 : 0;
}
