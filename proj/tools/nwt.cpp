// Command-line front end for the experiment runner.

#include "nwt/experiment.hpp"
#include "nwt/parallel.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <string>

namespace {

using nwt::cli::json;

struct RunFlags
{
    std::string config;
    nwt::cli::Overrides overrides;
    std::uint64_t seed = 0;
    std::size_t n = 0;
    std::size_t grid = 0;
    std::string out;
    std::string work_csv;
    std::vector<std::size_t> grids;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool with_grids)
{
    cmd->add_option("config", f.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--n", f.n, "number of trajectories");
    cmd->add_option("--grid", f.grid, "grid steps of the step approximation");
    cmd->add_option("--out", f.out, "report path; the CSV summary goes next to it");
    cmd->add_option("--work-csv", f.work_csv, "per-trajectory work dump (estimate and bk modes)");
    cmd->add_flag("--allow-broken-kernel", f.overrides.allow_broken_kernel,
                  "run a kernel that does not conserve the canonical distribution");
    if (with_grids)
        cmd->add_option("--grids", f.grids, "grid sizes for the convergence study")->delimiter(',');
}

void collect(CLI::App* cmd, RunFlags& f)
{
    if (cmd->count("--seed"))
        f.overrides.seed = f.seed;
    if (cmd->count("--n"))
        f.overrides.n = f.n;
    if (cmd->count("--grid"))
        f.overrides.grid = f.grid;
    if (cmd->count("--out"))
        f.overrides.out = f.out;
    if (cmd->count("--work-csv"))
        f.overrides.work_csv = f.work_csv;
    if (cmd->get_option_no_throw("--grids") && cmd->count("--grids"))
        f.overrides.grids = f.grids;
}

std::ofstream open_output(const std::string& path)
{
    std::ofstream out(path);
    if (!out)
        throw nwt::cli::ConfigError("/outputs", "cannot write '" + path + "'");
    return out;
}

int run(const RunFlags& f, std::optional<std::string> mode)
{
    json doc = nwt::cli::load_json_file(f.config);
    nwt::cli::Overrides o = f.overrides;
    if (mode)
        o.mode = mode;
    nwt::cli::apply_overrides(doc, o);
    const nwt::cli::ExperimentConfig cfg = nwt::cli::parse_config(doc);
    nwt::cli::detail::require_kernel_allowed(cfg);

    // open every output first so an unwritable path fails before the run
    std::ofstream report = open_output(cfg.outputs.report);
    std::ofstream summary = open_output(cfg.outputs.summary_csv);
    std::ofstream work;
    if (!cfg.outputs.work_csv.empty())
        work = open_output(cfg.outputs.work_csv);

    const std::string digest = nwt::cli::config_digest(cfg.document);
    std::cerr << "mode " << cfg.mode << ", config digest " << digest << ", master seed " << cfg.sampler.master_seed
              << ", workers " << nwt::default_workers() << "\n";

    const auto result = nwt::cli::execute(cfg, 0, !cfg.outputs.work_csv.empty());
    report << result.report.dump(2) << "\n";
    summary << nwt::cli::summary_csv(result);
    if (work.is_open())
        work << nwt::cli::work_csv(result.samples);

    if (!result.table.empty())
        std::cout << result.table;
    std::cout << result.report["results"].dump(2) << "\n";
    for (const auto& w : result.report["warnings"])
        std::cerr << "warning: " << w.get<std::string>() << "\n";
    for (const auto& b : result.bands)
        std::cout << (b.pass ? "pass " : "FAIL ") << b.name << "\n";
    const auto failed = nwt::cli::failed_bands(result);
    for (const auto& name : failed)
        std::cerr << "acceptance band failed: " << name << "\n";
    std::cerr << "report written to " << cfg.outputs.report << "\n";
    return result.exit_code();
}

int replay(const std::string& path)
{
    const json report = nwt::cli::load_json_file(path);
    const auto r = nwt::cli::replay(report);
    if (r.exit_code == nwt::cli::kExitPass)
        std::cout << r.message << "\n";
    else
        std::cerr << "replay mismatch: first divergent field " << r.divergent_field << " (" << r.message << ")\n";
    return r.exit_code;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Monte Carlo and exact checks of nonequilibrium work identities"};
    app.require_subcommand(1);

    RunFlags run_flags, check_flags, oracle_flags, conv_flags;
    std::string report_path;
    auto* run_cmd = app.add_subcommand("run", "run the mode selected in the config");
    add_run_flags(run_cmd, run_flags, true);
    auto* check_cmd = app.add_subcommand("check-assumptions", "stationarity and unit-ratio residuals per lambda");
    add_run_flags(check_cmd, check_flags, false);
    auto* oracle_cmd = app.add_subcommand("oracle", "exact finite-state averages");
    add_run_flags(oracle_cmd, oracle_flags, false);
    auto* conv_cmd = app.add_subcommand("convergence", "estimates over several grid sizes");
    add_run_flags(conv_cmd, conv_flags, true);
    auto* replay_cmd = app.add_subcommand("replay", "rerun a report and compare results bit for bit");
    replay_cmd->add_option("report", report_path, "report JSON")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : nwt::cli::kExitConfigError;
    }

    try {
        if (*run_cmd) {
            collect(run_cmd, run_flags);
            return run(run_flags, std::nullopt);
        }
        if (*check_cmd) {
            collect(check_cmd, check_flags);
            return run(check_flags, "check-assumptions");
        }
        if (*oracle_cmd) {
            collect(oracle_cmd, oracle_flags);
            return run(oracle_flags, "oracle");
        }
        if (*conv_cmd) {
            collect(conv_cmd, conv_flags);
            return run(conv_flags, "convergence");
        }
        return replay(report_path);
    } catch (const nwt::KernelRefusedError& e) {
        std::cerr << "kernel refused: " << e.what() << "\n";
    } catch (const nwt::cli::ConfigError& e) {
        std::cerr << "config error at " << e.what() << "\n";
    } catch (const nwt::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const json::exception& e) {
        std::cerr << "malformed report or config: " << e.what() << "\n";
    }
    return nwt::cli::kExitConfigError;
}
