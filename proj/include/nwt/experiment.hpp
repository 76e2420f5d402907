#pragma once

#include "nwt/catalog.hpp"
#include "nwt/error.hpp"
#include "nwt/estimator.hpp"
#include "nwt/hamiltonian.hpp"
#include "nwt/kernel.hpp"
#include "nwt/oracle.hpp"
#include "nwt/protocol.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

/// Config-driven experiment runner: JSON config in, JSON report and CSV
/// summary out.
namespace nwt::cli {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

inline constexpr int kExitPass = 0;
inline constexpr int kExitBandFail = 1;
inline constexpr int kExitConfigError = 2;

/// Invalid config; `field` is a JSON pointer into the document, or
/// "line L, column C" for syntax errors.
class ConfigError : public ConfigurationError
{
public:
    ConfigError(std::string field, const std::string& what)
        : ConfigurationError(field + ": " + what), field_(std::move(field))
    {
    }
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

struct ObservableSpec
{
    std::string kind; ///< indicator | coordinate | constant
    std::size_t index = 0;
    double value = 0.0;
    double clip = 0.0;
    Observable fn;
    double bound = 1.0;
};

struct OutputPaths
{
    std::string report;
    std::string summary_csv;
    std::string work_csv; ///< empty: no per-trajectory dump
};

struct ExperimentConfig
{
    json document; ///< effective config, overrides applied
    std::string mode;
    HamiltonianModel model;
    Protocol protocol;
    SamplerConfig sampler;
    std::size_t n_samples;
    bool allow_broken_kernel;
    std::optional<ObservableSpec> observable;
    std::vector<std::size_t> grids;
    unsigned oracle_substeps;
    double identity_tolerance;
    double path_limit;
    OutputPaths outputs;
};

/// Command-line overrides of config fields.
struct Overrides
{
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n;
    std::optional<std::size_t> grid;
    std::optional<std::string> out;
    std::optional<std::string> mode;
    std::optional<std::string> work_csv;
    std::optional<std::vector<std::size_t>> grids;
    bool allow_broken_kernel = false;
};

namespace detail {

inline std::string child(const std::string& path, const std::string& key) { return path + "/" + key; }
inline std::string child(const std::string& path, std::size_t i) { return path + "/" + std::to_string(i); }

inline const json* find(const json& obj, const std::string& key)
{
    const auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

inline const json& require(const json& obj, const std::string& key, const std::string& path)
{
    if (!obj.is_object())
        throw ConfigError(path, "expected an object");
    const json* v = find(obj, key);
    if (!v)
        throw ConfigError(child(path, key), "required field is missing");
    return *v;
}

inline double as_number(const json& j, const std::string& path)
{
    if (!j.is_number())
        throw ConfigError(path, "expected a number, got " + std::string(j.type_name()));
    const double v = j.get<double>();
    if (!std::isfinite(v))
        throw ConfigError(path, "expected a finite number");
    return v;
}

inline double as_positive(const json& j, const std::string& path)
{
    const double v = as_number(j, path);
    if (!(v > 0.0))
        throw ConfigError(path, "must be positive, got " + j.dump());
    return v;
}

inline std::uint64_t as_count(const json& j, const std::string& path)
{
    if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0))
        throw ConfigError(path, "expected a non-negative integer, got " + j.dump());
    return j.get<std::uint64_t>();
}

inline std::string as_string(const json& j, const std::string& path)
{
    if (!j.is_string())
        throw ConfigError(path, "expected a string, got " + std::string(j.type_name()));
    return j.get<std::string>();
}

inline bool as_bool(const json& j, const std::string& path)
{
    if (!j.is_boolean())
        throw ConfigError(path, "expected true or false");
    return j.get<bool>();
}

inline std::vector<double> as_numbers(const json& j, const std::string& path)
{
    if (!j.is_array())
        throw ConfigError(path, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i)
        out.push_back(as_number(j[i], child(path, i)));
    return out;
}

/// Runs f, prefixing any library ConfigurationError with the field path.
template <class F>
auto at_field(const std::string& path, F&& f) -> decltype(f())
{
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const ConfigurationError& e) {
        throw ConfigError(path, e.what());
    }
}

inline HamiltonianModel build_model(const json& j, const std::string& path)
{
    const std::string name = as_string(require(j, "name", path), child(path, "name"));
    const json* jb = find(j, "beta");
    const double beta = jb ? as_positive(*jb, child(path, "beta")) : 1.0;
    const json* jd = find(j, "dim");
    const std::size_t dim = jd ? static_cast<std::size_t>(as_count(*jd, child(path, "dim"))) : 1;
    std::optional<ControlBox> box;
    if (const json* jr = find(j, "lambda_range")) {
        const auto r = as_numbers(*jr, child(path, "lambda_range"));
        if (r.size() != 2 || !(r[0] < r[1]))
            throw ConfigError(child(path, "lambda_range"), "expected [lower, upper] with lower < upper");
        box = catalog::uniform_box(1, r[0], r[1]);
    }
    auto range = [&](std::size_t d) { return catalog::uniform_box(d, (*box).lower[0], (*box).upper[0]); };

    return at_field(path, [&]() -> HamiltonianModel {
        if (name == "harmonic_stiffness")
            return box ? catalog::harmonic_stiffness(beta, dim, range(1))
                       : catalog::harmonic_stiffness(beta, dim);
        if (name == "harmonic_center")
            return box ? catalog::harmonic_center(beta, dim, range(dim)) : catalog::harmonic_center(beta, dim);
        if (name == "two_state")
            return box ? catalog::two_state(beta, range(1)) : catalog::two_state(beta);
        if (name == "table") {
            const auto lambdas = as_numbers(require(j, "lambdas", path), child(path, "lambdas"));
            const json& je = require(j, "energies", path);
            if (!je.is_array())
                throw ConfigError(child(path, "energies"), "expected a matrix [state][lambda breakpoint]");
            std::vector<std::vector<double>> energies;
            for (std::size_t s = 0; s < je.size(); ++s)
                energies.push_back(as_numbers(je[s], child(child(path, "energies"), s)));
            return at_field(child(path, "energies"),
                            [&] { return catalog::table(beta, lambdas, energies); });
        }
        throw ConfigError(child(path, "name"), "unknown model '" + name +
                                                   "' (known: harmonic_stiffness, harmonic_center, two_state, table)");
    });
}

/// Rows [t, lambda_1 .. lambda_d].
inline std::pair<std::vector<double>, std::vector<ControlParam>> read_rows(const json& j, std::size_t dim,
                                                                            const std::string& path)
{
    if (!j.is_array() || j.empty())
        throw ConfigError(path, "expected a non-empty array of [t, lambda...] rows");
    std::vector<double> times;
    std::vector<ControlParam> values;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto row = as_numbers(j[i], child(path, i));
        if (row.size() != dim + 1)
            throw ConfigError(child(path, i), "expected " + std::to_string(dim + 1) + " entries [t, lambda...], got " +
                                                  std::to_string(row.size()));
        if (!times.empty() && !(row[0] > times.back()))
            throw ConfigError(child(child(path, i), 0), "times must be strictly increasing");
        times.push_back(row[0]);
        values.push_back(ControlParam(std::vector<double>(row.begin() + 1, row.end())));
    }
    if (times.front() != 0.0)
        throw ConfigError(child(child(path, 0), 0), "the first row must be at t = 0");
    return {std::move(times), std::move(values)};
}

inline Protocol build_protocol(const json& j, std::size_t dim, const std::string& path)
{
    if (!j.is_object())
        throw ConfigError(path, "expected an object {\"T\", \"continuous\", \"steps\"}");
    const double T = as_positive(require(j, "T", path), child(path, "T"));
    const ControlParam zero = ControlParam::zeros(dim);

    ContinuousBVProtocol cont = ContinuousBVProtocol::constant(T, zero);
    if (const json* jc = find(j, "continuous")) {
        const std::string p = child(path, "continuous");
        auto [t, v] = read_rows(*jc, dim, p);
        if (t.back() != T)
            throw ConfigError(child(child(p, t.size() - 1), 0), "continuous part must end at T");
        cont = at_field(p, [&] { return ContinuousBVProtocol(t, v); });
    }
    StepProtocol steps = StepProtocol::constant(T, zero);
    if (const json* js = find(j, "steps")) {
        const std::string p = child(path, "steps");
        auto [t, v] = read_rows(*js, dim, p);
        if (t.back() > T)
            throw ConfigError(child(child(p, t.size() - 1), 0), "step time beyond T");
        if (t.back() < T) {
            t.push_back(T);
            v.push_back(v.back());
        }
        if (t.size() < 2)
            throw ConfigError(p, "a step protocol needs at least one interval");
        steps = at_field(p, [&] { return StepProtocol(t, v); });
    }
    if (!find(j, "continuous") && !find(j, "steps"))
        throw ConfigError(path, "protocol needs a \"continuous\" or \"steps\" part");
    return at_field(path, [&] { return Protocol(cont, steps); });
}

inline FixedParamKernel build_kernel(const json& j, const std::string& path)
{
    const std::string kind = as_string(require(j, "kind", path), child(path, "kind"));
    const json* js = find(j, "substeps");
    const unsigned substeps = js ? static_cast<unsigned>(as_count(*js, child(path, "substeps"))) : 1u;
    std::optional<StochasticMatrix> proposal;
    if (const json* jp = find(j, "proposal")) {
        const std::string p = child(path, "proposal");
        if (!jp->is_array())
            throw ConfigError(p, "expected a square matrix");
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 0; i < jp->size(); ++i)
            rows.push_back(as_numbers((*jp)[i], child(p, i)));
        proposal = at_field(p, [&] { return StochasticMatrix::from_rows(rows); });
    }
    return at_field(path, [&] {
        if (kind == "metropolis")
            return FixedParamKernel::metropolis(as_positive(require(j, "sigma", path), child(path, "sigma")),
                                                substeps);
        if (kind == "finite_metropolis")
            return FixedParamKernel::finite_metropolis(proposal, substeps);
        if (kind == "identity")
            return FixedParamKernel::identity();
        if (kind == "broken") {
            const json* jsig = find(j, "sigma");
            return FixedParamKernel::broken(as_number(require(j, "bias", path), child(path, "bias")),
                                            jsig ? as_positive(*jsig, child(path, "sigma")) : 1.0, substeps,
                                            proposal);
        }
        throw ConfigError(child(path, "kind"),
                          "unknown kernel kind '" + kind + "' (known: metropolis, finite_metropolis, identity, broken)");
    });
}

inline InitialSampling build_initial(const json& j, const std::string& path)
{
    InitialSampling init;
    if (const json* jm = find(j, "mode")) {
        const std::string m = as_string(*jm, child(path, "mode"));
        if (m == "automatic")
            init.mode = InitialSampling::Mode::automatic;
        else if (m == "exact")
            init.mode = InitialSampling::Mode::exact;
        else if (m == "burn_in")
            init.mode = InitialSampling::Mode::burn_in;
        else
            throw ConfigError(child(path, "mode"), "expected automatic, exact or burn_in");
    }
    if (const json* jn = find(j, "burn_in_steps"))
        init.burn_in_steps = static_cast<std::size_t>(as_count(*jn, child(path, "burn_in_steps")));
    if (const json* jx = find(j, "start"))
        init.start = PhasePoint(as_numbers(*jx, child(path, "start")));
    return init;
}

inline ObservableSpec build_observable(const json& j, const HamiltonianModel& model, const std::string& path)
{
    ObservableSpec o;
    o.kind = as_string(require(j, "kind", path), child(path, "kind"));
    if (o.kind == "indicator") {
        if (!model.is_finite())
            throw ConfigError(child(path, "kind"), "indicator observables need a finite-state model");
        o.index = static_cast<std::size_t>(as_count(require(j, "state", path), child(path, "state")));
        if (o.index >= model.n_states())
            throw ConfigError(child(path, "state"), "state index out of range");
        const double s = static_cast<double>(o.index);
        o.fn = [s](const PhasePoint& x) { return x[0] == s ? 1.0 : 0.0; };
        o.bound = 1.0;
    } else if (o.kind == "coordinate") {
        o.index = static_cast<std::size_t>(as_count(require(j, "index", path), child(path, "index")));
        if (o.index >= model.phase_dim())
            throw ConfigError(child(path, "index"), "coordinate index out of range");
        o.clip = as_positive(require(j, "clip", path), child(path, "clip"));
        const std::size_t k = o.index;
        const double c = o.clip;
        o.fn = [k, c](const PhasePoint& x) { return std::clamp(x[k], -c, c); };
        o.bound = c;
    } else if (o.kind == "constant") {
        o.value = as_number(require(j, "value", path), child(path, "value"));
        const double v = o.value;
        o.fn = [v](const PhasePoint&) { return v; };
        o.bound = std::max(std::abs(v), 1e-300);
    } else {
        throw ConfigError(child(path, "kind"), "unknown observable '" + o.kind +
                                                   "' (known: indicator, coordinate, constant)");
    }
    return o;
}

inline ObservableSpec default_observable(const HamiltonianModel& model)
{
    json j = model.is_finite() ? json{{"kind", "indicator"}, {"state", 0}}
                               : json{{"kind", "coordinate"}, {"index", 0}, {"clip", 10.0}};
    return build_observable(j, model, "/observable");
}

inline std::string replace_extension(const std::string& path, const std::string& ext)
{
    const auto slash = path.find_last_of('/');
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
        return path + ext;
    return path.substr(0, dot) + ext;
}

} // namespace detail

inline const std::vector<std::string>& known_modes()
{
    static const std::vector<std::string> modes{"estimate",    "bk",
                                                "corollary",   "convergence",
                                                "check-assumptions", "oracle"};
    return modes;
}

/// Parses JSON text, reporting syntax errors by line and column.
inline json parse_json_text(const std::string& text)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t i = 0; i < end; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(col),
                          "JSON syntax error");
    }
}

inline json load_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError(path, "cannot open file");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_json_text(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.field(), "JSON syntax error");
    }
}

inline void apply_overrides(json& doc, const Overrides& o)
{
    if (!doc.is_object())
        throw ConfigError("", "config must be a JSON object");
    if (o.seed)
        doc["master_seed"] = *o.seed;
    if (o.n)
        doc["N"] = *o.n;
    if (o.grid)
        doc["grid_steps"] = *o.grid;
    if (o.mode)
        doc["mode"] = *o.mode;
    if (o.grids)
        doc["grids"] = *o.grids;
    if (o.allow_broken_kernel)
        doc["allow_broken_kernel"] = true;
    if (o.out) {
        doc["outputs"]["report"] = *o.out;
        doc["outputs"]["summary_csv"] = detail::replace_extension(*o.out, ".csv");
    }
    if (o.work_csv)
        doc["outputs"]["work_csv"] = *o.work_csv;
}

inline ExperimentConfig parse_config(const json& doc)
{
    using namespace detail;
    if (!doc.is_object())
        throw ConfigError("", "config must be a JSON object");
    if (const json* jv = find(doc, "schema_version")) {
        if (as_count(*jv, "/schema_version") != kSchemaVersion)
            throw ConfigError("/schema_version", "unsupported schema version " + jv->dump());
    }
    const json* jm = find(doc, "mode");
    const std::string mode = jm ? as_string(*jm, "/mode") : "estimate";
    if (std::find(known_modes().begin(), known_modes().end(), mode) == known_modes().end())
        throw ConfigError("/mode", "unknown mode '" + mode +
                                       "' (known: estimate, bk, corollary, convergence, check-assumptions, oracle)");

    HamiltonianModel model = build_model(require(doc, "model", ""), "/model");
    Protocol protocol = build_protocol(require(doc, "protocol", ""), model.control_dim(), "/protocol");
    if (!protocol.within(model.lambda_box()))
        throw ConfigError("/protocol", "protocol leaves the control range of model '" + model.name() + "'");

    SamplerConfig sampler;
    const json* jk = find(doc, "kernel");
    if (!jk)
        throw ConfigError("/kernel", "required field is missing");
    sampler.kernel = build_kernel(*jk, "/kernel");
    at_field("/kernel", [&] { sampler.kernel.check_compatible(model); });
    if (const json* jg = find(doc, "grid_steps")) {
        sampler.grid_steps = static_cast<std::size_t>(as_count(*jg, "/grid_steps"));
        if (sampler.grid_steps == 0)
            throw ConfigError("/grid_steps", "must be >= 1");
    }
    if (const json* js = find(doc, "master_seed"))
        sampler.master_seed = as_count(*js, "/master_seed");
    if (const json* ji = find(doc, "initial"))
        sampler.initial = build_initial(*ji, "/initial");

    const bool needs_samples = mode != "oracle" && mode != "check-assumptions";
    std::size_t n = 0;
    if (const json* jn = find(doc, "N")) {
        n = static_cast<std::size_t>(as_count(*jn, "/N"));
        if (n < 1)
            throw ConfigError("/N", "must be >= 1");
    } else if (needs_samples) {
        throw ConfigError("/N", "required field is missing");
    }

    const json* jab = find(doc, "allow_broken_kernel");
    const bool allow_broken = jab ? as_bool(*jab, "/allow_broken_kernel") : false;

    std::optional<ObservableSpec> observable;
    if (const json* jo = find(doc, "observable"))
        observable = build_observable(*jo, model, "/observable");
    else if (mode == "corollary")
        observable = default_observable(model);

    std::vector<std::size_t> grids{10, 100};
    if (const json* jg = find(doc, "grids")) {
        if (!jg->is_array() || jg->empty())
            throw ConfigError("/grids", "expected a non-empty array of grid sizes");
        grids.clear();
        for (std::size_t i = 0; i < jg->size(); ++i) {
            grids.push_back(static_cast<std::size_t>(as_count((*jg)[i], child("/grids", i))));
            if (grids.back() == 0)
                throw ConfigError(child("/grids", i), "must be >= 1");
        }
    }

    unsigned oracle_substeps = 1;
    double identity_tolerance = 1e-12;
    double path_limit = 1e7;
    if (const json* jo = find(doc, "oracle")) {
        if (const json* js = find(*jo, "substeps")) {
            oracle_substeps = static_cast<unsigned>(as_count(*js, "/oracle/substeps"));
            if (oracle_substeps == 0)
                throw ConfigError("/oracle/substeps", "must be >= 1");
        }
        if (const json* jt = find(*jo, "tolerance"))
            identity_tolerance = as_positive(*jt, "/oracle/tolerance");
        if (const json* jl = find(*jo, "path_limit"))
            path_limit = as_positive(*jl, "/oracle/path_limit");
    }
    if ((mode == "oracle" || mode == "check-assumptions") && !model.is_finite())
        throw ConfigError("/mode", "mode '" + mode + "' needs a finite-state model, '" + model.name() +
                                       "' is continuous");

    OutputPaths outputs{"report.json", "report.csv", ""};
    if (const json* jo = find(doc, "outputs")) {
        if (const json* jr = find(*jo, "report")) {
            outputs.report = as_string(*jr, "/outputs/report");
            outputs.summary_csv = replace_extension(outputs.report, ".csv");
        }
        if (const json* jc = find(*jo, "summary_csv"))
            outputs.summary_csv = as_string(*jc, "/outputs/summary_csv");
        if (const json* jw = find(*jo, "work_csv"))
            outputs.work_csv = as_string(*jw, "/outputs/work_csv");
    }

    json effective = doc;
    effective["master_seed"] = sampler.master_seed;
    return ExperimentConfig{effective,     mode,           std::move(model),   std::move(protocol),
                            sampler,       n,              allow_broken,       std::move(observable),
                            grids,         oracle_substeps, identity_tolerance, path_limit,
                            outputs};
}

/// The config without its output paths, which do not influence results.
inline json canonical_config(const json& doc)
{
    json c = doc;
    c.erase("outputs");
    return c;
}

/// FNV-1a 64 over the canonical dump (keys sorted), as 16 hex digits.
inline std::string config_digest(const json& doc)
{
    const std::string text = canonical_config(doc).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// One declared acceptance band: pass iff statistic <= limit (or >= for
/// lower bounds).
struct Band
{
    std::string name;
    double statistic = 0.0;
    double limit = 0.0;
    bool lower_bound = false;
    bool pass = false;
};

inline Band upper_band(std::string name, double statistic, double limit)
{
    return {std::move(name), statistic, limit, false, statistic <= limit};
}

inline Band lower_band(std::string name, double statistic, double limit)
{
    return {std::move(name), statistic, limit, true, statistic >= limit};
}

/// Summary CSV columns, in order. Cells that a mode does not produce are
/// left empty.
inline const std::vector<std::string>& summary_columns()
{
    static const std::vector<std::string> cols{
        "mode",       "grid_steps",     "n_samples", "master_seed",  "mean_exp_w",     "stderr_exp_w",
        "log_mean_exp_w", "delta_f_estimate", "delta_f_stderr", "delta_f_exact", "mean_w", "stderr_w",
        "mean_exp_w0", "stderr_exp_w0", "z_score",   "z_score_bk",   "lhs",            "rhs",
        "pass"};
    return cols;
}

struct RunResult
{
    json report;
    std::vector<Band> bands;
    std::vector<json> summary_rows; ///< objects keyed by summary_columns()
    std::vector<WorkSample> samples;
    std::string table; ///< human-readable table (check-assumptions)

    bool pass() const
    {
        return std::all_of(bands.begin(), bands.end(), [](const Band& b) { return b.pass; });
    }
    int exit_code() const { return pass() ? kExitPass : kExitBandFail; }
};

namespace detail {

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json report_fields(const EstimatorReport& r)
{
    return json{{"n_samples", r.n_samples},
                {"mean_exp_w", finite_or_null(r.mean_exp_w)},
                {"stderr_exp_w", finite_or_null(r.stderr_exp_w)},
                {"log_mean_exp_w", r.log_mean_exp_w},
                {"relative_stderr_exp_w", r.relative_stderr_exp_w},
                {"delta_f_estimate", r.delta_f_estimate},
                {"delta_f_stderr", r.delta_f_stderr},
                {"delta_f_exact", optional_number(r.delta_f_exact)},
                {"mean_w", r.mean_w},
                {"stderr_w", r.stderr_w},
                {"mean_exp_w0", finite_or_null(r.mean_exp_w0)},
                {"stderr_exp_w0", finite_or_null(r.stderr_exp_w0)},
                {"log_mean_exp_w0", r.log_mean_exp_w0},
                {"z_score", optional_number(r.z_score)},
                {"z_score_bk", r.z_score_bk},
                {"tail_weight", r.tail_weight}};
}

inline json summary_row(const std::string& mode, const ExperimentConfig& c, std::size_t grid, const json& fields)
{
    json row{{"mode", mode}, {"grid_steps", grid}, {"master_seed", c.sampler.master_seed}};
    for (const auto& col : summary_columns())
        if (!row.contains(col) && fields.contains(col))
            row[col] = fields[col];
    return row;
}

/// Combined standard error sqrt(a^2 + b^2).
inline double combined(double a, double b) { return std::hypot(a, b); }

inline double z_ratio(double diff, double se)
{
    if (se > 0.0)
        return diff / se;
    return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

inline void estimator_bands(const EstimatorReport& r, const std::string& suffix, bool include_bk,
                            std::vector<Band>& bands)
{
    if (r.z_score)
        bands.push_back(upper_band("jarzynski" + suffix, std::abs(*r.z_score), kBandSigmas));
    bands.push_back(lower_band("second_law" + suffix,
                               z_ratio(r.mean_w - r.delta_f_estimate, combined(r.stderr_w, r.delta_f_stderr)),
                               -kBandSigmas));
    if (include_bk)
        bands.push_back(upper_band("bochkov_kuzovlev" + suffix, std::abs(r.z_score_bk), kBandSigmas));
}

inline EstimatorOptions options_for(const ExperimentConfig& c, std::size_t workers, bool keep)
{
    EstimatorOptions opt;
    opt.allow_broken_kernel = c.allow_broken_kernel;
    opt.workers = workers;
    opt.keep_samples = keep;
    return opt;
}

inline void require_kernel_allowed(const ExperimentConfig& c)
{
    if (c.mode == "check-assumptions")
        return;
    if (!c.sampler.kernel.conserves_canonical() && !c.allow_broken_kernel)
        throw KernelRefusedError("kernel '" + c.sampler.kernel.name() +
                                 "' does not conserve the canonical distribution; refusing to run mode '" + c.mode +
                                 "' (pass --allow-broken-kernel to run it as a negative control)");
}

/// Largest |W - W0 - (H(x_T, lambda(T)) - H(x_T, lambda(0)))| over the samples.
inline double endpoint_identity_error(const std::vector<WorkSample>& samples, const ExperimentConfig& c)
{
    const ControlParam lam0 = c.protocol.value_at(0.0);
    const ControlParam lamT = c.protocol.value_at(c.protocol.duration());
    double worst = 0.0;
    for (const auto& s : samples) {
        const double boundary = c.model.energy(s.final_state, lamT) - c.model.energy(s.final_state, lam0);
        worst = std::max(worst, std::abs(s.w - s.w0 - boundary));
    }
    return worst;
}

inline std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void run_estimate(const ExperimentConfig& c, std::size_t workers, bool keep, RunResult& out)
{
    const bool bk = c.mode == "bk";
    EstimatorReport r = jarzynski_estimate(c.model, c.protocol, c.sampler, c.n_samples,
                                           options_for(c, workers, keep || bk));
    json fields = report_fields(r);
    fields["grid_steps"] = c.sampler.grid_steps;
    estimator_bands(r, "", bk, out.bands);
    if (bk) {
        const double err = endpoint_identity_error(r.samples, c);
        fields["endpoint_identity_error"] = err;
        out.bands.push_back(upper_band("endpoint_identity", err, 1e-10));
    }
    out.report["results"] = fields;
    out.report["warnings"] = r.warnings;
    out.summary_rows.push_back(summary_row(c.mode, c, c.sampler.grid_steps, fields));
    if (keep)
        out.samples = std::move(r.samples);
}

inline void run_corollary(const ExperimentConfig& c, std::size_t workers, RunResult& out)
{
    const ObservableSpec& o = *c.observable;
    const auto e = weighted_observable_estimate(c.model, c.protocol, c.sampler, c.n_samples, o.fn, o.bound,
                                                options_for(c, workers, false));
    json fields{{"n_samples", c.n_samples},     {"grid_steps", c.sampler.grid_steps},
                {"observable", o.kind},         {"lhs", e.lhs},
                {"rhs", e.rhs},                 {"standard_error", e.standard_error},
                {"expectation_T", e.expectation_T}, {"mean_exp_w", e.mean_exp_w}};
    out.bands.push_back(upper_band("corollary", std::abs(z_ratio(e.lhs - e.rhs, e.standard_error)), kBandSigmas));
    out.report["results"] = fields;
    out.summary_rows.push_back(summary_row(c.mode, c, c.sampler.grid_steps, fields));
}

inline void run_convergence(const ExperimentConfig& c, std::size_t workers, RunResult& out)
{
    json rows = json::array();
    std::vector<EstimatorReport> reports;
    for (std::size_t g : c.grids) {
        SamplerConfig s = c.sampler;
        s.grid_steps = g;
        reports.push_back(jarzynski_estimate(c.model, c.protocol, s, c.n_samples, options_for(c, workers, false)));
        json fields = report_fields(reports.back());
        fields["grid_steps"] = g;
        rows.push_back(fields);
        estimator_bands(reports.back(), "@" + std::to_string(g), false, out.bands);
        out.summary_rows.push_back(summary_row(c.mode, c, g, fields));
    }
    for (std::size_t i = 0; i + 1 < reports.size(); ++i) {
        const auto& a = reports[i];
        const auto& b = reports[i + 1];
        // compared in log space so the band also works when the means overflow
        const double d = std::expm1(b.log_mean_exp_w - a.log_mean_exp_w);
        const double se = combined(a.relative_stderr_exp_w, b.relative_stderr_exp_w);
        out.bands.push_back(upper_band("grid_agreement@" + std::to_string(c.grids[i]) + "," +
                                           std::to_string(c.grids[i + 1]),
                                       std::abs(z_ratio(d, se)), kBandSigmas));
    }
    out.report["results"] = json{{"rows", rows}};
}

inline void run_check_assumptions(const ExperimentConfig& c, RunResult& out)
{
    const oracle::FiniteStateModel fm(c.model);
    const StepProtocol sp = step_approximation(c.protocol, c.sampler.grid_steps);
    std::vector<ControlParam> lambdas;
    for (const auto& v : sp.values())
        if (std::find(lambdas.begin(), lambdas.end(), v) == lambdas.end())
            lambdas.push_back(v);
    json rows = json::array();
    double worst = 0.0;
    std::ostringstream table;
    table << "lambda                    stationarity   unit_ratio     status\n";
    for (const auto& lam : lambdas) {
        const StochasticMatrix P = c.sampler.kernel.matrix(c.model, lam);
        const double st = oracle::check_stationarity(P, fm, lam);
        const double ur = oracle::check_unit_ratio(P, fm, lam);
        const bool ok = st <= c.identity_tolerance && ur <= c.identity_tolerance;
        worst = std::max({worst, st, ur});
        rows.push_back(json{{"lambda", lam.values()}, {"stationarity", st}, {"unit_ratio", ur}, {"pass", ok}});
        char line[160];
        std::snprintf(line, sizeof line, "%-25s %-14.3e %-14.3e %s\n", format_vector(lam.view()).c_str(), st, ur,
                      ok ? "pass" : "FAIL");
        table << line;
    }
    out.table = table.str();
    out.bands.push_back(upper_band("assumption_residuals", worst, c.identity_tolerance));
    out.report["results"] = json{{"kernel", c.sampler.kernel.name()}, {"rows", rows}, {"max_residual", worst}};
    out.summary_rows.push_back(summary_row(c.mode, c, c.sampler.grid_steps, json::object()));
}

inline void run_oracle(const ExperimentConfig& c, RunResult& out)
{
    const oracle::FiniteStateModel fm(c.model);
    const StepProtocol sp = step_approximation(c.protocol, c.sampler.grid_steps);
    const auto& k = c.sampler.kernel;
    const unsigned sub = c.oracle_substeps;
    const double exact = oracle::exact_exponential_work_average(fm, sp, k, sub);
    const double ratio = oracle::partition_ratio(fm, sp);
    const double bk = oracle::exact_bk_average(fm, sp, k, sub);
    const double beta = c.model.beta();
    json fields{{"mean_exp_w", exact},
                {"partition_ratio", ratio},
                {"mean_exp_w0", bk},
                {"delta_f_estimate", 0.0 - std::log(exact) / beta},
                {"delta_f_exact", 0.0 - std::log(ratio) / beta},
                {"grid_steps", c.sampler.grid_steps},
                {"segments", sp.segments()}};
    out.bands.push_back(upper_band("partition_ratio_identity", std::abs(exact - ratio), c.identity_tolerance));
    out.bands.push_back(upper_band("bochkov_kuzovlev_identity", std::abs(bk - 1.0), c.identity_tolerance));
    if (oracle::path_count(fm, sp, sub) <= c.path_limit) {
        const double brute = oracle::brute_force_path_enumeration(fm, sp, k, sub, c.path_limit);
        fields["path_enumeration"] = brute;
        out.bands.push_back(upper_band("path_enumeration_agreement", std::abs(brute - exact), c.identity_tolerance));
    } else {
        fields["path_enumeration"] = nullptr;
        out.report["warnings"].push_back("path enumeration skipped: above the path guard");
    }
    if (c.observable) {
        const ObservableSpec& o = *c.observable;
        const auto w = oracle::exact_weighted_observable(
            fm, sp, k, sub, [&](std::size_t s) { return o.fn(PhasePoint{static_cast<double>(s)}); });
        fields["lhs"] = w.lhs;
        fields["rhs"] = w.rhs;
        out.bands.push_back(upper_band("corollary_identity", std::abs(w.lhs - w.rhs), c.identity_tolerance));
    }
    out.report["results"] = fields;
    out.summary_rows.push_back(summary_row(c.mode, c, c.sampler.grid_steps, fields));
}

} // namespace detail

/// Executes the configured mode. `workers` = 0 selects default_workers();
/// the results never depend on it. With keep_samples the per-trajectory
/// works are kept for a CSV dump (estimate and bk modes).
inline RunResult execute(const ExperimentConfig& c, std::size_t workers = 0, bool keep_samples = false)
{
    RunResult out;
    out.report = json{{"schema_version", kSchemaVersion},
                      {"mode", c.mode},
                      {"config", c.document},
                      {"config_digest", config_digest(c.document)},
                      {"master_seed", c.sampler.master_seed},
                      {"warnings", json::array()}};
    detail::require_kernel_allowed(c);
    if (c.mode == "estimate" || c.mode == "bk")
        detail::run_estimate(c, workers, keep_samples, out);
    else if (c.mode == "corollary")
        detail::run_corollary(c, workers, out);
    else if (c.mode == "convergence")
        detail::run_convergence(c, workers, out);
    else if (c.mode == "check-assumptions")
        detail::run_check_assumptions(c, out);
    else if (c.mode == "oracle")
        detail::run_oracle(c, out);

    json bands = json::array();
    for (const auto& b : out.bands)
        bands.push_back(json{{"name", b.name},
                             {"statistic", detail::finite_or_null(b.statistic)},
                             {"limit", b.limit},
                             {"bound", b.lower_bound ? "lower" : "upper"},
                             {"pass", b.pass}});
    out.report["bands"] = bands;
    out.report["pass"] = out.pass();
    for (auto& row : out.summary_rows) {
        row["n_samples"] = c.mode == "oracle" || c.mode == "check-assumptions" ? json(nullptr) : json(c.n_samples);
        row["pass"] = out.pass();
    }
    return out;
}

inline std::string summary_csv(const RunResult& r)
{
    std::string out;
    const auto& cols = summary_columns();
    for (std::size_t i = 0; i < cols.size(); ++i)
        out += (i ? "," : "") + cols[i];
    out += "\n";
    for (const auto& row : r.summary_rows) {
        for (std::size_t i = 0; i < cols.size(); ++i) {
            if (i)
                out += ",";
            const auto it = row.find(cols[i]);
            if (it == row.end() || it->is_null())
                continue;
            if (it->is_boolean())
                out += it->get<bool>() ? "true" : "false";
            else if (it->is_number_float())
                out += detail::format_double(it->get<double>());
            else if (it->is_number())
                out += it->dump();
            else if (it->is_string())
                out += it->get<std::string>();
        }
        out += "\n";
    }
    return out;
}

/// Per-trajectory dump: index, W, W0, then the final state coordinates.
inline std::string work_csv(const std::vector<WorkSample>& samples)
{
    std::string out = "index,w,w0";
    const std::size_t dim = samples.empty() ? 0 : samples.front().final_state.size();
    for (std::size_t k = 0; k < dim; ++k)
        out += ",x_T" + std::to_string(k);
    out += "\n";
    for (const auto& s : samples) {
        out += std::to_string(s.trajectory_index) + "," + detail::format_double(s.w) + "," +
               detail::format_double(s.w0);
        for (double x : s.final_state)
            out += "," + detail::format_double(x);
        out += "\n";
    }
    return out;
}

/// Names of the failed bands, with their statistics.
inline std::vector<std::string> failed_bands(const RunResult& r)
{
    std::vector<std::string> out;
    for (const auto& b : r.bands)
        if (!b.pass)
            out.push_back(b.name + " (statistic " + detail::format_double(b.statistic) +
                          (b.lower_bound ? ", lower limit " : ", limit ") + detail::format_double(b.limit) + ")");
    return out;
}

/// First path at which a and b differ, or empty when they are identical.
/// Numbers are compared exactly.
inline std::string first_difference(const json& a, const json& b, const std::string& path = "")
{
    if (a.type() != b.type()) {
        if (a.is_number() && b.is_number() && a.get<double>() == b.get<double>())
            return {};
        return path.empty() ? "/" : path;
    }
    if (a.is_object()) {
        for (auto it = a.begin(); it != a.end(); ++it) {
            const auto jt = b.find(it.key());
            if (jt == b.end())
                return path + "/" + it.key();
            auto d = first_difference(*it, *jt, path + "/" + it.key());
            if (!d.empty())
                return d;
        }
        for (auto it = b.begin(); it != b.end(); ++it)
            if (!a.contains(it.key()))
                return path + "/" + it.key();
        return {};
    }
    if (a.is_array()) {
        for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
            auto d = first_difference(a[i], b[i], path + "/" + std::to_string(i));
            if (!d.empty())
                return d;
        }
        if (a.size() != b.size())
            return path + "/" + std::to_string(std::min(a.size(), b.size()));
        return {};
    }
    return a == b ? std::string{} : (path.empty() ? "/" : path);
}

struct ReplayResult
{
    int exit_code = kExitPass;
    std::string divergent_field; ///< empty on success
    std::string message;
};

/// Reruns the experiment recorded in `report` and compares results bit for
/// bit. The config digest is checked first, so an edited seed or config is
/// reported as "config_digest".
inline ReplayResult replay(const json& report, std::size_t workers = 0)
{
    for (const char* key : {"schema_version", "config", "config_digest", "master_seed", "results"})
        if (!report.contains(key))
            throw ConfigError(std::string("/") + key, "report field is missing");
    if (report["schema_version"] != kSchemaVersion)
        throw ConfigError("/schema_version", "unsupported report schema " + report["schema_version"].dump());
    json config = report["config"];
    config["master_seed"] = report["master_seed"];
    const std::string digest = config_digest(config);
    if (report["config_digest"] != digest)
        return {kExitBandFail, "config_digest",
                "config digest " + digest + " does not match the recorded " + report["config_digest"].dump()};

    const ExperimentConfig c = parse_config(config);
    const RunResult fresh = execute(c, workers);
    // compare as they would be re-read from disk
    const json again = json::parse(fresh.report.dump());
    for (const char* key : {"results", "bands", "pass"}) {
        const auto d = first_difference(report.value(key, json()), again.value(key, json()), std::string("/") + key);
        if (!d.empty())
            return {kExitBandFail, d, "replay diverges at " + d};
    }
    return {kExitPass, "", "replay is bit-identical"};
}

} // namespace nwt::cli
