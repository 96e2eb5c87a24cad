#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "glesens/csv.hpp"
#include "glesens/dynamics.hpp"
#include "glesens/error.hpp"
#include "glesens/estimators.hpp"
#include "glesens/kernels.hpp"
#include "glesens/noise.hpp"
#include "glesens/observables.hpp"
#include "glesens/oracles.hpp"
#include "glesens/registry_data.hpp"
#include "json.hpp"

namespace glesens {

// ---------------------------------------------------------------------------
// Config text
//
//   # comment            ; comment
//   [section]
//   key = value          lists are comma separated
//
// Keys are unique per section. Every key must be consumed by the experiment
// kind, so a misspelt key is an error rather than a silent default.

class Config {
public:
    static Config parse(std::string_view text) {
        Config cfg;
        std::string section;
        std::size_t lineno = 0;
        std::size_t start = 0;
        while (start <= text.size()) {
            const auto end = text.find('\n', start);
            std::string line(text.substr(start, end == std::string_view::npos ? text.size() - start : end - start));
            start = end == std::string_view::npos ? text.size() + 1 : end + 1;
            ++lineno;
            const auto hash = line.find_first_of("#;");
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']' || line.size() < 3)
                    throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
                section = trim(line.substr(1, line.size() - 2));
                cfg.sections_[section];
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
            if (section.empty())
                throw ConfigError("line " + std::to_string(lineno) + ": key outside of any [section]");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
            auto& entries = cfg.sections_[section];
            if (entries.count(key))
                throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + section + "." + key + "'");
            entries[key] = Entry{value, lineno, false};
        }
        if (cfg.sections_.empty()) throw ConfigError("config is empty");
        return cfg;
    }

    bool has(const std::string& sec, const std::string& key) const { return find(sec, key) != nullptr; }

    std::string str(const std::string& sec, const std::string& key) const { return require(sec, key).value; }
    std::string str(const std::string& sec, const std::string& key, const std::string& def) const {
        const auto* e = find(sec, key);
        return e ? e->value : def;
    }

    double number(const std::string& sec, const std::string& key) const {
        const auto& e = require(sec, key);
        return to_number(sec, key, e, e.value);
    }
    double number(const std::string& sec, const std::string& key, double def) const {
        return has(sec, key) ? number(sec, key) : def;
    }

    std::uint64_t integer(const std::string& sec, const std::string& key) const {
        const auto& e = require(sec, key);
        return to_integer(sec, key, e, e.value);
    }
    std::uint64_t integer(const std::string& sec, const std::string& key, std::uint64_t def) const {
        return has(sec, key) ? integer(sec, key) : def;
    }

    bool flag(const std::string& sec, const std::string& key, bool def) const {
        const auto* e = find(sec, key);
        if (!e) return def;
        if (e->value == "true" || e->value == "yes" || e->value == "1") return true;
        if (e->value == "false" || e->value == "no" || e->value == "0") return false;
        fail(sec, key, *e, "expected true or false");
    }

    std::vector<std::string> list(const std::string& sec, const std::string& key) const {
        const auto& e = require(sec, key);
        std::vector<std::string> out;
        for (auto& item : csv::split(e.value)) {
            item = trim(item);
            if (item.empty()) fail(sec, key, e, "empty list item");
            out.push_back(item);
        }
        return out;
    }
    std::vector<double> numbers(const std::string& sec, const std::string& key) const {
        const auto& e = require(sec, key);
        std::vector<double> out;
        for (const auto& item : list(sec, key)) out.push_back(to_number(sec, key, e, item));
        return out;
    }
    std::vector<std::uint64_t> integers(const std::string& sec, const std::string& key) const {
        const auto& e = require(sec, key);
        std::vector<std::uint64_t> out;
        for (const auto& item : list(sec, key)) out.push_back(to_integer(sec, key, e, item));
        return out;
    }

    /// Throws ConfigError(key, line) with the given message.
    [[noreturn]] void reject(const std::string& sec, const std::string& key, const std::string& message) const {
        if (const auto* e = find(sec, key)) fail(sec, key, *e, message);
        throw ConfigError("missing key '" + sec + "." + key + "': " + message);
    }

    /// Errors on the first key that nothing read.
    void reject_unused() const {
        const Entry* first = nullptr;
        std::string where;
        for (const auto& [sec, entries] : sections_) {
            for (const auto& [key, e] : entries) {
                if (!e.used && (!first || e.line < first->line)) {
                    first = &e;
                    where = sec + "." + key;
                }
            }
        }
        if (first) throw ConfigError("line " + std::to_string(first->line) + ": unknown key '" + where + "'");
    }

private:
    struct Entry {
        std::string value;
        std::size_t line = 0;
        mutable bool used = false;
    };

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    const Entry* find(const std::string& sec, const std::string& key) const {
        const auto s = sections_.find(sec);
        if (s == sections_.end()) return nullptr;
        const auto k = s->second.find(key);
        if (k == s->second.end()) return nullptr;
        k->second.used = true;
        return &k->second;
    }
    const Entry& require(const std::string& sec, const std::string& key) const {
        const auto* e = find(sec, key);
        if (!e) throw ConfigError("missing required key '" + sec + "." + key + "'");
        return *e;
    }
    [[noreturn]] static void fail(const std::string& sec, const std::string& key, const Entry& e,
                                  const std::string& message) {
        throw ConfigError("line " + std::to_string(e.line) + ": key '" + sec + "." + key + "': " + message);
    }
    static double to_number(const std::string& sec, const std::string& key, const Entry& e, const std::string& s) {
        try {
            const double v = csv::parse_double(s);
            if (!std::isfinite(v)) fail(sec, key, e, "value must be finite");
            return v;
        } catch (const InvalidArgument&) {
            fail(sec, key, e, "expected a number, got '" + s + "'");
        }
    }
    static std::uint64_t to_integer(const std::string& sec, const std::string& key, const Entry& e,
                                    const std::string& s) {
        std::uint64_t v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
            fail(sec, key, e, "expected a non-negative integer, got '" + s + "'");
        return v;
    }

    std::map<std::string, std::map<std::string, Entry>> sections_;
};

// ---------------------------------------------------------------------------
// Experiments

enum class ExperimentKind { prony_fit, simulate, sensitivity, var_sweep, mode_sens, oracle_check };

inline std::string kind_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::prony_fit: return "prony-fit";
        case ExperimentKind::simulate: return "simulate";
        case ExperimentKind::sensitivity: return "sensitivity";
        case ExperimentKind::var_sweep: return "var-sweep";
        case ExperimentKind::mode_sens: return "mode-sens";
        case ExperimentKind::oracle_check: return "oracle-check";
    }
    return "?";
}

/// A validated experiment. GLE kernels given as a power law are fitted when
/// the experiment runs; `mode_counts` lists the fits to use.
struct Experiment {
    std::string name;
    std::string description;
    ExperimentKind kind = ExperimentKind::simulate;

    Model model = OuParams{};
    std::optional<PowerLawKernel> kernel;
    double fit_length = 0.0;
    std::vector<std::size_t> mode_counts;
    FitOptions fit{};

    NoisePlan plan{};
    bool compare_independent = false;
    SimulationSettings settings{};
    std::size_t samples_independent = 0;

    std::optional<ParameterId> parameter;
    Stencil stencil = Stencil::central;
    double epsilon = 0.0;
    std::vector<double> epsilons;
    SweepOptions sweep{};
    double t_eval = 0.0;
    std::vector<Observable> observables;
    bool cross_terms = false;
    double horizon = 0.0;
    std::size_t bootstrap = 200;
    bool write_ensemble = false;

    double check_sigmas = 3.0;

    std::string prefix;
    std::string output_dir;
};

namespace detail {

inline ExperimentKind parse_kind(const Config& c) {
    const auto k = c.str("experiment", "kind");
    for (auto kind : {ExperimentKind::prony_fit, ExperimentKind::simulate, ExperimentKind::sensitivity,
                      ExperimentKind::var_sweep, ExperimentKind::mode_sens, ExperimentKind::oracle_check}) {
        if (kind_name(kind) == k) return kind;
    }
    c.reject("experiment", "kind", "unknown experiment kind '" + k + "'");
}

inline Coupling parse_coupling(const Config& c) {
    const auto name = c.str("noise", "coupling", "common");
    if (name == "common") return CommonPath{};
    if (name == "independent") return Independent{};
    if (name == "eta") return Eta{c.number("noise", "eta")};
    c.reject("noise", "coupling", "expected common, independent or eta");
}

inline std::vector<PronyMode> explicit_modes(const Config& c) {
    const auto cs = c.numbers("model", "c");
    const auto taus = c.numbers("model", "tau");
    if (cs.size() != taus.size()) c.reject("model", "tau", "needs one entry per amplitude in 'c'");
    std::vector<PronyMode> modes;
    for (std::size_t k = 0; k < cs.size(); ++k) modes.push_back({cs[k], taus[k]});
    return modes;
}

inline void parse_model(const Config& c, Experiment& e) {
    const auto type = c.str("model", "type");
    if (type == "ou") {
        OuParams p;
        p.theta = c.number("model", "theta");
        p.mu = c.number("model", "mu", 0.0);
        p.sigma = c.number("model", "sigma");
        p.x0 = c.number("model", "x0", 0.0);
        e.model = p;
    } else if (type == "langevin") {
        LangevinParams p;
        p.omega = c.number("model", "omega");
        p.beta = c.number("model", "beta");
        p.kT = c.number("model", "kT", 0.5);
        p.x0 = c.number("model", "x0", 0.0);
        p.v0 = c.number("model", "v0", 0.0);
        e.model = p;
    } else if (type == "gle") {
        GleParams p;
        p.mass = c.number("model", "mass", 1.0);
        p.kT = c.number("model", "kT", 1.0);
        p.x0 = c.number("model", "x0", 1.0);
        p.v0 = c.number("model", "v0", 1.0);
        const auto pot = c.str("model", "potential", "harmonic");
        if (pot == "harmonic") p.potential = Harmonic{c.number("model", "omega", 1.0)};
        else if (pot == "double-well") p.potential = DoubleWell{};
        else c.reject("model", "potential", "expected harmonic or double-well");
        const auto kernel = c.str("model", "kernel", "prony");
        if (kernel == "power-law") {
            PowerLawKernel k{c.number("model", "gamma_lambda"), c.number("model", "lambda")};
            try {
                k.validate();
            } catch (const InvalidArgument& err) {
                c.reject("model", "lambda", err.what());
            }
            e.kernel = k;
            for (auto n : c.integers("model", "n_modes")) {
                if (n == 0) c.reject("model", "n_modes", "mode counts must be >= 1");
                e.mode_counts.push_back(n);
            }
            e.fit_length = c.number("model", "fit_length", 0.0);
            p.modes.assign(e.mode_counts.front(), PronyMode{1.0, 1.0});
        } else if (kernel == "prony") {
            p.modes = explicit_modes(c);
        } else {
            c.reject("model", "kernel", "expected power-law or prony");
        }
        e.model = p;
    } else {
        c.reject("model", "type", "expected ou, langevin or gle");
    }
    try {
        std::visit([](const auto& p) { p.validate(); }, e.model);
    } catch (const InvalidArgument& err) {
        throw ConfigError(std::string("[model]: ") + err.what());
    }
}

inline std::vector<Observable> parse_observables(const Config& c) {
    std::vector<Observable> out;
    for (const auto& s : c.list("numerics", "observables")) {
        try {
            out.push_back(parse_observable(s));
        } catch (const InvalidArgument& err) {
            c.reject("numerics", "observables", err.what());
        }
    }
    return out;
}

inline std::vector<std::string> model_components(const Experiment& e) {
    if (std::holds_alternative<OuParams>(e.model)) return {"x"};
    if (std::holds_alternative<LangevinParams>(e.model)) return {"x", "v"};
    std::vector<std::string> names{"x", "v"};
    std::size_t n = std::get<GleParams>(e.model).modes.size();
    for (auto m : e.mode_counts) n = std::max<std::size_t>(n, m + (e.kind == ExperimentKind::mode_sens ? 1 : 0));
    for (std::size_t k = 1; k <= n; ++k) names.push_back("s" + std::to_string(k));
    return names;
}

inline void check_observables(const Config& c, const Experiment& e) {
    const auto comps = model_components(e);
    auto has = [&](const std::string& n) { return std::find(comps.begin(), comps.end(), n) != comps.end(); };
    for (const auto& obs : e.observables) {
        std::string need;
        if (const auto* s = std::get_if<StateValue>(&obs)) need = s->component;
        else if (const auto* a = std::get_if<TimeAverage>(&obs)) need = a->component;
        else if (std::holds_alternative<NormalizedVacf>(obs)) need = "v";
        else need = "x";
        if (!has(need)) c.reject("numerics", "observables", "model has no component '" + need + "'");
        if (std::holds_alternative<NormalizedVacf>(obs) && parameter_value(e.model, {ParameterId::Kind::v0}) == 0.0)
            c.reject("numerics", "observables", "vacf needs a nonzero definite v0");
        if (std::holds_alternative<NormalizedPacf>(obs) && parameter_value(e.model, {ParameterId::Kind::x0}) == 0.0)
            c.reject("numerics", "observables", "pacf needs a nonzero definite x0");
    }
}

}  // namespace detail

/// Parses and validates a config. Throws ConfigError with the offending key
/// and line; nothing is simulated or written.
inline Experiment parse_experiment(std::string_view text, const std::string& default_name = "experiment") {
    const Config c = Config::parse(text);
    Experiment e;
    e.kind = detail::parse_kind(c);
    e.name = c.str("experiment", "name", default_name);
    e.description = c.str("experiment", "description", "");
    detail::parse_model(c, e);
    const bool gle = std::holds_alternative<GleParams>(e.model);

    e.plan.master_seed = c.integer("noise", "seed", 1);
    e.plan.coupling = detail::parse_coupling(c);
    e.compare_independent = c.flag("noise", "compare_independent", false);
    try {
        e.plan.validate();
    } catch (const InvalidArgument& err) {
        c.reject("noise", "eta", err.what());
    }

    const bool needs_dynamics = e.kind != ExperimentKind::prony_fit;
    if (needs_dynamics) {
        const double T = c.number("numerics", "T");
        const double dt = c.number("numerics", "dt", gle ? 1e-2 : 1e-3);
        const auto stride = c.integer("numerics", "stride", 1);
        try {
            e.settings.grid = TimeGrid::from_horizon(T, dt, stride);
        } catch (const InvalidArgument& err) {
            c.reject("numerics", "T", err.what());
        }
        e.settings.n_samples = c.integer("numerics", "samples");
        if (e.settings.n_samples < 2) c.reject("numerics", "samples", "need at least two samples");
        e.samples_independent = c.integer("numerics", "samples_independent", e.settings.n_samples);
        if (e.samples_independent < 2) c.reject("numerics", "samples_independent", "need at least two samples");
        e.settings.parallel.threads = static_cast<unsigned>(c.integer("numerics", "threads", 1));
        if (e.settings.parallel.threads == 0) c.reject("numerics", "threads", "need at least one thread");
    } else {
        e.fit_length = c.number("numerics", "T");
        if (!(e.fit_length > 0.0)) c.reject("numerics", "T", "fit length must be > 0");
    }
    if (gle && e.kernel && e.fit_length == 0.0) e.fit_length = e.settings.grid.horizon();
    e.fit.n_points = c.integer("numerics", "fit_points", e.fit.n_points);

    auto require_kernel = [&](const char* why) {
        if (!gle || !e.kernel) c.reject("model", "kernel", std::string("kind needs a power-law GLE kernel: ") + why);
    };
    auto on_grid = [&](const char* key, double t) {
        const double r = t / (e.settings.grid.dt * static_cast<double>(e.settings.grid.stride));
        if (!(t > 0.0) || t > e.settings.grid.horizon() * (1.0 + 1e-12) || std::abs(r - std::round(r)) > 1e-6)
            c.reject("numerics", key, "time must be a stored grid point in (0, T]");
    };
    auto parse_parameter = [&] {
        try {
            e.parameter = ParameterId::parse(c.str("numerics", "parameter"));
            parameter_value(e.model, *e.parameter);
        } catch (const InvalidArgument& err) {
            c.reject("numerics", "parameter", err.what());
        }
        const auto st = c.str("numerics", "stencil", "central");
        if (st == "central") e.stencil = Stencil::central;
        else if (st == "forward") e.stencil = Stencil::forward;
        else c.reject("numerics", "stencil", "expected central or forward");
    };

    switch (e.kind) {
        case ExperimentKind::prony_fit:
            require_kernel("the fit target");
            break;
        case ExperimentKind::simulate:
            e.observables = detail::parse_observables(c);
            e.write_ensemble = c.flag("output", "write_ensemble", false);
            if (c.has("numerics", "parameter")) {
                parse_parameter();
                e.epsilon = c.number("numerics", "epsilon");
                if (!(e.epsilon > 0.0)) c.reject("numerics", "epsilon", "must be > 0");
            }
            break;
        case ExperimentKind::sensitivity:
            parse_parameter();
            e.epsilon = c.number("numerics", "epsilon");
            if (!(e.epsilon > 0.0)) c.reject("numerics", "epsilon", "must be > 0");
            e.observables = detail::parse_observables(c);
            break;
        case ExperimentKind::var_sweep:
            parse_parameter();
            e.epsilons = c.has("numerics", "epsilons") ? c.numbers("numerics", "epsilons")
                                                         : std::vector<double>{1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
            try {
                validate_sweep_epsilons(e.epsilons);
            } catch (const InvalidArgument& err) {
                c.reject("numerics", "epsilons", err.what());
            }
            e.sweep.reuse_seed = c.flag("noise", "reuse_seed", true);
            e.t_eval = c.number("numerics", "t_eval", e.settings.grid.horizon());
            on_grid("t_eval", e.t_eval);
            e.observables = detail::parse_observables(c);
            e.cross_terms = c.flag("numerics", "cross_terms", false);
            break;
        case ExperimentKind::mode_sens:
            require_kernel("mode counts are fitted");
            e.observables = detail::parse_observables(c);
            if (e.observables.size() != 1) c.reject("numerics", "observables", "mode-sens takes one observable");
            e.t_eval = c.number("numerics", "t_eval", std::min(10.0, e.settings.grid.horizon()));
            on_grid("t_eval", e.t_eval);
            e.horizon = c.number("numerics", "horizon", e.settings.grid.horizon() / 2.0);
            on_grid("horizon", e.horizon);
            e.bootstrap = c.integer("numerics", "bootstrap", 200);
            if (e.bootstrap < 2) c.reject("numerics", "bootstrap", "need at least two replicates");
            break;
        case ExperimentKind::oracle_check: {
            parse_parameter();
            e.epsilon = c.number("numerics", "epsilon");
            if (!(e.epsilon > 0.0)) c.reject("numerics", "epsilon", "must be > 0");
            e.observables = detail::parse_observables(c);
            if (e.observables.size() != 1) c.reject("numerics", "observables", "oracle-check takes one observable");
            e.check_sigmas = c.number("check", "sigmas", 3.0);
            e.bootstrap = c.integer("check", "bootstrap", 200);
            if (e.bootstrap < 2) c.reject("check", "bootstrap", "need at least two replicates");
            const auto& obs = e.observables.front();
            const bool ou = std::holds_alternative<OuParams>(e.model);
            const bool lang = std::holds_alternative<LangevinParams>(e.model);
            const auto* sv = std::get_if<StateValue>(&obs);
            const auto* ta = std::get_if<TimeAverage>(&obs);
            const bool supported = (ou && ((sv && sv->component == "x") || (ta && ta->component == "x")) &&
                                    (e.parameter->kind == ParameterId::Kind::theta ||
                                     e.parameter->kind == ParameterId::Kind::sigma)) ||
                                   (lang && sv && sv->component == "x" &&
                                    e.parameter->kind == ParameterId::Kind::beta);
            if (!supported)
                c.reject("numerics", "observables",
                         "no closed-form oracle; supported: ou theta/sigma with state:x or timeavg:x, "
                         "langevin beta with state:x");
            if (!shares_noise(e.plan.coupling)) c.reject("noise", "coupling", "oracles assume a shared path");
            break;
        }
    }
    if (e.kind != ExperimentKind::prony_fit && e.kind != ExperimentKind::simulate && e.observables.empty())
        c.reject("numerics", "observables", "need at least one observable");
    if (!e.observables.empty()) detail::check_observables(c, e);
    if (e.parameter && gle && e.kernel && e.parameter->index > e.mode_counts.front())
        c.reject("numerics", "parameter", "mode index exceeds the number of fitted modes");

    e.prefix = c.str("output", "prefix", e.name);
    if (e.prefix.empty() || e.prefix.find_first_of("/\\") != std::string::npos)
        c.reject("output", "prefix", "prefix must be a plain file name stem");
    e.output_dir = c.str("output", "directory", "");
    c.reject_unused();
    return e;
}

// ---------------------------------------------------------------------------
// Running

struct Artifact {
    std::string file;
    std::string content;
};

struct CheckLine {
    std::string name;
    double monte_carlo = 0.0;
    double std_error = 0.0;
    double oracle = 0.0;
    bool passed = false;
};

struct RunResult {
    std::vector<Artifact> artifacts;
    std::vector<CheckLine> checks;

    bool checks_passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const CheckLine& c) { return c.passed; });
    }
};

namespace detail {

inline std::string slug(const Observable& obs) {
    auto s = observable_name(obs);
    std::replace(s.begin(), s.end(), ':', '_');
    return s;
}

inline GleParams with_fitted_modes(const Experiment& e, std::size_t n_modes) {
    GleParams p = std::get<GleParams>(e.model);
    p.modes = fit_prony(*e.kernel, n_modes, e.fit_length, e.fit).series.modes();
    return p;
}

inline std::string fmt(double v) { return csv::format_double(v); }

}  // namespace detail

/// The model an experiment simulates. A power-law GLE carries placeholder
/// modes until this fits the first requested mode count.
inline Model resolved_model(const Experiment& e) {
    if (std::holds_alternative<GleParams>(e.model) && e.kernel)
        return detail::with_fitted_modes(e, e.mode_counts.front());
    return e.model;
}

namespace detail {

inline std::string series_csv(const TimeSeries& ts) {
    std::ostringstream os;
    write_series_csv(os, ts);
    return os.str();
}

inline std::string sens_csv(const SensitivityEstimate& est) {
    std::ostringstream os;
    os << "time,sens,stderr\n";
    for (std::size_t i = 0; i < est.times.size(); ++i)
        os << fmt(est.times[i]) << ',' << fmt(est.value[i]) << ',' << fmt(est.std_error[i]) << '\n';
    return os.str();
}

inline std::string ensemble_csv(const TrajectoryEnsemble& ens) {
    std::ostringstream os;
    write_ensemble_csv(os, ens);
    return os.str();
}

inline void run_prony_fit(const Experiment& e, RunResult& out) {
    std::ostringstream report;
    report << "n_modes,sup_relative_error,residual_norm,window_lo,window_hi\n";
    for (auto n : e.mode_counts) {
        const auto fit = fit_prony(*e.kernel, n, e.fit_length, e.fit);
        std::ostringstream os;
        write_prony_csv(os, fit.series);
        out.artifacts.push_back({e.prefix + "_N" + std::to_string(n) + ".csv", os.str()});
        report << n << ',' << fmt(fit.report.sup_relative_error) << ',' << fmt(fit.report.residual_norm) << ','
               << fmt(fit.report.window_lo) << ',' << fmt(fit.report.window_hi) << '\n';
    }
    out.artifacts.push_back({e.prefix + "_report.csv", report.str()});
}

inline void run_simulate(const Experiment& e, RunResult& out) {
    std::vector<std::pair<std::string, Model>> runs;
    if (std::holds_alternative<GleParams>(e.model) && e.kernel) {
        for (auto n : e.mode_counts) runs.emplace_back("_N" + std::to_string(n), with_fitted_modes(e, n));
    } else {
        runs.emplace_back("", e.model);
    }
    const bool single = runs.size() == 1;
    for (const auto& [tag, model] : runs) {
        const std::string stem = e.prefix + (single ? "" : tag);
        const auto ens = simulate(model, e.plan, SystemTag::nominal, e.settings);
        for (const auto& obs : e.observables)
            out.artifacts.push_back({stem + "_" + slug(obs) + ".csv", series_csv(summarize(evaluate(obs, ens)))});
        if (e.write_ensemble) out.artifacts.push_back({stem + "_ensemble.csv", ensemble_csv(ens)});
        if (e.parameter) {
            const double v = parameter_value(model, *e.parameter);
            const auto perturbed =
                simulate(with_parameter(model, *e.parameter, v + e.epsilon), e.plan, SystemTag::perturbed, e.settings);
            for (const auto& obs : e.observables)
                out.artifacts.push_back(
                    {stem + "_perturbed_" + slug(obs) + ".csv", series_csv(summarize(evaluate(obs, perturbed)))});
            if (e.write_ensemble) out.artifacts.push_back({stem + "_perturbed_ensemble.csv", ensemble_csv(perturbed)});
        }
    }
}

inline void run_sensitivity(const Experiment& e, RunResult& out) {
    const Model model = resolved_model(e);
    for (const auto& obs : e.observables) {
        const std::string stem = e.prefix + (e.observables.size() == 1 ? "" : "_" + slug(obs));
        const auto est = fd_sensitivity(model, *e.parameter, e.stencil, e.epsilon, obs, e.plan, e.settings);
        out.artifacts.push_back({stem + "_" + coupling_name(e.plan.coupling) + ".csv", sens_csv(est)});
        if (e.compare_independent) {
            NoisePlan ind = e.plan;
            ind.coupling = Independent{};
            SimulationSettings s = e.settings;
            s.n_samples = e.samples_independent;
            const auto est_ind = fd_sensitivity(model, *e.parameter, e.stencil, e.epsilon, obs, ind, s);
            out.artifacts.push_back({stem + "_independent.csv", sens_csv(est_ind)});
        }
    }
}

inline std::string sweep_csv(const VarianceSweep& coupled, const VarianceSweep* independent) {
    std::ostringstream os;
    os << "epsilon,var_coupled,var_independent\n";
    for (std::size_t k = 0; k < coupled.epsilons.size(); ++k) {
        os << fmt(coupled.epsilons[k]) << ',' << fmt(coupled.variances[k]) << ','
           << (independent ? fmt(independent->variances[k]) : std::string("nan")) << '\n';
    }
    return os.str();
}

inline void run_var_sweep(const Experiment& e, RunResult& out) {
    const Model model = resolved_model(e);
    const auto coupled = covariance_sweep(model, *e.parameter, e.stencil, e.epsilons, e.observables, e.plan,
                                          e.settings, e.t_eval, e.sweep);
    std::optional<CovarianceSweep> independent;
    if (e.compare_independent) {
        NoisePlan ind = e.plan;
        ind.coupling = Independent{};
        SimulationSettings s = e.settings;
        s.n_samples = e.samples_independent;
        independent = covariance_sweep(model, *e.parameter, e.stencil, e.epsilons, e.observables, ind, s, e.t_eval,
                                       e.sweep);
    }
    std::ostringstream slopes;
    slopes << "quantity,slope_coupled,slope_independent\n";
    auto emit = [&](std::size_t i, std::size_t j, const std::string& label) {
        const auto c = coupled.entry(i, j);
        const auto ind = independent ? std::optional<VarianceSweep>(independent->entry(i, j)) : std::nullopt;
        out.artifacts.push_back({e.prefix + "_" + label + ".csv", sweep_csv(c, ind ? &*ind : nullptr)});
        slopes << label << ',' << fmt(c.slope) << ',' << (ind ? fmt(ind->slope) : std::string("nan")) << '\n';
    };
    const std::size_t n = e.observables.size();
    for (std::size_t i = 0; i < n; ++i) emit(i, i, slug(e.observables[i]));
    if (e.cross_terms) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                emit(i, j, "cov_" + slug(e.observables[i]) + "_" + slug(e.observables[j]));
    }
    out.artifacts.push_back({e.prefix + "_slopes.csv", slopes.str()});
}

inline void run_mode_sens(const Experiment& e, RunResult& out) {
    std::ostringstream os;
    os << "n_modes,S_star,stderr,var_coupled,var_independent\n";
    const auto& obs = e.observables.front();
    const GleParams base = std::get<GleParams>(e.model);
    for (auto n1 : e.mode_counts) {
        const auto fewer = fit_prony(*e.kernel, n1, e.fit_length, e.fit).series;
        const auto more = fit_prony(*e.kernel, n1 + 1, e.fit_length, e.fit).series;
        const auto coupled =
            mode_count_sensitivity(base, fewer, more, obs, e.plan, e.settings, e.horizon, e.t_eval, e.bootstrap);
        NoisePlan ind = e.plan;
        ind.coupling = Independent{};
        SimulationSettings s = e.settings;
        s.n_samples = e.samples_independent;
        const auto independent = mode_count_sensitivity(base, fewer, more, obs, ind, s, e.horizon, e.t_eval, 0);
        os << n1 << ',' << fmt(coupled.s_star) << ',' << fmt(coupled.s_star_stderr) << ','
           << fmt(coupled.variance) << ',' << fmt(independent.variance) << '\n';
    }
    out.artifacts.push_back({e.prefix + ".csv", os.str()});
}

inline void run_oracle_check(const Experiment& e, RunResult& out) {
    const auto& obs = e.observables.front();
    const double theta = parameter_value(e.model, *e.parameter);
    const auto ens = simulate_stencil(e.model, *e.parameter, Stencil::central, e.epsilon, e.plan, e.settings);
    const auto plus = evaluate(obs, ens.plus);
    const auto minus = evaluate(obs, ens.minus);
    const double T = e.settings.grid.horizon();
    const auto a = plus.column(plus.index_of(T));
    const auto b = minus.column(minus.index_of(T));

    CheckLine line;
    line.name = "cov_" + slug(obs) + "_" + e.parameter->name();
    line.monte_carlo = stats::covariance(a, b);
    line.std_error = bootstrap_covariance_stderr(a, b, e.plan.master_seed, e.bootstrap);
    const auto pm = with_parameter(e.model, *e.parameter, theta + e.epsilon);
    const auto mm = with_parameter(e.model, *e.parameter, theta - e.epsilon);
    if (const auto* p1 = std::get_if<OuParams>(&pm)) {
        const auto& p2 = std::get<OuParams>(mm);
        line.oracle = std::holds_alternative<TimeAverage>(obs)
                          ? oracles::ou_cov_timeavg(p1->sigma, p2.sigma, p1->theta, p2.theta, T).exact
                          : oracles::ou_cov_final(p1->sigma, p2.sigma, p1->theta, p2.theta, T);
    } else {
        const auto& l1 = std::get<LangevinParams>(pm);
        const auto& l2 = std::get<LangevinParams>(mm);
        line.oracle = oracles::langevin_phi(oracles::langevin_eigen(l1.beta, l1.omega),
                                            oracles::langevin_eigen(l2.beta, l2.omega), l1.kT, T);
    }
    line.passed = std::abs(line.monte_carlo - line.oracle) <= e.check_sigmas * line.std_error;
    out.checks.push_back(line);

    std::ostringstream os;
    os << "check,monte_carlo,stderr,oracle,passed\n";
    for (const auto& c : out.checks)
        os << c.name << ',' << fmt(c.monte_carlo) << ',' << fmt(c.std_error) << ',' << fmt(c.oracle) << ','
           << (c.passed ? 1 : 0) << '\n';
    out.artifacts.push_back({e.prefix + "_check.csv", os.str()});
}

}  // namespace detail

/// Runs an experiment entirely in memory; nothing touches the file system.
inline RunResult run_experiment(const Experiment& e) {
    RunResult out;
    switch (e.kind) {
        case ExperimentKind::prony_fit: detail::run_prony_fit(e, out); break;
        case ExperimentKind::simulate: detail::run_simulate(e, out); break;
        case ExperimentKind::sensitivity: detail::run_sensitivity(e, out); break;
        case ExperimentKind::var_sweep: detail::run_var_sweep(e, out); break;
        case ExperimentKind::mode_sens: detail::run_mode_sens(e, out); break;
        case ExperimentKind::oracle_check: detail::run_oracle_check(e, out); break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Artifacts on disk

inline std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

inline std::string manifest_name(const std::string& prefix) { return prefix + "_manifest.json"; }

/// Writes every artifact, then the manifest listing each with its SHA-256.
/// Returns the manifest path.
inline std::filesystem::path write_artifacts(const Experiment& e, const RunResult& r,
                                             const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (const auto& a : r.artifacts) {
        const auto path = dir / a.file;
        std::ofstream os(path, std::ios::binary);
        os << a.content;
        if (!os) throw Error("cannot write " + path.string());
        files.push_back({{"file", a.file}, {"bytes", a.content.size()}, {"sha256", sha256_hex(a.content)}});
    }
    nlohmann::ordered_json manifest;
    manifest["experiment"] = e.name;
    manifest["kind"] = kind_name(e.kind);
    manifest["seed"] = e.plan.master_seed;
    manifest["files"] = files;
    const auto path = dir / manifest_name(e.prefix);
    std::ofstream os(path, std::ios::binary);
    os << manifest.dump(2) << '\n';
    if (!os) throw Error("cannot write " + path.string());
    return path;
}

// ---------------------------------------------------------------------------
// Shipped configs

struct RegistryEntry {
    std::string name;
    std::string description;
    std::string_view text;
};

/// Shipped configs in name order.
inline std::vector<RegistryEntry> registry() {
    std::vector<RegistryEntry> out;
    for (const auto& [name, text] : detail::kShippedConfigs) {
        const auto cfg = Config::parse(text);
        out.push_back({std::string(name), cfg.str("experiment", "description", ""), text});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    return out;
}

inline std::optional<RegistryEntry> find_shipped(const std::string& name) {
    for (auto& entry : registry()) {
        if (entry.name == name) return entry;
    }
    return std::nullopt;
}

}  // namespace glesens
