#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "glesens/error.hpp"
#include "glesens/experiment.hpp"

namespace glesens::cli {

enum ExitCode : int { ok = 0, failure = 1, config_error = 2, numerical_failure = 3, check_failure = 4 };

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputEnv = "GLESENS_OUTPUT_DIR";

/// Loads a config from a file path, or from the shipped registry when no
/// such file exists.
inline std::pair<std::string, std::string> load_config(const std::string& ref) {
    const std::filesystem::path path(ref);
    if (std::filesystem::is_regular_file(path)) {
        std::ifstream is(path, std::ios::binary);
        std::ostringstream ss;
        ss << is.rdbuf();
        if (!is && !is.eof()) throw ConfigError("cannot read " + ref);
        return {path.stem().string(), ss.str()};
    }
    if (auto entry = find_shipped(ref)) return {entry->name, std::string(entry->text)};
    throw ConfigError("no config file or shipped experiment named '" + ref + "'");
}

inline std::filesystem::path output_dir(const std::string& flag, const Experiment& e) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
    if (!e.output_dir.empty()) return e.output_dir;
    return "glesens_out";
}

inline int run_one(const std::string& ref, unsigned threads, const std::string& out_flag, bool oracle_mode,
                   std::ostream& out, std::ostream& err) {
    std::string name;
    try {
        auto [stem, text] = load_config(ref);
        name = stem;
        Experiment e = parse_experiment(text, stem);
        name = e.name;
        if (oracle_mode && e.kind != ExperimentKind::oracle_check)
            throw ConfigError("experiment kind is " + kind_name(e.kind) + ", not oracle-check");
        if (threads > 0) e.settings.parallel.threads = threads;
        const auto result = run_experiment(e);
        const auto dir = output_dir(out_flag, e);
        const auto manifest = write_artifacts(e, result, dir);
        for (const auto& a : result.artifacts) out << (dir / a.file).string() << '\n';
        out << manifest.string() << '\n';
        if (!result.checks.empty()) {
            for (const auto& c : result.checks) {
                out << (c.passed ? "PASS " : "FAIL ") << c.name << ": monte_carlo=" << csv::format_double(c.monte_carlo)
                    << " stderr=" << csv::format_double(c.std_error) << " oracle=" << csv::format_double(c.oracle)
                    << " tolerance=" << csv::format_double(e.check_sigmas) << " stderr\n";
            }
            if (!result.checks_passed()) return check_failure;
        }
        return ok;
    } catch (const ConfigError& x) {
        err << "config error: " << x.what() << '\n';
        return config_error;
    } catch (const AdmissibilityError& x) {
        err << name << ": inadmissible parameter " << x.parameter() << ": " << x.what() << '\n';
        return config_error;
    } catch (const InvalidArgument& x) {
        err << name << ": invalid argument: " << x.what() << '\n';
        return config_error;
    } catch (const NumericalError& x) {
        err << name << ": numerical failure: " << x.what() << '\n';
        return numerical_failure;
    } catch (const CriticallyDamped& x) {
        err << name << ": numerical failure: " << x.what() << '\n';
        return numerical_failure;
    } catch (const std::exception& x) {
        err << name << ": " << x.what() << '\n';
        return failure;
    }
}

inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Coupled finite-difference sensitivity experiments for Langevin-type dynamics"};
    app.require_subcommand(1);
    std::string config;
    unsigned threads = 0;
    std::string out_dir;

    auto* run = app.add_subcommand("run", "Run an experiment config (file path or shipped name)");
    run->add_option("config", config, "Config file or shipped experiment name")->required();
    run->add_option("--threads", threads, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);
    run->add_option("--out", out_dir, std::string("Output directory (default: $") + kOutputEnv + ")");

    auto* list = app.add_subcommand("list", "List shipped experiment configs");

    auto* check = app.add_subcommand("oracle-check", "Run an oracle-check config; exit 4 when a check fails");
    check->add_option("config", config, "Config file or shipped experiment name")->required();
    check->add_option("--threads", threads, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);
    check->add_option("--out", out_dir, std::string("Output directory (default: $") + kOutputEnv + ")");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ok : config_error;
    }
    if (list->parsed()) {
        for (const auto& entry : registry()) out << entry.name << "  " << entry.description << '\n';
        return ok;
    }
    return run_one(config, threads, out_dir, check->parsed(), out, err);
}

}  // namespace glesens::cli
