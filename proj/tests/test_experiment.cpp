#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

#include "glesens/cli.hpp"
#include "glesens/experiment.hpp"
#include "json.hpp"

using namespace glesens;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("glesens_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }
    fs::path write(const std::string& name, const std::string& text) const {
        const auto p = path_ / name;
        std::ofstream(p, std::ios::binary) << text;
        return p;
    }

private:
    fs::path path_;
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

struct CliRun {
    int code;
    std::string out, err;
};

CliRun cli_run(std::vector<std::string> args) {
    args.insert(args.begin(), "glesens");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string config_error(const std::string& text) {
    try {
        parse_experiment(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

const char* kOuSensitivity = R"(
[experiment]
kind = sensitivity
name = tiny

[model]
type = ou
theta = 1.0
mu = 1.2
sigma = 0.3
x0 = 2.0

[noise]
seed = 5
coupling = common
compare_independent = true

[numerics]
T = 1
dt = 0.01
stride = 10
samples = 64
threads = 1
parameter = theta
epsilon = 0.1
observables = state:x
)";

const char* kOracle = R"(
[experiment]
kind = oracle-check
name = tiny_oracle

[model]
type = ou
theta = 1.0
mu = 1.2
sigma = 0.3
x0 = 2.0

[noise]
seed = 11
coupling = common

[numerics]
T = 1
dt = 0.01
stride = 100
samples = 500
parameter = theta
epsilon = 0.1
observables = state:x
)";

std::string with_line(std::string text, const std::string& after, const std::string& line) {
    const auto at = text.find(after);
    text.insert(at + after.size(), "\n" + line);
    return text;
}

}  // namespace

TEST(Config, ParsesSectionsCommentsAndLists) {
    const auto c = Config::parse("# top\n[a]\nx = 1.5 ; trailing\ny = p, q ,r\n\n[b]\nflag = yes\n");
    EXPECT_EQ(c.number("a", "x"), 1.5);
    EXPECT_EQ(c.list("a", "y"), (std::vector<std::string>{"p", "q", "r"}));
    EXPECT_TRUE(c.flag("b", "flag", false));
    EXPECT_EQ(c.number("a", "missing", 7.0), 7.0);
    EXPECT_NO_THROW(c.reject_unused());
}

TEST(Config, ErrorsCarryLineNumbers) {
    const std::pair<const char*, const char*> cases[] = {
        {"[a]\nx = 1\nx = 2\n", "line 3: duplicate key 'a.x'"},
        {"x = 1\n[a]\n", "line 1: key outside of any [section]"},
        {"[a]\n\n[b\n", "line 3: malformed section header"},
        {"[a]\njust words\n", "line 2: expected 'key = value'"},
        {"[a]\n = 3\n", "line 2: empty key"},
    };
    for (const auto& [text, want] : cases) {
        try {
            Config::parse(text);
            ADD_FAILURE() << "no error for " << text;
        } catch (const ConfigError& e) {
            EXPECT_EQ(std::string(e.what()), want);
        }
    }
}

TEST(Config, EmptyOrCommentOnlyIsAnError) {
    EXPECT_THROW(Config::parse(""), ConfigError);
    EXPECT_THROW(Config::parse("# nothing\n; here\n\n"), ConfigError);
}

TEST(Config, TypedAccessorsReportTheOffendingLine) {
    const auto c = Config::parse("[a]\nn = abc\ni = -3\nf = maybe\n");
    EXPECT_THROW(c.number("a", "n"), ConfigError);
    try {
        c.integer("a", "i");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
    EXPECT_THROW(c.flag("a", "f", true), ConfigError);
    EXPECT_THROW(c.str("a", "absent"), ConfigError);
}

TEST(Experiment, UnknownKeyIsRejectedWithItsLine) {
    const auto err = config_error(with_line(kOuSensitivity, "sigma = 0.3", "thta = 2"));
    EXPECT_NE(err.find("unknown key 'model.thta'"), std::string::npos) << err;
    EXPECT_NE(err.find("line 11"), std::string::npos) << err;
}

TEST(Experiment, RejectsInconsistentSettings) {
    const std::string base = kOuSensitivity;
    auto replaced = [&](const std::string& from, const std::string& to) {
        std::string s = base;
        s.replace(s.find(from), from.size(), to);
        return s;
    };
    EXPECT_NE(config_error(replaced("kind = sensitivity", "kind = teleport")), "");
    EXPECT_NE(config_error(replaced("type = ou", "type = brownian")), "");
    EXPECT_NE(config_error(replaced("parameter = theta", "parameter = beta")), "");
    EXPECT_NE(config_error(replaced("samples = 64", "samples = 1")), "");
    EXPECT_NE(config_error(replaced("observables = state:x", "observables = vacf")), "");
    EXPECT_NE(config_error(replaced("coupling = common", "coupling = eta")), "");
    EXPECT_NE(config_error(replaced("theta = 1.0", "theta = -1.0")), "");
    EXPECT_NE(config_error(replaced("epsilon = 0.1", "epsilon = 0")), "");
    EXPECT_EQ(config_error(base), "");
}

TEST(Registry, CoversEveryFigureAndParses) {
    const auto entries = registry();
    ASSERT_GE(entries.size(), 9u);
    std::set<std::string> names;
    for (const auto& e : entries) {
        names.insert(e.name);
        EXPECT_FALSE(e.description.empty()) << e.name;
        Experiment x;
        ASSERT_NO_THROW(x = parse_experiment(e.text, e.name)) << e.name;
        EXPECT_EQ(x.name, e.name);
    }
    for (const char* fig : {"fig1", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9"}) {
        const bool found = std::any_of(names.begin(), names.end(),
                                       [&](const std::string& n) { return n.find(fig) != std::string::npos ||
                                                                          (std::string(fig) == "fig7" &&
                                                                           n.find("6_7") != std::string::npos); });
        EXPECT_TRUE(found) << fig;
    }
    EXPECT_TRUE(std::is_sorted(entries.begin(), entries.end(),
                               [](const auto& a, const auto& b) { return a.name < b.name; }));
    EXPECT_TRUE(find_shipped("fig8_ou_sigma_timeavg").has_value());
    EXPECT_FALSE(find_shipped("fig10").has_value());
}

TEST(Artifacts, Sha256KnownAnswer) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Artifacts, ManifestHashesMatchTheFiles) {
    TempDir dir;
    const auto e = parse_experiment(kOuSensitivity);
    const auto manifest_path = write_artifacts(e, run_experiment(e), dir.path());
    EXPECT_EQ(manifest_path.filename(), "tiny_manifest.json");
    const auto m = nlohmann::json::parse(slurp(manifest_path));
    EXPECT_EQ(m["experiment"], "tiny");
    EXPECT_EQ(m["kind"], "sensitivity");
    EXPECT_EQ(m["seed"], 5);
    ASSERT_EQ(m["files"].size(), 2u);
    for (const auto& f : m["files"]) {
        const auto bytes = slurp(dir.path() / f["file"].get<std::string>());
        EXPECT_EQ(f["sha256"], sha256_hex(bytes));
        EXPECT_EQ(f["bytes"], bytes.size());
        EXPECT_EQ(first_line(bytes), "time,sens,stderr");
    }
}

TEST(Artifacts, RerunsAndThreadCountsAreByteIdentical) {
    auto e = parse_experiment(kOuSensitivity);
    const auto one = run_experiment(e);
    e.settings.parallel.threads = 3;
    const auto three = run_experiment(e);
    e.settings.parallel.threads = 1;
    const auto again = run_experiment(e);
    ASSERT_EQ(one.artifacts.size(), three.artifacts.size());
    for (std::size_t i = 0; i < one.artifacts.size(); ++i) {
        EXPECT_EQ(one.artifacts[i].content, three.artifacts[i].content);
        EXPECT_EQ(one.artifacts[i].content, again.artifacts[i].content);
    }
}

TEST(Artifacts, CsvSchemasPerKind) {
    const std::string prony = R"(
[experiment]
kind = prony-fit
name = p
[model]
type = gle
kernel = power-law
gamma_lambda = 1
lambda = 0.5
n_modes = 2, 4
[numerics]
T = 10
)";
    const auto pr = run_experiment(parse_experiment(prony));
    ASSERT_EQ(pr.artifacts.size(), 3u);
    EXPECT_EQ(pr.artifacts[0].file, "p_N2.csv");
    EXPECT_EQ(first_line(pr.artifacts[0].content), "k,c_k,tau_k");

    const std::string simulate = R"(
[experiment]
kind = simulate
name = s
[model]
type = gle
c = 1.0
tau = 1.0
[numerics]
T = 0.1
samples = 3
observables = vacf
[output]
write_ensemble = true
)";
    const auto sim = run_experiment(parse_experiment(simulate));
    std::set<std::string> headers;
    for (const auto& a : sim.artifacts) headers.insert(first_line(a.content));
    EXPECT_TRUE(headers.count("time,mean,stderr"));
    EXPECT_TRUE(headers.count("sample,step,time,x,v,s1"));

    std::string sweep = kOuSensitivity;
    sweep.replace(sweep.find("kind = sensitivity"), 18, "kind = var-sweep");
    sweep.replace(sweep.find("epsilon = 0.1"), 13, "epsilons = 0.01, 0.03, 0.1");
    const auto sw = run_experiment(parse_experiment(sweep));
    EXPECT_EQ(first_line(sw.artifacts.front().content), "epsilon,var_coupled,var_independent");

    const std::string modes = R"(
[experiment]
kind = mode-sens
name = m
[model]
type = gle
kernel = power-law
gamma_lambda = 1
lambda = 0.5
n_modes = 1, 2
[numerics]
T = 1
stride = 10
samples = 20
t_eval = 1
horizon = 0.5
bootstrap = 5
observables = vacf
)";
    const auto ms = run_experiment(parse_experiment(modes));
    ASSERT_EQ(ms.artifacts.size(), 1u);
    EXPECT_EQ(first_line(ms.artifacts[0].content), "n_modes,S_star,stderr,var_coupled,var_independent");
}

TEST(Cli, ListPrintsTheRegistry) {
    const auto r = cli_run({"list"});
    EXPECT_EQ(r.code, 0);
    for (const auto& e : registry()) EXPECT_NE(r.out.find(e.name), std::string::npos);
}

TEST(Cli, RunWritesArtifactsAndManifest) {
    TempDir dir;
    const auto cfg = dir.write("tiny.ini", kOuSensitivity);
    const auto out = dir.path() / "out";
    const auto r = cli_run({"run", cfg.string(), "--out", out.string(), "--threads", "2"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(out / "tiny_manifest.json"));
    EXPECT_TRUE(fs::exists(out / "tiny_common.csv"));
    EXPECT_TRUE(fs::exists(out / "tiny_independent.csv"));
}

TEST(Cli, EmptyConfigIsExitTwoWithNoOutput) {
    TempDir dir;
    const auto cfg = dir.write("empty.ini", "# nothing to see\n");
    const auto out = dir.path() / "out";
    const auto r = cli_run({"run", cfg.string(), "--out", out.string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("config is empty"), std::string::npos);
    EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, ConfigAndUsageErrorsAreExitTwo) {
    TempDir dir;
    EXPECT_EQ(cli_run({"run", (dir.path() / "missing.ini").string()}).code, 2);
    EXPECT_EQ(cli_run({"run", dir.write("bad.ini", with_line(kOuSensitivity, "sigma = 0.3", "bogus = 1")).string(),
                       "--out", dir.path().string()})
                  .code,
              2);
    EXPECT_EQ(cli_run({"run"}).code, 2);
    EXPECT_EQ(cli_run({"run", "fig8_ou_sigma_timeavg", "--threads", "0"}).code, 2);
    EXPECT_EQ(cli_run({"frobnicate"}).code, 2);
}

TEST(Cli, InadmissiblePerturbationIsExitTwo) {
    TempDir dir;
    std::string text = kOuSensitivity;
    text.replace(text.find("epsilon = 0.1"), 13, "epsilon = 2.0");
    const auto r = cli_run({"run", dir.write("adm.ini", text).string(), "--out", dir.path().string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("inadmissible parameter theta"), std::string::npos) << r.err;
}

TEST(Cli, OracleCheckPassesAndFails) {
    TempDir dir;
    const auto ok = cli_run({"oracle-check", dir.write("o.ini", kOracle).string(), "--out", dir.path().string()});
    EXPECT_EQ(ok.code, 0) << ok.out << ok.err;
    EXPECT_NE(ok.out.find("PASS cov_state_x_theta"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir.path() / "tiny_oracle_check.csv"));

    const auto strict = dir.write("strict.ini", std::string(kOracle) + "\n[check]\nsigmas = 0\n");
    const auto bad = cli_run({"oracle-check", strict.string(), "--out", dir.path().string()});
    EXPECT_EQ(bad.code, 4);
    EXPECT_NE(bad.out.find("FAIL cov_state_x_theta"), std::string::npos);
}

TEST(Cli, OracleCheckRefusesOtherKinds) {
    TempDir dir;
    const auto r = cli_run({"oracle-check", dir.write("s.ini", kOuSensitivity).string(), "--out", dir.path().string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(fs::exists(dir.path() / "tiny_manifest.json"));
}

TEST(Cli, NumericalBlowUpIsExitThree) {
    TempDir dir;
    const std::string text = R"(
[experiment]
kind = simulate
name = blowup
[model]
type = gle
potential = double-well
x0 = 50
c = 1.0
tau = 1.0
[numerics]
T = 50
dt = 1
samples = 2
observables = state:x
)";
    const auto r = cli_run({"run", dir.write("b.ini", text).string(), "--out", dir.path().string()});
    EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, CriticallyDampedOracleIsExitThree) {
    TempDir dir;
    const std::string text = R"(
[experiment]
kind = oracle-check
name = critical
[model]
type = langevin
omega = 1.0
beta = 2.1
[noise]
coupling = common
[numerics]
T = 0.1
dt = 0.01
samples = 4
parameter = beta
epsilon = 0.1
observables = state:x
)";
    const auto r = cli_run({"oracle-check", dir.write("c.ini", text).string(), "--out", dir.path().string()});
    EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, OutputDirectoryComesFromTheEnvironmentUnlessOverridden) {
    TempDir dir;
    const auto cfg = dir.write("tiny.ini", kOuSensitivity);
    const auto env_dir = dir.path() / "from_env";
    const auto flag_dir = dir.path() / "from_flag";
    ::setenv(cli::kOutputEnv, env_dir.string().c_str(), 1);
    EXPECT_EQ(cli_run({"run", cfg.string()}).code, 0);
    EXPECT_TRUE(fs::exists(env_dir / "tiny_manifest.json"));
    EXPECT_EQ(cli_run({"run", cfg.string(), "--out", flag_dir.string()}).code, 0);
    EXPECT_TRUE(fs::exists(flag_dir / "tiny_manifest.json"));
    ::unsetenv(cli::kOutputEnv);
    EXPECT_EQ(slurp(env_dir / "tiny_common.csv"), slurp(flag_dir / "tiny_common.csv"));
}

TEST(Experiment, ResolvedModelCarriesTheFittedModes) {
    const auto e = parse_experiment(find_shipped("fig3_gle_c1_sweep")->text);
    const auto& model = std::get<GleParams>(resolved_model(e));
    const auto fit = fit_prony(*e.kernel, e.mode_counts.front(), e.fit_length, e.fit).series;
    ASSERT_EQ(model.modes.size(), fit.size());
    for (std::size_t k = 0; k < fit.size(); ++k) {
        EXPECT_EQ(model.modes[k].c, fit[k].c);
        EXPECT_EQ(model.modes[k].tau, fit[k].tau);
    }
    const OuParams ou{1.0, 0.0, 1.0, 0.0};
    Experiment plain;
    plain.model = ou;
    EXPECT_EQ(std::get<OuParams>(resolved_model(plain)).theta, 1.0);
}
