#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "glesens/dynamics.hpp"
#include "glesens/csv.hpp"
#include "glesens/error.hpp"
#include "glesens/kernels.hpp"
#include "glesens/noise.hpp"
#include "glesens/observables.hpp"
#include "glesens/stats.hpp"

namespace glesens {

using Model = std::variant<OuParams, LangevinParams, GleParams>;

inline std::string model_name(const Model& m) {
    if (std::holds_alternative<OuParams>(m)) return "ou";
    if (std::holds_alternative<LangevinParams>(m)) return "langevin";
    return "gle";
}

/// Number of independent Wiener components a model consumes.
inline std::size_t noise_streams(const Model& m) {
    if (const auto* g = std::get_if<GleParams>(&m)) return g->modes.size();
    return 1;
}

struct SimulationSettings {
    std::size_t n_samples = 1000;
    TimeGrid grid{};
    ParallelOptions parallel{};
};

inline TrajectoryEnsemble simulate(const Model& model, const NoisePlan& plan, SystemTag system,
                                   const SimulationSettings& s) {
    return std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, OuParams>)
                return simulate_ou(p, plan, system, s.n_samples, s.grid, s.parallel);
            else if constexpr (std::is_same_v<T, LangevinParams>)
                return simulate_langevin_baoab(p, plan, system, s.n_samples, s.grid, s.parallel);
            else
                return simulate_gle(p, plan, system, s.n_samples, s.grid, s.parallel);
        },
        model);
}

// ---------------------------------------------------------------------------
// Parameters

/// A scalar model parameter; Prony amplitudes and relaxation times carry a
/// 1-based mode index (c1, tau3, ...).
struct ParameterId {
    enum class Kind { theta, mu, sigma, omega, beta, kT, mass, c, tau, x0, v0 };
    Kind kind = Kind::theta;
    std::size_t index = 0;

    std::string name() const {
        switch (kind) {
            case Kind::theta: return "theta";
            case Kind::mu: return "mu";
            case Kind::sigma: return "sigma";
            case Kind::omega: return "omega";
            case Kind::beta: return "beta";
            case Kind::kT: return "kT";
            case Kind::mass: return "mass";
            case Kind::c: return "c" + std::to_string(index);
            case Kind::tau: return "tau" + std::to_string(index);
            case Kind::x0: return "x0";
            case Kind::v0: return "v0";
        }
        return "?";
    }

    static ParameterId parse(const std::string& text) {
        using K = Kind;
        static const std::pair<const char*, K> plain[] = {
            {"theta", K::theta}, {"mu", K::mu},     {"sigma", K::sigma}, {"omega", K::omega},
            {"beta", K::beta},   {"kT", K::kT},     {"mass", K::mass},   {"x0", K::x0},
            {"v0", K::v0}};
        for (const auto& [name, kind] : plain) {
            if (text == name) return {kind, 0};
        }
        auto indexed = [&](const std::string& prefix, K kind) -> std::optional<ParameterId> {
            if (text.size() <= prefix.size() || text.compare(0, prefix.size(), prefix) != 0) return std::nullopt;
            const std::string digits = text.substr(prefix.size());
            if (digits.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
            const auto k = std::stoul(digits);
            if (k == 0) return std::nullopt;
            return ParameterId{kind, k};
        };
        if (auto p = indexed("tau", K::tau)) return *p;
        if (auto p = indexed("c", K::c)) return *p;
        throw InvalidArgument("unknown parameter '" + text + "'");
    }
};

namespace detail {
[[noreturn]] inline void unreachable_parameter(const ParameterId& id, const Model& m) {
    throw InvalidArgument("parameter '" + id.name() + "' does not exist in the " + model_name(m) + " model");
}

inline double* parameter_slot(Model& model, const ParameterId& id) {
    using K = ParameterId::Kind;
    if (auto* p = std::get_if<OuParams>(&model)) {
        switch (id.kind) {
            case K::theta: return &p->theta;
            case K::mu: return &p->mu;
            case K::sigma: return &p->sigma;
            case K::x0: return &p->x0;
            default: break;
        }
    } else if (auto* p = std::get_if<LangevinParams>(&model)) {
        switch (id.kind) {
            case K::omega: return &p->omega;
            case K::beta: return &p->beta;
            case K::kT: return &p->kT;
            case K::x0: return &p->x0;
            case K::v0: return &p->v0;
            default: break;
        }
    } else if (auto* p = std::get_if<GleParams>(&model)) {
        switch (id.kind) {
            case K::omega:
                if (auto* h = std::get_if<Harmonic>(&p->potential)) return &h->omega;
                break;
            case K::kT: return &p->kT;
            case K::mass: return &p->mass;
            case K::x0: return &p->x0;
            case K::v0: return &p->v0;
            case K::c:
                if (id.index >= 1 && id.index <= p->modes.size()) return &p->modes[id.index - 1].c;
                break;
            case K::tau:
                if (id.index >= 1 && id.index <= p->modes.size()) return &p->modes[id.index - 1].tau;
                break;
            default: break;
        }
    }
    unreachable_parameter(id, model);
}

inline void check_admissible(const ParameterId& id, double value) {
    using K = ParameterId::Kind;
    const std::string name = id.name();
    auto fail = [&](const char* rule) {
        throw AdmissibilityError(name, "perturbed " + name + " = " + csv::format_double(value) + " violates " + rule);
    };
    if (!std::isfinite(value)) fail("finiteness");
    switch (id.kind) {
        case K::theta:
        case K::beta:
        case K::kT:
        case K::mass:
        case K::tau:
            if (!(value > 0.0)) fail("positivity");
            break;
        case K::sigma:
        case K::omega:
        case K::c:
            if (!(value >= 0.0)) fail("non-negativity");
            break;
        default: break;
    }
}
}  // namespace detail

inline double parameter_value(const Model& model, const ParameterId& id) {
    Model copy = model;
    return *detail::parameter_slot(copy, id);
}

/// Copy of `model` with one parameter replaced. Throws AdmissibilityError
/// when the new value leaves the parameter's admissible set.
inline Model with_parameter(const Model& model, const ParameterId& id, double value) {
    detail::check_admissible(id, value);
    Model out = model;
    *detail::parameter_slot(out, id) = value;
    return out;
}

// ---------------------------------------------------------------------------
// Finite differences

enum class Stencil { forward, central };

inline std::string stencil_name(Stencil s) { return s == Stencil::forward ? "forward" : "central"; }

/// Ensembles at the two stencil points. `plus` is theta + eps and runs as the
/// perturbed system; `minus` is theta (forward) or theta - eps (central) and
/// runs as the nominal system. denominator is eps or 2 eps.
struct StencilEnsembles {
    TrajectoryEnsemble plus;
    TrajectoryEnsemble minus;
    double denominator = 1.0;
};

inline StencilEnsembles simulate_stencil(const Model& model, const ParameterId& id, Stencil stencil, double eps,
                                         const NoisePlan& plan, const SimulationSettings& settings) {
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw InvalidArgument("finite-difference step must be >= 0");
    const double theta = parameter_value(model, id);
    const Model plus_model = with_parameter(model, id, theta + eps);
    const Model minus_model = stencil == Stencil::central ? with_parameter(model, id, theta - eps) : model;
    StencilEnsembles out;
    out.plus = simulate(plus_model, plan, SystemTag::perturbed, settings);
    out.minus = simulate(minus_model, plan, SystemTag::nominal, settings);
    out.denominator = stencil == Stencil::central ? 2.0 * eps : eps;
    return out;
}

/// Per-sample differences D = f(first) - f(second).
inline ObservableValues difference_values(const Observable& obs, const TrajectoryEnsemble& first,
                                          const TrajectoryEnsemble& second) {
    ObservableValues a = evaluate(obs, first);
    const ObservableValues b = evaluate(obs, second);
    if (a.n_samples != b.n_samples || a.times.size() != b.times.size())
        throw InvalidArgument("difference of ensembles with different shapes");
    for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] -= b.values[i];
    return a;
}

struct SensitivityEstimate {
    ParameterId parameter;
    Stencil stencil = Stencil::central;
    double epsilon = 0.0;
    std::size_t n_samples = 0;
    std::vector<double> times;
    std::vector<double> value;
    /// Sample standard deviation of D / denominator over sqrt(M), so that
    /// std_error^2 = denominator^-2 M^-1 Var[D].
    std::vector<double> std_error;
};

/// Mean and standard error of D / denominator at each time.
inline SensitivityEstimate sensitivity_from_differences(const ObservableValues& d, double denominator) {
    if (!(denominator > 0.0)) throw InvalidArgument("finite-difference step must be > 0");
    SensitivityEstimate est;
    est.n_samples = d.n_samples;
    est.times = d.times;
    est.value.resize(d.n_times());
    est.std_error.resize(d.n_times());
    const double m = static_cast<double>(d.n_samples);
    for (std::size_t t = 0; t < d.n_times(); ++t) {
        const auto col = d.column(t);
        est.value[t] = stats::mean(col) / denominator;
        est.std_error[t] =
            d.n_samples > 1 ? std::sqrt(stats::variance(col) / (denominator * denominator * m)) : 0.0;
    }
    return est;
}

/// Monte Carlo finite-difference sensitivity of E[f] with respect to one
/// parameter. Shared noise between the stencil points iff the plan couples.
inline SensitivityEstimate fd_sensitivity(const Model& model, const ParameterId& id, Stencil stencil, double eps,
                                          const Observable& obs, const NoisePlan& plan,
                                          const SimulationSettings& settings) {
    if (!(eps > 0.0)) throw InvalidArgument("finite-difference step must be > 0");
    const auto ens = simulate_stencil(model, id, stencil, eps, plan, settings);
    auto est = sensitivity_from_differences(difference_values(obs, ens.plus, ens.minus), ens.denominator);
    est.parameter = id;
    est.stencil = stencil;
    est.epsilon = eps;
    return est;
}

struct DifferenceVariance {
    double variance = 0.0;
    /// Standard error of the sample variance (fourth-moment estimate).
    double std_error = 0.0;
    double mean = 0.0;
};

/// Sample covariance matrix of the differences of several observables at
/// one time; entry (i, j) is Cov[D_i, D_j].
struct DifferenceCovariance {
    std::size_t n = 0;
    std::vector<double> cov;
    std::vector<double> std_error;
    std::vector<double> mean;

    double operator()(std::size_t i, std::size_t j) const { return cov[i * n + j]; }
    double error(std::size_t i, std::size_t j) const { return std_error[i * n + j]; }
};

inline DifferenceCovariance covariance_from_differences(const std::vector<std::vector<double>>& d) {
    DifferenceCovariance out;
    out.n = d.size();
    out.cov.resize(out.n * out.n);
    out.std_error.resize(out.n * out.n);
    out.mean.resize(out.n);
    for (std::size_t i = 0; i < out.n; ++i) {
        out.mean[i] = stats::mean(d[i]);
        for (std::size_t j = 0; j < out.n; ++j) {
            out.cov[i * out.n + j] = stats::covariance(d[i], d[j]);
            out.std_error[i * out.n + j] = stats::covariance_stderr(d[i], d[j]);
        }
    }
    return out;
}

inline DifferenceCovariance covariance_of_difference(const Model& model, const ParameterId& id, Stencil stencil,
                                                     double eps, std::span<const Observable> observables,
                                                     const NoisePlan& plan, const SimulationSettings& settings,
                                                     double t_eval) {
    if (observables.empty()) throw InvalidArgument("need at least one observable");
    const auto ens = simulate_stencil(model, id, stencil, eps, plan, settings);
    std::vector<std::vector<double>> d;
    for (const auto& obs : observables) {
        const auto values = difference_values(obs, ens.plus, ens.minus);
        d.push_back(values.column(values.index_of(t_eval)));
    }
    return covariance_from_differences(d);
}

/// Raw Var[f(plus) - f(minus)] at t_eval, no step scaling.
inline DifferenceVariance variance_of_difference(const Model& model, const ParameterId& id, Stencil stencil,
                                                 double eps, const Observable& obs, const NoisePlan& plan,
                                                 const SimulationSettings& settings, double t_eval) {
    const Observable one[] = {obs};
    const auto c = covariance_of_difference(model, id, stencil, eps, one, plan, settings, t_eval);
    return {c(0, 0), c.error(0, 0), c.mean[0]};
}

// ---------------------------------------------------------------------------
// Sweeps over the finite-difference step

struct VarianceSweep {
    std::vector<double> epsilons;
    std::vector<double> variances;
    std::vector<double> std_errors;
    /// OLS fit of log|Var[D]| against log eps over the retained points.
    double slope = std::numeric_limits<double>::quiet_NaN();
    double intercept = std::numeric_limits<double>::quiet_NaN();
    /// Indices of points dropped because Var[D] was zero.
    std::vector<std::size_t> dropped;

    bool has_dropped() const { return !dropped.empty(); }
};

/// Log-log fit of a sweep; zero values are dropped and reported. Cross
/// covariances may be negative, so the fit uses magnitudes.
inline VarianceSweep fit_sweep(std::vector<double> epsilons, std::vector<double> values,
                               std::vector<double> std_errors = {}) {
    VarianceSweep sw;
    sw.epsilons = std::move(epsilons);
    sw.variances = std::move(values);
    sw.std_errors = std_errors.empty() ? std::vector<double>(sw.variances.size(), 0.0) : std::move(std_errors);
    std::vector<double> lx;
    std::vector<double> ly;
    for (std::size_t k = 0; k < sw.epsilons.size(); ++k) {
        if (sw.variances[k] == 0.0 || !std::isfinite(sw.variances[k])) {
            sw.dropped.push_back(k);
            continue;
        }
        lx.push_back(std::log(sw.epsilons[k]));
        ly.push_back(std::log(std::abs(sw.variances[k])));
    }
    if (lx.size() >= 2) {
        const auto fit = stats::fit_line(lx, ly);
        sw.slope = fit.slope;
        sw.intercept = fit.intercept;
    }
    return sw;
}

struct SweepOptions {
    /// Reuse the master seed at every eps, which smooths the sweep curve.
    /// When false, point k uses an independent seed derived from (seed, k).
    bool reuse_seed = true;
};

inline void validate_sweep_epsilons(const std::vector<double>& eps) {
    if (eps.size() < 3) throw InvalidArgument("a sweep needs at least three epsilons");
    for (std::size_t k = 0; k < eps.size(); ++k) {
        if (!(eps[k] > 0.0)) throw InvalidArgument("sweep epsilons must be positive");
        if (k > 0 && !(eps[k] > eps[k - 1])) throw InvalidArgument("sweep epsilons must be strictly increasing");
    }
    if (eps.back() < 10.0 * eps.front() * (1.0 - 1e-12))
        throw InvalidArgument("sweep epsilons must span at least one decade");
}

inline NoisePlan sweep_point_plan(NoisePlan plan, std::size_t k, const SweepOptions& options) {
    if (!options.reuse_seed) plan.master_seed = noise::splitmix64(plan.master_seed + 0x5EEDull * (k + 1));
    return plan;
}

/// Covariance matrices of the differences for every eps of a sweep.
struct CovarianceSweep {
    std::vector<double> epsilons;
    std::vector<DifferenceCovariance> points;

    VarianceSweep entry(std::size_t i, std::size_t j) const {
        std::vector<double> v;
        std::vector<double> e;
        for (const auto& p : points) {
            v.push_back(p(i, j));
            e.push_back(p.error(i, j));
        }
        return fit_sweep(epsilons, std::move(v), std::move(e));
    }
};

inline CovarianceSweep covariance_sweep(const Model& model, const ParameterId& id, Stencil stencil,
                                        const std::vector<double>& epsilons, std::span<const Observable> observables,
                                        const NoisePlan& plan, const SimulationSettings& settings, double t_eval,
                                        const SweepOptions& options = {}) {
    validate_sweep_epsilons(epsilons);
    CovarianceSweep sw;
    sw.epsilons = epsilons;
    for (std::size_t k = 0; k < epsilons.size(); ++k) {
        sw.points.push_back(covariance_of_difference(model, id, stencil, epsilons[k], observables,
                                                     sweep_point_plan(plan, k, options), settings, t_eval));
    }
    return sw;
}

inline VarianceSweep variance_sweep(const Model& model, const ParameterId& id, Stencil stencil,
                                    const std::vector<double>& epsilons, const Observable& obs, const NoisePlan& plan,
                                    const SimulationSettings& settings, double t_eval,
                                    const SweepOptions& options = {}) {
    const Observable one[] = {obs};
    return covariance_sweep(model, id, stencil, epsilons, one, plan, settings, t_eval, options).entry(0, 0);
}

/// Bootstrap standard error of the sample covariance of paired data,
/// resampling pairs with keyed uniforms so the result is reproducible.
inline double bootstrap_covariance_stderr(std::span<const double> x, std::span<const double> y,
                                          std::uint64_t seed, std::size_t replicates = 200) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("bootstrap needs paired data, n >= 2");
    if (replicates < 2) throw InvalidArgument("bootstrap needs at least two replicates");
    const std::size_t n = x.size();
    std::vector<double> u(n);
    std::vector<double> bx(n);
    std::vector<double> by(n);
    std::vector<double> stats_b(replicates);
    for (std::size_t b = 0; b < replicates; ++b) {
        noise::fill_uniforms(noise::stream_key(seed, b, 1, noise::StreamTag::bootstrap), u);
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = std::min(n - 1, static_cast<std::size_t>(u[i] * static_cast<double>(n)));
            bx[i] = x[r];
            by[i] = y[r];
        }
        stats_b[b] = stats::covariance(bx, by);
    }
    return std::sqrt(stats::variance(stats_b));
}

// ---------------------------------------------------------------------------
// Non-local sensitivity to the number of Prony modes

struct ModeCountResult {
    std::size_t n_modes_nominal = 0;
    std::size_t n_modes_perturbed = 0;
    /// sum over grid times in (0, horizon] of |mean D_t|^2 / sigma_t, where
    /// sigma_t is the standard error of mean D_t.
    double s_star = std::numeric_limits<double>::quiet_NaN();
    double s_star_stderr = std::numeric_limits<double>::quiet_NaN();
    /// Set when sigma_t = 0 at some summed time; s_star is then NaN.
    bool degenerate = false;
    /// Var[D] at t_eval and its standard error.
    double variance = 0.0;
    double variance_stderr = 0.0;
};

namespace detail {
// S* over a subset of sample indices (with repetition). Returns NaN when a
// summed time has zero spread.
inline double s_star_of(const ObservableValues& d, std::size_t first, std::size_t last,
                        std::span<const std::size_t> rows) {
    const double m = static_cast<double>(rows.size());
    double total = 0.0;
    for (std::size_t t = first; t <= last; ++t) {
        double sum = 0.0;
        for (std::size_t r : rows) sum += d(r, t);
        const double mean = sum / m;
        double ss = 0.0;
        for (std::size_t r : rows) {
            const double dev = d(r, t) - mean;
            ss += dev * dev;
        }
        const double sigma = std::sqrt(ss / (m - 1.0) / m);
        if (!(sigma > 0.0)) return std::numeric_limits<double>::quiet_NaN();
        total += mean * mean / sigma;
    }
    return total;
}
}  // namespace detail

/// Compares a GLE with `fewer` Prony modes (nominal) against one with `more`
/// modes (perturbed). The nominal series is padded with (c = 0, tau = 1)
/// modes so both state vectors match; mode k of both systems is driven by
/// noise stream k.
inline ModeCountResult mode_count_sensitivity(const GleParams& base, const PronySeries& fewer,
                                              const PronySeries& more, const Observable& obs, const NoisePlan& plan,
                                              const SimulationSettings& settings, double horizon, double t_eval,
                                              std::size_t bootstrap_replicates = 200) {
    if (fewer.size() == 0 || fewer.size() > more.size())
        throw InvalidArgument("mode-count comparison needs 1 <= N1 <= N2");
    if (!(horizon > 0.0) || horizon > settings.grid.horizon())
        throw InvalidArgument("S* horizon must lie in (0, T]");
    if (settings.n_samples < 2) throw InvalidArgument("mode-count comparison needs at least two samples");
    GleParams nominal = base;
    nominal.modes = fewer.modes();
    while (nominal.modes.size() < more.size()) nominal.modes.push_back({0.0, 1.0});
    nominal.s0.clear();
    GleParams perturbed = base;
    perturbed.modes = more.modes();
    perturbed.s0.clear();

    const auto ens_nominal = simulate_gle(nominal, plan, SystemTag::nominal, settings.n_samples, settings.grid,
                                          settings.parallel);
    const auto ens_perturbed = simulate_gle(perturbed, plan, SystemTag::perturbed, settings.n_samples,
                                            settings.grid, settings.parallel);
    const auto d = difference_values(obs, ens_nominal, ens_perturbed);

    ModeCountResult out;
    out.n_modes_nominal = fewer.size();
    out.n_modes_perturbed = more.size();
    const auto at_eval = d.column(d.index_of(t_eval));
    out.variance = stats::variance(at_eval);
    out.variance_stderr = stats::variance_stderr(at_eval);

    if (d.n_times() < 2) throw InvalidArgument("S* needs a time-series observable");
    const std::size_t last = d.index_of(horizon);
    std::vector<std::size_t> all(d.n_samples);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    out.s_star = detail::s_star_of(d, 1, last, all);
    if (std::isnan(out.s_star)) {
        out.degenerate = true;
        return out;
    }

    std::vector<double> replicates;
    std::vector<double> u(d.n_samples);
    std::vector<std::size_t> rows(d.n_samples);
    for (std::size_t b = 0; b < bootstrap_replicates; ++b) {
        noise::fill_uniforms(noise::stream_key(plan.master_seed, b, 0, noise::StreamTag::bootstrap), u);
        for (std::size_t i = 0; i < rows.size(); ++i)
            rows[i] = std::min(d.n_samples - 1, static_cast<std::size_t>(u[i] * static_cast<double>(d.n_samples)));
        const double s = detail::s_star_of(d, 1, last, rows);
        if (std::isfinite(s)) replicates.push_back(s);
    }
    out.s_star_stderr = replicates.size() >= 2 ? std::sqrt(stats::variance(replicates))
                                               : std::numeric_limits<double>::quiet_NaN();
    return out;
}

}  // namespace glesens
