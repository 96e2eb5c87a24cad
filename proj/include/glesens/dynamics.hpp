#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "glesens/csv.hpp"
#include "glesens/error.hpp"
#include "glesens/kernels.hpp"
#include "glesens/noise.hpp"
#include "glesens/parallel.hpp"

namespace glesens {

// ---------------------------------------------------------------------------
// Model parameters

/// dX = theta (mu - X) dt + sigma dW, X_0 = x0.
struct OuParams {
    double theta = 1.0;
    double mu = 0.0;
    double sigma = 1.0;
    double x0 = 0.0;

    void validate() const {
        if (!(theta > 0.0)) throw InvalidArgument("OU mean-reversion rate theta must be > 0");
        if (!(sigma >= 0.0)) throw InvalidArgument("OU noise amplitude sigma must be >= 0");
        if (!std::isfinite(mu) || !std::isfinite(x0)) throw InvalidArgument("OU mu and x0 must be finite");
    }
};

/// Unit-mass Langevin oscillator dX = V dt,
/// dV = -omega^2 X dt - beta V dt + sqrt(2 beta kT) dW.
struct LangevinParams {
    double omega = 1.0;
    double beta = 1.0;
    double kT = 0.5;
    double x0 = 0.0;
    double v0 = 0.0;
    static constexpr double mass = 1.0;

    void validate() const {
        if (!(omega >= 0.0)) throw InvalidArgument("Langevin omega must be >= 0");
        if (!(beta > 0.0)) throw InvalidArgument("Langevin friction beta must be > 0");
        if (!(kT > 0.0)) throw InvalidArgument("Langevin kT must be > 0");
    }
};

/// U(x) = omega^2 x^2 / 2.
struct Harmonic {
    double omega = 1.0;
};
/// U(x) = (1 - x^2)^2.
struct DoubleWell {};

using Potential = std::variant<Harmonic, DoubleWell>;

/// dU/dx.
inline double grad_u(const Potential& potential, double x) {
    if (const auto* h = std::get_if<Harmonic>(&potential)) return h->omega * h->omega * x;
    return -4.0 * x * (1.0 - x * x);
}

/// Extended-variable GLE:
///   m dV = -U'(X) dt + sum_k S_k dt,  dX = V dt,
///   dS_k = -(S_k + c_k V) / tau_k dt + sqrt(2 kT c_k) / tau_k dW_k.
/// Modes need c_k >= 0 and tau_k > 0 but no ordering, so a nominal series
/// can carry a padding mode (c = 0, tau = 1) after its fitted modes.
struct GleParams {
    double mass = 1.0;
    Potential potential = Harmonic{};
    double kT = 1.0;
    std::vector<PronyMode> modes;
    double x0 = 0.0;
    double v0 = 0.0;
    /// Initial extended variables; empty means all zero.
    std::vector<double> s0;

    void validate() const {
        if (!(mass > 0.0)) throw InvalidArgument("GLE mass must be > 0");
        if (!(kT > 0.0)) throw InvalidArgument("GLE kT must be > 0");
        if (modes.empty()) throw InvalidArgument("GLE needs at least one Prony mode");
        for (std::size_t k = 0; k < modes.size(); ++k) {
            if (!(modes[k].c >= 0.0) || !std::isfinite(modes[k].c))
                throw InvalidArgument("GLE mode c_" + std::to_string(k + 1) + " must be >= 0");
            if (!(modes[k].tau > 0.0) || !std::isfinite(modes[k].tau))
                throw InvalidArgument("GLE mode tau_" + std::to_string(k + 1) + " must be > 0");
        }
        if (!s0.empty() && s0.size() != modes.size())
            throw InvalidArgument("GLE s0 must have one entry per mode");
    }
};

// ---------------------------------------------------------------------------
// Time grid and trajectory storage

/// Uniform grid of n_steps steps of size dt; every stride-th state is stored.
struct TimeGrid {
    double dt = 1e-2;
    std::size_t n_steps = 1;
    std::size_t stride = 1;

    static TimeGrid from_horizon(double horizon, double dt, std::size_t stride = 1) {
        if (!std::isfinite(dt) || !(dt > 0.0)) throw InvalidArgument("dt must be finite and positive");
        if (!(horizon >= dt)) throw InvalidArgument("horizon T must be at least dt");
        const double steps = std::round(horizon / dt);
        if (std::abs(steps * dt - horizon) > 1e-9 * horizon)
            throw InvalidArgument("horizon T must be an integer multiple of dt");
        TimeGrid g{dt, static_cast<std::size_t>(steps), stride};
        g.validate();
        return g;
    }

    void validate() const {
        if (!std::isfinite(dt) || !(dt > 0.0)) throw InvalidArgument("dt must be finite and positive");
        if (n_steps == 0) throw InvalidArgument("grid needs at least one step");
        if (stride == 0 || n_steps % stride != 0)
            throw InvalidArgument("record stride must divide the number of steps");
    }

    std::size_t n_records() const { return n_steps / stride + 1; }
    double horizon() const { return static_cast<double>(n_steps) * dt; }
    double time(std::size_t record) const { return static_cast<double>(record * stride) * dt; }
};

/// Samples x records x state components, sample-major. Layouts:
/// OU [x]; Langevin [x, v]; GLE [x, v, s1 .. sN].
class TrajectoryEnsemble {
public:
    TrajectoryEnsemble() = default;
    TrajectoryEnsemble(TimeGrid grid, std::size_t n_samples, std::vector<std::string> components)
        : grid_(grid), n_samples_(n_samples), components_(std::move(components)) {
        grid_.validate();
        data_.assign(n_samples_ * grid_.n_records() * components_.size(), 0.0);
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    double dt() const noexcept { return grid_.dt; }
    std::size_t n_samples() const noexcept { return n_samples_; }
    std::size_t n_records() const noexcept { return grid_.n_records(); }
    std::size_t dim() const noexcept { return components_.size(); }
    const std::vector<std::string>& components() const noexcept { return components_; }
    double time(std::size_t record) const { return grid_.time(record); }

    std::size_t component_index(const std::string& name) const {
        for (std::size_t i = 0; i < components_.size(); ++i) {
            if (components_[i] == name) return i;
        }
        throw InvalidArgument("ensemble has no component '" + name + "'");
    }

    double at(std::size_t sample, std::size_t record, std::size_t component) const {
        return data_[offset(sample, record) + component];
    }
    std::span<double> state(std::size_t sample, std::size_t record) {
        return {data_.data() + offset(sample, record), dim()};
    }
    std::span<const double> state(std::size_t sample, std::size_t record) const {
        return {data_.data() + offset(sample, record), dim()};
    }

    /// Record index of time t; t must lie on the stored grid.
    std::size_t record_at(double t) const {
        const double r = t / (grid_.dt * static_cast<double>(grid_.stride));
        const double rr = std::round(r);
        if (rr < 0.0 || rr >= static_cast<double>(n_records()) || std::abs(r - rr) > 1e-6)
            throw InvalidArgument("evaluation time " + csv::format_double(t) + " is not on the stored grid");
        return static_cast<std::size_t>(rr);
    }

    const std::vector<double>& data() const noexcept { return data_; }
    std::vector<double>& data() noexcept { return data_; }

    friend bool operator==(const TrajectoryEnsemble& a, const TrajectoryEnsemble& b) {
        return a.grid_.dt == b.grid_.dt && a.grid_.n_steps == b.grid_.n_steps &&
               a.grid_.stride == b.grid_.stride && a.n_samples_ == b.n_samples_ &&
               a.components_ == b.components_ && a.data_ == b.data_;
    }

private:
    std::size_t offset(std::size_t sample, std::size_t record) const {
        return (sample * grid_.n_records() + record) * components_.size();
    }

    TimeGrid grid_{};
    std::size_t n_samples_ = 0;
    std::vector<std::string> components_;
    std::vector<double> data_;
};

namespace detail {

// Drives one integrator over every sample. The stepper maps
// (state, normals of this step) -> next state in place; all randomness comes
// from the plan keyed by sample index, so any worker count gives identical
// output.
template <class Stepper>
TrajectoryEnsemble run_ensemble(const TimeGrid& grid, std::size_t n_samples, std::vector<std::string> components,
                                std::span<const double> initial, NoisePlan plan, std::size_t n_streams,
                                SystemTag system, ParallelOptions par, const Stepper& stepper) {
    if (n_samples == 0) throw InvalidArgument("ensemble needs at least one sample");
    grid.validate();
    plan.n_streams = n_streams;
    plan.validate();
    TrajectoryEnsemble ens(grid, n_samples, std::move(components));
    parallel_for(n_samples, par, [&](std::size_t i) {
        const IncrementBlock xi = standard_normals(plan, i, system, grid.n_steps);
        std::vector<double> y(initial.begin(), initial.end());
        std::copy(y.begin(), y.end(), ens.state(i, 0).begin());
        for (std::size_t step = 0; step < grid.n_steps; ++step) {
            stepper(y, xi.row(step));
            if ((step + 1) % grid.stride == 0) {
                for (double v : y) {
                    if (!std::isfinite(v))
                        throw NumericalError("non-finite state in sample " + std::to_string(i) + " at step " +
                                             std::to_string(step + 1));
                }
                std::copy(y.begin(), y.end(), ens.state(i, (step + 1) / grid.stride).begin());
            }
        }
    });
    return ens;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Integrators

/// Exact AR(1) discretisation of the OU process. The marginal law at grid
/// points is exact for any dt.
inline TrajectoryEnsemble simulate_ou(const OuParams& p, const NoisePlan& plan, SystemTag system,
                                      std::size_t n_samples, const TimeGrid& grid, ParallelOptions par = {}) {
    p.validate();
    const double decay = std::exp(-p.theta * grid.dt);
    const double amp = p.sigma * std::sqrt(-std::expm1(-2.0 * p.theta * grid.dt) / (2.0 * p.theta));
    const double initial[] = {p.x0};
    return detail::run_ensemble(grid, n_samples, {"x"}, initial, plan, 1, system, par,
                                [&](std::vector<double>& y, std::span<const double> xi) {
                                    y[0] = p.mu + (y[0] - p.mu) * decay + amp * xi[0];
                                });
}

/// BAOAB splitting for the unit-mass Langevin oscillator; the O substep is
/// the exact velocity OU flow.
inline TrajectoryEnsemble simulate_langevin_baoab(const LangevinParams& p, const NoisePlan& plan, SystemTag system,
                                                  std::size_t n_samples, const TimeGrid& grid,
                                                  ParallelOptions par = {}) {
    p.validate();
    const double h = 0.5 * grid.dt;
    const double w2 = p.omega * p.omega;
    const double decay = std::exp(-p.beta * grid.dt);
    const double amp = std::sqrt(p.kT / LangevinParams::mass * -std::expm1(-2.0 * p.beta * grid.dt));
    const double initial[] = {p.x0, p.v0};
    return detail::run_ensemble(grid, n_samples, {"x", "v"}, initial, plan, 1, system, par,
                                [&](std::vector<double>& y, std::span<const double> xi) {
                                    double x = y[0];
                                    double v = y[1];
                                    v -= h * w2 * x;
                                    x += h * v;
                                    v = decay * v + amp * xi[0];
                                    x += h * v;
                                    v -= h * w2 * x;
                                    y[0] = x;
                                    y[1] = v;
                                });
}

/// Strang splitting B A O A B for the extended-variable GLE:
///   B(dt/2): v += dt/2 (-U'(x) + sum_k s_k) / m
///   A(dt/2): x += dt/2 v
///   O(dt):   each s_k follows its exact OU flow with v frozen,
///            s_k <- -c_k v + (s_k + c_k v) e^{-dt/tau_k}
///                   + sqrt(kT c_k / tau_k (1 - e^{-2 dt/tau_k})) xi_k
/// The O substep is unconditionally stable for tau_k << dt and keeps each
/// mode's conditional Gaussian law exact. Mode k is driven by noise stream k.
inline TrajectoryEnsemble simulate_gle(const GleParams& p, const NoisePlan& plan, SystemTag system,
                                       std::size_t n_samples, const TimeGrid& grid, ParallelOptions par = {}) {
    p.validate();
    const std::size_t nk = p.modes.size();
    const double h = 0.5 * grid.dt;
    const double inv_mass = 1.0 / p.mass;
    std::vector<double> decay(nk);
    std::vector<double> amp(nk);
    std::vector<double> coupling(nk);
    for (std::size_t k = 0; k < nk; ++k) {
        const auto& m = p.modes[k];
        decay[k] = std::exp(-grid.dt / m.tau);
        amp[k] = std::sqrt(p.kT * m.c / m.tau * -std::expm1(-2.0 * grid.dt / m.tau));
        coupling[k] = m.c;
    }
    std::vector<std::string> names{"x", "v"};
    std::vector<double> initial{p.x0, p.v0};
    for (std::size_t k = 0; k < nk; ++k) {
        names.push_back("s" + std::to_string(k + 1));
        initial.push_back(p.s0.empty() ? 0.0 : p.s0[k]);
    }
    const Potential potential = p.potential;
    return detail::run_ensemble(
        grid, n_samples, std::move(names), initial, plan, nk, system, par,
        [&](std::vector<double>& y, std::span<const double> xi) {
            double x = y[0];
            double v = y[1];
            double* s = y.data() + 2;
            auto force = [&] {
                double f = -grad_u(potential, x);
                for (std::size_t k = 0; k < nk; ++k) f += s[k];
                return f;
            };
            v += h * force() * inv_mass;
            x += h * v;
            for (std::size_t k = 0; k < nk; ++k) {
                const double eq = -coupling[k] * v;
                s[k] = eq + (s[k] - eq) * decay[k] + amp[k] * xi[k];
            }
            x += h * v;
            v += h * force() * inv_mass;
            y[0] = x;
            y[1] = v;
        });
}

// ---------------------------------------------------------------------------
// Ensemble files

/// CSV with header `sample,step,time,<components>`.
inline void write_ensemble_csv(std::ostream& os, const TrajectoryEnsemble& ens) {
    os << "sample,step,time";
    for (const auto& c : ens.components()) os << ',' << c;
    os << '\n';
    for (std::size_t i = 0; i < ens.n_samples(); ++i) {
        for (std::size_t r = 0; r < ens.n_records(); ++r) {
            os << i << ',' << r * ens.grid().stride << ',' << csv::format_double(ens.time(r));
            for (double v : ens.state(i, r)) os << ',' << csv::format_double(v);
            os << '\n';
        }
    }
}

inline TrajectoryEnsemble read_ensemble_csv(std::istream& is, double dt) {
    const auto table = csv::read(is);
    if (table.header.size() < 4 || table.header[0] != "sample" || table.header[1] != "step" ||
        table.header[2] != "time")
        throw InvalidArgument("ensemble CSV header must start with sample,step,time");
    std::vector<std::string> comps(table.header.begin() + 3, table.header.end());
    if (table.rows.empty()) throw InvalidArgument("ensemble CSV has no rows");
    std::size_t n_samples = 0;
    std::size_t max_step = 0;
    std::size_t stride = 0;
    for (const auto& row : table.rows) {
        n_samples = std::max<std::size_t>(n_samples, std::stoul(row[0]) + 1);
        const std::size_t step = std::stoul(row[1]);
        max_step = std::max(max_step, step);
        if (step > 0 && (stride == 0 || step < stride)) stride = step;
    }
    if (stride == 0) throw InvalidArgument("ensemble CSV needs at least two records per sample");
    TrajectoryEnsemble ens(TimeGrid{dt, max_step, stride}, n_samples, comps);
    if (table.rows.size() != n_samples * ens.n_records())
        throw InvalidArgument("ensemble CSV is not a complete sample x record table");
    for (const auto& row : table.rows) {
        auto st = ens.state(std::stoul(row[0]), std::stoul(row[1]) / stride);
        for (std::size_t c = 0; c < comps.size(); ++c) st[c] = csv::parse_double(row[3 + c]);
    }
    return ens;
}

namespace detail {
inline constexpr char kEnsembleMagic[8] = {'G', 'L', 'E', 'S', 'E', 'N', 'S', '1'};

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw InvalidArgument("truncated ensemble file");
    return v;
}
}  // namespace detail

/// Native-endian binary dump: magic, grid, component names, raw doubles.
inline void write_ensemble_binary(std::ostream& os, const TrajectoryEnsemble& ens) {
    os.write(detail::kEnsembleMagic, sizeof(detail::kEnsembleMagic));
    detail::put<double>(os, ens.dt());
    detail::put<std::uint64_t>(os, ens.grid().n_steps);
    detail::put<std::uint64_t>(os, ens.grid().stride);
    detail::put<std::uint64_t>(os, ens.n_samples());
    detail::put<std::uint64_t>(os, ens.dim());
    for (const auto& c : ens.components()) {
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.size()));
        os.write(c.data(), static_cast<std::streamsize>(c.size()));
    }
    os.write(reinterpret_cast<const char*>(ens.data().data()),
             static_cast<std::streamsize>(ens.data().size() * sizeof(double)));
}

inline TrajectoryEnsemble read_ensemble_binary(std::istream& is) {
    char magic[sizeof(detail::kEnsembleMagic)];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, detail::kEnsembleMagic, sizeof(magic)) != 0)
        throw InvalidArgument("not a glesens ensemble file");
    TimeGrid grid;
    grid.dt = detail::get<double>(is);
    grid.n_steps = detail::get<std::uint64_t>(is);
    grid.stride = detail::get<std::uint64_t>(is);
    const auto n_samples = detail::get<std::uint64_t>(is);
    const auto dim = detail::get<std::uint64_t>(is);
    std::vector<std::string> comps(dim);
    for (auto& c : comps) {
        c.resize(detail::get<std::uint32_t>(is));
        if (!is.read(c.data(), static_cast<std::streamsize>(c.size()))) throw InvalidArgument("truncated ensemble file");
    }
    TrajectoryEnsemble ens(grid, n_samples, std::move(comps));
    if (!is.read(reinterpret_cast<char*>(ens.data().data()),
                 static_cast<std::streamsize>(ens.data().size() * sizeof(double))))
        throw InvalidArgument("truncated ensemble file");
    return ens;
}

}  // namespace glesens
