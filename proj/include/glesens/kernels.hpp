#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "glesens/csv.hpp"
#include "glesens/error.hpp"
#include "glesens/nnls.hpp"

namespace glesens {

/// kappa(t) = gamma_lambda / Gamma(1 - lambda) * t^(-lambda), 0 < lambda < 1.
struct PowerLawKernel {
    double gamma_lambda = 1.0;
    double lambda = 0.5;

    void validate() const {
        if (!(gamma_lambda > 0.0) || !std::isfinite(gamma_lambda))
            throw InvalidArgument("power-law amplitude must be positive");
        if (!(lambda > 0.0 && lambda < 1.0)) throw InvalidArgument("power-law exponent must lie in (0, 1)");
    }
};

inline double power_law_eval(const PowerLawKernel& kernel, double t) {
    kernel.validate();
    if (!(t > 0.0)) throw InvalidArgument("power-law kernel is singular at t <= 0");
    return kernel.gamma_lambda / std::tgamma(1.0 - kernel.lambda) * std::pow(t, -kernel.lambda);
}

/// One exponential mode (c / tau) exp(-t / tau).
struct PronyMode {
    double c = 0.0;
    double tau = 1.0;

    friend bool operator==(const PronyMode&, const PronyMode&) = default;
};

/// Positive Prony series: all c_k >= 0, tau_k > 0 and strictly increasing.
class PronySeries {
public:
    PronySeries() = default;
    explicit PronySeries(std::vector<PronyMode> modes) : modes_(std::move(modes)) {
        for (std::size_t k = 0; k < modes_.size(); ++k) {
            const auto& m = modes_[k];
            if (!std::isfinite(m.c) || m.c < 0.0)
                throw InvalidArgument("prony amplitude c_" + std::to_string(k + 1) + " must be >= 0");
            if (!std::isfinite(m.tau) || m.tau <= 0.0)
                throw InvalidArgument("prony relaxation time tau_" + std::to_string(k + 1) + " must be > 0");
            if (k > 0 && !(m.tau > modes_[k - 1].tau))
                throw InvalidArgument("prony relaxation times must be strictly increasing");
        }
    }

    std::size_t size() const noexcept { return modes_.size(); }
    bool empty() const noexcept { return modes_.empty(); }
    const std::vector<PronyMode>& modes() const noexcept { return modes_; }
    const PronyMode& operator[](std::size_t k) const { return modes_.at(k); }

    friend bool operator==(const PronySeries&, const PronySeries&) = default;

private:
    std::vector<PronyMode> modes_;
};

inline double prony_eval(const std::vector<PronyMode>& modes, double t) {
    if (!(t >= 0.0)) throw InvalidArgument("prony kernel is defined for t >= 0");
    double acc = 0.0;
    for (const auto& m : modes) acc += m.c / m.tau * std::exp(-t / m.tau);
    return acc;
}

inline double prony_eval(const PronySeries& series, double t) { return prony_eval(series.modes(), t); }

/// n log-spaced values from lo to hi inclusive; a single value sits at the
/// geometric midpoint.
inline std::vector<double> log_space(double lo, double hi, std::size_t n) {
    if (!(lo > 0.0) || !(hi >= lo) || n == 0) throw InvalidArgument("log_space: need 0 < lo <= hi, n >= 1");
    std::vector<double> out(n);
    if (n == 1) {
        out[0] = std::sqrt(lo * hi);
        return out;
    }
    const double a = std::log(lo);
    const double b = std::log(hi);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
    }
    out.front() = lo;
    out.back() = hi;
    return out;
}

struct FitOptions {
    /// Fit window is [start_fraction * T, window_factor * T].
    double start_fraction = 1e-3;
    double window_factor = 100.0;
    std::size_t n_points = 1000;
    double kkt_tolerance = 1e-10;
    /// Overrides the log-spaced relaxation-time grid when set.
    std::optional<std::vector<double>> tau_grid;
};

struct FitReport {
    /// max_i |fit(t_i) - kappa(t_i)| / kappa(t_i) over the sample points.
    double sup_relative_error = 0.0;
    double residual_norm = 0.0;
    double window_lo = 0.0;
    double window_hi = 0.0;
    /// 2-norm condition number of the column-normalised design matrix.
    double condition_estimate = 0.0;
    double kkt_residual = 0.0;
};

struct PronyFit {
    PronySeries series;
    FitReport report;
};

/// Nonnegative least-squares fit of the amplitudes c_k for fixed tau_k:
/// minimises sum_i (target(t_i) - sum_k c_k/tau_k exp(-t_i/tau_k))^2.
inline PronyFit fit_prony_amplitudes(const std::function<double(double)>& target,
                                     std::vector<double> tau_grid, const std::vector<double>& sample_times,
                                     double kkt_tolerance = 1e-10) {
    if (tau_grid.empty()) throw InvalidArgument("fit needs at least one relaxation time");
    if (sample_times.size() < tau_grid.size()) throw InvalidArgument("fit needs at least as many points as modes");
    const auto rows = static_cast<Eigen::Index>(sample_times.size());
    const auto cols = static_cast<Eigen::Index>(tau_grid.size());
    Eigen::MatrixXd design(rows, cols);
    Eigen::VectorXd rhs(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double t = sample_times[static_cast<std::size_t>(i)];
        rhs[i] = target(t);
        for (Eigen::Index k = 0; k < cols; ++k) {
            const double tau = tau_grid[static_cast<std::size_t>(k)];
            design(i, k) = std::exp(-t / tau) / tau;
        }
    }
    if (!rhs.allFinite()) throw NumericalError("fit target is not finite on the sample points");

    const NnlsResult sol = nnls(design, rhs, kkt_tolerance);

    Eigen::MatrixXd normalised = design;
    for (Eigen::Index k = 0; k < cols; ++k) normalised.col(k) /= normalised.col(k).norm();
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(normalised);
    const auto& sv = svd.singularValues();

    std::vector<PronyMode> modes(tau_grid.size());
    for (std::size_t k = 0; k < modes.size(); ++k) {
        modes[k] = {std::max(0.0, sol.x[static_cast<Eigen::Index>(k)]), tau_grid[k]};
    }
    PronyFit fit{PronySeries(std::move(modes)), {}};
    fit.report.residual_norm = sol.residual_norm;
    fit.report.kkt_residual = sol.kkt_residual;
    fit.report.condition_estimate = sv[sv.size() - 1] > 0.0 ? sv[0] / sv[sv.size() - 1]
                                                             : std::numeric_limits<double>::infinity();
    fit.report.window_lo = sample_times.front();
    fit.report.window_hi = sample_times.back();
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double value = prony_eval(fit.series, sample_times[static_cast<std::size_t>(i)]);
        fit.report.sup_relative_error =
            std::max(fit.report.sup_relative_error, std::abs(value - rhs[i]) / std::abs(rhs[i]));
    }
    return fit;
}

/// Fits an n_modes positive Prony series to a power-law kernel for a
/// simulation of length sim_length. Relaxation times are log-spaced over the
/// fit window [1e-3 T, 100 T], which also carries the log-spaced sample points.
inline PronyFit fit_prony(const PowerLawKernel& target, std::size_t n_modes, double sim_length,
                          const FitOptions& options = {}) {
    target.validate();
    if (n_modes == 0) throw InvalidArgument("fit_prony needs at least one mode");
    if (!(sim_length > 0.0) || !std::isfinite(sim_length)) throw InvalidArgument("simulation length must be > 0");
    const double lo = options.start_fraction * sim_length;
    const double hi = options.window_factor * sim_length;
    std::vector<double> taus = options.tau_grid ? *options.tau_grid : log_space(lo, hi, n_modes);
    if (options.tau_grid && taus.size() != n_modes)
        throw InvalidArgument("tau grid size does not match the requested number of modes");
    const auto points = log_space(lo, hi, options.n_points);
    return fit_prony_amplitudes([&](double t) { return power_law_eval(target, t); }, std::move(taus), points,
                                options.kkt_tolerance);
}

/// CSV with header `k,c_k,tau_k`, k counted from 1.
inline void write_prony_csv(std::ostream& os, const PronySeries& series) {
    os << "k,c_k,tau_k\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        os << (k + 1) << ',' << csv::format_double(series[k].c) << ',' << csv::format_double(series[k].tau)
           << '\n';
    }
}

inline PronySeries read_prony_csv(std::istream& is) {
    const auto table = csv::read(is);
    if (table.header != std::vector<std::string>{"k", "c_k", "tau_k"})
        throw InvalidArgument("prony CSV header must be k,c_k,tau_k");
    std::vector<PronyMode> modes;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (csv::parse_double(row[0]) != static_cast<double>(r + 1))
            throw InvalidArgument("prony CSV rows must be numbered 1..N in order");
        modes.push_back({csv::parse_double(row[1]), csv::parse_double(row[2])});
    }
    return PronySeries(std::move(modes));
}

}  // namespace glesens
