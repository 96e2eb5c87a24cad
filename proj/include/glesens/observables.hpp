#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <ostream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "glesens/csv.hpp"
#include "glesens/dynamics.hpp"
#include "glesens/error.hpp"
#include "glesens/stats.hpp"

namespace glesens {

/// Value of a state component at each stored time (the finite-time
/// observable when read at a single time).
struct StateValue {
    std::string component;
};
/// T^-1 int_0^T component dt per sample, trapezoidal rule; a scalar.
struct TimeAverage {
    std::string component;
};
/// V_t / v0 for a definite initial velocity.
struct NormalizedVacf {};
/// X_t / x0 for a definite initial position.
struct NormalizedPacf {};

using Observable = std::variant<StateValue, TimeAverage, NormalizedVacf, NormalizedPacf>;

/// Accepts `vacf`, `pacf`, `state:<comp>` (alias `final:<comp>`) and
/// `timeavg:<comp>`.
inline Observable parse_observable(const std::string& text) {
    if (text == "vacf") return NormalizedVacf{};
    if (text == "pacf") return NormalizedPacf{};
    const auto colon = text.find(':');
    if (colon != std::string::npos && colon + 1 < text.size()) {
        const std::string head = text.substr(0, colon);
        const std::string comp = text.substr(colon + 1);
        if (head == "state" || head == "final") return StateValue{comp};
        if (head == "timeavg") return TimeAverage{comp};
    }
    throw InvalidArgument("unknown observable '" + text + "'");
}

inline std::string observable_name(const Observable& obs) {
    return std::visit(
        [](const auto& o) -> std::string {
            using T = std::decay_t<decltype(o)>;
            if constexpr (std::is_same_v<T, StateValue>) return "state:" + o.component;
            else if constexpr (std::is_same_v<T, TimeAverage>) return "timeavg:" + o.component;
            else if constexpr (std::is_same_v<T, NormalizedVacf>) return "vacf";
            else return "pacf";
        },
        obs);
}

/// Per-sample observable values on a time axis, sample-major. Scalar
/// observables have a single time, the horizon.
struct ObservableValues {
    std::vector<double> times;
    std::size_t n_samples = 0;
    std::vector<double> values;

    std::size_t n_times() const { return times.size(); }
    double operator()(std::size_t sample, std::size_t t) const { return values[sample * times.size() + t]; }
    std::vector<double> column(std::size_t t) const {
        std::vector<double> out(n_samples);
        for (std::size_t i = 0; i < n_samples; ++i) out[i] = (*this)(i, t);
        return out;
    }
    /// Column index of time t (scalar observables accept any t).
    std::size_t index_of(double t) const {
        if (times.size() == 1) return 0;
        const double step = times[1] - times[0];
        const double r = std::round(t / step);
        if (r < 0.0 || r >= static_cast<double>(times.size()) || std::abs(t / step - r) > 1e-6)
            throw InvalidArgument("time " + csv::format_double(t) + " is not on the observable grid");
        return static_cast<std::size_t>(r);
    }
};

struct TimeSeries {
    std::vector<double> times;
    std::vector<double> mean;
    std::vector<double> std_error;
};

/// Per-sample trapezoidal time average of one component over [0, T].
inline std::vector<double> time_average(const TrajectoryEnsemble& ens, const std::string& component) {
    if (ens.n_records() < 2) throw InvalidArgument("time average needs at least two grid points");
    const std::size_t c = ens.component_index(component);
    const std::size_t last = ens.n_records() - 1;
    std::vector<double> out(ens.n_samples());
    for (std::size_t i = 0; i < ens.n_samples(); ++i) {
        double acc = 0.5 * (ens.at(i, 0, c) + ens.at(i, last, c));
        for (std::size_t r = 1; r < last; ++r) acc += ens.at(i, r, c);
        out[i] = acc / static_cast<double>(last);
    }
    return out;
}

namespace detail {
inline ObservableValues scaled_component(const TrajectoryEnsemble& ens, std::size_t c, double scale) {
    ObservableValues out;
    out.n_samples = ens.n_samples();
    out.times.resize(ens.n_records());
    for (std::size_t r = 0; r < ens.n_records(); ++r) out.times[r] = ens.time(r);
    out.values.resize(out.n_samples * out.times.size());
    for (std::size_t i = 0; i < ens.n_samples(); ++i) {
        for (std::size_t r = 0; r < ens.n_records(); ++r) {
            out.values[i * ens.n_records() + r] = ens.at(i, r, c) / scale;
        }
    }
    return out;
}

// The FFTW planner is not thread safe.
inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

inline double definite_initial(const TrajectoryEnsemble& ens, std::size_t c, const char* what) {
    const double v = ens.at(0, 0, c);
    if (v == 0.0) throw InvalidArgument(std::string("normalized ") + what + " needs a nonzero definite initial value");
    return v;
}
}  // namespace detail

/// Per-sample values of an observable. VACF/PACF normalise by the definite
/// initial value stored in record 0.
inline ObservableValues evaluate(const Observable& obs, const TrajectoryEnsemble& ens) {
    if (const auto* s = std::get_if<StateValue>(&obs))
        return detail::scaled_component(ens, ens.component_index(s->component), 1.0);
    if (const auto* a = std::get_if<TimeAverage>(&obs)) {
        ObservableValues out;
        out.n_samples = ens.n_samples();
        out.times = {ens.grid().horizon()};
        out.values = time_average(ens, a->component);
        return out;
    }
    if (std::holds_alternative<NormalizedVacf>(obs)) {
        const auto c = ens.component_index("v");
        return detail::scaled_component(ens, c, detail::definite_initial(ens, c, "VACF"));
    }
    const auto c = ens.component_index("x");
    return detail::scaled_component(ens, c, detail::definite_initial(ens, c, "PACF"));
}

/// Mean and standard error of the mean at each time.
inline TimeSeries summarize(const ObservableValues& values) {
    TimeSeries ts;
    ts.times = values.times;
    ts.mean.resize(values.n_times());
    ts.std_error.resize(values.n_times());
    for (std::size_t t = 0; t < values.n_times(); ++t) {
        const auto col = values.column(t);
        ts.mean[t] = stats::mean(col);
        ts.std_error[t] = col.size() > 1 ? stats::standard_error_of_mean(col) : 0.0;
    }
    return ts;
}

/// Ensemble estimate <V_t> / v0 with per-time standard errors.
inline TimeSeries normalized_vacf(const TrajectoryEnsemble& ens, double v0) {
    if (v0 == 0.0) throw InvalidArgument("normalized VACF needs v0 != 0");
    return summarize(detail::scaled_component(ens, ens.component_index("v"), v0));
}

inline TimeSeries normalized_pacf(const TrajectoryEnsemble& ens, double x0) {
    if (x0 == 0.0) throw InvalidArgument("normalized PACF needs x0 != 0");
    return summarize(detail::scaled_component(ens, ens.component_index("x"), x0));
}

/// Biased autocorrelation r(l) = n^-1 sum_t z_t z_{t+l} of the mean-removed
/// series via zero-padded FFT, normalised so r(0) = 1.
inline std::vector<double> stationary_acf_fft(std::span<const double> series) {
    const std::size_t n = series.size();
    if (n < 2) throw InvalidArgument("autocorrelation needs at least two points");
    bool constant = true;
    for (double v : series) constant = constant && v == series[0];
    if (constant) throw InvalidArgument("autocorrelation of a constant series is undefined");

    std::size_t padded = 1;
    while (padded < 2 * n) padded <<= 1;
    const double mu = stats::mean(series);

    std::unique_ptr<double, decltype(&fftw_free)> real(fftw_alloc_real(padded), &fftw_free);
    std::unique_ptr<fftw_complex, decltype(&fftw_free)> spectrum(fftw_alloc_complex(padded / 2 + 1), &fftw_free);
    fftw_plan forward = nullptr;
    fftw_plan backward = nullptr;
    {
        std::lock_guard lock(detail::fftw_planner_mutex());
        forward = fftw_plan_dft_r2c_1d(static_cast<int>(padded), real.get(), spectrum.get(), FFTW_ESTIMATE);
        backward = fftw_plan_dft_c2r_1d(static_cast<int>(padded), spectrum.get(), real.get(), FFTW_ESTIMATE);
    }
    for (std::size_t i = 0; i < padded; ++i) real.get()[i] = i < n ? series[i] - mu : 0.0;
    fftw_execute(forward);
    for (std::size_t k = 0; k < padded / 2 + 1; ++k) {
        auto& z = spectrum.get()[k];
        z[0] = z[0] * z[0] + z[1] * z[1];
        z[1] = 0.0;
    }
    fftw_execute(backward);
    {
        std::lock_guard lock(detail::fftw_planner_mutex());
        fftw_destroy_plan(forward);
        fftw_destroy_plan(backward);
    }
    std::vector<double> acf(n);
    const double r0 = real.get()[0];
    if (!(r0 > 0.0)) throw NumericalError("autocorrelation has zero variance");
    for (std::size_t l = 0; l < n; ++l) acf[l] = real.get()[l] / r0;
    return acf;
}

/// CSV with header `time,mean,stderr`.
inline void write_series_csv(std::ostream& os, const TimeSeries& ts) {
    os << "time,mean,stderr\n";
    for (std::size_t i = 0; i < ts.times.size(); ++i) {
        os << csv::format_double(ts.times[i]) << ',' << csv::format_double(ts.mean[i]) << ','
           << csv::format_double(ts.std_error[i]) << '\n';
    }
}

}  // namespace glesens
