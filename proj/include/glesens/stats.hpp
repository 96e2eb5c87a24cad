#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>

#include "glesens/error.hpp"

/// Small sample-statistics helpers shared by observables and estimators.
/// All reductions run in index order so results are reproducible bit for bit.
namespace glesens::stats {

inline double mean(std::span<const double> x) {
    if (x.empty()) throw InvalidArgument("mean of empty sample");
    double acc = 0.0;
    for (double v : x) acc += v;
    return acc / static_cast<double>(x.size());
}

/// Unbiased sample covariance (denominator n - 1).
inline double covariance(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw InvalidArgument("covariance: length mismatch");
    if (x.size() < 2) throw InvalidArgument("covariance needs at least two samples");
    const double mx = mean(x);
    const double my = mean(y);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - mx) * (y[i] - my);
    return acc / static_cast<double>(x.size() - 1);
}

inline double variance(std::span<const double> x) { return covariance(x, x); }

inline double standard_error_of_mean(std::span<const double> x) {
    return std::sqrt(variance(x) / static_cast<double>(x.size()));
}

/// Standard error of the unbiased sample covariance of (x, y), estimated from
/// the empirical fourth moment: Var[s_xy] ~ (m_22 - s_xy^2) / n.
inline double covariance_stderr(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n < 4) throw InvalidArgument("covariance_stderr needs at least four samples");
    const double mx = mean(x);
    const double my = mean(y);
    double m11 = 0.0;
    double m22 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = (x[i] - mx) * (y[i] - my);
        m11 += p;
        m22 += p * p;
    }
    const double dn = static_cast<double>(n);
    m11 /= dn;
    m22 /= dn;
    const double v = (m22 - m11 * m11) / dn;
    return std::sqrt(v > 0.0 ? v : 0.0);
}

inline double variance_stderr(std::span<const double> x) { return covariance_stderr(x, x); }

struct LineFit {
    double slope = std::numeric_limits<double>::quiet_NaN();
    double intercept = std::numeric_limits<double>::quiet_NaN();
};

/// Ordinary least squares y = intercept + slope * x.
inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw InvalidArgument("fit_line: length mismatch");
    if (x.size() < 2) throw InvalidArgument("fit_line: insufficient points for slope");
    const double mx = mean(x);
    const double my = mean(y);
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) throw InvalidArgument("fit_line: abscissae are all equal");
    LineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    return fit;
}

}  // namespace glesens::stats
