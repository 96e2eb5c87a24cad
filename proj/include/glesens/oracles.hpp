#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <string>

#include "glesens/error.hpp"

/// Closed-form covariances of the OU process and the Langevin oscillator,
/// used as ground truth for Monte Carlo runs.
namespace glesens::oracles {

namespace detail {
/// (1 - e^{-a T}) / a, continuous at a = 0.
inline double one_minus_exp_over(double a, double T) {
    if (a == 0.0) return T;
    return -std::expm1(-a * T) / a;
}
inline std::complex<double> one_minus_exp_over(std::complex<double> a, double T) {
    if (std::abs(a * T) < 1e-8) return T * (1.0 - a * T / 2.0);
    return (1.0 - std::exp(-a * T)) / a;
}
}  // namespace detail

/// Cov[X1_T, X2_T] for OU processes driven by one Wiener path:
/// sigma1 sigma2 (1 - e^{-(theta1+theta2) T}) / (theta1 + theta2).
inline double ou_cov_final(double sigma1, double sigma2, double theta1, double theta2, double T) {
    if (!(theta1 + theta2 > 0.0)) throw InvalidArgument("ou_cov_final needs theta1 + theta2 > 0");
    if (!(T >= 0.0)) throw InvalidArgument("ou_cov_final needs T >= 0");
    return sigma1 * sigma2 * detail::one_minus_exp_over(theta1 + theta2, T);
}

struct TimeAverageCovariance {
    /// sigma1 sigma2 T^-1 ((theta1 theta2 + theta2^2)^-1 + (theta1^2 + theta1 theta2)^-1).
    double leading = 0.0;
    /// Full value of the double integral, no truncation.
    double exact = 0.0;
    /// The leading term omits an O(T^-2) remainder.
    static constexpr const char* remainder_order = "O(T^-2)";
};

/// Cov of the time averages T^-1 int_0^T X_i ds for OU processes sharing a
/// Wiener path. The stochastic part of each average is
/// sigma_i / (theta_i T) int_0^T (1 - e^{-theta_i (T-u)}) dW_u, which gives
/// the exact value; `leading` is its large-T term.
inline TimeAverageCovariance ou_cov_timeavg(double sigma1, double sigma2, double theta1, double theta2, double T) {
    if (!(theta1 > 0.0 && theta2 > 0.0)) throw InvalidArgument("ou_cov_timeavg needs theta1, theta2 > 0");
    if (!(T > 0.0)) throw InvalidArgument("ou_cov_timeavg needs T > 0");
    TimeAverageCovariance out;
    out.leading = sigma1 * sigma2 / T *
                  (1.0 / (theta1 * theta2 + theta2 * theta2) + 1.0 / (theta1 * theta1 + theta1 * theta2));
    const double integral = T - detail::one_minus_exp_over(theta1, T) - detail::one_minus_exp_over(theta2, T) +
                            detail::one_minus_exp_over(theta1 + theta2, T);
    out.exact = sigma1 * sigma2 / (theta1 * theta2 * T * T) * integral;
    return out;
}

enum class OuParameter { theta, sigma };
enum class OuRegime { final_time, time_average };

struct VarDiffExpansion {
    /// Leading-order Var[D]; when constant_known is false only the order is
    /// known and `value` carries a unit constant.
    double value = 0.0;
    bool constant_known = true;
    std::string order;
    /// Set when the truncation is known to be inaccurate at the given T.
    bool truncation_warning = false;
};

/// Leading-order Var[D] = Var[f(X1) - f(X2)] for a central difference in
/// theta or sigma (theta1,2 = theta +- eps or sigma1,2 = sigma +- eps), with
/// definite x0 and mu.
inline VarDiffExpansion ou_vardiff_expansions(OuParameter parameter, OuRegime regime, bool coupled, double sigma,
                                              double theta, double eps, double T) {
    if (!(theta > 0.0) || !(sigma >= 0.0) || !(T > 0.0) || !(eps >= 0.0))
        throw InvalidArgument("ou_vardiff_expansions: need theta > 0, sigma >= 0, T > 0, eps >= 0");
    const double s2 = sigma * sigma;
    VarDiffExpansion out;
    if (regime == OuRegime::final_time) {
        if (coupled) {
            out.value = eps * eps;
            out.constant_known = false;
            out.order = "O(eps^2)";
        } else {
            out.value = s2 / theta - s2 / theta * std::exp(-2.0 * T * theta);
            out.order = "O(1) + O(eps)";
        }
        return out;
    }
    const double t1 = 1.0 / T;
    const double t2 = t1 * t1;
    if (parameter == OuParameter::theta) {
        if (coupled) {
            out.value = eps * eps * 4.0 * s2 * t1 / std::pow(theta, 4);
            out.order = "eps^2 (T^-1 + O(T^-2)) + O(eps^4)";
            out.truncation_warning = T * theta < 100.0;
        } else {
            // All T^-2 terms carry theta^-3; together they are the exact
            // eps^0 term 2 Var[time average].
            const double th3 = std::pow(theta, 3);
            out.value = 2.0 * s2 * t1 / (theta * theta) - 3.0 * s2 * t2 / th3 +
                        4.0 * s2 * t2 / th3 * std::exp(-T * theta) - s2 * t2 / th3 * std::exp(-2.0 * T * theta);
            out.order = "O(1) + O(eps)";
        }
        return out;
    }
    if (coupled) {
        out.value = eps * eps * t1 / (theta * theta);
        out.constant_known = false;
        out.order = "eps^2 (c T^-1 theta^-2 + O(T^-2))";
    } else {
        out.value = 2.0 * s2 * t1 / (theta * theta) + eps * eps * 2.0 * t1 / (theta * theta);
        out.order = "O(1) + O(T^-2)(1 + eps^2)";
        out.truncation_warning = T * theta < 100.0;
    }
    return out;
}

/// Eigenvalues mu1,2 = beta/2 +- sqrt(beta^2/4 - omega^2) of the Langevin
/// drift matrix [[0, -1], [omega^2, beta]].
struct LangevinEigen {
    std::complex<double> mu1;
    std::complex<double> mu2;
};

inline LangevinEigen langevin_eigen(double beta, double omega) {
    if (!(beta > 0.0) || !(omega >= 0.0)) throw InvalidArgument("langevin_eigen needs beta > 0, omega >= 0");
    if (std::abs(beta - 2.0 * omega) < 1e-12) throw CriticallyDamped("beta == 2 omega has a repeated eigenvalue");
    const std::complex<double> root = std::sqrt(std::complex<double>(beta * beta / 4.0 - omega * omega, 0.0));
    return {beta / 2.0 + root, beta / 2.0 - root};
}

/// Cov[X_T, X~_T] of two Langevin oscillators (unit mass, definite initial
/// data) driven by one Wiener path, in terms of their drift eigenvalues.
/// With gamma = 2 kT:
///   phi = gamma sqrt((mu1+mu2)(mu~1+mu~2)) / ((mu1-mu2)(mu~1-mu~2))
///         * [g(mu1+mu~1) - g(mu1+mu~2) - g(mu2+mu~1) + g(mu2+mu~2)],
/// g(a) = (1 - e^{-a T}) / a. Equal arguments give Var[X_T].
inline double langevin_phi(const LangevinEigen& nominal, const LangevinEigen& perturbed, double kT, double T) {
    using C = std::complex<double>;
    const C a1 = nominal.mu1, a2 = nominal.mu2, b1 = perturbed.mu1, b2 = perturbed.mu2;
    for (const C s : {a1 + b1, a1 + b2, a2 + b1, a2 + b2}) {
        if (std::abs(s) == 0.0) throw InvalidArgument("langevin_phi: eigenvalue sums must be nonzero");
    }
    const double gamma = 2.0 * kT;
    const C prefactor = gamma * std::sqrt((a1 + a2) * (b1 + b2)) / ((a1 - a2) * (b1 - b2));
    const C bracket = detail::one_minus_exp_over(a1 + b1, T) - detail::one_minus_exp_over(a1 + b2, T) -
                      detail::one_minus_exp_over(a2 + b1, T) + detail::one_minus_exp_over(a2 + b2, T);
    const C phi = prefactor * bracket;
    if (!std::isfinite(phi.real()) || std::abs(phi.imag()) >= 1e-10 * std::abs(phi.real()) + 1e-300)
        throw NumericalError("langevin_phi: result has a non-negligible imaginary part");
    return phi.real();
}

}  // namespace glesens::oracles
