#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "glesens/dynamics.hpp"
#include "glesens/oracles.hpp"
#include "glesens/stats.hpp"

using namespace glesens;
using namespace glesens::oracles;

namespace {

struct GaussLegendre {
    std::vector<double> x, w;
};

// Nodes and weights on [-1, 1] by Newton iteration on P_n.
GaussLegendre gauss_legendre(int n) {
    GaussLegendre g;
    g.x.resize(n);
    g.w.resize(n);
    for (int i = 0; i < n; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = z;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (z * p1 - p0) / (z * z - 1.0);
            const double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        g.x[i] = z;
        g.w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    return g;
}

template <class F>
double integrate(F&& f, double a, double b, int panels = 16) {
    static const GaussLegendre g = gauss_legendre(20);
    const double h = (b - a) / panels;
    double sum = 0.0;
    for (int p = 0; p < panels; ++p) {
        const double mid = a + (p + 0.5) * h;
        for (std::size_t i = 0; i < g.x.size(); ++i) sum += g.w[i] * f(mid + 0.5 * h * g.x[i]);
    }
    return 0.5 * h * sum;
}

// Cov[X1_s, X2_t] for a shared Wiener path: sigma1 sigma2 int_0^{s^t} e^{-theta1 (s-r)} e^{-theta2 (t-r)} dr,
// integrated over r numerically.
double pointwise_cov(double s1, double s2, double th1, double th2, double s, double t) {
    const double m = std::min(s, t);
    if (m == 0.0) return 0.0;
    return s1 * s2 * integrate([&](double r) { return std::exp(-th1 * (s - r) - th2 * (t - r)); }, 0.0, m, 4);
}

// T^-2 int int over [0,T]^2, split along the diagonal so each piece is smooth.
double timeavg_by_quadrature(double s1, double s2, double th1, double th2, double T) {
    const double lower = integrate(
        [&](double t) { return integrate([&](double s) { return pointwise_cov(s1, s2, th1, th2, s, t); }, 0.0, t, 2); },
        0.0, T, 4);
    const double upper = integrate(
        [&](double s) { return integrate([&](double t) { return pointwise_cov(s1, s2, th1, th2, s, t); }, 0.0, s, 2); },
        0.0, T, 4);
    return (lower + upper) / (T * T);
}

}  // namespace

TEST(Quadrature, IntegratesPolynomialsAndExponentials) {
    EXPECT_NEAR(integrate([](double x) { return x * x * x * x; }, 0.0, 2.0, 1), 32.0 / 5.0, 1e-13);
    EXPECT_NEAR(integrate([](double x) { return std::exp(-x); }, 0.0, 10.0), 1.0 - std::exp(-10.0), 1e-14);
}

TEST(OuCovFinal, MatchesQuadrature) {
    for (auto [s1, s2, th1, th2, T] : {std::array{0.3, 0.3, 1.0, 1.0, 10.0}, std::array{0.5, 1.5, 0.2, 2.0, 3.0},
                                       std::array{1.0, 0.7, 0.99, 1.01, 0.5}}) {
        const double want = pointwise_cov(s1, s2, th1, th2, T, T);
        EXPECT_NEAR(ou_cov_final(s1, s2, th1, th2, T), want, 1e-8 * std::abs(want));
    }
}

TEST(OuCovFinal, KnownValuesAndLimits) {
    EXPECT_NEAR(ou_cov_final(0.3, 0.3, 1.0, 1.0, 10.0), 0.045 * (1.0 - std::exp(-20.0)), 1e-15);
    EXPECT_NEAR(ou_cov_final(0.3, 0.3, 1.0, 1.0, 10.0), 0.0450, 5e-5);
    EXPECT_EQ(ou_cov_final(0.3, 0.3, 1.0, 1.0, 0.0), 0.0);
    EXPECT_NEAR(ou_cov_final(0.3, 0.3, 1.0, 1.0, 1e-9), 0.09e-9, 1e-18);
    EXPECT_THROW(ou_cov_final(1.0, 1.0, 0.5, -0.5, 1.0), InvalidArgument);
}

TEST(OuCovTimeavg, ExactMatchesQuadrature) {
    for (auto [s1, s2, th1, th2, T] : {std::array{0.3, 0.3, 1.0, 1.0, 10.0}, std::array{0.3, 0.3, 1.01, 0.99, 10.0},
                                       std::array{0.5, 1.5, 0.2, 2.0, 3.0}, std::array{1.0, 1.0, 3.0, 0.5, 0.25}}) {
        const double want = timeavg_by_quadrature(s1, s2, th1, th2, T);
        EXPECT_NEAR(ou_cov_timeavg(s1, s2, th1, th2, T).exact, want, 1e-8 * std::abs(want))
            << s1 << ' ' << s2 << ' ' << th1 << ' ' << th2 << ' ' << T;
    }
}

TEST(OuCovTimeavg, LeadingTermValueAndScaling) {
    const auto v = ou_cov_timeavg(0.3, 0.3, 1.0, 1.0, 10.0);
    EXPECT_NEAR(v.leading, 0.0090, 1e-15);
    EXPECT_EQ(std::string(TimeAverageCovariance::remainder_order), "O(T^-2)");
    EXPECT_NEAR(ou_cov_timeavg(0.6, 0.3, 1.0, 1.0, 10.0).leading, 2.0 * v.leading, 1e-15);
    EXPECT_NEAR(ou_cov_timeavg(0.6, 0.3, 1.0, 1.0, 10.0).exact, 2.0 * v.exact, 1e-15);
}

TEST(OuCovTimeavg, LeadingTermIsTheLargeTLimit) {
    double previous = std::numeric_limits<double>::infinity();
    for (double T : {10.0, 100.0, 1000.0, 10000.0}) {
        const auto v = ou_cov_timeavg(0.3, 0.4, 0.8, 1.3, T);
        const double rel = std::abs(v.exact - v.leading) / v.leading;
        EXPECT_LT(rel, previous);
        // The relative gap falls like T^-1.
        EXPECT_LT(rel * T, 5.0);
        previous = rel;
    }
}

TEST(VarDiff, CoupledThetaTimeAverageValue) {
    const auto e = ou_vardiff_expansions(OuParameter::theta, OuRegime::time_average, true, 0.3, 1.0, 1e-2, 10.0);
    EXPECT_NEAR(e.value, 3.6e-6, 1e-18);
    EXPECT_TRUE(e.constant_known);
    EXPECT_TRUE(e.truncation_warning);
    EXPECT_EQ(ou_vardiff_expansions(OuParameter::theta, OuRegime::time_average, true, 0.3, 1.0, 0.0, 10.0).value, 0.0);
}

TEST(VarDiff, CoupledThetaLeadingTermMatchesExactAtLargeT) {
    // Var[D] of a central pair, assembled from the exact covariances.
    const double s = 0.3, th = 1.0, eps = 1e-3, T = 1e4;
    const auto c = [&](double a, double b) { return ou_cov_timeavg(s, s, a, b, T).exact; };
    const double exact = c(th + eps, th + eps) + c(th - eps, th - eps) - 2.0 * c(th + eps, th - eps);
    const auto e = ou_vardiff_expansions(OuParameter::theta, OuRegime::time_average, true, s, th, eps, T);
    EXPECT_NEAR(e.value, exact, 2e-3 * exact);
    EXPECT_FALSE(e.truncation_warning);
}

TEST(VarDiff, IndependentThetaTimeAverageIsTwiceTheVariance) {
    const auto e = ou_vardiff_expansions(OuParameter::theta, OuRegime::time_average, false, 0.3, 1.0, 1e-2, 10.0);
    EXPECT_NEAR(e.value, 2.0 * ou_cov_timeavg(0.3, 0.3, 1.0, 1.0, 10.0).exact, 1e-15);
    EXPECT_NEAR(e.value, 0.0153, 1e-6);
    EXPECT_GT(e.value, 0.0);
}

TEST(VarDiff, IndependentFinalTimeIsTwiceTheVariance) {
    const auto e = ou_vardiff_expansions(OuParameter::theta, OuRegime::final_time, false, 0.3, 1.0, 0.1, 10.0);
    EXPECT_NEAR(e.value, 2.0 * ou_cov_final(0.3, 0.3, 1.0, 1.0, 10.0), 1e-15);
}

TEST(VarDiff, OrderOnlyCasesAreFlagged) {
    EXPECT_FALSE(ou_vardiff_expansions(OuParameter::sigma, OuRegime::time_average, true, 0.3, 1.0, 0.1, 10.0)
                     .constant_known);
    EXPECT_FALSE(
        ou_vardiff_expansions(OuParameter::theta, OuRegime::final_time, true, 0.3, 1.0, 0.1, 10.0).constant_known);
    EXPECT_THROW(ou_vardiff_expansions(OuParameter::theta, OuRegime::final_time, true, 0.3, 0.0, 0.1, 10.0),
                 InvalidArgument);
}

TEST(LangevinEigen, VietaIdentities) {
    for (double beta : {0.1, 0.5, 1.0, 3.0, 7.5})
        for (double omega : {0.0, 0.3, 1.0, std::numbers::sqrt2, 4.0}) {
            if (std::abs(beta - 2.0 * omega) < 1e-9) continue;
            const auto e = langevin_eigen(beta, omega);
            EXPECT_NEAR(std::abs(e.mu1 + e.mu2 - beta), 0.0, 1e-12 * beta);
            EXPECT_NEAR(std::abs(e.mu1 * e.mu2 - omega * omega), 0.0, 1e-12 * std::max(1.0, omega * omega));
            EXPECT_GE(e.mu2.real(), 0.0);
            EXPECT_EQ(e.mu1.imag() != 0.0, beta < 2.0 * omega);
        }
}

TEST(LangevinEigen, KnownExamples) {
    const auto over = langevin_eigen(3.0, std::numbers::sqrt2);
    EXPECT_NEAR(std::abs(over.mu1 - 2.0), 0.0, 1e-14);
    EXPECT_NEAR(std::abs(over.mu2 - 1.0), 0.0, 1e-14);
    const auto under = langevin_eigen(1.0, 1.0);
    EXPECT_NEAR(std::abs(under.mu1 - std::complex<double>(0.5, std::sqrt(0.75))), 0.0, 1e-14);
    EXPECT_NEAR(std::abs(under.mu2 - std::complex<double>(0.5, -std::sqrt(0.75))), 0.0, 1e-14);
    EXPECT_THROW(langevin_eigen(2.0, 1.0), CriticallyDamped);
    EXPECT_THROW(langevin_eigen(0.0, 1.0), InvalidArgument);
}

TEST(LangevinPhi, IsSymmetric) {
    const auto a = langevin_eigen(3.1, std::numbers::sqrt2);
    const auto b = langevin_eigen(2.9, std::numbers::sqrt2);
    EXPECT_NEAR(langevin_phi(a, b, 0.5, 5.0), langevin_phi(b, a, 0.5, 5.0), 1e-15);
    const auto u = langevin_eigen(1.1, 1.0);
    const auto v = langevin_eigen(0.9, 1.0);
    EXPECT_NEAR(langevin_phi(u, v, 0.5, 10.0), langevin_phi(v, u, 0.5, 10.0), 1e-14);
}

TEST(LangevinPhi, LongTimeLimitIsGibbsVariance) {
    for (auto [beta, omega] : {std::pair{3.0, std::numbers::sqrt2}, std::pair{1.0, 1.0}, std::pair{0.4, 2.0}}) {
        const auto e = langevin_eigen(beta, omega);
        EXPECT_NEAR(langevin_phi(e, e, 0.5, 1e4), 0.5 / (omega * omega), 1e-10) << beta << ' ' << omega;
    }
}

TEST(LangevinPhi, VanishesAtTimeZero) {
    const auto e = langevin_eigen(1.0, 1.0);
    EXPECT_NEAR(langevin_phi(e, e, 0.5, 1e-12), 0.0, 1e-12);
}

TEST(LangevinPhi, FlagsMisuseThroughTheImaginaryPart) {
    // A pair that is not a conjugate set cannot come from a real drift matrix.
    const LangevinEigen bogus{{1.0, 1.0}, {2.0, 0.0}};
    const auto real = langevin_eigen(3.0, std::numbers::sqrt2);
    EXPECT_THROW(langevin_phi(bogus, real, 0.5, 1.0), NumericalError);
}

TEST(LangevinPhi, EqualArgumentsMatchMonteCarloVariance) {
    const double beta = 3.0, omega = std::numbers::sqrt2, kT = 0.5, T = 2.0;
    LangevinParams p;
    p.omega = omega;
    p.beta = beta;
    p.kT = kT;
    p.x0 = 0.4;
    p.v0 = -0.2;
    const auto ens = simulate_langevin_baoab(p, {31, CommonPath{}, 1}, SystemTag::nominal, 10000,
                                             TimeGrid::from_horizon(T, 1e-3, 2000));
    std::vector<double> xs;
    for (std::size_t i = 0; i < ens.n_samples(); ++i) xs.push_back(ens.state(i, ens.n_records() - 1)[0]);
    const auto e = langevin_eigen(beta, omega);
    EXPECT_NEAR(stats::variance(xs), langevin_phi(e, e, kT, T), 3.0 * stats::variance_stderr(xs));
}
