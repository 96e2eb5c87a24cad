#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <vector>

#include "glesens/error.hpp"

namespace glesens {

struct NnlsResult {
    Eigen::VectorXd x;
    double residual_norm = 0.0;
    /// max_j of the dual vector A^T (b - A x) over the inactive set, relative
    /// to ||A^T b||; zero at an exact KKT point.
    double kkt_residual = 0.0;
    std::size_t iterations = 0;
};

/// Lawson-Hanson active-set solver for min ||A x - b||_2 subject to x >= 0.
/// Columns are normalised internally; the returned x is in original units.
inline NnlsResult nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double tol = 1e-10,
                       std::size_t max_iterations = 0) {
    const Eigen::Index m = a.rows();
    const Eigen::Index n = a.cols();
    if (m == 0 || n == 0 || b.size() != m) throw InvalidArgument("nnls: inconsistent dimensions");
    if (!a.allFinite() || !b.allFinite()) throw NumericalError("nnls: non-finite input");
    if (max_iterations == 0) max_iterations = 30 * static_cast<std::size_t>(n) + 100;

    Eigen::VectorXd scale = a.colwise().norm().transpose();
    for (Eigen::Index j = 0; j < n; ++j) {
        if (scale[j] == 0.0) scale[j] = 1.0;
    }
    const Eigen::MatrixXd as = a * scale.cwiseInverse().asDiagonal();
    const double dual_scale = std::max((as.transpose() * b).cwiseAbs().maxCoeff(), 1e-300);

    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    std::vector<bool> passive(static_cast<std::size_t>(n), false);
    NnlsResult result;

    auto solve_passive = [&](Eigen::VectorXd& z) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
        }
        Eigen::MatrixXd sub(m, static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = as.col(idx[k]);
        const Eigen::VectorXd zs = sub.colPivHouseholderQr().solve(b);
        z.setZero(n);
        for (std::size_t k = 0; k < idx.size(); ++k) z[idx[k]] = zs[static_cast<Eigen::Index>(k)];
    };

    Eigen::VectorXd w = as.transpose() * (b - as * x);
    while (result.iterations < max_iterations) {
        Eigen::Index best = -1;
        double best_w = tol * dual_scale;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (!passive[static_cast<std::size_t>(j)] && w[j] > best_w) {
                best_w = w[j];
                best = j;
            }
        }
        if (best < 0) break;
        passive[static_cast<std::size_t>(best)] = true;

        Eigen::VectorXd z;
        while (true) {
            ++result.iterations;
            solve_passive(z);
            bool feasible = true;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (passive[static_cast<std::size_t>(j)] && z[j] <= 0.0) feasible = false;
            }
            if (feasible) {
                x = z;
                break;
            }
            double alpha = 1.0;
            Eigen::Index blocking = -1;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (passive[static_cast<std::size_t>(j)] && z[j] <= 0.0) {
                    const double step = x[j] / (x[j] - z[j]);
                    if (blocking < 0 || step < alpha) {
                        alpha = step;
                        blocking = j;
                    }
                }
            }
            x += alpha * (z - x);
            x[blocking] = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (passive[static_cast<std::size_t>(j)] && x[j] <= 0.0) {
                    passive[static_cast<std::size_t>(j)] = false;
                    x[j] = 0.0;
                }
            }
            if (result.iterations >= max_iterations) break;
        }
        w = as.transpose() * (b - as * x);
    }

    double kkt = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (!passive[static_cast<std::size_t>(j)]) kkt = std::max(kkt, w[j]);
    }
    result.kkt_residual = kkt / dual_scale;
    result.x = x.cwiseQuotient(scale);
    result.residual_norm = (a * result.x - b).norm();
    if (!std::isfinite(result.residual_norm)) throw NumericalError("nnls: residual is not finite");
    return result;
}

}  // namespace glesens
