#include "dcav/lsq.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dcav::lsq {

namespace {

std::vector<int> free_indices(const Eigen::VectorXd& p, const Eigen::VectorXd& gradient,
                              const std::vector<Bounds>& bounds, const std::vector<bool>& fixed)
{
    std::vector<int> idx;
    for (int i = 0; i < p.size(); ++i) {
        if (!fixed.empty() && fixed[i]) continue;
        // Pinned when sitting on a bound with the descent direction pointing outward.
        if (p[i] <= bounds[i].lower && gradient[i] > 0.0) continue;
        if (p[i] >= bounds[i].upper && gradient[i] < 0.0) continue;
        idx.push_back(i);
    }
    return idx;
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& a)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    const Eigen::VectorXd& values = eig.eigenvalues();
    const double cutoff = values.cwiseAbs().maxCoeff() * 1e-14 * static_cast<double>(a.rows());
    Eigen::VectorXd inv = values;
    for (int i = 0; i < inv.size(); ++i) inv[i] = values[i] > cutoff ? 1.0 / values[i] : 0.0;
    return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

Result solve(const Model& model, std::size_t residual_count, Eigen::VectorXd p,
             const std::vector<Bounds>& bounds_in, const std::vector<bool>& fixed,
             const Options& options)
{
    const int n = static_cast<int>(p.size());
    std::vector<Bounds> bounds = bounds_in;
    if (bounds.empty()) bounds.resize(n);
    if (static_cast<int>(bounds.size()) != n || (!fixed.empty() && static_cast<int>(fixed.size()) != n) ||
        (!options.typical_scale.empty() && static_cast<int>(options.typical_scale.size()) != n))
        throw std::invalid_argument("lsq::solve: bounds/fixed/scale size mismatch");
    for (int i = 0; i < n; ++i) p[i] = std::clamp(p[i], bounds[i].lower, bounds[i].upper);

    const auto m = static_cast<Eigen::Index>(residual_count);
    Eigen::VectorXd r(m);
    Eigen::MatrixXd jac(m, n);
    model(p, r, &jac);
    double cost = r.squaredNorm();
    if (!std::isfinite(cost)) throw std::runtime_error("lsq::solve: non-finite initial residuals");

    Result result;
    double mu = -1.0;
    double nu = 2.0;
    int iter = 0;
    Eigen::VectorXd gradient = jac.transpose() * r;

    for (iter = 1; iter <= options.max_iterations; ++iter) {
        const std::vector<int> idx = free_indices(p, gradient, bounds, fixed);
        if (idx.empty() || cost == 0.0) {
            result.converged = true;
            result.message = idx.empty() ? "all parameters fixed or pinned" : "exact fit";
            break;
        }
        const int nf = static_cast<int>(idx.size());
        Eigen::MatrixXd jf(m, nf);
        Eigen::VectorXd gf(nf);
        for (int j = 0; j < nf; ++j) {
            jf.col(j) = jac.col(idx[j]);
            gf[j] = gradient[idx[j]];
        }
        const Eigen::MatrixXd a = jf.transpose() * jf;
        Eigen::VectorXd scale = a.diagonal();
        const double max_diag = std::max(scale.maxCoeff(), 1e-300);
        for (int j = 0; j < nf; ++j) scale[j] = std::max(scale[j], max_diag * 1e-12);
        if (mu < 0.0) mu = options.initial_damping;

        bool accepted = false;
        bool small_step = false;
        Eigen::VectorXd trial_r(m);
        while (!accepted) {
            Eigen::MatrixXd damped = a;
            damped.diagonal() += mu * scale;
            const Eigen::VectorXd delta = damped.ldlt().solve(-gf);

            Eigen::VectorXd trial = p;
            for (int j = 0; j < nf; ++j) {
                const int i = idx[j];
                trial[i] = std::clamp(p[i] + delta[j], bounds[i].lower, bounds[i].upper);
            }
            Eigen::VectorXd h(nf);
            for (int j = 0; j < nf; ++j) h[j] = trial[idx[j]] - p[idx[j]];

            model(trial, trial_r, nullptr);
            const double trial_cost = trial_r.squaredNorm();
            const double predicted = -2.0 * h.dot(gf) - h.dot(a * h);

            if (std::isfinite(trial_cost) && trial_cost < cost) {
                const double rho = (cost - trial_cost) / std::max(predicted, 1e-300);
                mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
                nu = 2.0;
                small_step = true;
                for (int j = 0; j < nf; ++j) {
                    const int i = idx[j];
                    double size = std::abs(p[i]);
                    if (!options.typical_scale.empty()) size = std::max(size, options.typical_scale[i]);
                    if (std::abs(h[j]) > options.step_tolerance * (size + options.step_tolerance))
                        small_step = false;
                }
                p = trial;
                r = trial_r;
                cost = trial_cost;
                accepted = true;
            } else {
                mu *= nu;
                nu *= 2.0;
                if (mu > 1e30) break;
            }
        }
        if (!accepted) {
            // No decrease even for vanishing steps: numerically at the minimum.
            result.converged = true;
            result.message = "stationary to working precision";
            break;
        }
        model(p, r, &jac);
        gradient = jac.transpose() * r;
        if (small_step) {
            result.converged = true;
            result.message = "relative step below tolerance";
            break;
        }
    }
    if (!result.converged) result.message = "iteration limit reached";

    result.params = p;
    result.residuals = r;
    result.sum_squares = cost;
    result.iterations = std::min(iter, options.max_iterations);
    result.at_bound.assign(n, false);
    for (int i = 0; i < n; ++i) {
        const bool is_fixed = !fixed.empty() && fixed[i];
        result.at_bound[i] = !is_fixed && (p[i] <= bounds[i].lower || p[i] >= bounds[i].upper);
    }

    result.covariance = Eigen::MatrixXd::Zero(n, n);
    result.std_errors = Eigen::VectorXd::Zero(n);
    const std::vector<int> idx = free_indices(p, gradient, bounds, fixed);
    if (!idx.empty()) {
        const int nf = static_cast<int>(idx.size());
        Eigen::MatrixXd jf(m, nf);
        for (int j = 0; j < nf; ++j) jf.col(j) = jac.col(idx[j]);
        const double dof = static_cast<double>(m - nf);
        const double s2 = dof > 0.0 ? cost / dof : 0.0;
        const Eigen::MatrixXd cov = s2 * pseudo_inverse(jf.transpose() * jf);
        for (int a = 0; a < nf; ++a) {
            for (int b = 0; b < nf; ++b) result.covariance(idx[a], idx[b]) = cov(a, b);
            result.std_errors[idx[a]] = std::sqrt(std::max(cov(a, a), 0.0));
        }
    }
    return result;
}

double r_squared(const Eigen::VectorXd& observed, const Eigen::VectorXd& residuals)
{
    const double mean = observed.mean();
    const double ss_tot = (observed.array() - mean).square().sum();
    const double ss_res = residuals.squaredNorm();
    if (ss_tot <= 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
    return 1.0 - ss_res / ss_tot;
}

}  // namespace dcav::lsq
