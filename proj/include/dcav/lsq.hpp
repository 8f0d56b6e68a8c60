// Box-constrained damped least squares (Levenberg-Marquardt with an active set).

#pragma once

#include <Eigen/Dense>

#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace dcav::lsq {

struct Bounds {
    double lower = -std::numeric_limits<double>::infinity();
    double upper = std::numeric_limits<double>::infinity();
};

/// Fills residuals (size m) and, when the pointer is non-null, the m x p Jacobian.
using Model = std::function<void(const Eigen::VectorXd& params, Eigen::VectorXd& residuals,
                                  Eigen::MatrixXd* jacobian)>;

struct Options {
    int max_iterations = 200;
    double step_tolerance = 1e-10;  // relative, per parameter
    double initial_damping = 1e-3;
    /// Optional per-parameter magnitude for the step test, for parameters
    /// whose value can sit near zero: |h| <= tol * (max(|p|, typical) + tol).
    std::vector<double> typical_scale;
};

struct Result {
    Eigen::VectorXd params;
    Eigen::VectorXd std_errors;  // zero for fixed or bound-pinned parameters
    Eigen::MatrixXd covariance;
    Eigen::VectorXd residuals;
    double sum_squares = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<bool> at_bound;
    std::string message;
};

/// Minimizes 0.5 * |r(p)|^2 subject to the bounds. `fixed` (optional, size p)
/// holds parameters at their initial value.
Result solve(const Model& model, std::size_t residual_count, Eigen::VectorXd initial,
             const std::vector<Bounds>& bounds, const std::vector<bool>& fixed = {},
             const Options& options = {});

/// 1 - SS_res / SS_tot over the given observations.
double r_squared(const Eigen::VectorXd& observed, const Eigen::VectorXd& residuals);

}  // namespace dcav::lsq
