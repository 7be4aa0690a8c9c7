#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace optocool {

/// Evaluates the model for a full parameter vector into `out`.
using ModelFunction =
    std::function<void(std::span<const double> params, std::span<double> out)>;

struct FitProblem {
  ModelFunction model;
  std::vector<double> data;
  std::vector<double> weights;  // inverse variances, > 0
  std::vector<double> initial;
  // Optional; empty means unbounded / all free / scale from |initial|.
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<bool> fixed;
  std::vector<double> scales;  // typical magnitude per parameter
};

struct FitOptions {
  int max_iterations = 200;
  double relative_tolerance = 1e-10;  // on chi^2
  double fd_step = 1e-6;              // relative forward-difference step
  bool scale_covariance = true;       // multiply by reduced chi^2
};

struct FitResult {
  std::vector<double> params;
  Eigen::MatrixXd covariance;  // full size; fixed parameters have zero rows
  double chi2 = 0.0;
  double reduced_chi2 = 0.0;
  int dof = 0;
  int iterations = 0;

  double sigma(std::size_t i) const;
};

/// Damped Gauss-Newton (Levenberg-Marquardt) weighted least squares.
/// Throws FitError on non-convergence (carrying the best parameters seen) or
/// on a singular normal matrix.
FitResult nlls_fit(const FitProblem& problem, const FitOptions& options = {});

}  // namespace optocool
