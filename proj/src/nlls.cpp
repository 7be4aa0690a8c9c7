#include "optocool/nlls.hpp"

#include <algorithm>
#include <cmath>

#include "optocool/errors.hpp"

namespace optocool {

double FitResult::sigma(std::size_t i) const {
  return std::sqrt(std::max(0.0, covariance(static_cast<Eigen::Index>(i),
                                            static_cast<Eigen::Index>(i))));
}

namespace {

constexpr double kEdmTolerance = 1e-4;

struct Workspace {
  const FitProblem& problem;
  std::vector<std::size_t> free;  // indices of free parameters
  std::vector<double> prediction;

  double chi2(std::span<const double> p) {
    problem.model(p, prediction);
    double s = 0.0;
    for (std::size_t i = 0; i < prediction.size(); ++i) {
      const double r = problem.data[i] - prediction[i];
      s += problem.weights[i] * r * r;
    }
    return s;
  }

  double lower(std::size_t j) const {
    return problem.lower.empty() ? -INFINITY : problem.lower[j];
  }
  double upper(std::size_t j) const {
    return problem.upper.empty() ? INFINITY : problem.upper[j];
  }
  double clamp(std::size_t j, double v) const { return std::clamp(v, lower(j), upper(j)); }

  // Magnitude a parameter is measured against; never zero.
  double typical(std::size_t j, double at) const {
    const double t = problem.scales.empty() ? std::abs(problem.initial[j]) : std::abs(problem.scales[j]);
    const double m = std::max(std::abs(at), t);
    return m > 0.0 ? m : 1.0;
  }
};

void validate(const FitProblem& fp) {
  const std::size_t n = fp.data.size();
  const std::size_t np = fp.initial.size();
  if (!fp.model) throw DomainError("fit problem has no model");
  if (fp.weights.size() != n) throw DomainError("weights and data differ in length");
  if (!fp.lower.empty() && fp.lower.size() != np) throw DomainError("lower bounds size");
  if (!fp.upper.empty() && fp.upper.size() != np) throw DomainError("upper bounds size");
  if (!fp.fixed.empty() && fp.fixed.size() != np) throw DomainError("fixed mask size");
  if (!fp.scales.empty() && fp.scales.size() != np) throw DomainError("scales size");
  for (double w : fp.weights)
    if (!(w > 0.0) || !std::isfinite(w)) throw DomainError("weights must be positive and finite");
  for (double v : fp.data)
    if (!std::isfinite(v)) throw DomainError("data must be finite");
  for (double v : fp.initial)
    if (!std::isfinite(v)) throw DomainError("initial parameters must be finite");
}

}  // namespace

FitResult nlls_fit(const FitProblem& fp, const FitOptions& opt) {
  validate(fp);
  const std::size_t n = fp.data.size();
  const std::size_t np = fp.initial.size();

  Workspace ws{fp, {}, std::vector<double>(n)};
  for (std::size_t j = 0; j < np; ++j)
    if (fp.fixed.empty() || !fp.fixed[j]) ws.free.push_back(j);
  const auto nf = static_cast<Eigen::Index>(ws.free.size());
  if (n < 2 * ws.free.size())
    throw DomainError("need at least twice as many data points as free parameters");

  std::vector<double> p = fp.initial;
  for (std::size_t j = 0; j < np; ++j) p[j] = ws.clamp(j, p[j]);

  std::vector<double> f0(n), f1(n), trial(np);
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(n), nf);

  auto jacobian = [&](std::span<const double> at) {
    fp.model(at, f0);
    std::vector<double> q(at.begin(), at.end());
    for (Eigen::Index k = 0; k < nf; ++k) {
      const std::size_t j = ws.free[static_cast<std::size_t>(k)];
      double h = opt.fd_step * ws.typical(j, at[j]);
      if (at[j] + h > ws.upper(j)) h = -h;
      q[j] = at[j] + h;
      h = q[j] - at[j];  // exactly representable step
      fp.model(q, f1);
      for (std::size_t i = 0; i < n; ++i)
        jac(static_cast<Eigen::Index>(i), k) = (f1[i] - f0[i]) / h;
      q[j] = at[j];
    }
  };

  // Normal equations on the sqrt-weighted residuals.
  Eigen::MatrixXd normal(nf, nf);
  Eigen::VectorXd gradient(nf);
  auto build_normal = [&]() {
    Eigen::VectorXd sw(static_cast<Eigen::Index>(n));
    Eigen::VectorXd r(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      sw(static_cast<Eigen::Index>(i)) = std::sqrt(fp.weights[i]);
      r(static_cast<Eigen::Index>(i)) = sw(static_cast<Eigen::Index>(i)) * (fp.data[i] - f0[i]);
    }
    const Eigen::MatrixXd wj = sw.asDiagonal() * jac;
    normal = wj.transpose() * wj;
    gradient = wj.transpose() * r;
  };

  double chi2 = ws.chi2(p);
  std::vector<double> best = p;
  double lambda = 1e-3;
  int iter = 0;
  bool converged = chi2 == 0.0;

  while (!converged) {
    if (iter >= opt.max_iterations)
      throw FitError("fit did not converge within " + std::to_string(opt.max_iterations) +
                         " iterations",
                     best);
    ++iter;
    jacobian(p);
    build_normal();
    Eigen::VectorXd d = normal.diagonal().cwiseMax(1e-300).cwiseSqrt();
    const Eigen::MatrixXd scaled = d.cwiseInverse().asDiagonal() * normal * d.cwiseInverse().asDiagonal();
    const Eigen::VectorXd sg = d.cwiseInverse().cwiseProduct(gradient);

    // Estimated distance to the minimum, in chi^2 units. Large-residual fits
    // converge only linearly; stop once the remaining motion is a negligible
    // fraction of a standard deviation.
    const int dof = static_cast<int>(n) - static_cast<int>(nf);
    const Eigen::VectorXd gn = scaled.ldlt().solve(sg);
    const double edm = sg.dot(gn);
    if (gn.allFinite() && dof > 0 && edm >= 0.0 && edm < kEdmTolerance * chi2 / dof) {
      converged = true;
      break;
    }

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd damped = scaled;
      damped.diagonal().array() += lambda;
      const Eigen::VectorXd z = damped.ldlt().solve(sg);
      const Eigen::VectorXd step = d.cwiseInverse().cwiseProduct(z);
      trial = p;
      double largest = 0.0;
      for (Eigen::Index k = 0; k < nf; ++k) {
        const std::size_t j = ws.free[static_cast<std::size_t>(k)];
        trial[j] = ws.clamp(j, p[j] + step(k));
        largest = std::max(largest, std::abs(trial[j] - p[j]) / ws.typical(j, p[j]));
      }
      const double chi2_trial = ws.chi2(trial);
      if (std::isfinite(chi2_trial) && chi2_trial < chi2) {
        const double change = (chi2 - chi2_trial) / std::max(chi2_trial, 1e-300);
        p = trial;
        best = p;
        chi2 = chi2_trial;
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        if (change < opt.relative_tolerance || largest < 1e-14 || chi2 == 0.0) converged = true;
      } else {
        lambda *= 10.0;
        if (lambda > 1e14) {
          // No downhill step exists at this precision: a minimum.
          converged = true;
          break;
        }
      }
    }
  }

  // Undamped polish: lands linear (and nearly linear) problems on the exact
  // minimum instead of where the damped schedule happened to stop.
  if (chi2 > 0.0) {
    for (int k = 0; k < 3; ++k) {
      jacobian(p);
      build_normal();
      const Eigen::VectorXd step = normal.ldlt().solve(gradient);
      if (!step.allFinite()) break;
      trial = p;
      for (Eigen::Index i = 0; i < nf; ++i) {
        const std::size_t j = ws.free[static_cast<std::size_t>(i)];
        trial[j] = ws.clamp(j, p[j] + step(i));
      }
      const double chi2_trial = ws.chi2(trial);
      if (!(std::isfinite(chi2_trial) && chi2_trial <= chi2)) break;
      p = trial;
      chi2 = chi2_trial;
    }
  }

  FitResult out;
  out.params = p;
  out.chi2 = chi2;
  out.iterations = iter;
  out.dof = static_cast<int>(n) - static_cast<int>(nf);
  out.reduced_chi2 = chi2 / out.dof;

  jacobian(p);
  build_normal();
  Eigen::VectorXd d = normal.diagonal().cwiseSqrt();
  if ((d.array() <= 0.0).any())
    throw FitError("degenerate parameterization", p);
  const Eigen::MatrixXd scaled = d.cwiseInverse().asDiagonal() * normal * d.cwiseInverse().asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled);
  const Eigen::VectorXd ev = eig.eigenvalues();
  if (ev.minCoeff() <= 1e-13 * ev.maxCoeff())
    throw FitError("degenerate parameterization", p);
  const Eigen::MatrixXd inv_scaled =
      eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  Eigen::MatrixXd cov_free = d.cwiseInverse().asDiagonal() * inv_scaled * d.cwiseInverse().asDiagonal();
  if (opt.scale_covariance) cov_free *= out.reduced_chi2;

  out.covariance = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(np));
  for (Eigen::Index a = 0; a < nf; ++a)
    for (Eigen::Index b = 0; b < nf; ++b)
      out.covariance(static_cast<Eigen::Index>(ws.free[static_cast<std::size_t>(a)]),
                     static_cast<Eigen::Index>(ws.free[static_cast<std::size_t>(b)])) = cov_free(a, b);
  return out;
}

}  // namespace optocool
