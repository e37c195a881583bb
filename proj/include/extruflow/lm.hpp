#pragma once

#include <cmath>
#include <functional>
#include <limits>

#include <Eigen/Dense>

namespace extruflow {

struct LmOptions {
  int max_iterations = 200;
  double step_tolerance = 1e-12;
  double cost_tolerance = 1e-15;
  double initial_lambda = 1e-3;
};

struct LmResult {
  Eigen::VectorXd params;
  double cost = 0.0;  // half the sum of squared residuals
  int iterations = 0;
  bool converged = false;
  /// Condition number of J^T J at the solution; huge values mean unidentifiable directions.
  double condition = 0.0;
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Central-difference Jacobian.
inline Eigen::MatrixXd numeric_jacobian(const ResidualFn& f, const Eigen::VectorXd& p, const Eigen::VectorXd& f0) {
  Eigen::MatrixXd J(f0.size(), p.size());
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(p[j]));
    Eigen::VectorXd hi = p;
    Eigen::VectorXd lo = p;
    hi[j] += h;
    lo[j] -= h;
    J.col(j) = (f(hi) - f(lo)) / (2.0 * h);
  }
  return J;
}

/// Marquardt-scaled damped Gauss-Newton.
inline LmResult levenberg_marquardt(const ResidualFn& f, Eigen::VectorXd p, const LmOptions& opt = {}) {
  LmResult res;
  Eigen::VectorXd r = f(p);
  double cost = 0.5 * r.squaredNorm();
  double lambda = opt.initial_lambda;
  Eigen::MatrixXd J = numeric_jacobian(f, p, r);
  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * r;
    Eigen::VectorXd diag = JtJ.diagonal().cwiseMax(1e-12);
    bool accepted = false;
    while (lambda < 1e12) {
      Eigen::MatrixXd A = JtJ;
      A.diagonal() += lambda * diag;
      const Eigen::VectorXd step = A.ldlt().solve(-g);
      const Eigen::VectorXd trial = p + step;
      const Eigen::VectorXd rt = f(trial);
      const double ct = 0.5 * rt.squaredNorm();
      if (std::isfinite(ct) && ct < cost) {
        const double gain = cost - ct;
        p = trial;
        r = rt;
        cost = ct;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (step.norm() < opt.step_tolerance * (1.0 + p.norm()) || gain < opt.cost_tolerance * (1.0 + cost)) {
          res.converged = true;
        }
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted) {
      res.converged = true;  // no descent available at any damping: stationary point
      break;
    }
    J = numeric_jacobian(f, p, r);
    if (res.converged) break;
  }
  res.params = p;
  res.cost = cost;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J.transpose() * J);
  const double hi = eig.eigenvalues().maxCoeff();
  const double lo = std::max(eig.eigenvalues().minCoeff(), 0.0);
  res.condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  return res;
}

}  // namespace extruflow
