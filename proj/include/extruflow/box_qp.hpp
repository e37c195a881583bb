#pragma once

#include <Eigen/Dense>

namespace extruflow {

struct BoxQpOptions {
  double kkt_tolerance = 1e-8;
  int max_active_set_iterations = 200;
  int max_gradient_iterations = 20000;
};

struct BoxQpResult {
  Eigen::VectorXd x;
  double kkt_residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Minimizes 0.5 x'Hx + g'x subject to lo <= x <= hi for symmetric positive definite H.
///
/// Primal-dual active-set iterations from the clipped unconstrained minimizer; if
/// they cycle, projected Newton (reduced Newton steps with a projected Armijo search)
/// takes over, then spectral projected gradient if that stalls, and the result is
/// polished by an exact reduced solve on its active set. The KKT residual is
/// ||x - P(x - (Hx + g))||_inf.
BoxQpResult solve_box_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                         const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                         const BoxQpOptions& options = {});

double box_kkt_residual(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                        const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                        const Eigen::VectorXd& x);

}  // namespace extruflow
