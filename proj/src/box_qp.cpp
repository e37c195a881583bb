#include "extruflow/box_qp.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <vector>

#include "extruflow/errors.hpp"

namespace extruflow {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Bound : signed char { lower = -1, free = 0, upper = 1 };

VectorXd project(const VectorXd& x, const VectorXd& lo, const VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

double objective(const MatrixXd& H, const VectorXd& g, const VectorXd& x) {
  return 0.5 * x.dot(H * x) + g.dot(x);
}

// Minimizer with the bounded variables fixed; free ones solve the reduced system.
VectorXd reduced_solve(const MatrixXd& H, const VectorXd& g, const VectorXd& lo, const VectorXd& hi,
                       const std::vector<Bound>& set) {
  const Eigen::Index n = g.size();
  VectorXd x(n);
  std::vector<Eigen::Index> free_idx;
  for (Eigen::Index i = 0; i < n; ++i) {
    switch (set[i]) {
      case Bound::lower: x[i] = lo[i]; break;
      case Bound::upper: x[i] = hi[i]; break;
      case Bound::free: free_idx.push_back(i); x[i] = 0.0; break;
    }
  }
  if (free_idx.empty()) return x;
  const VectorXd fixed_part = H * x;  // free entries of x are zero here
  const MatrixXd Hff = H(free_idx, free_idx);
  const VectorXd rhs = -(g(free_idx) + fixed_part(free_idx));
  Eigen::LLT<MatrixXd> llt(Hff);
  VectorXd xf;
  if (llt.info() == Eigen::Success) {
    xf = llt.solve(rhs);
  } else {
    xf = Hff.ldlt().solve(rhs);
  }
  x(free_idx) = xf;
  return x;
}

std::vector<Bound> classify(const VectorXd& x, const VectorXd& grad, const VectorXd& lo, const VectorXd& hi,
                            double c) {
  std::vector<Bound> set(static_cast<std::size_t>(x.size()), Bound::free);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double z = x[i] - c * grad[i];
    if (z <= lo[i]) {
      set[i] = Bound::lower;
    } else if (z >= hi[i]) {
      set[i] = Bound::upper;
    }
  }
  return set;
}

// Spectral projected gradient with a nonmonotone (last 10 values) Armijo search.
VectorXd spectral_projected_gradient(const MatrixXd& H, const VectorXd& g, const VectorXd& lo,
                                     const VectorXd& hi, VectorXd x, double tol, int max_iter,
                                     int& iterations) {
  x = project(x, lo, hi);
  VectorXd grad = H * x + g;
  double f = objective(H, g, x);
  std::deque<double> history{f};
  double step = 1.0 / std::max(1e-300, H.diagonal().maxCoeff());
  for (int it = 0; it < max_iter; ++it) {
    ++iterations;
    if ((x - project(x - grad, lo, hi)).lpNorm<Eigen::Infinity>() <= tol) break;
    const VectorXd d = project(x - step * grad, lo, hi) - x;
    const double slope = grad.dot(d);
    const double f_ref = *std::max_element(history.begin(), history.end());
    double t = 1.0;
    VectorXd x_new = x + d;
    double f_new = objective(H, g, x_new);
    while (f_new > f_ref + 1e-4 * t * slope && t > 1e-12) {
      t *= 0.5;
      x_new = x + t * d;
      f_new = objective(H, g, x_new);
    }
    const VectorXd s = x_new - x;
    const VectorXd grad_new = H * x_new + g;
    const VectorXd y = grad_new - grad;
    const double sy = s.dot(y);
    step = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-12, 1e12) : 1e12;
    x = x_new;
    grad = grad_new;
    f = f_new;
    history.push_back(f);
    if (history.size() > 10) history.pop_front();
  }
  return x;
}

// Projected Newton (Bertsekas): Newton step on the variables not held at a bound,
// scaled gradient on the rest, projected Armijo search along the arc.
VectorXd projected_newton(const MatrixXd& H, const VectorXd& g, const VectorXd& lo, const VectorXd& hi,
                          VectorXd x, double tol, int max_iter, int& iterations) {
  const Eigen::Index n = g.size();
  x = project(x, lo, hi);
  VectorXd grad = H * x + g;
  double f = objective(H, g, x);
  for (int it = 0; it < max_iter; ++it) {
    ++iterations;
    const double residual = (x - project(x - grad, lo, hi)).lpNorm<Eigen::Infinity>();
    if (residual <= tol) break;
    const double eps = std::min(1e-3, residual);
    std::vector<Eigen::Index> free_idx;
    std::vector<char> held(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      if ((x[i] <= lo[i] + eps && grad[i] > 0.0) || (x[i] >= hi[i] - eps && grad[i] < 0.0)) {
        held[i] = 1;
      } else {
        free_idx.push_back(i);
      }
    }
    VectorXd d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (held[i]) d[i] = grad[i] / std::max(1e-300, H(i, i));
    }
    if (!free_idx.empty()) {
      const MatrixXd Hff = H(free_idx, free_idx);
      const VectorXd gf = grad(free_idx);
      Eigen::LLT<MatrixXd> llt(Hff);
      d(free_idx) = llt.info() == Eigen::Success ? VectorXd(llt.solve(gf)) : VectorXd(Hff.ldlt().solve(gf));
    }
    double t = 1.0;
    VectorXd x_new;
    double f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = project(x - t * d, lo, hi);
      f_new = objective(H, g, x_new);
      double decrease = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        decrease += held[i] ? grad[i] * (x[i] - x_new[i]) : t * grad[i] * d[i];
      }
      if (f - f_new >= 1e-4 * decrease) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted || f_new >= f) break;
    x = std::move(x_new);
    f = f_new;
    grad = H * x + g;
  }
  return x;
}

}  // namespace

double box_kkt_residual(const MatrixXd& H, const VectorXd& g, const VectorXd& lo, const VectorXd& hi,
                        const VectorXd& x) {
  const VectorXd grad = H * x + g;
  return (x - project(x - grad, lo, hi)).lpNorm<Eigen::Infinity>();
}

BoxQpResult solve_box_qp(const MatrixXd& H, const VectorXd& g, const VectorXd& lo, const VectorXd& hi,
                         const BoxQpOptions& options) {
  const Eigen::Index n = g.size();
  if (H.rows() != n || H.cols() != n || lo.size() != n || hi.size() != n) {
    throw ContractError("box QP dimensions do not agree");
  }
  if (n == 0) throw ContractError("box QP with zero variables");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(lo[i] < hi[i])) throw ContractError("box QP lower bound must be below upper bound");
  }

  BoxQpResult result;
  const double c = 1.0 / std::max(1e-300, H.diagonal().maxCoeff());

  // Primal-dual active set, started from the clipped unconstrained minimizer.
  std::vector<Bound> all_free(static_cast<std::size_t>(n), Bound::free);
  VectorXd x = project(reduced_solve(H, g, lo, hi, all_free), lo, hi);
  std::vector<Bound> set = classify(x, H * x + g, lo, hi, c);
  std::vector<std::vector<Bound>> seen;
  for (int it = 0; it < options.max_active_set_iterations; ++it) {
    ++result.iterations;
    VectorXd candidate = reduced_solve(H, g, lo, hi, set);
    const VectorXd grad = H * candidate + g;
    std::vector<Bound> next = classify(candidate, grad, lo, hi, c);
    x = candidate;
    if (next == set) break;
    if (std::find(seen.begin(), seen.end(), next) != seen.end()) break;  // cycling
    seen.push_back(set);
    set = std::move(next);
  }
  x = project(x, lo, hi);
  result.kkt_residual = box_kkt_residual(H, g, lo, hi, x);

  if (result.kkt_residual > options.kkt_tolerance) {
    x = projected_newton(H, g, lo, hi, x, 0.1 * options.kkt_tolerance, 200, result.iterations);
    if (box_kkt_residual(H, g, lo, hi, x) > options.kkt_tolerance) {
      x = spectral_projected_gradient(H, g, lo, hi, x, 0.1 * options.kkt_tolerance,
                                      options.max_gradient_iterations, result.iterations);
    }
    // Polish: trust the gradient's active set and solve the rest exactly.
    for (int polish = 0; polish < 20; ++polish) {
      const std::vector<Bound> s = classify(x, H * x + g, lo, hi, c);
      const VectorXd polished = project(reduced_solve(H, g, lo, hi, s), lo, hi);
      if (objective(H, g, polished) <= objective(H, g, x) + 1e-15 * (1.0 + std::abs(objective(H, g, x)))) {
        x = polished;
      }
      if (box_kkt_residual(H, g, lo, hi, x) <= options.kkt_tolerance) break;
      x = spectral_projected_gradient(H, g, lo, hi, x, 0.1 * options.kkt_tolerance, 200, result.iterations);
    }
    result.kkt_residual = box_kkt_residual(H, g, lo, hi, x);
  }
  result.x = std::move(x);
  result.converged = result.kkt_residual <= options.kkt_tolerance;
  return result;
}

}  // namespace extruflow
