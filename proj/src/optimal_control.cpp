#include "extruflow/optimal_control.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "extruflow/errors.hpp"
#include "extruflow/extrusion_dynamics.hpp"

namespace extruflow {

void TrackingProblem::validate() const {
  model.validate();
  if (reference.empty()) throw ContractError("tracking problem with an empty horizon");
  if (!(xi_min < xi_max)) throw ContractError(fmt::format("bounds [{}, {}] are empty", xi_min, xi_max));
  if (!(w0 >= 0.0) || !std::isfinite(w0)) throw ContractError("initial width must be finite and >= 0");
  if (!(step > 0.0)) throw ContractError("step must be positive");
  if (!segment_lengths.empty() && segment_lengths.size() != reference.size()) {
    throw ContractError(fmt::format("{} segment lengths for a horizon of {}", segment_lengths.size(),
                                    reference.size()));
  }
  for (double r : reference) {
    if (!std::isfinite(r)) throw ContractError("reference contains a non-finite width");
  }
}

WidthProfile Solution::predicted_profile() const {
  WidthProfile out;
  for (std::size_t k = 0; k < predicted.size(); ++k) out.push_back({x[k], std::max(0.0, predicted[k])});
  return out;
}

double Solution::rmse(std::span<const double> reference) const {
  if (reference.size() + 1 != predicted.size()) throw ContractError("reference does not match the solution");
  double sum = 0.0;
  for (std::size_t k = 0; k < reference.size(); ++k) {
    const double e = predicted[k + 1] - reference[k];
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(reference.size()));
}

CondensedSystem condense(const TrackingProblem& problem, std::span<const Regime> regimes) {
  const std::size_t n = problem.horizon();
  if (regimes.size() != n) throw ContractError("one regime per step is required");
  std::vector<StepMatrices> ab(n);
  for (std::size_t k = 0; k < n; ++k) ab[k] = step_matrices(problem.model, problem.length_of(k), regimes[k]);

  CondensedSystem sys;
  const auto N = static_cast<Eigen::Index>(n);
  sys.M = Eigen::MatrixXd::Zero(N, N);
  sys.m.resize(N);
  double free_response = problem.w0;
  for (Eigen::Index k = 0; k < N; ++k) {
    free_response *= ab[static_cast<std::size_t>(k)].a;
    sys.m[k] = free_response;
  }
  for (Eigen::Index j = 0; j < N; ++j) {
    double gain = ab[static_cast<std::size_t>(j)].b;
    for (Eigen::Index k = j; k < N; ++k) {
      sys.M(k, j) = gain;
      if (k + 1 < N) gain *= ab[static_cast<std::size_t>(k + 1)].a;
    }
  }
  return sys;
}

namespace {

// H = M'M and g = M'(m - r) without forming M. With M(k, j) = b_j a_{j+1}..a_k,
// H(i, j) = b_i b_j G_j a_{i+1}..a_j for i <= j, where G_j = 1 + a_{j+1}^2 G_{j+1};
// g follows from the adjoint recursion l_j = e_j + a_{j+1} l_{j+1}.
void condensed_normal_equations(const TrackingProblem& problem, std::span<const Regime> regimes,
                                Eigen::MatrixXd& H, Eigen::VectorXd& g) {
  const std::size_t n = problem.horizon();
  std::vector<double> a(n), b(n);
  for (std::size_t k = 0; k < n; ++k) {
    const StepMatrices ab = step_matrices(problem.model, problem.length_of(k), regimes[k]);
    a[k] = ab.a;
    b[k] = ab.b;
  }
  const auto N = static_cast<Eigen::Index>(n);
  std::vector<double> G(n);
  G[n - 1] = 1.0;
  for (std::size_t j = n - 1; j-- > 0;) G[j] = 1.0 + a[j + 1] * a[j + 1] * G[j + 1];
  H.resize(N, N);
  for (Eigen::Index j = 0; j < N; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    double h = b[uj] * b[uj] * G[uj];
    H(j, j) = h;
    double chain = b[uj] * G[uj];  // b_j G_j a_{i+1}..a_j
    for (Eigen::Index i = j - 1; i >= 0; --i) {
      chain *= a[static_cast<std::size_t>(i) + 1];
      h = b[static_cast<std::size_t>(i)] * chain;
      H(i, j) = h;
      H(j, i) = h;
    }
  }
  std::vector<double> e(n);
  double free_response = problem.w0;
  for (std::size_t k = 0; k < n; ++k) {
    free_response *= a[k];
    e[k] = free_response - problem.reference[k];
  }
  g.resize(N);
  double lambda = 0.0;
  for (std::size_t j = n; j-- > 0;) {
    lambda = e[j] + (j + 1 < n ? a[j + 1] * lambda : 0.0);
    g[static_cast<Eigen::Index>(j)] = b[j] * lambda;
  }
}

Solution solve_dense(const TrackingProblem& problem, std::span<const Regime> regimes,
                     const ControlOptions& options) {
  const std::size_t n = problem.horizon();
  const auto N = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  condensed_normal_equations(problem, regimes, H, g);
  const Eigen::VectorXd lo = Eigen::VectorXd::Constant(N, problem.xi_min);
  const Eigen::VectorXd hi = Eigen::VectorXd::Constant(N, problem.xi_max);
  const BoxQpResult qp = solve_box_qp(H, g, lo, hi, options.qp);

  Solution sol;
  sol.controls.step = problem.step;
  sol.controls.segment_lengths = problem.segment_lengths;
  sol.controls.xi.assign(qp.x.data(), qp.x.data() + N);
  sol.regimes.assign(regimes.begin(), regimes.end());
  sol.kkt_residual = qp.kkt_residual;
  sol.iterations = qp.iterations;
  sol.x.resize(n + 1);
  sol.predicted.resize(n + 1);
  sol.x[0] = 0.0;
  sol.predicted[0] = problem.w0;
  for (std::size_t k = 0; k < n; ++k) {
    const StepMatrices ab = step_matrices(problem.model, problem.length_of(k), regimes[k]);
    sol.predicted[k + 1] = ab.a * sol.predicted[k] + ab.b * sol.controls.xi[k];
    sol.x[k + 1] = sol.x[k] + problem.length_of(k);
    const double e = sol.predicted[k + 1] - problem.reference[k];
    sol.objective += e * e;
  }
  return sol;
}

TrackingProblem window(const TrackingProblem& p, std::size_t begin, std::size_t end, double w0) {
  TrackingProblem sub = p;
  sub.w0 = w0;
  sub.reference.assign(p.reference.begin() + static_cast<std::ptrdiff_t>(begin),
                       p.reference.begin() + static_cast<std::ptrdiff_t>(end));
  if (!p.segment_lengths.empty()) {
    sub.segment_lengths.assign(p.segment_lengths.begin() + static_cast<std::ptrdiff_t>(begin),
                               p.segment_lengths.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return sub;
}

// Objective of a control sequence when applied to the plant (drive-direction regimes, clamp at 0).
double plant_objective(const TrackingProblem& problem, const ControlSequence& controls) {
  const WidthProfile sim = simulate_plant(problem.model, controls, problem.w0);
  double sum = 0.0;
  for (std::size_t k = 0; k < problem.horizon(); ++k) {
    const double e = sim[k + 1].w - problem.reference[k];
    sum += e * e;
  }
  return sum;
}

}  // namespace

Solution solve(const TrackingProblem& problem, std::span<const Regime> regimes, const ControlOptions& options) {
  problem.validate();
  const std::size_t n = problem.horizon();
  if (regimes.size() != n) throw ContractError("one regime per step is required");
  if (n <= options.max_horizon) return solve_dense(problem, regimes, options);

  // Receding windows: solve max_horizon steps, keep all but the lookahead tail.
  const std::size_t commit = std::max<std::size_t>(1, options.max_horizon - std::min(options.window_lookahead,
                                                                                     options.max_horizon / 2));
  Solution out;
  out.controls.step = problem.step;
  out.controls.segment_lengths = problem.segment_lengths;
  out.x.push_back(0.0);
  out.predicted.push_back(problem.w0);
  std::size_t begin = 0;
  double w = problem.w0;
  while (begin < n) {
    const std::size_t end = std::min(n, begin + options.max_horizon);
    const std::size_t keep = end == n ? end - begin : commit;
    const TrackingProblem sub = window(problem, begin, end, w);
    const Solution part = solve_dense(sub, regimes.subspan(begin, end - begin), options);
    for (std::size_t k = 0; k < keep; ++k) {
      out.controls.xi.push_back(part.controls.xi[k]);
      out.regimes.push_back(part.regimes[k]);
      out.predicted.push_back(part.predicted[k + 1]);
      out.x.push_back(out.x.back() + problem.length_of(begin + k));
      const double e = part.predicted[k + 1] - problem.reference[begin + k];
      out.objective += e * e;
    }
    out.iterations += part.iterations;
    w = part.predicted[keep];
    begin += keep;
  }
  // Windowed solutions are optimal per window; report the KKT residual of the full problem.
  const CondensedSystem sys = condense(problem, out.regimes);
  const auto N = static_cast<Eigen::Index>(n);
  const Eigen::Map<const Eigen::VectorXd> r(problem.reference.data(), N);
  const Eigen::Map<const Eigen::VectorXd> xi(out.controls.xi.data(), N);
  const Eigen::VectorXd grad = sys.M.transpose() * (sys.M * xi + sys.m - r);
  const Eigen::VectorXd lo = Eigen::VectorXd::Constant(N, problem.xi_min);
  const Eigen::VectorXd hi = Eigen::VectorXd::Constant(N, problem.xi_max);
  out.kkt_residual = (xi - (xi - grad).cwiseMax(lo).cwiseMin(hi)).lpNorm<Eigen::Infinity>();
  return out;
}

Solution solve(const TrackingProblem& problem, Regime regime, const ControlOptions& options) {
  const std::vector<Regime> regimes(problem.horizon(), regime);
  return solve(problem, std::span<const Regime>(regimes), options);
}

std::vector<Regime> label_regimes(std::span<const double> reference, double w0, std::size_t min_run_length) {
  const std::size_t n = reference.size();
  double scale = std::abs(w0);
  for (double r : reference) scale = std::max(scale, std::abs(r));
  const double eps = 1e-12 * std::max(1.0, scale);

  struct Run {
    std::size_t first;
    std::size_t last;
    int sign;
    std::size_t count;
  };
  std::vector<Run> runs;
  double prev = w0;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = reference[k] - prev;
    prev = reference[k];
    if (std::abs(d) <= eps) continue;
    const int sign = d > 0.0 ? 1 : -1;
    if (!runs.empty() && runs.back().sign == sign) {
      runs.back().last = k;
      ++runs.back().count;
    } else {
      runs.push_back({k, k, sign, 1});
    }
  }
  if (runs.empty()) return std::vector<Regime>(n, Regime::mixed);

  std::vector<Regime> run_regime(runs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const bool bounded_by_opposites = i > 0 && i + 1 < runs.size() && runs[i - 1].sign != runs[i].sign &&
                                      runs[i + 1].sign != runs[i].sign;
    if (runs[i].count < min_run_length && bounded_by_opposites) {
      run_regime[i] = Regime::mixed;
    } else {
      run_regime[i] = runs[i].sign > 0 ? Regime::expand : Regime::shrink;
    }
  }
  std::vector<Regime> labels(n);
  std::size_t current = 0;
  for (std::size_t k = 0; k < n; ++k) {
    while (current + 1 < runs.size() && runs[current + 1].first <= k) ++current;
    labels[k] = run_regime[current];
  }
  return labels;
}

Solution solve_per_regime(const TrackingProblem& problem, const ControlOptions& options) {
  problem.validate();
  std::vector<Regime> labels = label_regimes(problem.reference, problem.w0, options.min_run_length);
  Solution best = solve(problem, std::span<const Regime>(labels), options);
  if (!options.refine_regimes) return best;

  double best_score = plant_objective(problem, best.controls);
  for (int it = 0; it < options.max_refinements; ++it) {
    std::vector<Regime> next = labels;
    for (std::size_t k = 0; k < next.size(); ++k) {
      const double drive = problem.model.alpha * best.controls.xi[k] - best.predicted[k];
      if (drive > 0.0) next[k] = Regime::expand;
      if (drive < 0.0) next[k] = Regime::shrink;
    }
    if (next == labels) break;
    Solution candidate = solve(problem, std::span<const Regime>(next), options);
    const double score = plant_objective(problem, candidate.controls);
    if (!(score < best_score)) break;
    best = std::move(candidate);
    best_score = score;
    labels = std::move(next);
  }
  return best;
}

std::vector<Solution> solve_chain(std::span<const TrackingProblem> lines, const ControlOptions& options) {
  std::vector<Solution> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    TrackingProblem p = lines[i];
    if (i > 0) p.w0 = std::max(0.0, out.back().terminal_width());
    out.push_back(solve_per_regime(p, options));
  }
  return out;
}

}  // namespace extruflow
