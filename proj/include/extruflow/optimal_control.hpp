#pragma once

#include <span>
#include <vector>

#include "extruflow/box_qp.hpp"
#include "extruflow/models.hpp"
#include "extruflow/profile.hpp"

namespace extruflow {

/// Finite-horizon width tracking: choose xi_0..xi_{N-1} so that the widths
/// w_1..w_N produced by w_{k+1} = A w_k + B xi_k follow reference[0..N-1].
struct TrackingProblem {
  std::vector<double> reference;        // w*_k for the width after segment k, mm
  ExtrusionModel model;
  double xi_min = 0.03;
  double xi_max = 0.05;
  double w0 = 0.0;                      // width entering the horizon, mm
  double step = 0.1;                    // mm
  std::vector<double> segment_lengths;  // optional per-segment lengths (remainders)

  std::size_t horizon() const { return reference.size(); }
  double length_of(std::size_t k) const { return segment_lengths.empty() ? step : segment_lengths[k]; }
  void validate() const;
};

struct Solution {
  ControlSequence controls;
  std::vector<double> x;          // arc length of w_0..w_N
  std::vector<double> predicted;  // model widths w_0..w_N (linear model, unclamped)
  std::vector<Regime> regimes;    // regime used for each step
  double objective = 0.0;         // sum_k (w_{k+1} - w*_k)^2, mm^2
  double kkt_residual = 0.0;
  int iterations = 0;

  double terminal_width() const { return predicted.back(); }
  /// Predicted widths as a profile (negative model widths clamped to zero).
  WidthProfile predicted_profile() const;
  double rmse(std::span<const double> reference) const;
};

struct ControlOptions {
  BoxQpOptions qp;
  /// Longest horizon solved as one dense QP; longer problems use receding windows.
  std::size_t max_horizon = 800;
  std::size_t window_lookahead = 200;
  /// Re-label steps by the predicted drive direction and re-solve while that improves
  /// the plant-simulated objective.
  bool refine_regimes = true;
  int max_refinements = 6;
  /// Runs with fewer nonzero reference changes than this, bounded by opposite-direction
  /// runs on both sides, are treated as oscillatory and use the averaged tau.
  std::size_t min_run_length = 3;
};

/// Single-regime solve: every step uses the time constant of `regime`.
Solution solve(const TrackingProblem& problem, Regime regime = Regime::mixed,
               const ControlOptions& options = {});

/// Time-varying solve with an explicit regime per step.
Solution solve(const TrackingProblem& problem, std::span<const Regime> regimes,
               const ControlOptions& options = {});

/// Regime labels from the reference's monotone runs (w0 counts as the value before step 0).
/// Flat stretches belong to the preceding run; a leading flat stretch to the first run.
std::vector<Regime> label_regimes(std::span<const double> reference, double w0,
                                  std::size_t min_run_length = 3);

/// Labels the reference by monotone runs, solves the time-varying problem and,
/// optionally, refines labels toward the plant's drive-direction rule.
Solution solve_per_regime(const TrackingProblem& problem, const ControlOptions& options = {});

/// Solves consecutive lines, feeding each line's terminal predicted width into the next w0.
std::vector<Solution> solve_chain(std::span<const TrackingProblem> lines, const ControlOptions& options = {});

/// Condensed form: widths w_1..w_N = M xi + m. Exposed for tests and diagnostics.
struct CondensedSystem {
  Eigen::MatrixXd M;
  Eigen::VectorXd m;
};
CondensedSystem condense(const TrackingProblem& problem, std::span<const Regime> regimes);

}  // namespace extruflow
