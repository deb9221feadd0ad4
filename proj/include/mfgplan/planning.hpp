#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mfgplan/dynamics.hpp"
#include "mfgplan/error.hpp"
#include "mfgplan/model.hpp"

namespace mfgplan {

/// Boundary data of a planning problem. mu0 weights the regret and must be
/// strictly positive.
struct PlanningProblem {
  std::vector<double> m0;
  std::vector<double> mT;
  std::vector<double> mu0;
  TimeGrid grid;

  /// Throws InvalidArgument unless every vector has length d, m0 and mT are
  /// in the simplex and mu0 is in the simplex with positive entries.
  void validate(std::size_t d) const;
};

/// Reads `m0 = ...`, `mT = ...`, `mu0 = ...` lines (comma separated constant
/// expressions, optionally in brackets; `#` starts a comment). mu0 defaults
/// to the uniform vector.
PlanningProblem parse_problem(std::string_view text, const TimeGrid& grid, std::size_t d);

/// One vector in the problem-file syntax, e.g. "1, 0, 0" or "[exp(-1/3), 0.5]".
std::vector<double> parse_vector(std::string_view text);

/// Control variables of the regret problem.
struct Decision {
  RandomizedStrategy strategy;
  std::vector<double> phi_T;
};

struct RegretResult {
  Decision decision;
  DistributionFlow m_flow;
  DistributionFlow mu_flow;
  ValueFlow phi_flow;
  double J = 0.0;
  double terminal_gap = 0.0;  // Euclidean |m(T) - mT|
  double alpha = 0.0;         // active ball radius (0 for a plain evaluation)

  // Optimizer diagnostics.
  bool feasible = false;
  bool warm_candidate = false;     // previous radius's result carried over unchanged
  std::size_t start = 0;
  std::size_t outer_iterations = 0;
  std::size_t inner_iterations = 0;
  double stationarity = 0.0;       // sup-norm of the projected gradient step at exit
  std::vector<double> multiplier;  // terminal-constraint multiplier estimate
};

/// Strictly increasing positive radii.
class AlphaSchedule {
 public:
  explicit AlphaSchedule(std::vector<double> radii);
  /// Comma separated radii, e.g. "1,2,4".
  static AlphaSchedule parse(std::string_view text);
  /// 1, 2, 4, 8, 16, 32.
  static AlphaSchedule standard();

  const std::vector<double>& radii() const { return radii_; }

 private:
  std::vector<double> radii_;
};

struct OptimizerSettings {
  std::size_t n_starts = 8;
  std::size_t max_outer_iters = 8;
  std::size_t max_inner_iters = 100;
  double feasibility_tol = 1e-4;
  double opt_tol = 1e-6;       // projected-gradient stationarity
  double cluster_tol = 1e-3;
  std::uint64_t seed = 0;
  // Augmented Lagrangian penalty.
  double penalty_init = 10.0;
  double penalty_growth = 10.0;
  double penalty_max = 1e9;
  // Spectral projected gradient step sizes and line search.
  double step_min = 1e-12;
  double step_max = 1e12;
  std::size_t nonmonotone_window = 10;
  double armijo = 1e-4;
  // Gauss-Newton feasibility restoration after the outer loop (0 disables).
  std::size_t restoration_iters = 50;
  // Replace the result by the grid-argmax strategy of its own value flow
  // (iterated up to three times) when that is feasible and does not increase
  // the J of a feasible relaxed result.
  bool purify = true;
  // Strategy metric truncation for sequence diagnostics.
  std::size_t metric_terms = 32;
  // Compare the adjoint gradient with finite differences before optimizing.
  bool gradient_check = false;

  /// key = value lines; unknown keys are a ParseError.
  static OptimizerSettings parse(std::string_view text);
};

/// Raised when no start reaches the feasibility tolerance. Carries the
/// start with the smallest terminal gap.
class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& message, RegretResult best)
      : Error(message), best_(std::make_shared<RegretResult>(std::move(best))) {}
  const RegretResult& best() const { return *best_; }

 private:
  std::shared_ptr<RegretResult> best_;
};

/// Evaluates the regret J and the gradient of the augmented Lagrangian
/// L = J + lambda . c + rho/2 |c|^2, c = m(T) - mT, with respect to the
/// strategy weights and phi_T. Gradients are exact for the discretized
/// dynamics (reverse-mode through every RK4 stage) and are returned on the
/// tangent space of each weight simplex. Not thread-safe; use one per thread.
class RegretEvaluator {
 public:
  RegretEvaluator(const ModelSpec& model, const PlanningProblem& problem);

  struct Value {
    double J = 0.0;
    double L = 0.0;
    double gap = 0.0;
    std::vector<double> c;
  };

  /// W uses the RandomizedStrategy layout. gW and gphi are resized and
  /// overwritten when non-null.
  Value evaluate(std::span<const double> W, std::span<const double> phi_T, std::span<const double> lambda, double rho,
                 std::vector<double>* gW = nullptr, std::vector<double>* gphi = nullptr);

  const DistributionFlow& m_flow() const { return m_; }
  const DistributionFlow& mu_flow() const { return mu_; }
  const ValueFlow& phi_flow() const { return phi_; }
  /// Maximiser index at every Bellman stage of the last evaluation.
  const std::vector<std::uint32_t>& argmax_pattern() const { return arg_; }
  /// Smallest gap between the best and second-best maximand over all
  /// Bellman stages of the last evaluation (infinity if no ties are possible).
  double tie_gap() const { return tie_gap_; }

  const ModelSpec& model() const { return *model_; }
  const PlanningProblem& problem() const { return problem_; }
  const StageTables& tables() const { return tables_; }

 private:
  const ActionTable& half_table(std::size_t s, ActionTable& scratch) const;
  void fill_relaxed();
  double* relQ(std::size_t n, std::size_t r) { return relQ_.data() + (3 * n + r) * d_ * d_; }
  double* relG(std::size_t n, std::size_t r) { return relG_.data() + (3 * n + r) * d_; }
  double* accQ(std::size_t n, std::size_t r) { return accQ_.data() + (3 * n + r) * d_ * d_; }
  double* accG(std::size_t n, std::size_t r) { return accG_.data() + (3 * n + r) * d_; }
  void forward();
  void reverse(std::span<const double> lambda, double rho, const std::vector<double>& c, std::vector<double>& gW,
               std::vector<double>& gphi);

  const ModelSpec* model_;
  PlanningProblem problem_;
  StageTables tables_;
  std::size_t d_, K_, N_;
  double h_;
  const double* W_ = nullptr;
  std::vector<double> phiT_;
  DistributionFlow m_, mu_;
  ValueFlow phi_;
  std::vector<ActionTable> half_;     // tables along m_ when the model depends on m
  std::vector<double> z_;             // Bellman stage points 2..4 per step
  std::vector<std::uint32_t> arg_;    // Bellman maximisers, 4 stages per step
  double tie_gap_ = 0.0;
  // Relaxed generator and payoff at the start, midpoint and end of each step.
  std::vector<double> relQ_, relG_;
  // Deferred weight-gradient accumulators, same layout.
  std::vector<double> accQ_, accG_;
};

/// J, flows and terminal gap of a decision.
RegretResult regret_J(const ModelSpec& model, const PlanningProblem& problem, const Decision& decision);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t directions = 0;
  std::size_t rerolls = 0;        // directions redrawn because a kink was crossed
  bool tie_adjacent = false;      // the base point itself lies within 1e-7 of a tie
};

/// Compares adjoint directional derivatives of L with central differences
/// along random tangent directions.
GradientCheckReport check_gradient(const ModelSpec& model, const PlanningProblem& problem, const Decision& at,
                                   std::size_t n_directions, std::uint64_t seed, std::span<const double> lambda = {},
                                   double rho = 0.0);

/// Random starting decision number `start` for a given seed (start 0 is the
/// uniform strategy with phi_T = 0).
Decision initial_decision(const ModelSpec& model, const PlanningProblem& problem, double alpha, std::uint64_t seed,
                          std::size_t start);

/// Minimises J subject to m(T) = mT and |phi_T| <= alpha (Euclidean) by an
/// augmented Lagrangian on the terminal constraint with spectral projected
/// gradient inner iterations, over opts.n_starts starts. `warm` (if given)
/// replaces start 0. Starts run in parallel; the result is independent of
/// the thread count. Throws InfeasibleError if no start is feasible.
RegretResult solve_constrained(const ModelSpec& model, const PlanningProblem& problem, double alpha,
                               const OptimizerSettings& opts, const Decision* warm = nullptr);
/// Single-threaded reference of solve_constrained.
RegretResult solve_constrained_serial(const ModelSpec& model, const PlanningProblem& problem, double alpha,
                                      const OptimizerSettings& opts, const Decision* warm = nullptr);

/// Runs a single start of the optimizer from `init`.
RegretResult optimize_from(RegretEvaluator& evaluator, const Decision& init, double alpha, const OptimizerSettings& opts);

struct SequenceResult {
  std::vector<RegretResult> results;   // one per radius (best found, feasible or not)
  std::vector<double> metric_gaps;     // strategy_metric between consecutive results
  bool cauchy_tail = false;            // last gap <= cluster_tol
};

/// solve_constrained over the schedule, warm-starting each radius from the
/// previous result. The previous result also competes unchanged, so J never
/// increases along the schedule. Per-radius infeasibility is recorded.
SequenceResult minimal_regret_sequence(const ModelSpec& model, const PlanningProblem& problem, const AlphaSchedule& schedule,
                                       const OptimizerSettings& opts);

/// d(a, b) = sum_i sum_l 2^-l |int psi_l da_i - int psi_l db_i| over a fixed
/// family of sup-norm-1 trigonometric products in (t, normalised u),
/// enumerated by total frequency and truncated at L terms. Time integrals
/// are exact for the piecewise-constant strategies.
double strategy_metric(const RandomizedStrategy& a, const RandomizedStrategy& b, const ActionGrid& actions, std::size_t L);

/// Euclidean projection onto the probability simplex, in place.
void project_simplex(std::span<double> x);

/// JSON report of a single result (no flows) and of a sequence.
std::string result_json(const RegretResult& r, int indent = 2);
std::string sequence_json(const SequenceResult& seq, int indent = 2);

}  // namespace mfgplan
