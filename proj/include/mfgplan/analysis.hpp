#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mfgplan/dynamics.hpp"
#include "mfgplan/model.hpp"
#include "mfgplan/planning.hpp"

namespace mfgplan {

// ---------------------------------------------------------------------------
// Classical-solution certification

struct ClassicalReport {
  bool pass = false;
  bool boundary_ok = false;
  bool argmax_ok = false;
  double tol = 0.0;
  double terminal_gap = 0.0;
  double J = 0.0;
  // Worst ArgMax violation: H_i minus the nu_i-weighted maximand.
  double violation = 0.0;
  // H_i minus the maximand of any action with weight above 1e-10.
  double support_violation = 0.0;
  std::size_t worst_step = 0;
  std::size_t worst_state = 0;
  std::size_t worst_action = 0;
  double worst_time = 0.0;
  std::vector<double> step_violation;  // per step, max over states
};

/// Rebuilds m and phi from the candidate and checks |m(T) - mT| <= tol and,
/// on every step, that H_i minus the nu_i-weighted maximand is at most tol at
/// the step midpoint, the point argmax_strategy uses. Zero exactly when nu_i
/// is supported on the argmax set.
ClassicalReport check_classical(const ModelSpec& model, const Decision& candidate, const PlanningProblem& problem, double tol);

// ---------------------------------------------------------------------------
// Classical MFG fixed point

struct FixedPointResult {
  DistributionFlow m_flow;
  ValueFlow phi_flow;
  RandomizedStrategy strategy;
  std::vector<double> residuals;  // sup over nodes of |m^{k+1} - m^k|, per iteration
  bool converged = false;
};

/// Damped Picard iteration on m: phi from the Bellman equation with
/// phi(T) = sigma(m(T)), the grid-argmax strategy, the Kolmogorov flow it
/// induces, then m <- (1 - theta) m + theta m_hat. Starts from the flow of
/// the uniform strategy. Non-convergence is reported, not thrown.
FixedPointResult solve_mfg_fixedpoint(const ModelSpec& model, std::span<const double> m0, const TimeGrid& grid, double theta,
                                      std::size_t max_iters, double tol = 1e-8);

// ---------------------------------------------------------------------------
// Monotonicity and concavity

enum class Verdict { Strict, Weak, Fail };
const char* verdict_name(Verdict v);

struct MonotonicityReport {
  Verdict verdict = Verdict::Fail;
  std::size_t samples = 0;
  double max_inner = 0.0;  // largest (m1 - m2) . (g1(m1) - g1(m2)) seen
  // Sample attaining max_inner.
  double t = 0.0;
  std::vector<double> m1, m2;
};

/// Lasry-Lions test on the m-dependent payoff part g1 at random (t, m1, m2).
/// Throws InvalidArgument unless the model declares its payoff in split form.
MonotonicityReport monotonicity_check(const ModelSpec& model, std::size_t n_samples, std::uint64_t seed);

struct ConcavityReport {
  Verdict verdict = Verdict::Fail;
  std::size_t samples = 0;
  double margin = 0.0;  // min over samples of midpoint defect / |phi1 - phi2|^2
  double worst_defect = 0.0;
  // Sample attaining worst_defect.
  double t = 0.0;
  std::size_t state = 0;
  std::vector<double> phi1, phi2;
};

/// Midpoint test of phi -> H0_i(t, phi) = max_u [Q_i(t, u) . phi + g0_i(t, u)]
/// over the box lo <= phi <= hi. Defect = H0(mid) - (H0(phi1) + H0(phi2))/2;
/// strict when every defect is at least a positive multiple of |phi1 - phi2|^2,
/// weak when none is negative. Throws InvalidArgument when Q depends on m or
/// the payoff has an m-dependent part outside the split form.
ConcavityReport concavity_check(const ModelSpec& model, std::span<const double> lo, std::span<const double> hi,
                                std::size_t n_samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Uniqueness probe

struct UniquenessReport {
  std::vector<RegretResult> results;  // one per seed (closest start when infeasible)
  std::size_t feasible = 0;
  double m_dispersion = 0.0;          // max pairwise sup-node distance of m flows
  double phi_dispersion = 0.0;
  double strategy_dispersion = 0.0;   // max pairwise strategy_metric
};

/// Runs the optimizer once per seed from a random start drawn with that
/// seed (seeds opts.seed .. opts.seed + n_seeds - 1) and measures how far
/// apart the results are. Seeds run in parallel.
UniquenessReport uniqueness_probe(const ModelSpec& model, const PlanningProblem& problem, double alpha, std::size_t n_seeds,
                                  const OptimizerSettings& opts);

// ---------------------------------------------------------------------------
// Brute-force oracle

/// Largest number of candidates brute_force_value will enumerate.
inline constexpr double kBruteForceLimit = 1e8;

struct BruteForceResult {
  double best_payoff = 0.0;
  RandomizedStrategy best;
  std::uint64_t candidates = 0;
  std::vector<std::size_t> actions;  // action indices used
};

/// Maximum of payoff(mu0, nu, m_flow, sigma) over pure strategies that are
/// constant on each of `coarse_steps` equal blocks of the grid and use
/// `coarse_actions` evenly spaced grid actions (both ends included). States
/// whose generator row and payoff do not depend on the action are held at
/// action 0. Requires coarse_steps <= 8, coarse_actions <= 5, d <= 3 and at
/// most kBruteForceLimit candidates. Ties go to the smallest candidate index.
BruteForceResult brute_force_value(const ModelSpec& model, std::span<const double> mu0, const DistributionFlow& m_flow,
                                   std::span<const double> sigma, std::size_t coarse_steps, std::size_t coarse_actions);
/// Single-threaded reference of brute_force_value.
BruteForceResult brute_force_value_serial(const ModelSpec& model, std::span<const double> mu0, const DistributionFlow& m_flow,
                                          std::span<const double> sigma, std::size_t coarse_steps, std::size_t coarse_actions);

// JSON reports.
std::string report_json(const ClassicalReport& r, int indent = 2);
std::string report_json(const FixedPointResult& r, int indent = 2);
std::string report_json(const MonotonicityReport& r, int indent = 2);
std::string report_json(const ConcavityReport& r, int indent = 2);
std::string report_json(const UniquenessReport& r, int indent = 2);
std::string report_json(const BruteForceResult& r, int indent = 2);

}  // namespace mfgplan
