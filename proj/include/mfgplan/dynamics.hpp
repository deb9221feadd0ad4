#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "mfgplan/model.hpp"

namespace mfgplan {

/// Uniform grid t_n = n*T/N on [0, T].
struct TimeGrid {
  double T = 1.0;
  std::size_t N = 1;

  TimeGrid() = default;
  TimeGrid(double T_, std::size_t N_);

  double h() const { return T / static_cast<double>(N); }
  double t(std::size_t n) const { return n == N ? T : static_cast<double>(n) * T / static_cast<double>(N); }
  /// Time of half-step index s = 0..2N.
  double half(std::size_t s) const { return s == 2 * N ? T : static_cast<double>(s) * T / static_cast<double>(2 * N); }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;
};

/// Per-state, per-step probability vectors over the action grid, held
/// constant on each [t_n, t_{n+1}).
class RandomizedStrategy {
 public:
  RandomizedStrategy() = default;
  /// All weight on action 0.
  RandomizedStrategy(const TimeGrid& grid, std::size_t d, std::size_t K);

  static RandomizedStrategy uniform(const TimeGrid& grid, std::size_t d, std::size_t K);
  static RandomizedStrategy dirac(const TimeGrid& grid, std::size_t d, std::size_t K, std::size_t action);

  /// Converts a feedback control u(i, t) that is constant between the given
  /// breakpoints. Each grid cell gets the exact occupation fraction of every
  /// action (the control value is snapped to the nearest grid point).
  static RandomizedStrategy from_control(const TimeGrid& grid, const ActionGrid& actions, std::size_t d,
                                         const std::function<double(std::size_t, double)>& control,
                                         std::span<const double> breakpoints);

  const TimeGrid& grid() const { return grid_; }
  std::size_t d() const { return d_; }
  std::size_t K() const { return K_; }

  std::span<double> weights(std::size_t i, std::size_t n) { return {w_.data() + (i * grid_.N + n) * K_, K_}; }
  std::span<const double> weights(std::size_t i, std::size_t n) const { return {w_.data() + (i * grid_.N + n) * K_, K_}; }
  /// Flat storage, index (i*N + n)*K + k.
  std::vector<double>& data() { return w_; }
  const std::vector<double>& data() const { return w_; }

  void set_dirac(std::size_t i, std::size_t n, std::size_t k);

  /// Throws InvalidArgument unless every vector is nonnegative and sums to 1 within 1e-12.
  void validate() const;

  friend bool operator==(const RandomizedStrategy&, const RandomizedStrategy&) = default;

 private:
  TimeGrid grid_;
  std::size_t d_ = 0;
  std::size_t K_ = 0;
  std::vector<double> w_;
};

/// Node values of a d-vector function on a TimeGrid.
struct NodeSeries {
  TimeGrid grid;
  std::size_t d = 0;
  std::vector<double> values;  // [(n*d) + i]

  NodeSeries() = default;
  NodeSeries(const TimeGrid& g, std::size_t d_) : grid(g), d(d_), values((g.N + 1) * d_, 0.0) {}

  std::span<double> at(std::size_t n) { return {values.data() + n * d, d}; }
  std::span<const double> at(std::size_t n) const { return {values.data() + n * d, d}; }
  std::span<const double> final() const { return at(grid.N); }
};

/// m(.) or mu(.) on the grid. `clipped_nodes` lists nodes where a small
/// negative component was clipped and the vector renormalised.
struct DistributionFlow : NodeSeries {
  using NodeSeries::NodeSeries;
  std::vector<std::size_t> clipped_nodes;
};

/// phi(.) on the grid.
struct ValueFlow : NodeSeries {
  using NodeSeries::NodeSeries;
};

/// Components below this are an integration failure.
inline constexpr double kNegativeHardTol = 1e-6;
/// Components below this are clipped to 0 and the node is flagged.
inline constexpr double kNegativeClipTol = 1e-9;

/// Action tables at every half step of a grid. Parts of Q and g that do not
/// depend on m are computed once per half step; the rest is evaluated by `at`.
class StageTables {
 public:
  StageTables(const ModelSpec& model, const TimeGrid& grid);

  const ModelSpec& model() const { return *model_; }
  const TimeGrid& grid() const { return grid_; }
  bool m_dependent() const { return !m_entries_.empty(); }
  bool q_uses_m() const { return q_uses_m_; }
  bool g_uses_m() const { return g_uses_m_; }

  /// Table at half-step index s (time s*h/2) and population m. `scratch`
  /// is filled and returned only when the model depends on m.
  const ActionTable& at(std::size_t s, std::span<const double> m, ActionTable& scratch) const;

  /// m-gradients of the table at (s, m); all zeros when nothing depends on m.
  const ActionTableGrad& grad_at(std::size_t s, std::span<const double> m, ActionTableGrad& scratch) const;

 private:
  struct MEntry {
    const Expression* expr;
    std::size_t i;
    std::size_t j;   // column for Q entries
    bool is_q;
    bool add;        // g1 part added onto a precomputed g0
  };

  const ModelSpec* model_;
  TimeGrid grid_;
  bool t_dependent_ = false;
  bool q_uses_m_ = false;
  bool g_uses_m_ = false;
  std::vector<MEntry> m_entries_;
  std::vector<char> row_has_m_;
  std::vector<ActionTable> base_;
  ActionTableGrad zero_grad_;
};

/// Relaxed generator row i and payoff: weights w (length K) over the actions.
void relaxed_row(const ActionTable& tab, std::size_t i, std::span<const double> w, double* q_row, double* g_i);

/// Relaxed generator and payoff for a full weight block of one step
/// (state i at offset i*stride). Writes d*d and d values.
void relaxed_all(const ActionTable& tab, const double* w, std::size_t stride, double* Qbar, double* gbar);

/// Q(t, m, nu) with nu[i] a probability vector over the action grid.
Matrix relax_Q(const ModelSpec& model, double t, std::span<const double> m, const std::vector<std::vector<double>>& nu);
std::vector<double> relax_g(const ModelSpec& model, double t, std::span<const double> m, const std::vector<std::vector<double>>& nu);

/// Throws InvalidArgument unless x is in the simplex (entries >= -1e-12, sum within 1e-9).
void require_simplex(std::span<const double> x, const char* what);

/// dm/dt = m Q(t, m, nu(t)), m(0) = m0, by RK4 with nu held constant on each step.
DistributionFlow forward_nonlinear(const ModelSpec& model, std::span<const double> m0, const RandomizedStrategy& nu);
DistributionFlow forward_nonlinear(const StageTables& tables, std::span<const double> m0, const RandomizedStrategy& nu);

/// dmu/dt = mu Q(t, m(t), nu(t)), mu(0) = mu0, with m linear inside each step.
DistributionFlow forward_linear(const ModelSpec& model, std::span<const double> mu0, const DistributionFlow& m_flow,
                                const RandomizedStrategy& nu);
DistributionFlow forward_linear(const StageTables& tables, std::span<const double> mu0, const DistributionFlow& m_flow,
                                const RandomizedStrategy& nu);

/// Applies the negative-component policy to a freshly integrated node.
/// Returns true when the node was clipped.
bool enforce_simplex(std::span<double> x, std::size_t node, double t);

/// m at half-step s of the grid: node values at even s, midpoint average at odd s.
void m_at_half(const DistributionFlow& m_flow, std::size_t s, std::span<double> out);

// CSV interfaces.
void write_flow_csv(std::ostream& os, const NodeSeries& flow);
/// Reads `t,x1..xd` rows; the times must form a uniform grid starting at 0.
NodeSeries read_flow_csv(std::istream& is);
void write_strategy_csv(std::ostream& os, const RandomizedStrategy& nu);
/// Reads `state,step,action_index,weight` rows (1-based state, 0-based step and action).
RandomizedStrategy read_strategy_csv(std::istream& is, const TimeGrid& grid, std::size_t d, std::size_t K);

}  // namespace mfgplan
