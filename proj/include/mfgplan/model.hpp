#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mfgplan/expression.hpp"

namespace mfgplan {

/// Absolute tolerance for the zero-row-sum and nonnegative off-diagonal tests.
inline constexpr double kKolmogorovTol = 1e-12;

/// Dense row-major matrix, sized for generators of a handful of states.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

/// Finite discretisation of the compact action set.
class ActionGrid {
 public:
  enum class Source { Explicit, Interval };

  ActionGrid() = default;

  static ActionGrid explicit_list(std::vector<double> points);
  static ActionGrid interval(double lo, double hi, std::size_t K);

  std::size_t size() const { return points_.size(); }
  double operator[](std::size_t k) const { return points_[k]; }
  const std::vector<double>& points() const { return points_; }
  Source source() const { return source_; }
  double min() const;
  double max() const;

  /// Index of the grid point closest to `u` (smallest index on ties).
  std::size_t nearest(double u) const;

  friend bool operator==(const ActionGrid&, const ActionGrid&) = default;

 private:
  std::vector<double> points_;
  Source source_ = Source::Explicit;
};

/// Running payoff declared as g = g0(t, u) + g1(t, m).
struct SplitPayoff {
  std::vector<Expression> g0;
  std::vector<Expression> g1;
};

struct ModelSpec {
  std::string name;
  std::size_t d = 1;
  double T = 1.0;
  ActionGrid actions;
  std::vector<Expression> Q;        // d*d, row-major
  std::vector<bool> auto_diagonal;  // per row: diagonal declared `auto`
  std::vector<Expression> g;        // d (sum of the split parts when split is set)
  std::optional<SplitPayoff> split;
  std::optional<std::vector<Expression>> sigma;

  const Expression& q(std::size_t i, std::size_t j) const { return Q[i * d + j]; }

  bool q_uses_m() const;
  bool g_uses_m() const;
  bool uses_m() const { return q_uses_m() || g_uses_m(); }
  bool uses_t() const;
};

ModelSpec parse_model(std::string_view text);
std::string serialize_model(const ModelSpec& model);

/// Same dimensions, horizon, actions and expression trees.
bool same_model(const ModelSpec& a, const ModelSpec& b);

/// Generator at (t, m, u); throws KolmogorovError naming the entry and witness.
Matrix eval_Q(const ModelSpec& model, double t, std::span<const double> m, double u);
std::vector<double> eval_g(const ModelSpec& model, double t, std::span<const double> m, double u);
/// Terminal payoff sigma(m); throws InvalidArgument when the model has none.
std::vector<double> eval_sigma(const ModelSpec& model, std::span<const double> m);

/// Q and g evaluated for every grid action at one (t, m).
struct ActionTable {
  std::size_t d = 0;
  std::size_t K = 0;
  std::vector<double> q;  // [(k*d + i)*d + j]
  std::vector<double> g;  // [k*d + i]
  std::vector<char> row_varies;  // row i of Q or g_i changes with the action

  std::span<const double> q_row(std::size_t k, std::size_t i) const { return {q.data() + (k * d + i) * d, d}; }
  double g_at(std::size_t k, std::size_t i) const { return g[k * d + i]; }
};

/// m-gradients of an ActionTable.
struct ActionTableGrad {
  std::size_t d = 0;
  std::size_t K = 0;
  std::vector<double> dq;  // [((k*d + i)*d + j)*d + l]
  std::vector<double> dg;  // [(k*d + i)*d + l]
};

void fill_action_table(const ModelSpec& model, double t, std::span<const double> m, ActionTable& out);
void fill_action_table_grad(const ModelSpec& model, double t, std::span<const double> m, ActionTableGrad& out);

struct ValidationReport {
  std::size_t n_samples = 0;
  bool kolmogorov_ok = true;
  double max_row_sum_deviation = 0.0;
  double min_off_diagonal = 0.0;
  std::vector<std::string> violations;  // first few witnesses
  double lipschitz_m = 0.0;              // finite-difference ratio at the fine scale
  double lipschitz_m_coarse = 0.0;       // same at the coarse scale
  bool discontinuity_suspected = false;
};

ValidationReport validate_model(const ModelSpec& model, std::size_t n_samples, std::uint64_t seed);

/// Names accepted by builtin_model.
std::vector<std::string> builtin_model_names();

/// Built-in model by name. `K` overrides the action-grid size of interval models (0 = default).
ModelSpec builtin_model(std::string_view name, std::size_t K = 0);

/// Source text of a built-in model, as accepted by parse_model.
std::string builtin_model_text(std::string_view name, std::size_t K = 0);

/// The three-state counterexample with running cost u^2 (or u^2/2 when `half_cost`).
ModelSpec builtin_example_section4(std::size_t K = 101, bool half_cost = false);

namespace section4 {

std::vector<double> m0();
/// Target reached by the steering control: (e^{-1/3}, 1 - e^{-1/3}, 0).
std::vector<double> mT();
/// Target as printed in the source text, (1 - e^{-1/3}, e^{-1/3}, 0); not reachable.
std::vector<double> mT_printed();
/// Piecewise rate of the 2 -> 3 transition.
double rho(double t);
/// Steering control: 0 before 2/3, 1 afterwards.
double utilde(double t);
inline constexpr double kSwitchTime = 2.0 / 3.0;

}  // namespace section4

}  // namespace mfgplan
