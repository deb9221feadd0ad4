#include "mfgplan/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "mfgplan/error.hpp"

namespace mfgplan {

TimeGrid::TimeGrid(double T_, std::size_t N_) : T(T_), N(N_) {
  if (!(T > 0.0) || !std::isfinite(T)) throw InvalidArgument("time grid needs T > 0");
  if (N < 1) throw InvalidArgument("time grid needs N >= 1");
}

// ---------------------------------------------------------------------------
// RandomizedStrategy

RandomizedStrategy::RandomizedStrategy(const TimeGrid& grid, std::size_t d, std::size_t K)
    : grid_(grid), d_(d), K_(K), w_(d * grid.N * K, 0.0) {
  if (d == 0 || K == 0) throw InvalidArgument("strategy needs d >= 1 and K >= 1");
  for (std::size_t c = 0; c < d * grid.N; ++c) w_[c * K] = 1.0;
}

RandomizedStrategy RandomizedStrategy::uniform(const TimeGrid& grid, std::size_t d, std::size_t K) {
  RandomizedStrategy s(grid, d, K);
  std::fill(s.w_.begin(), s.w_.end(), 1.0 / static_cast<double>(K));
  return s;
}

RandomizedStrategy RandomizedStrategy::dirac(const TimeGrid& grid, std::size_t d, std::size_t K, std::size_t action) {
  if (action >= K) throw InvalidArgument("dirac action index out of range");
  RandomizedStrategy s(grid, d, K);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t n = 0; n < grid.N; ++n) s.set_dirac(i, n, action);
  return s;
}

RandomizedStrategy RandomizedStrategy::from_control(const TimeGrid& grid, const ActionGrid& actions, std::size_t d,
                                                    const std::function<double(std::size_t, double)>& control,
                                                    std::span<const double> breakpoints) {
  RandomizedStrategy s(grid, d, actions.size());
  std::vector<double> cuts(breakpoints.begin(), breakpoints.end());
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> edges;
  for (std::size_t n = 0; n < grid.N; ++n) {
    const double a = grid.t(n), b = grid.t(n + 1);
    edges.assign({a});
    for (double c : cuts)
      if (c > a && c < b) edges.push_back(c);
    edges.push_back(b);
    for (std::size_t i = 0; i < d; ++i) {
      auto w = s.weights(i, n);
      std::fill(w.begin(), w.end(), 0.0);
      for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
        const double mid = 0.5 * (edges[p] + edges[p + 1]);
        w[actions.nearest(control(i, mid))] += (edges[p + 1] - edges[p]) / (b - a);
      }
      double sum = 0.0;
      for (double x : w) sum += x;
      for (double& x : w) x /= sum;
    }
  }
  return s;
}

void RandomizedStrategy::set_dirac(std::size_t i, std::size_t n, std::size_t k) {
  auto w = weights(i, n);
  std::fill(w.begin(), w.end(), 0.0);
  w[k] = 1.0;
}

void RandomizedStrategy::validate() const {
  for (std::size_t i = 0; i < d_; ++i) {
    for (std::size_t n = 0; n < grid_.N; ++n) {
      double sum = 0.0;
      for (double x : weights(i, n)) {
        if (!(x >= 0.0)) {
          throw InvalidArgument("strategy weight negative or NaN at state " + std::to_string(i + 1) + ", step " + std::to_string(n));
        }
        sum += x;
      }
      if (std::fabs(sum - 1.0) > 1e-12) {
        throw InvalidArgument("strategy weights at state " + std::to_string(i + 1) + ", step " + std::to_string(n) + " sum to " +
                              std::to_string(sum));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Stage tables and relaxed rates

namespace {

void check_kolmogorov(const double* row, std::size_t d, std::size_t i, double t, std::span<const double> m, double u, bool with_m) {
  double sum = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    sum += row[j];
    if (j != i && row[j] < -kKolmogorovTol) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "negative off-diagonal Q[%zu][%zu] = %.17g at t = %.17g, u = %.17g", i + 1, j + 1, row[j], t, u);
      std::string msg = buf;
      if (with_m) {
        msg += ", m = (";
        for (std::size_t l = 0; l < m.size(); ++l) msg += (l ? ", " : "") + std::to_string(m[l]);
        msg += ")";
      }
      throw KolmogorovError(msg);
    }
  }
  if (std::fabs(sum) > kKolmogorovTol) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "row %zu of Q sums to %.17g at t = %.17g, u = %.17g", i + 1, sum, t, u);
    std::string msg = buf;
    if (with_m) {
      msg += ", m = (";
      for (std::size_t l = 0; l < m.size(); ++l) msg += (l ? ", " : "") + std::to_string(m[l]);
      msg += ")";
    }
    throw KolmogorovError(msg);
  }
}

}  // namespace

StageTables::StageTables(const ModelSpec& model, const TimeGrid& grid) : model_(&model), grid_(grid) {
  if (std::fabs(grid.T - model.T) > 1e-12 * model.T) throw InvalidArgument("time grid horizon does not match the model");
  const std::size_t d = model.d, K = model.actions.size();
  q_uses_m_ = model.q_uses_m();
  g_uses_m_ = model.g_uses_m();
  row_has_m_.assign(d, 0);
  std::vector<char> row_varies(d, 0);
  // Expressions whose value is taken from the precomputed base tables.
  std::vector<const Expression*> base_g(d, nullptr);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const Expression& e = model.q(i, j);
      t_dependent_ = t_dependent_ || e.uses_t();
      if (e.uses_u() && K > 1) row_varies[i] = 1;
      if (e.uses_m()) {
        m_entries_.push_back({&e, i, j, true, false});
        row_has_m_[i] = 1;
      }
    }
    if (model.split) {
      const Expression& g0 = model.split->g0[i];
      const Expression& g1 = model.split->g1[i];
      t_dependent_ = t_dependent_ || g0.uses_t() || g1.uses_t();
      if (g0.uses_u() && K > 1) row_varies[i] = 1;
      base_g[i] = &g0;
      if (g1.uses_m()) m_entries_.push_back({&g1, i, 0, false, true});
    } else {
      const Expression& g = model.g[i];
      t_dependent_ = t_dependent_ || g.uses_t();
      if (g.uses_u() && K > 1) row_varies[i] = 1;
      if (g.uses_m()) m_entries_.push_back({&g, i, 0, false, false});
      else base_g[i] = &g;
    }
  }

  const std::vector<double> m_dummy(d, 1.0 / static_cast<double>(d));
  const std::size_t count = t_dependent_ ? 2 * grid.N + 1 : 1;
  base_.resize(count);
  for (std::size_t s = 0; s < count; ++s) {
    ActionTable& tab = base_[s];
    tab.d = d;
    tab.K = K;
    tab.q.assign(K * d * d, 0.0);
    tab.g.assign(K * d, 0.0);
    tab.row_varies = row_varies;
    const double t = grid.half(s);
    EvalEnv env{t, model.actions[0], m_dummy};
    auto fill = [&](const Expression& e, auto&& slot) {
      if (!e.uses_u()) {
        const double v = e.eval(env);
        for (std::size_t k = 0; k < K; ++k) slot(k) = v;
        return;
      }
      for (std::size_t k = 0; k < K; ++k) {
        env.u = model.actions[k];
        slot(k) = e.eval(env);
      }
    };
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const Expression& e = model.q(i, j);
        if (!e.uses_m()) fill(e, [&](std::size_t k) -> double& { return tab.q[(k * d + i) * d + j]; });
      }
      if (base_g[i]) fill(*base_g[i], [&](std::size_t k) -> double& { return tab.g[k * d + i]; });
      if (model.split && !model.split->g1[i].uses_m()) {
        env.u = model.actions[0];
        const double v = model.split->g1[i].eval(env);
        for (std::size_t k = 0; k < K; ++k) tab.g[k * d + i] += v;
      }
    }
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < d; ++i)
        if (!row_has_m_[i]) check_kolmogorov(tab.q.data() + (k * d + i) * d, d, i, t, m_dummy, model.actions[k], false);
  }
  zero_grad_.d = d;
  zero_grad_.K = K;
  zero_grad_.dq.assign(K * d * d * d, 0.0);
  zero_grad_.dg.assign(K * d * d, 0.0);
}

const ActionTable& StageTables::at(std::size_t s, std::span<const double> m, ActionTable& scratch) const {
  const ActionTable& base = base_[t_dependent_ ? s : 0];
  if (m_entries_.empty()) return base;
  const ModelSpec& model = *model_;
  const std::size_t d = model.d, K = model.actions.size();
  scratch = base;
  const double t = grid_.half(s);
  EvalEnv env{t, model.actions[0], m};
  for (const MEntry& me : m_entries_) {
    const Expression& e = *me.expr;
    if (me.is_q) {
      if (!e.uses_u()) {
        const double v = e.eval(env);
        for (std::size_t k = 0; k < K; ++k) scratch.q[(k * d + me.i) * d + me.j] = v;
      } else {
        for (std::size_t k = 0; k < K; ++k) {
          env.u = model.actions[k];
          scratch.q[(k * d + me.i) * d + me.j] = e.eval(env);
        }
      }
    } else if (me.add || !e.uses_u()) {
      env.u = model.actions[0];
      const double v = e.eval(env);
      for (std::size_t k = 0; k < K; ++k) {
        double& slot = scratch.g[k * d + me.i];
        slot = me.add ? slot + v : v;
      }
    } else {
      for (std::size_t k = 0; k < K; ++k) {
        env.u = model.actions[k];
        scratch.g[k * d + me.i] = e.eval(env);
      }
    }
  }
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < d; ++i)
      if (row_has_m_[i]) check_kolmogorov(scratch.q.data() + (k * d + i) * d, d, i, t, m, model.actions[k], true);
  return scratch;
}

const ActionTableGrad& StageTables::grad_at(std::size_t s, std::span<const double> m, ActionTableGrad& scratch) const {
  if (m_entries_.empty()) return zero_grad_;
  const ModelSpec& model = *model_;
  const std::size_t d = model.d, K = model.actions.size();
  scratch.d = d;
  scratch.K = K;
  scratch.dq.assign(K * d * d * d, 0.0);
  scratch.dg.assign(K * d * d, 0.0);
  std::vector<double> grad(d);
  EvalEnv env{grid_.half(s), model.actions[0], m};
  for (const MEntry& me : m_entries_) {
    const Expression& e = *me.expr;
    auto slot = [&](std::size_t k, std::size_t l) -> double& {
      return me.is_q ? scratch.dq[((k * d + me.i) * d + me.j) * d + l] : scratch.dg[(k * d + me.i) * d + l];
    };
    if (!e.uses_u()) {
      e.eval_gradient_m(env, grad);
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t l = 0; l < d; ++l) slot(k, l) = grad[l];
    } else {
      for (std::size_t k = 0; k < K; ++k) {
        env.u = model.actions[k];
        e.eval_gradient_m(env, grad);
        for (std::size_t l = 0; l < d; ++l) slot(k, l) = grad[l];
      }
    }
  }
  return scratch;
}

void relaxed_row(const ActionTable& tab, std::size_t i, std::span<const double> w, double* q_row, double* g_i) {
  const std::size_t d = tab.d;
  if (!tab.row_varies[i]) {
    const auto r = tab.q_row(0, i);
    std::copy(r.begin(), r.end(), q_row);
    *g_i = tab.g_at(0, i);
    return;
  }
  std::fill(q_row, q_row + d, 0.0);
  double g = 0.0;
  for (std::size_t k = 0; k < tab.K; ++k) {
    const double wk = w[k];
    if (wk == 0.0) continue;
    const double* r = tab.q.data() + (k * d + i) * d;
    for (std::size_t j = 0; j < d; ++j) q_row[j] += wk * r[j];
    g += wk * tab.g[k * d + i];
  }
  *g_i = g;
}

void relaxed_all(const ActionTable& tab, const double* w, std::size_t stride, double* Qbar, double* gbar) {
  for (std::size_t i = 0; i < tab.d; ++i) relaxed_row(tab, i, {w + i * stride, tab.K}, Qbar + i * tab.d, gbar + i);
}

namespace {

ActionTable table_for(const ModelSpec& model, double t, std::span<const double> m, const std::vector<std::vector<double>>& nu) {
  if (nu.size() != model.d) throw InvalidArgument("relaxation needs one probability vector per state");
  for (const auto& v : nu) {
    if (v.size() != model.actions.size()) throw InvalidArgument("relaxation weights do not match the action grid");
    double s = 0.0;
    for (double x : v) {
      if (!(x >= 0.0)) throw InvalidArgument("relaxation weights must be nonnegative");
      s += x;
    }
    if (std::fabs(s - 1.0) > 1e-12) throw InvalidArgument("relaxation weights must sum to 1");
  }
  ActionTable tab;
  fill_action_table(model, t, m, tab);
  return tab;
}

}  // namespace

Matrix relax_Q(const ModelSpec& model, double t, std::span<const double> m, const std::vector<std::vector<double>>& nu) {
  const ActionTable tab = table_for(model, t, m, nu);
  Matrix q(model.d, model.d);
  double g;
  for (std::size_t i = 0; i < model.d; ++i) relaxed_row(tab, i, nu[i], &q.data[i * model.d], &g);
  return q;
}

std::vector<double> relax_g(const ModelSpec& model, double t, std::span<const double> m, const std::vector<std::vector<double>>& nu) {
  const ActionTable tab = table_for(model, t, m, nu);
  std::vector<double> g(model.d), row(model.d);
  for (std::size_t i = 0; i < model.d; ++i) relaxed_row(tab, i, nu[i], row.data(), &g[i]);
  return g;
}

// ---------------------------------------------------------------------------
// Forward integration

void require_simplex(std::span<const double> x, const char* what) {
  double sum = 0.0;
  for (double v : x) {
    if (!(v >= -1e-12) || !std::isfinite(v)) throw InvalidArgument(std::string(what) + " has a negative or non-finite entry");
    sum += v;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw InvalidArgument(std::string(what) + " does not sum to 1");
}

bool enforce_simplex(std::span<double> x, std::size_t node, double t) {
  double lo = 0.0;
  std::size_t arg = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw IntegrationError("non-finite value at node " + std::to_string(node) + " (t = " + std::to_string(t) + ")");
    if (x[i] < lo) {
      lo = x[i];
      arg = i;
    }
  }
  if (lo < -kNegativeHardTol) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "component %zu reached %.3e at node %zu (t = %.6g); step size too large or rates not Kolmogorov", arg + 1,
                  lo, node, t);
    throw IntegrationError(buf);
  }
  if (lo >= -kNegativeClipTol) return false;
  double sum = 0.0;
  for (double& v : x) sum += (v = std::max(v, 0.0));
  for (double& v : x) v /= sum;
  return true;
}

void m_at_half(const DistributionFlow& m_flow, std::size_t s, std::span<double> out) {
  const auto a = m_flow.at(s / 2);
  if (s % 2 == 0) {
    std::copy(a.begin(), a.end(), out.begin());
    return;
  }
  const auto b = m_flow.at(s / 2 + 1);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (a[i] + b[i]);
}

namespace {

// out_j = sum_i y_i Q_ij
inline void left_multiply(const double* Q, const double* y, double* out, std::size_t d) {
  std::fill(out, out + d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double yi = y[i];
    if (yi == 0.0) continue;
    const double* r = Q + i * d;
    for (std::size_t j = 0; j < d; ++j) out[j] += yi * r[j];
  }
}

void check_strategy(const StageTables& tables, const RandomizedStrategy& nu) {
  if (!(nu.grid() == tables.grid())) throw InvalidArgument("strategy and flow use different time grids");
  if (nu.d() != tables.model().d || nu.K() != tables.model().actions.size())
    throw InvalidArgument("strategy shape does not match the model");
}

}  // namespace

DistributionFlow forward_nonlinear(const ModelSpec& model, std::span<const double> m0, const RandomizedStrategy& nu) {
  const StageTables tables(model, nu.grid());
  return forward_nonlinear(tables, m0, nu);
}

DistributionFlow forward_nonlinear(const StageTables& tables, std::span<const double> m0, const RandomizedStrategy& nu) {
  const ModelSpec& model = tables.model();
  const std::size_t d = model.d;
  if (m0.size() != d) throw InvalidArgument("m0 has the wrong dimension");
  require_simplex(m0, "m0");
  check_strategy(tables, nu);
  const TimeGrid& grid = tables.grid();
  const std::size_t N = grid.N;
  const std::size_t K = nu.K();
  const double h = grid.h();

  DistributionFlow flow(grid, d);
  std::copy(m0.begin(), m0.end(), flow.at(0).begin());
  std::vector<double> Q(d * d), g(d), y(d), k1(d), k2(d), k3(d), k4(d);
  ActionTable scratch;
  const double* w = nullptr;
  auto rate = [&](std::size_t s, const double* state, double* out) {
    const ActionTable& tab = tables.at(s, {state, d}, scratch);
    relaxed_all(tab, w, N * K, Q.data(), g.data());
    left_multiply(Q.data(), state, out, d);
  };
  for (std::size_t n = 0; n < N; ++n) {
    const auto mn = flow.at(n);
    w = nu.data().data() + n * K;
    rate(2 * n, mn.data(), k1.data());
    for (std::size_t i = 0; i < d; ++i) y[i] = mn[i] + 0.5 * h * k1[i];
    rate(2 * n + 1, y.data(), k2.data());
    for (std::size_t i = 0; i < d; ++i) y[i] = mn[i] + 0.5 * h * k2[i];
    rate(2 * n + 1, y.data(), k3.data());
    for (std::size_t i = 0; i < d; ++i) y[i] = mn[i] + h * k3[i];
    rate(2 * n + 2, y.data(), k4.data());
    auto next = flow.at(n + 1);
    for (std::size_t i = 0; i < d; ++i) next[i] = mn[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    if (enforce_simplex(next, n + 1, grid.t(n + 1))) flow.clipped_nodes.push_back(n + 1);
  }
  return flow;
}

DistributionFlow forward_linear(const ModelSpec& model, std::span<const double> mu0, const DistributionFlow& m_flow,
                                const RandomizedStrategy& nu) {
  const StageTables tables(model, nu.grid());
  return forward_linear(tables, mu0, m_flow, nu);
}

DistributionFlow forward_linear(const StageTables& tables, std::span<const double> mu0, const DistributionFlow& m_flow,
                                const RandomizedStrategy& nu) {
  const ModelSpec& model = tables.model();
  const std::size_t d = model.d;
  if (mu0.size() != d) throw InvalidArgument("mu0 has the wrong dimension");
  require_simplex(mu0, "mu0");
  check_strategy(tables, nu);
  if (!(m_flow.grid == nu.grid()) || m_flow.d != d) throw InvalidArgument("m flow does not match the strategy grid");
  const TimeGrid& grid = tables.grid();
  const std::size_t N = grid.N;
  const std::size_t K = nu.K();
  const double h = grid.h();

  DistributionFlow flow(grid, d);
  std::copy(mu0.begin(), mu0.end(), flow.at(0).begin());
  std::vector<double> Q0(d * d), Qm(d * d), Q1(d * d), g(d), m(d), y(d), k1(d), k2(d), k3(d), k4(d);
  ActionTable scratch;
  for (std::size_t n = 0; n < N; ++n) {
    const double* w = nu.data().data() + n * K;
    for (std::size_t r = 0; r < 3; ++r) {
      m_at_half(m_flow, 2 * n + r, m);
      const ActionTable& tab = tables.at(2 * n + r, m, scratch);
      relaxed_all(tab, w, N * K, (r == 0 ? Q0 : r == 1 ? Qm : Q1).data(), g.data());
    }
    const auto mu = flow.at(n);
    left_multiply(Q0.data(), mu.data(), k1.data(), d);
    for (std::size_t i = 0; i < d; ++i) y[i] = mu[i] + 0.5 * h * k1[i];
    left_multiply(Qm.data(), y.data(), k2.data(), d);
    for (std::size_t i = 0; i < d; ++i) y[i] = mu[i] + 0.5 * h * k2[i];
    left_multiply(Qm.data(), y.data(), k3.data(), d);
    for (std::size_t i = 0; i < d; ++i) y[i] = mu[i] + h * k3[i];
    left_multiply(Q1.data(), y.data(), k4.data(), d);
    auto next = flow.at(n + 1);
    for (std::size_t i = 0; i < d; ++i) next[i] = mu[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    if (enforce_simplex(next, n + 1, grid.t(n + 1))) flow.clipped_nodes.push_back(n + 1);
  }
  return flow;
}

// ---------------------------------------------------------------------------
// CSV

void write_flow_csv(std::ostream& os, const NodeSeries& flow) {
  os << "t";
  for (std::size_t i = 0; i < flow.d; ++i) os << ",x" << i + 1;
  os << "\n";
  char buf[40];
  for (std::size_t n = 0; n <= flow.grid.N; ++n) {
    std::snprintf(buf, sizeof buf, "%.17g", flow.grid.t(n));
    os << buf;
    for (double v : flow.at(n)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << "," << buf;
    }
    os << "\n";
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto a = cell.find_first_not_of(" \t\r");
    const auto b = cell.find_last_not_of(" \t\r");
    out.push_back(a == std::string::npos ? std::string() : cell.substr(a, b - a + 1));
  }
  return out;
}

double parse_number(const std::string& s, int line, int column) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) throw ParseError("malformed number '" + s + "'", line, column);
  return v;
}

}  // namespace

NodeSeries read_flow_csv(std::istream& is) {
  std::string line;
  int line_no = 0;
  if (!std::getline(is, line)) throw ParseError("empty flow CSV", 1, 1);
  ++line_no;
  const auto header = split_csv(line);
  if (header.size() < 2 || header[0] != "t") throw ParseError("flow CSV header must be t,x1..xd", 1, 1);
  const std::size_t d = header.size() - 1;
  std::vector<double> times, values;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    if (cells.size() != d + 1) throw ParseError("expected " + std::to_string(d + 1) + " columns", line_no, 1);
    times.push_back(parse_number(cells[0], line_no, 1));
    for (std::size_t i = 1; i <= d; ++i) values.push_back(parse_number(cells[i], line_no, static_cast<int>(i) + 1));
  }
  if (times.size() < 2) throw ParseError("flow CSV needs at least two rows", line_no, 1);
  const std::size_t N = times.size() - 1;
  const double T = times.back();
  if (times.front() != 0.0 || !(T > 0.0)) throw ParseError("flow CSV times must start at 0 and increase", 2, 1);
  const TimeGrid grid(T, N);
  for (std::size_t n = 0; n <= N; ++n) {
    if (std::fabs(times[n] - grid.t(n)) > 1e-9 * T) throw ParseError("flow CSV times are not a uniform grid", static_cast<int>(n) + 2, 1);
  }
  NodeSeries s(grid, d);
  s.values = std::move(values);
  return s;
}

void write_strategy_csv(std::ostream& os, const RandomizedStrategy& nu) {
  os << "state,step,action_index,weight\n";
  char buf[40];
  for (std::size_t i = 0; i < nu.d(); ++i) {
    for (std::size_t n = 0; n < nu.grid().N; ++n) {
      const auto w = nu.weights(i, n);
      for (std::size_t k = 0; k < w.size(); ++k) {
        if (w[k] == 0.0) continue;
        std::snprintf(buf, sizeof buf, "%.17g", w[k]);
        os << i + 1 << "," << n << "," << k << "," << buf << "\n";
      }
    }
  }
}

RandomizedStrategy read_strategy_csv(std::istream& is, const TimeGrid& grid, std::size_t d, std::size_t K) {
  std::string line;
  int line_no = 0;
  if (!std::getline(is, line)) throw ParseError("empty strategy CSV", 1, 1);
  ++line_no;
  const auto header = split_csv(line);
  if (header != std::vector<std::string>{"state", "step", "action_index", "weight"})
    throw ParseError("strategy CSV header must be state,step,action_index,weight", 1, 1);
  RandomizedStrategy nu(grid, d, K);
  std::fill(nu.data().begin(), nu.data().end(), 0.0);
  std::vector<char> seen(d * grid.N * K, 0);
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto c = split_csv(line);
    if (c.size() != 4) throw ParseError("expected 4 columns", line_no, 1);
    const double si = parse_number(c[0], line_no, 1), sn = parse_number(c[1], line_no, 2), sk = parse_number(c[2], line_no, 3);
    const double w = parse_number(c[3], line_no, 4);
    if (si != std::floor(si) || si < 1 || si > static_cast<double>(d)) throw ParseError("state out of range", line_no, 1);
    if (sn != std::floor(sn) || sn < 0 || sn >= static_cast<double>(grid.N)) throw ParseError("step out of range", line_no, 2);
    if (sk != std::floor(sk) || sk < 0 || sk >= static_cast<double>(K)) throw ParseError("action index out of range", line_no, 3);
    if (w < 0.0) throw ParseError("negative weight", line_no, 4);
    const std::size_t idx = (static_cast<std::size_t>(si - 1) * grid.N + static_cast<std::size_t>(sn)) * K + static_cast<std::size_t>(sk);
    if (seen[idx]) throw ParseError("duplicate entry", line_no, 1);
    seen[idx] = 1;
    nu.data()[idx] = w;
  }
  try {
    nu.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("strategy CSV: ") + e.what(), line_no, 1);
  }
  return nu;
}

}  // namespace mfgplan
