#include "mfgplan/analysis.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <json.hpp>

#include "mfgplan/error.hpp"
#include "mfgplan/hamiltonian.hpp"

namespace mfgplan {

namespace {

constexpr double kSupportTol = 1e-10;
constexpr double kVerdictTol = 1e-12;

double sup_distance(const NodeSeries& a, const NodeSeries& b) {
  double s = 0.0;
  for (std::size_t q = 0; q < a.values.size(); ++q) s = std::max(s, std::fabs(a.values[q] - b.values[q]));
  return s;
}

std::vector<double> random_simplex(std::mt19937_64& gen, std::size_t d) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> x(d);
  double s = 0.0;
  for (double& v : x) s += (v = e(gen));
  for (double& v : x) v /= s;
  return x;
}

// Rows whose generator or payoff changes with the action somewhere on the grid.
std::vector<char> varying_on_grid(const StageTables& tables, const DistributionFlow& m_flow) {
  const std::size_t d = tables.model().d;
  std::vector<char> out(d, 0);
  std::vector<double> m(d);
  ActionTable scratch;
  for (std::size_t s = 0; s <= 2 * tables.grid().N; ++s) {
    m_at_half(m_flow, s, m);
    const ActionTable& tab = tables.at(s, m, scratch);
    for (std::size_t i = 0; i < d; ++i) out[i] = out[i] || tab.row_varies[i];
  }
  return out;
}

}  // namespace

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Strict:
      return "strict";
    case Verdict::Weak:
      return "weak";
    case Verdict::Fail:
      return "fail";
  }
  return "fail";
}

// ---------------------------------------------------------------------------

ClassicalReport check_classical(const ModelSpec& model, const Decision& candidate, const PlanningProblem& problem, double tol) {
  const RandomizedStrategy& nu = candidate.strategy;
  if (!(nu.grid() == problem.grid)) throw InvalidArgument("candidate and problem use different time grids");
  if (nu.d() != model.d || nu.K() != model.actions.size()) throw InvalidArgument("candidate does not match the model");
  if (candidate.phi_T.size() != model.d) throw InvalidArgument("phi_T has the wrong dimension");
  const std::size_t d = model.d, K = nu.K(), N = problem.grid.N;

  const RegretResult r = regret_J(model, problem, candidate);
  ClassicalReport rep;
  rep.tol = tol;
  rep.J = r.J;
  rep.terminal_gap = r.terminal_gap;
  rep.boundary_ok = r.terminal_gap <= tol;
  rep.step_violation.assign(N, 0.0);

  const StageTables tables(model, problem.grid);
  std::vector<double> m(d), phi(d), H(d);
  ActionTable scratch;
  for (std::size_t n = 0; n < N; ++n) {
    m_at_half(r.m_flow, 2 * n + 1, m);
    for (std::size_t i = 0; i < d; ++i) phi[i] = 0.5 * (r.phi_flow.at(n)[i] + r.phi_flow.at(n + 1)[i]);
    const ActionTable& tab = tables.at(2 * n + 1, m, scratch);
    hamiltonian_table(tab, phi, H.data(), nullptr);
    for (std::size_t i = 0; i < d; ++i) {
      const auto w = nu.weights(i, n);
      double mean_gap = 0.0, worst_gap = 0.0;
      std::size_t worst_k = 0;
      for (std::size_t k = 0; k < K; ++k) {
        if (w[k] == 0.0) continue;
        double v = tab.g_at(k, i);
        const auto q = tab.q_row(k, i);
        for (std::size_t j = 0; j < d; ++j) v += q[j] * phi[j];
        const double gap = H[i] - v;
        mean_gap += w[k] * gap;
        if (w[k] > kSupportTol && gap > worst_gap) {
          worst_gap = gap;
          worst_k = k;
        }
      }
      rep.support_violation = std::max(rep.support_violation, worst_gap);
      rep.step_violation[n] = std::max(rep.step_violation[n], mean_gap);
      if (mean_gap > rep.violation) {
        rep.violation = mean_gap;
        rep.worst_step = n;
        rep.worst_state = i;
        rep.worst_action = worst_k;
        rep.worst_time = problem.grid.half(2 * n + 1);
      }
    }
  }
  rep.argmax_ok = rep.violation <= tol;
  rep.pass = rep.boundary_ok && rep.argmax_ok;
  return rep;
}

// ---------------------------------------------------------------------------

FixedPointResult solve_mfg_fixedpoint(const ModelSpec& model, std::span<const double> m0, const TimeGrid& grid, double theta,
                                      std::size_t max_iters, double tol) {
  if (!model.sigma) throw InvalidArgument("model has no terminal payoff sigma");
  if (!(theta > 0.0 && theta <= 1.0)) throw InvalidArgument("damping must lie in (0, 1]");
  if (max_iters < 1) throw InvalidArgument("max_iters must be at least 1");
  if (m0.size() != model.d) throw InvalidArgument("m0 has the wrong dimension");
  require_simplex(m0, "m0");

  const StageTables tables(model, grid);
  FixedPointResult res;
  DistributionFlow m = forward_nonlinear(tables, m0, RandomizedStrategy::uniform(grid, model.d, model.actions.size()));
  for (std::size_t k = 0; k < max_iters; ++k) {
    const ValueFlow phi = backward_bellman(tables, m, eval_sigma(model, m.final()));
    const RandomizedStrategy nu = argmax_strategy(tables, m, phi);
    const DistributionFlow mhat = forward_nonlinear(tables, m0, nu);
    double resid = 0.0;
    for (std::size_t q = 0; q < m.values.size(); ++q) {
      const double next = m.values[q] + theta * (mhat.values[q] - m.values[q]);
      resid = std::max(resid, std::fabs(next - m.values[q]));
      m.values[q] = next;
    }
    res.residuals.push_back(resid);
    if (resid <= tol) {
      res.converged = true;
      break;
    }
  }
  res.phi_flow = backward_bellman(tables, m, eval_sigma(model, m.final()));
  res.strategy = argmax_strategy(tables, m, res.phi_flow);
  res.m_flow = std::move(m);
  return res;
}

// ---------------------------------------------------------------------------

MonotonicityReport monotonicity_check(const ModelSpec& model, std::size_t n_samples, std::uint64_t seed) {
  if (!model.split) throw InvalidArgument("monotonicity check needs the payoff in split form (g0, g1)");
  if (n_samples < 1) throw InvalidArgument("n_samples must be at least 1");
  const std::size_t d = model.d;
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> ut(0.0, model.T);
  MonotonicityReport rep;
  rep.samples = n_samples;
  rep.max_inner = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < n_samples; ++s) {
    const double t = ut(gen);
    std::vector<double> m1 = random_simplex(gen, d), m2 = random_simplex(gen, d);
    if (m1 == m2) continue;
    double inner = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double a = model.split->g1[i].eval(EvalEnv{t, 0.0, m1});
      const double b = model.split->g1[i].eval(EvalEnv{t, 0.0, m2});
      inner += (m1[i] - m2[i]) * (a - b);
    }
    if (inner > rep.max_inner) {
      rep.max_inner = inner;
      rep.t = t;
      rep.m1 = std::move(m1);
      rep.m2 = std::move(m2);
    }
  }
  rep.verdict = rep.max_inner < -kVerdictTol ? Verdict::Strict : rep.max_inner <= kVerdictTol ? Verdict::Weak : Verdict::Fail;
  return rep;
}

ConcavityReport concavity_check(const ModelSpec& model, std::span<const double> lo, std::span<const double> hi,
                                std::size_t n_samples, std::uint64_t seed) {
  const std::size_t d = model.d, K = model.actions.size();
  if (model.q_uses_m()) throw InvalidArgument("concavity check needs a generator that does not depend on m");
  const std::vector<Expression>* g0 = nullptr;
  if (model.split) g0 = &model.split->g0;
  else if (!model.g_uses_m()) g0 = &model.g;
  else throw InvalidArgument("concavity check needs the payoff in split form (g0, g1)");
  if (lo.size() != d || hi.size() != d) throw InvalidArgument("phi box has the wrong dimension");
  for (std::size_t i = 0; i < d; ++i)
    if (!(lo[i] <= hi[i])) throw InvalidArgument("phi box bounds are inverted");
  if (n_samples < 1) throw InvalidArgument("n_samples must be at least 1");

  const std::vector<double> mref(d, 1.0 / static_cast<double>(d));
  std::vector<double> q(K * d * d), g(K * d);
  auto H0 = [&](std::size_t i, const std::vector<double>& phi) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      double v = g[k * d + i];
      for (std::size_t j = 0; j < d; ++j) v += q[(k * d + i) * d + j] * phi[j];
      best = std::max(best, v);
    }
    return best;
  };

  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  ConcavityReport rep;
  rep.samples = n_samples;
  rep.margin = std::numeric_limits<double>::infinity();
  rep.worst_defect = std::numeric_limits<double>::infinity();
  std::vector<double> p1(d), p2(d), mid(d);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const double t = model.T * u01(gen);
    for (std::size_t k = 0; k < K; ++k) {
      const Matrix Q = eval_Q(model, t, mref, model.actions[k]);
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) q[(k * d + i) * d + j] = Q(i, j);
        g[k * d + i] = (*g0)[i].eval(EvalEnv{t, model.actions[k], mref});
      }
    }
    double dist2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      p1[j] = lo[j] + (hi[j] - lo[j]) * u01(gen);
      p2[j] = lo[j] + (hi[j] - lo[j]) * u01(gen);
      mid[j] = 0.5 * (p1[j] + p2[j]);
      dist2 += (p1[j] - p2[j]) * (p1[j] - p2[j]);
    }
    for (std::size_t i = 0; i < d; ++i) {
      const double defect = H0(i, mid) - 0.5 * (H0(i, p1) + H0(i, p2));
      if (dist2 > 0.0) rep.margin = std::min(rep.margin, defect / dist2);
      if (defect < rep.worst_defect) {
        rep.worst_defect = defect;
        rep.t = t;
        rep.state = i;
        rep.phi1 = p1;
        rep.phi2 = p2;
      }
    }
  }
  if (rep.worst_defect < -kVerdictTol) rep.verdict = Verdict::Fail;
  else if (rep.margin > kVerdictTol) rep.verdict = Verdict::Strict;
  else rep.verdict = Verdict::Weak;
  return rep;
}

// ---------------------------------------------------------------------------

UniquenessReport uniqueness_probe(const ModelSpec& model, const PlanningProblem& problem, double alpha, std::size_t n_seeds,
                                  const OptimizerSettings& opts) {
  if (n_seeds < 1) throw InvalidArgument("n_seeds must be at least 1");
  problem.validate(model.d);
  UniquenessReport rep;
  rep.results.resize(n_seeds);
  std::vector<std::exception_ptr> errors(n_seeds);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t s = 0; s < n_seeds; ++s) {
    try {
      RegretEvaluator ev(model, problem);
      const Decision init = initial_decision(model, problem, alpha, opts.seed + s, 1);
      rep.results[s] = optimize_from(ev, init, alpha, opts);
      rep.results[s].start = s;
    } catch (...) {
      errors[s] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t a = 0; a < n_seeds; ++a) {
    rep.feasible += rep.results[a].feasible ? 1 : 0;
    for (std::size_t b = a + 1; b < n_seeds; ++b) {
      rep.m_dispersion = std::max(rep.m_dispersion, sup_distance(rep.results[a].m_flow, rep.results[b].m_flow));
      rep.phi_dispersion = std::max(rep.phi_dispersion, sup_distance(rep.results[a].phi_flow, rep.results[b].phi_flow));
      rep.strategy_dispersion =
          std::max(rep.strategy_dispersion, strategy_metric(rep.results[a].decision.strategy, rep.results[b].decision.strategy,
                                                            model.actions, opts.metric_terms));
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------

namespace {

struct Enumeration {
  std::vector<std::size_t> actions;
  std::vector<std::size_t> states;  // rows that are enumerated
  std::size_t steps = 0;
  std::uint64_t count = 0;
};

Enumeration plan_enumeration(const ModelSpec& model, const StageTables& tables, const DistributionFlow& m_flow,
                             std::size_t coarse_steps, std::size_t coarse_actions) {
  if (coarse_steps < 1 || coarse_steps > 8) throw InvalidArgument("coarse_steps must lie in 1..8");
  if (coarse_actions < 1 || coarse_actions > 5) throw InvalidArgument("coarse_actions must lie in 1..5");
  if (model.d > 3) throw InvalidArgument("brute force is limited to d <= 3");
  if (coarse_steps > m_flow.grid.N) throw InvalidArgument("more coarse steps than grid steps");
  Enumeration e;
  e.steps = coarse_steps;
  const std::size_t K = model.actions.size();
  const std::size_t A = std::min(coarse_actions, K);
  for (std::size_t a = 0; a < A; ++a)
    e.actions.push_back(A == 1 ? 0 : static_cast<std::size_t>(std::llround(static_cast<double>(a) * (K - 1) / (A - 1))));
  const std::vector<char> varies = varying_on_grid(tables, m_flow);
  for (std::size_t i = 0; i < model.d; ++i)
    if (varies[i]) e.states.push_back(i);
  const double count = std::pow(static_cast<double>(A), static_cast<double>(e.states.size() * coarse_steps));
  if (count > kBruteForceLimit) throw InvalidArgument("enumeration bound exceeded");
  e.count = static_cast<std::uint64_t>(std::llround(count));
  return e;
}

// Action index of every (coarse step, enumerated state) for one candidate.
void decode(const Enumeration& e, std::uint64_t index, std::vector<std::size_t>& choice) {
  const std::size_t A = e.actions.size();
  choice.resize(e.steps * e.states.size());
  for (std::size_t& c : choice) {
    c = e.actions[index % A];
    index /= A;
  }
}

RandomizedStrategy to_strategy(const Enumeration& e, const std::vector<std::size_t>& choice, const TimeGrid& grid, std::size_t d,
                               std::size_t K) {
  RandomizedStrategy nu(grid, d, K);
  for (std::size_t c = 0; c < e.steps; ++c)
    for (std::size_t n = c * grid.N / e.steps; n < (c + 1) * grid.N / e.steps; ++n)
      for (std::size_t s = 0; s < e.states.size(); ++s) nu.set_dirac(e.states[s], n, choice[c * e.states.size() + s]);
  return nu;
}

// payoff() of a pure candidate against tables evaluated once along m(t):
// RK4 for mu with m linear inside each step, trapezoid running reward.
double candidate_payoff(const std::vector<ActionTable>& tabs, const Enumeration& e, const std::vector<std::size_t>& choice,
                        std::span<const double> mu0, std::span<const double> sigma, const TimeGrid& grid) {
  const std::size_t d = mu0.size(), N = grid.N;
  const double h = grid.h();
  std::vector<std::size_t> act(d, 0);
  std::vector<double> mu(mu0.begin(), mu0.end()), y(d), k1(d), k2(d), k3(d), k4(d);
  auto rate = [&](const ActionTable& tab, const std::vector<double>& x, std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      if (x[i] == 0.0) continue;
      const auto q = tab.q_row(act[i], i);
      for (std::size_t j = 0; j < d; ++j) out[j] += x[i] * q[j];
    }
  };
  auto reward = [&](const ActionTable& tab, const std::vector<double>& x) {
    double r = 0.0;
    for (std::size_t i = 0; i < d; ++i) r += x[i] * tab.g_at(act[i], i);
    return r;
  };
  double total = 0.0;
  std::size_t block = 0;
  for (std::size_t n = 0; n < N; ++n) {
    while ((block + 1) * N / e.steps <= n) ++block;
    for (std::size_t s = 0; s < e.states.size(); ++s) act[e.states[s]] = choice[block * e.states.size() + s];
    double step = reward(tabs[2 * n], mu);
    rate(tabs[2 * n], mu, k1);
    for (std::size_t i = 0; i < d; ++i) y[i] = mu[i] + 0.5 * h * k1[i];
    rate(tabs[2 * n + 1], y, k2);
    for (std::size_t i = 0; i < d; ++i) y[i] = mu[i] + 0.5 * h * k2[i];
    rate(tabs[2 * n + 1], y, k3);
    for (std::size_t i = 0; i < d; ++i) y[i] = mu[i] + h * k3[i];
    rate(tabs[2 * n + 2], y, k4);
    for (std::size_t i = 0; i < d; ++i) mu[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    enforce_simplex(mu, n + 1, grid.t(n + 1));
    step += reward(tabs[2 * n + 2], mu);
    total += 0.5 * h * step;
  }
  for (std::size_t i = 0; i < d; ++i) total += mu[i] * sigma[i];
  return total;
}

BruteForceResult brute_force_impl(const ModelSpec& model, std::span<const double> mu0, const DistributionFlow& m_flow,
                                  std::span<const double> sigma, std::size_t coarse_steps, std::size_t coarse_actions,
                                  bool parallel) {
  if (mu0.size() != model.d) throw InvalidArgument("mu0 has the wrong dimension");
  if (sigma.size() != model.d) throw InvalidArgument("sigma has the wrong dimension");
  if (m_flow.d != model.d) throw InvalidArgument("m flow has the wrong dimension");
  require_simplex(mu0, "mu0");
  const StageTables tables(model, m_flow.grid);
  const Enumeration e = plan_enumeration(model, tables, m_flow, coarse_steps, coarse_actions);
  const std::size_t d = model.d, K = model.actions.size();
  const TimeGrid& grid = m_flow.grid;
  std::vector<ActionTable> tabs(2 * grid.N + 1);
  {
    std::vector<double> m(d);
    for (std::size_t s = 0; s <= 2 * grid.N; ++s) {
      m_at_half(m_flow, s, m);
      fill_action_table(model, grid.half(s), m, tabs[s]);
    }
  }

  double best = -std::numeric_limits<double>::infinity();
  std::uint64_t best_index = 0;
  const auto total = static_cast<std::int64_t>(e.count);
  std::exception_ptr error;
#pragma omp parallel if (parallel)
  {
    double local = -std::numeric_limits<double>::infinity();
    std::uint64_t local_index = 0;
    std::vector<std::size_t> choice;
#pragma omp for schedule(static)
    for (std::int64_t q = 0; q < total; ++q) {
      try {
        const auto idx = static_cast<std::uint64_t>(q);
        decode(e, idx, choice);
        const double v = candidate_payoff(tabs, e, choice, mu0, sigma, grid);
        if (v > local) {
          local = v;
          local_index = idx;
        }
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
#pragma omp critical
    {
      if (local > best || (local == best && local_index < best_index)) {
        best = local;
        best_index = local_index;
      }
    }
  }
  if (error) std::rethrow_exception(error);
  BruteForceResult r;
  r.best_payoff = best;
  std::vector<std::size_t> choice;
  decode(e, best_index, choice);
  r.best = to_strategy(e, choice, grid, d, K);
  r.candidates = e.count;
  r.actions = e.actions;
  return r;
}

}  // namespace

BruteForceResult brute_force_value(const ModelSpec& model, std::span<const double> mu0, const DistributionFlow& m_flow,
                                   std::span<const double> sigma, std::size_t coarse_steps, std::size_t coarse_actions) {
  return brute_force_impl(model, mu0, m_flow, sigma, coarse_steps, coarse_actions, true);
}

BruteForceResult brute_force_value_serial(const ModelSpec& model, std::span<const double> mu0, const DistributionFlow& m_flow,
                                          std::span<const double> sigma, std::size_t coarse_steps, std::size_t coarse_actions) {
  return brute_force_impl(model, mu0, m_flow, sigma, coarse_steps, coarse_actions, false);
}

// ---------------------------------------------------------------------------
// JSON

std::string report_json(const ClassicalReport& r, int indent) {
  nlohmann::json j;
  j["classical"] = r.pass ? "pass" : "fail";
  j["boundary_ok"] = r.boundary_ok;
  j["argmax_ok"] = r.argmax_ok;
  j["tol"] = r.tol;
  j["terminal_gap"] = r.terminal_gap;
  j["J"] = r.J;
  j["worst_violation"] = {{"magnitude", r.violation},
                          {"step", r.worst_step},
                          {"time", r.worst_time},
                          {"state", r.worst_state + 1},
                          {"action_index", r.worst_action}};
  j["support_violation"] = r.support_violation;
  return j.dump(indent);
}

std::string report_json(const FixedPointResult& r, int indent) {
  nlohmann::json j;
  j["converged"] = r.converged;
  j["iterations"] = r.residuals.size();
  j["residuals"] = r.residuals;
  j["m_T"] = std::vector<double>(r.m_flow.final().begin(), r.m_flow.final().end());
  j["phi_0"] = std::vector<double>(r.phi_flow.at(0).begin(), r.phi_flow.at(0).end());
  return j.dump(indent);
}

std::string report_json(const MonotonicityReport& r, int indent) {
  nlohmann::json j;
  j["monotonicity"] = verdict_name(r.verdict);
  j["samples"] = r.samples;
  j["max_inner_product"] = r.max_inner;
  j["witness"] = {{"t", r.t}, {"m1", r.m1}, {"m2", r.m2}};
  return j.dump(indent);
}

std::string report_json(const ConcavityReport& r, int indent) {
  nlohmann::json j;
  j["concavity"] = verdict_name(r.verdict);
  j["samples"] = r.samples;
  j["margin"] = r.margin;
  j["worst_defect"] = r.worst_defect;
  j["witness"] = {{"t", r.t}, {"state", r.state + 1}, {"phi1", r.phi1}, {"phi2", r.phi2}};
  return j.dump(indent);
}

std::string report_json(const UniquenessReport& r, int indent) {
  nlohmann::json j;
  j["seeds"] = r.results.size();
  j["feasible"] = r.feasible;
  j["m_dispersion"] = r.m_dispersion;
  j["phi_dispersion"] = r.phi_dispersion;
  j["strategy_dispersion"] = r.strategy_dispersion;
  std::vector<double> J, gap;
  for (const auto& x : r.results) {
    J.push_back(x.J);
    gap.push_back(x.terminal_gap);
  }
  j["J"] = J;
  j["terminal_gap"] = gap;
  return j.dump(indent);
}

std::string report_json(const BruteForceResult& r, int indent) {
  nlohmann::json j;
  j["best_payoff"] = r.best_payoff;
  j["candidates"] = r.candidates;
  j["action_indices"] = r.actions;
  return j.dump(indent);
}

}  // namespace mfgplan
