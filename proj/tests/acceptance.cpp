// Acceptance gate: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mfgplan/analysis.hpp"
#include "mfgplan/chain.hpp"
#include "mfgplan/dynamics.hpp"
#include "mfgplan/hamiltonian.hpp"
#include "mfgplan/model.hpp"
#include "mfgplan/planning.hpp"

using namespace mfgplan;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

PlanningProblem make_problem(const ModelSpec& model, std::size_t N, std::vector<double> m0, std::vector<double> mT) {
  PlanningProblem p;
  p.grid = TimeGrid(model.T, N);
  p.m0 = std::move(m0);
  p.mT = std::move(mT);
  p.mu0.assign(model.d, 1.0 / static_cast<double>(model.d));
  return p;
}

RandomizedStrategy steering(const ModelSpec& model, const TimeGrid& grid) {
  const std::vector<double> cuts{section4::kSwitchTime};
  return RandomizedStrategy::from_control(
      grid, model.actions, model.d, [](std::size_t i, double t) { return i == 0 ? section4::utilde(t) : 0.0; }, cuts);
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double sup_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::fabs(a[i] - b[i]));
  return s;
}

std::vector<double> dirichlet(std::mt19937_64& gen, std::size_t n, double floor = 0.0) {
  std::gamma_distribution<double> gamma(1.0);
  std::vector<double> v(n);
  double s = 0.0;
  for (double& x : v) s += (x = floor + gamma(gen));
  for (double& x : v) x /= s;
  return v;
}

// Strategy constant on `blocks` equal time blocks, so the same decision can
// be laid on grids of different N. A third of the rows are pure.
struct BlockDecision {
  std::size_t blocks;
  std::vector<double> w;  // [(i*blocks + b)*K + k]
  std::vector<double> phi_T;
};

BlockDecision random_block_decision(const ModelSpec& model, std::size_t blocks, std::mt19937_64& gen, double phi_scale) {
  const std::size_t d = model.d, K = model.actions.size();
  BlockDecision dec{blocks, std::vector<double>(d * blocks * K, 0.0), std::vector<double>(d)};
  std::uniform_int_distribution<std::size_t> pick(0, K - 1);
  std::uniform_real_distribution<double> unif;
  for (std::size_t r = 0; r < d * blocks; ++r) {
    if (unif(gen) < 1.0 / 3.0) {
      dec.w[r * K + pick(gen)] = 1.0;
    } else {
      const auto v = dirichlet(gen, K);
      std::copy(v.begin(), v.end(), dec.w.begin() + static_cast<std::ptrdiff_t>(r * K));
    }
  }
  std::normal_distribution<double> normal;
  for (double& x : dec.phi_T) x = phi_scale * normal(gen);
  return dec;
}

Decision lay_on_grid(const BlockDecision& b, const TimeGrid& grid, std::size_t d, std::size_t K) {
  Decision dec{RandomizedStrategy(grid, d, K), b.phi_T};
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t n = 0; n < grid.N; ++n) {
      const std::size_t blk = n * b.blocks / grid.N;
      auto w = dec.strategy.weights(i, n);
      for (std::size_t k = 0; k < K; ++k) w[k] = b.w[(i * b.blocks + blk) * K + k];
    }
  return dec;
}

// Grid-argmax decision of an m-independent model: one Bellman pass and its
// argmax strategy. The target is where that strategy takes m0.
Decision argmax_decision(const ModelSpec& model, const TimeGrid& grid, std::span<const double> m0, std::vector<double> sigma,
                         DistributionFlow* m_out) {
  const RandomizedStrategy any(grid, model.d, model.actions.size());
  const DistributionFlow m_any = forward_nonlinear(model, m0, any);
  const ValueFlow phi = backward_bellman(model, m_any, sigma);
  Decision dec{argmax_strategy(model, m_any, phi), std::move(sigma)};
  *m_out = forward_nonlinear(model, m0, dec.strategy);
  return dec;
}

struct Outcome {
  bool pass;
  std::string detail;
};

char buf[1024];

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const ModelSpec model = builtin_model("section4");
  const TimeGrid grid(model.T, 2000);
  const RandomizedStrategy nu = steering(model, grid);
  const auto t0 = Clock::now();
  const DistributionFlow m = forward_nonlinear(model, section4::m0(), nu);
  const double secs = since(t0);
  const double err = sup_dist(m.final(), section4::mT());
  const double printed = sup_dist(m.final(), section4::mT_printed());
  return {err <= 1e-6 && secs < 1.0,
          fmt("m(T) = (%.6f, %.6f, %.6f), |m(T) - (e^-1/3, 1-e^-1/3, 0)|inf = %.2e, %.3f s; distance to the printed "
              "(1-e^-1/3, e^-1/3, 0) = %.3f",
              m.final()[0], m.final()[1], m.final()[2], err, secs, printed)};
}

// min over |phi_T| <= alpha of J(steering, phi_T) by projected gradient, then
// a Frank-Wolfe bound: J is convex in phi_T (a max of affine maps minus an
// affine map), so J(phi) + min_{|s| <= alpha} grad . (s - phi) <= min J.
struct SteeringBound {
  double J = 0.0;
  double lower = 0.0;
  std::vector<double> phi;
};

SteeringBound steering_bound(RegretEvaluator& ev, const RandomizedStrategy& nu, double alpha) {
  const std::size_t d = 3;
  std::vector<double> phi(d, 0.0), g, trial(d), gt;
  auto project = [&](std::vector<double>& x) {
    const double mean = (x[0] + x[1] + x[2]) / 3.0;
    for (double& v : x) v -= mean;
    const double n = std::sqrt(dot(x, x));
    if (n > alpha)
      for (double& v : x) v *= alpha / n;
  };
  auto J = ev.evaluate(nu.data(), phi, {}, 0.0, nullptr, &g).J;
  double step = 1.0;
  for (int it = 0; it < 400; ++it) {
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls) {
      for (std::size_t i = 0; i < d; ++i) trial[i] = phi[i] - step * g[i];
      project(trial);
      const double Jt = ev.evaluate(nu.data(), trial, {}, 0.0, nullptr, &gt).J;
      if (Jt < J - 1e-14) {
        phi = trial;
        J = Jt;
        g = gt;
        moved = true;
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  J = ev.evaluate(nu.data(), phi, {}, 0.0, nullptr, &g).J;
  const double gmean = (g[0] + g[1] + g[2]) / 3.0;
  for (double& v : g) v -= gmean;
  return {J, J - dot(g, phi) - alpha * std::sqrt(dot(g, g)), phi};
}

Outcome criterion2() {
  const ModelSpec model = builtin_model("section4", 101);
  const PlanningProblem p = make_problem(model, 400, section4::m0(), section4::mT());
  const AlphaSchedule schedule = AlphaSchedule::standard();
  const RandomizedStrategy nu = steering(model, p.grid);

  // Oracle first: the steering control is the only way to reach this target
  // (a corner of the reachable set), so min_phi J(steering, phi) bounds the
  // regret of any exactly feasible decision.
  RegretEvaluator ev(model, p);
  std::printf("  criterion 2 oracle (steering control, alpha: J_min, Frank-Wolfe lower bound, enumeration bound)\n");
  double oracle_min = 1e300;
  for (double alpha : schedule.radii()) {
    const SteeringBound b = steering_bound(ev, nu, alpha);
    const DistributionFlow m = forward_nonlinear(model, p.m0, nu);
    const BruteForceResult bf = brute_force_value(model, p.mu0, m, b.phi, 6, 5);
    const double enum_bound = bf.best_payoff - payoff(model, p.mu0, nu, m, b.phi);
    std::printf("    alpha %5.1f: J_min %.5f  J_lb %.5f  enumeration %.5f\n", alpha, b.J, b.lower, enum_bound);
    oracle_min = std::min(oracle_min, b.lower);
  }

  const auto t0 = Clock::now();
  OptimizerSettings opts;  // 8 starts
  const SequenceResult seq = minimal_regret_sequence(model, p, schedule, opts);
  const double secs = since(t0);

  bool ok = secs < 600.0 && seq.results.size() == schedule.radii().size();
  double min_J = 1e300, max_gap = 0.0;
  std::printf("  criterion 2 runs (alpha: J, terminal gap, ArgMax violation within 0.05 of t = 2/3, worst time)\n");
  for (const RegretResult& r : seq.results) {
    const ClassicalReport c = check_classical(model, r.decision, p, opts.feasibility_tol);
    double near = 0.0;
    for (std::size_t n = 0; n < p.grid.N; ++n)
      if (std::fabs(p.grid.half(2 * n + 1) - section4::kSwitchTime) <= 0.05) near = std::max(near, c.step_violation[n]);
    std::printf("    alpha %5.1f: J %.5f  gap %.2e  near-2/3 violation %.3e  worst at t = %.4f\n", r.alpha, r.J, r.terminal_gap,
                near, c.worst_time);
    ok = ok && r.J >= 1e-3 && r.terminal_gap <= 1e-4 && !c.argmax_ok && near > c.tol;
    min_J = std::min(min_J, r.J);
    max_gap = std::max(max_gap, r.terminal_gap);
  }
  return {ok, fmt("min J over schedule %.4f (oracle lower bound %.4f), max terminal gap %.1e, every candidate fails ArgMax "
                  "near t = 2/3: %s, %.0f s",
                  min_J, oracle_min, max_gap, ok ? "yes" : "see above", secs)};
}

Outcome criterion3(double* C_out) {
  struct Case {
    const char* name;
    std::size_t K;
  };
  const Case cases[] = {{"section4", 11}, {"monotone2", 6}, {"coupled3", 5}, {"crowd2", 0}};
  const std::size_t per_model = 60;
  const std::size_t Ns[] = {200, 400, 800};
  std::mt19937_64 gen(20240601);
  std::vector<std::array<double, 3>> J;  // per decision, per N
  std::size_t count = 0;
  for (const Case& c : cases) {
    const ModelSpec model = builtin_model(c.name, c.K);
    std::vector<PlanningProblem> probs;
    std::vector<RegretEvaluator> evs;
    evs.reserve(3);
    for (std::size_t N : Ns) {
      std::vector<double> m0 = dirichlet(gen, model.d, 0.2);
      probs.push_back(make_problem(model, N, m0, m0));
    }
    for (std::size_t s = 0; s < per_model; ++s) {
      const BlockDecision b = random_block_decision(model, 8, gen, 2.0);
      const std::vector<double> m0 = dirichlet(gen, model.d, 0.2);
      std::array<double, 3> row{};
      for (std::size_t q = 0; q < 3; ++q) {
        PlanningProblem p = make_problem(model, Ns[q], m0, m0);
        p.mu0 = dirichlet(gen, model.d, 0.5);
        row[q] = regret_J(model, p, lay_on_grid(b, p.grid, model.d, model.actions.size())).J;
      }
      J.push_back(row);
      ++count;
    }
  }
  // Near-classical decisions, where the sign of J is decided by the
  // discretization: grid-argmax decisions of random terminal payoffs on the
  // m-independent model and MFG fixed points on the coupled ones.
  std::size_t classical = 0;
  for (const Case& c : cases) {
    const ModelSpec model = builtin_model(c.name, c.K);
    for (std::size_t s = 0; s < 15; ++s) {
      const std::vector<double> m0 = dirichlet(gen, model.d, 0.2);
      std::vector<double> sigma(model.d);
      std::normal_distribution<double> normal;
      for (double& x : sigma) x = normal(gen);
      std::array<double, 3> row{};
      bool ok_row = true;
      for (std::size_t q = 0; q < 3 && ok_row; ++q) {
        const TimeGrid grid(model.T, Ns[q]);
        Decision dec;
        DistributionFlow m;
        if (model.uses_m()) {
          const FixedPointResult fp = solve_mfg_fixedpoint(model, m0, grid, 0.5, 200);
          ok_row = fp.converged;
          m = forward_nonlinear(model, m0, fp.strategy);
          dec = {fp.strategy, eval_sigma(model, m.final())};
        } else {
          dec = argmax_decision(model, grid, m0, sigma, &m);
        }
        const PlanningProblem p = make_problem(model, Ns[q], m0, {m.final().begin(), m.final().end()});
        row[q] = regret_J(model, p, dec).J;
      }
      if (!ok_row) continue;
      J.push_back(row);
      ++count;
      ++classical;
    }
  }
  // Fit C on N = 200, then require the bound at every N.
  double C = 0.0, min_J = 1e300;
  for (const auto& row : J) {
    C = std::max(C, -row[0] * 200.0 * 200.0);
    for (double v : row) min_J = std::min(min_J, v);
  }
  bool ok = count >= 200;
  std::size_t violations = 0;
  for (const auto& row : J)
    for (std::size_t q = 0; q < 3; ++q) {
      const double N = static_cast<double>(Ns[q]);
      if (row[q] < -C / (N * N) - 1e-14) ++violations;
    }
  ok = ok && violations == 0;
  *C_out = C;
  return {ok, fmt("%zu decisions (%zu near-classical) x N in {200, 400, 800} on 4 models: fitted C = %.3e (from N = 200), "
                  "min J = %.3e, bound violations %zu",
                  count, classical, C, min_J, violations)};
}

// eps(N) = C / N^2 fitted on classical decisions built independently of the
// round-trip problems: grid-argmax decisions of random terminal payoffs and
// MFG fixed points from random initial laws.
double calibrate_eps(std::size_t N) {
  std::mt19937_64 gen(77);
  std::normal_distribution<double> normal;
  double C = 0.0;
  const TimeGrid grid(1.0, N);
  for (const auto& [name, K] : std::vector<std::pair<const char*, std::size_t>>{{"section4", 21}, {"two-state", 0}, {"zero", 0}}) {
    const ModelSpec model = builtin_model(name, K);
    for (int s = 0; s < 10; ++s) {
      std::vector<double> sigma(model.d);
      for (double& x : sigma) x = normal(gen);
      const std::vector<double> m0 = dirichlet(gen, model.d, 0.2);
      DistributionFlow m;
      const Decision dec = argmax_decision(model, grid, m0, sigma, &m);
      const PlanningProblem p = make_problem(model, N, m0, {m.final().begin(), m.final().end()});
      C = std::max(C, std::fabs(regret_J(model, p, dec).J) * static_cast<double>(N * N));
    }
  }
  for (const auto& [name, K] : std::vector<std::pair<const char*, std::size_t>>{{"monotone2", 11}, {"coupled3", 5}}) {
    const ModelSpec model = builtin_model(name, K);
    for (int s = 0; s < 5; ++s) {
      const std::vector<double> m0 = dirichlet(gen, model.d, 0.2);
      const FixedPointResult fp = solve_mfg_fixedpoint(model, m0, grid, 0.5, 200);
      if (!fp.converged) continue;
      const DistributionFlow m = forward_nonlinear(model, m0, fp.strategy);
      const PlanningProblem p = make_problem(model, N, m0, {m.final().begin(), m.final().end()});
      const Decision dec{fp.strategy, eval_sigma(model, m.final())};
      C = std::max(C, std::fabs(regret_J(model, p, dec).J) * static_cast<double>(N * N));
    }
  }
  return C;
}

Outcome criterion4(double C_neg) {
  const std::size_t N = 200;
  const double C_cls = calibrate_eps(N);
  const double C = std::max(C_neg, C_cls);
  const double eps = C / static_cast<double>(N * N);
  std::printf("  criterion 4: eps(N) = C/N^2 with C = %.3e (argmax calibration %.3e, nonnegativity fit %.3e), eps(200) = %.3e\n",
              C, C_cls, C_neg, eps);

  struct Constructed {
    std::string name;
    ModelSpec model;
    PlanningProblem problem;
    Decision star;
  };
  std::vector<Constructed> cases;
  {
    // Monotone coupling: classical solution from the MFG fixed point.
    const ModelSpec model = builtin_model("monotone2", 11);
    const TimeGrid grid(model.T, N);
    const std::vector<double> m0{0.9, 0.1};
    const FixedPointResult fp = solve_mfg_fixedpoint(model, m0, grid, 0.5, 400);
    const DistributionFlow m = forward_nonlinear(model, m0, fp.strategy);
    cases.push_back({"monotone2 fixed point", model, make_problem(model, N, m0, {m.final().begin(), m.final().end()}),
                     {fp.strategy, eval_sigma(model, m.final())}});
  }
  {
    // Counterexample dynamics with a reachable interior target produced by the
    // argmax strategy of sigma = (0, 1, -0.5).
    const ModelSpec model = builtin_model("section4", 21);
    const TimeGrid grid(model.T, N);
    DistributionFlow m;
    Decision star = argmax_decision(model, grid, section4::m0(), {0.0, 1.0, -0.5}, &m);
    cases.push_back({"section4 interior target", model, make_problem(model, N, section4::m0(), {m.final().begin(), m.final().end()}),
                     std::move(star)});
  }

  bool ok = true;
  std::string detail;
  for (const Constructed& c : cases) {
    const ClassicalReport cs = check_classical(c.model, c.star, c.problem, 10.0 * eps);
    const double J_star = regret_J(c.model, c.problem, c.star).J;
    const double alpha = 2.0 * std::sqrt(dot(c.star.phi_T, c.star.phi_T)) + 1.0;
    // The target is reachable exactly, so feasibility is asked at the
    // certification tolerance. The inner budget is raised so the relaxed
    // iterate settles close enough for its argmax to hit the target.
    OptimizerSettings opts;
    opts.n_starts = 4;
    opts.max_inner_iters = 300;
    opts.feasibility_tol = 10.0 * eps;
    const RegretResult r = solve_constrained(c.model, c.problem, alpha, opts);
    const ClassicalReport cr = check_classical(c.model, r.decision, c.problem, 10.0 * eps);
    const bool case_ok = cs.pass && std::fabs(J_star) <= eps + 1e-8 && r.feasible && std::fabs(r.J) <= eps + 1e-6 && cr.pass;
    std::printf("    %s: star certified %s, |J*| = %.2e; solver |J| = %.2e, gap %.1e, certified %s (violation %.1e)\n",
                c.name.c_str(), cs.pass ? "yes" : "no", std::fabs(J_star), std::fabs(r.J), r.terminal_gap, cr.pass ? "yes" : "no",
                cr.violation);
    ok = ok && case_ok;
    detail += (detail.empty() ? "" : "; ") + c.name + (case_ok ? " ok" : " FAILED");
  }
  return {ok, fmt("2 constructed problems at N = 200, eps = %.2e, check tol = 10 eps: ", eps) + detail};
}

Outcome criterion5() {
  struct Case {
    const char* name;
    std::size_t K;
  };
  const Case cases[] = {{"coupled3", 5}, {"monotone2", 6}, {"section4", 7}};
  std::mt19937_64 gen(5);
  double worst = 0.0;
  std::size_t dirs = 0, rerolls = 0, points_skipped = 0;
  bool ok = true;
  for (const Case& c : cases) {
    const ModelSpec model = builtin_model(c.name, c.K);
    const std::vector<double> m0 = dirichlet(gen, model.d, 0.2);
    const PlanningProblem p = make_problem(model, 60, m0, m0);
    bool done = false;
    for (std::uint64_t seed = 1; seed < 50 && !done; ++seed) {
      std::mt19937_64 g(seed);
      const BlockDecision b = random_block_decision(model, 60, g, 2.0);
      Decision at = lay_on_grid(b, p.grid, model.d, model.actions.size());
      // Interior point: mix every row with the uniform strategy.
      for (double& w : at.strategy.data()) w = 0.9 * w + 0.1 / static_cast<double>(model.actions.size());
      const GradientCheckReport rep = check_gradient(model, p, at, 20, seed);
      if (rep.tie_adjacent) {
        ++points_skipped;
        continue;
      }
      worst = std::max(worst, rep.max_relative_error);
      dirs += rep.directions;
      rerolls += rep.rerolls;
      ok = ok && rep.directions == 20;
      done = true;
    }
    ok = ok && done;
  }
  ok = ok && worst <= 1e-5;
  return {ok, fmt("%zu directions on 3 models, max relative error %.2e, %zu directions and %zu base points rerolled at ties", dirs,
                  worst, rerolls, points_skipped)};
}

Outcome criterion6() {
  const std::size_t paths = 100000, N = 200;
  std::mt19937_64 gen(6);
  bool ok = true;
  double worst_excess = -1e300, worst_payoff_z = 0.0;
  std::string worst_model;
  for (const std::string& name : builtin_model_names()) {
    const ModelSpec model = builtin_model(name);
    const TimeGrid grid(model.T, N);
    std::vector<double> m0 = dirichlet(gen, model.d, 0.3);
    const RandomizedStrategy nu = name.rfind("section4", 0) == 0 ? steering(model, grid)
                                                                  : lay_on_grid(random_block_decision(model, 10, gen, 1.0), grid, model.d,
                                                                                model.actions.size())
                                                                        .strategy;
    if (name.rfind("section4", 0) == 0) m0 = section4::m0();
    const DistributionFlow m = forward_nonlinear(model, m0, nu);
    std::vector<double> sigma = model.sigma ? eval_sigma(model, m.final()) : std::vector<double>{};
    if (sigma.empty())
      for (std::size_t i = 0; i < model.d; ++i) sigma.push_back(std::cos(1.0 + static_cast<double>(i)));
    const ChainResult mc = simulate_paths(model, m, nu, m0, paths, 1000 + gen() % 1000, sigma);
    double excess = -1e300;
    for (std::size_t q = 0; q < m.values.size(); ++q) {
      const double p = m.values[q];
      const double se = std::sqrt(std::max(p * (1.0 - p), 0.0) / static_cast<double>(paths));
      excess = std::max(excess, std::fabs(mc.empirical.values[q] - p) - (3.0 * se + 2e-3));
    }
    const double exact = payoff(model, m0, nu, m, sigma);
    const double dz = std::fabs(mc.payoff_mean - exact);
    const double z = mc.payoff_se > 0.0 ? dz / mc.payoff_se : (dz == 0.0 ? 0.0 : 1e300);
    // Payoff bound: 3 SE plus the O(h^2) quadrature difference.
    const bool payoff_ok = dz <= 3.0 * mc.payoff_se + 1e-6;
    std::printf("    %-14s flow excess over 3 SE + 2e-3: %+.2e   payoff %.6f vs %.6f (z = %.2f)\n", name.c_str(), excess,
                mc.payoff_mean, exact, z);
    ok = ok && excess <= 0.0 && payoff_ok && mc.bound_violations == 0;
    if (excess > worst_excess) {
      worst_excess = excess;
      worst_model = name;
    }
    worst_payoff_z = std::max(worst_payoff_z, z);
  }
  return {ok, fmt("10^5 paths on %zu built-in models: worst flow excess %+.2e (%s), worst payoff |z| %.2f",
                  builtin_model_names().size(), worst_excess, worst_model.c_str(), worst_payoff_z)};
}

Outcome criterion7() {
  const ModelSpec model = builtin_model("two-state");
  const TimeGrid grid(model.T, 2000);
  const std::vector<double> mu0{1.0, 0.0}, sigma{0.0, 1.0};
  const DistributionFlow m = forward_nonlinear(model, mu0, RandomizedStrategy(grid, 2, model.actions.size()));
  const ValueFlow phi = backward_bellman(model, m, sigma);
  const double bellman = dot(mu0, phi.at(0));
  const BruteForceResult bf = brute_force_value(model, mu0, m, sigma, 4, 2);
  const double closed = 1.0 - std::exp(-1.0);
  const bool ok = model.d == 2 && model.actions.size() == 2 && std::fabs(bellman - bf.best_payoff) <= 1e-3 &&
                  std::fabs(bellman - closed) <= 1e-6;
  return {ok, fmt("mu0.phi(0) = %.9f, enumeration (%llu candidates) = %.9f, 1 - e^-1 = %.9f", bellman,
                  static_cast<unsigned long long>(bf.candidates), bf.best_payoff, closed)};
}

Outcome criterion8() {
  const ModelSpec model = builtin_model("monotone2", 11);
  const MonotonicityReport mono = monotonicity_check(model, 2000, 8);
  const TimeGrid grid(model.T, 40);
  const std::vector<double> m0{0.9, 0.1};
  const FixedPointResult fp = solve_mfg_fixedpoint(model, m0, grid, 0.5, 400);
  const DistributionFlow m = forward_nonlinear(model, m0, fp.strategy);
  const PlanningProblem p = make_problem(model, 40, m0, {m.final().begin(), m.final().end()});
  const Decision star{fp.strategy, eval_sigma(model, m.final())};
  const ClassicalReport cs = check_classical(model, star, p, 1e-9);
  OptimizerSettings opts;
  opts.max_outer_iters = 6;
  opts.max_inner_iters = 150;
  const UniquenessReport r = uniqueness_probe(model, p, 2.0, 5, opts);
  const bool ok = mono.verdict == mfgplan::Verdict::Strict && cs.pass && r.feasible == 5 && r.m_dispersion <= 1e-3 &&
                  r.phi_dispersion <= 1e-3;
  return {ok, fmt("monotone2 (monotonicity %s, constructed solution certified %s): 5 seeds, %zu feasible, m dispersion %.2e, "
                  "phi dispersion %.2e, strategy dispersion %.2e",
                  verdict_name(mono.verdict), cs.pass ? "yes" : "no", r.feasible, r.m_dispersion, r.phi_dispersion,
                  r.strategy_dispersion)};
}

Outcome criterion9() {
  const ModelSpec model = builtin_model("section4", 11);
  const TimeGrid grid(model.T, 50);
  std::mt19937_64 gen(9);
  auto random_strategy = [&] { return lay_on_grid(random_block_decision(model, 50, gen, 0.0), grid, 3, 11).strategy; };
  double worst_sym = 0.0, worst_tri = -1e300, min_d = 1e300, self = 0.0;
  for (int s = 0; s < 100; ++s) {
    const auto a = random_strategy(), b = random_strategy(), c = random_strategy();
    const double ab = strategy_metric(a, b, model.actions, 32), ba = strategy_metric(b, a, model.actions, 32);
    const double bc = strategy_metric(b, c, model.actions, 32), ac = strategy_metric(a, c, model.actions, 32);
    worst_sym = std::max(worst_sym, std::fabs(ab - ba));
    worst_tri = std::max(worst_tri, ac - ab - bc);
    min_d = std::min({min_d, ab, bc, ac});
    self = std::max(self, strategy_metric(a, a, model.actions, 32));
  }
  bool ok = min_d >= 0.0 && self == 0.0 && worst_sym <= 1e-12 && worst_tri <= 1e-12;
  std::string shifts;
  double prev = 1e300;
  for (std::size_t N : {50, 100, 200, 400, 800}) {
    const TimeGrid g(model.T, N);
    const double h = g.h();
    const std::vector<double> cuts{section4::kSwitchTime, section4::kSwitchTime + h};
    auto u1 = [](std::size_t i, double t) { return i == 0 ? section4::utilde(t) : 0.0; };
    auto u2 = [h](std::size_t i, double t) { return i == 0 && t >= section4::kSwitchTime + h ? 1.0 : 0.0; };
    const double dist = strategy_metric(RandomizedStrategy::from_control(g, model.actions, 3, u1, cuts),
                                        RandomizedStrategy::from_control(g, model.actions, 3, u2, cuts), model.actions, 32);
    ok = ok && dist > 0.0 && dist < prev;
    prev = dist;
    shifts += fmt("%s%.2e", shifts.empty() ? "" : ", ", dist);
  }
  return {ok, fmt("100 triples: min d %.2e, d(a,a) = %.1e, symmetry defect %.1e, triangle defect %.2e; one-step shift distances "
                  "for N = 50..800: ",
                  min_d, self, worst_sym, worst_tri) +
                  shifts};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int a = 1; a < argc; ++a) only.insert(std::atoi(argv[a]));
  auto wanted = [&](int k) { return only.empty() || only.count(k) > 0; };

  int failed = 0;
  double C_neg = 0.0;
  auto run = [&](int k, const std::function<Outcome()>& f) {
    if (!wanted(k)) return;
    const auto t0 = Clock::now();
    Outcome v{false, ""};
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", k, v.detail.c_str(), since(t0));
    std::fflush(stdout);
    if (!v.pass) ++failed;
  };
  run(1, criterion1);
  run(2, criterion2);
  run(3, [&] { return criterion3(&C_neg); });
  run(4, [&] {
    if (!wanted(3)) criterion3(&C_neg);
    return criterion4(C_neg);
  });
  run(5, criterion5);
  run(6, criterion6);
  run(7, criterion7);
  run(8, criterion8);
  run(9, criterion9);
  return failed == 0 ? 0 : 1;
}
