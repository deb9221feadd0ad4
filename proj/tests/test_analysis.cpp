#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mfgplan/analysis.hpp"
#include "mfgplan/hamiltonian.hpp"

using namespace mfgplan;

namespace {

PlanningProblem problem_for(const ModelSpec& model, std::size_t N, std::vector<double> m0, std::vector<double> mT) {
  PlanningProblem p;
  p.grid = TimeGrid(model.T, N);
  p.m0 = std::move(m0);
  p.mT = std::move(mT);
  p.mu0.assign(model.d, 1.0 / static_cast<double>(model.d));
  return p;
}

Decision steering(const ModelSpec& model, const TimeGrid& grid, std::vector<double> phi_T) {
  const std::vector<double> cuts{section4::kSwitchTime};
  return {RandomizedStrategy::from_control(grid, model.actions, 3,
                                           [](std::size_t i, double t) { return i == 0 ? section4::utilde(t) : 0.0; }, cuts),
          std::move(phi_T)};
}

}  // namespace

TEST_CASE("check_classical") {
  SUBCASE("zero model passes for any strategy") {
    const ModelSpec model = builtin_model("zero");
    const PlanningProblem p = problem_for(model, 40, {0.25, 0.75}, {0.25, 0.75});
    Decision dec{RandomizedStrategy::uniform(p.grid, 2, 3), {0.0, 0.0}};
    const ClassicalReport r = check_classical(model, dec, p, 1e-12);
    CHECK(r.pass);
    CHECK(r.violation == 0.0);
  }
  SUBCASE("two-state: always leaving is optimal when state 2 pays more") {
    const ModelSpec model = builtin_model("two-state");
    const TimeGrid grid(1.0, 200);
    const RandomizedStrategy nu = RandomizedStrategy::dirac(grid, 2, 2, 1);
    const std::vector<double> m0{1.0, 0.0};
    const DistributionFlow m = forward_nonlinear(model, m0, nu);
    const PlanningProblem p = problem_for(model, 200, m0, {m.final()[0], m.final()[1]});
    CHECK(check_classical(model, {nu, {0.0, 1.0}}, p, 1e-12).pass);
    // Staying put is never optimal once phi_2 > phi_1.
    const ClassicalReport stay = check_classical(model, {RandomizedStrategy::dirac(grid, 2, 2, 0), {0.0, 1.0}}, p, 1e-6);
    CHECK_FALSE(stay.boundary_ok);
    CHECK_FALSE(stay.argmax_ok);
  }
  SUBCASE("steering control fails the ArgMax condition next to t = 2/3") {
    const ModelSpec model = builtin_model("section4");
    const PlanningProblem p = problem_for(model, 300, section4::m0(), section4::mT());
    for (const auto& phi_T : std::vector<std::vector<double>>{{0, 0, 0}, {-1, 1, 0}, {5, -5, 2}, {-6, 6, -3}, {0, 8, -8}}) {
      const ClassicalReport r = check_classical(model, steering(model, p.grid, phi_T), p, 1e-6);
      CHECK(r.boundary_ok);
      CHECK_FALSE(r.argmax_ok);
      CHECK_FALSE(r.pass);
      // The Bellman-optimal control is continuous in time, the steering
      // control jumps from 0 to 1: one of the two sides of the jump is wrong.
      double near = 0.0;
      for (std::size_t n = 0; n < p.grid.N; ++n)
        if (std::fabs(p.grid.half(2 * n + 1) - section4::kSwitchTime) < 0.05) near = std::max(near, r.step_violation[n]);
      CHECK(near > 1e-3);
    }
  }
}

TEST_CASE("solve_mfg_fixedpoint") {
  SUBCASE("zero model converges at once") {
    const ModelSpec model = builtin_model("zero");
    const TimeGrid grid(1.0, 50);
    const FixedPointResult r = solve_mfg_fixedpoint(model, std::vector<double>{0.3, 0.7}, grid, 0.5, 20);
    CHECK(r.converged);
    REQUIRE(r.residuals.size() == 1);
    CHECK(r.residuals[0] == 0.0);
    for (std::size_t n = 0; n <= grid.N; ++n) CHECK(r.m_flow.at(n)[0] == 0.3);
  }
  SUBCASE("two-state closed form") {
    const ModelSpec model = builtin_model("two-state");
    const TimeGrid grid(1.0, 2000);
    const FixedPointResult r = solve_mfg_fixedpoint(model, std::vector<double>{1.0, 0.0}, grid, 1.0, 20);
    CHECK(r.converged);
    CHECK(r.residuals.size() <= 2);
    CHECK(r.phi_flow.at(0)[0] == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(0).scale(0).epsilon(1e-9));
    CHECK(r.m_flow.final()[1] == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-9));
  }
  SUBCASE("monotone coupling: residuals decrease under damping") {
    const ModelSpec model = builtin_model("monotone2", 11);
    const TimeGrid grid(1.0, 200);
    const FixedPointResult r = solve_mfg_fixedpoint(model, std::vector<double>{0.9, 0.1}, grid, 0.5, 200);
    CHECK(r.converged);
    for (std::size_t k = 1; k < r.residuals.size(); ++k) CHECK(r.residuals[k] <= r.residuals[k - 1]);
  }
  SUBCASE("action-independent model: exact zero residual after one step") {
    const ModelSpec model = parse_model(
        "d = 2\nT = 1\nactions = [0, 0.5, 1]\nQ[1][1] = auto\nQ[1][2] = 1 + t\nQ[2][1] = 0.3\nQ[2][2] = auto\n"
        "g[1] = m1\ng[2] = 2\nsigma[1] = m2\nsigma[2] = 0\n");
    const FixedPointResult r = solve_mfg_fixedpoint(model, std::vector<double>{0.5, 0.5}, TimeGrid(1.0, 64), 0.3, 5);
    REQUIRE(r.residuals.size() == 1);
    CHECK(r.residuals[0] == 0.0);
  }
  SUBCASE("argument checks") {
    const ModelSpec model = builtin_model("section4");
    CHECK_THROWS_AS(solve_mfg_fixedpoint(model, section4::m0(), TimeGrid(1.0, 10), 0.5, 5), InvalidArgument);
    const ModelSpec two = builtin_model("two-state");
    CHECK_THROWS_AS(solve_mfg_fixedpoint(two, std::vector<double>{1.0, 0.0}, TimeGrid(1.0, 10), 0.0, 5), InvalidArgument);
  }
}

TEST_CASE("monotonicity_check") {
  CHECK(monotonicity_check(builtin_model("monotone2"), 1000, 1).verdict == Verdict::Strict);
  CHECK(monotonicity_check(builtin_model("section4"), 1000, 1).verdict == Verdict::Weak);
  const ModelSpec bad = parse_model("d = 2\nT = 1\nactions = [0, 1]\nQ[1][1] = auto\nQ[1][2] = u\n"
                                    "g0[1] = 0\ng0[2] = 0\ng1[1] = m1\ng1[2] = m2\n");
  const MonotonicityReport r = monotonicity_check(bad, 1000, 1);
  CHECK(r.verdict == Verdict::Fail);
  // The witness reproduces: (m1 - m2) . (m1 - m2) > 0.
  double inner = 0.0;
  for (std::size_t i = 0; i < 2; ++i) inner += (r.m1[i] - r.m2[i]) * (r.m1[i] - r.m2[i]);
  CHECK(r.max_inner == doctest::Approx(inner).epsilon(1e-12));
  // g1 = -m: the largest inner product is minus the smallest squared distance.
  const MonotonicityReport s = monotonicity_check(builtin_model("monotone2"), 1000, 1);
  double dist = 0.0;
  for (std::size_t i = 0; i < 2; ++i) dist += (s.m1[i] - s.m2[i]) * (s.m1[i] - s.m2[i]);
  CHECK(s.max_inner == doctest::Approx(-dist).epsilon(1e-12));
  // Verdicts do not change with the sample size.
  for (const auto& name : builtin_model_names()) {
    const ModelSpec m = builtin_model(name);
    if (!m.split) {
      CHECK_THROWS_AS(monotonicity_check(m, 10, 0), InvalidArgument);
      continue;
    }
    CHECK(monotonicity_check(m, 1000, 3).verdict == monotonicity_check(m, 10000, 4).verdict);
  }
}

TEST_CASE("concavity_check") {
  SUBCASE("one state: H0 does not depend on phi") {
    const ModelSpec model = parse_model("d = 1\nT = 1\nactions = [0, 0.5, 1]\ng0[1] = -u^2\ng1[1] = 0\n");
    const std::vector<double> lo{-5}, hi{5};
    CHECK(concavity_check(model, lo, hi, 500, 2).verdict == Verdict::Weak);
  }
  SUBCASE("zero model") {
    const std::vector<double> lo{-3, -3}, hi{3, 3};
    CHECK(concavity_check(builtin_model("zero"), lo, hi, 500, 2).verdict == Verdict::Weak);
  }
  SUBCASE("section4: H0_1 = x^2/4 on 0 < x < 2 is convex, so the check fails") {
    // Box with 0.2 <= phi_2 - phi_1 <= 1.8.
    const std::vector<double> lo{0.0, 1.0, 0.0}, hi{0.4, 1.4, 0.0};
    const ModelSpec model = builtin_model("section4", 401);
    const ConcavityReport r = concavity_check(model, lo, hi, 2000, 5);
    CHECK(r.verdict == Verdict::Fail);
    CHECK(r.state == 0);
    // Midpoint defect of x^2/4 is -(x1 - x2)^2/16, up to the action grid spacing.
    const double x1 = r.phi1[1] - r.phi1[0], x2 = r.phi2[1] - r.phi2[0];
    CHECK(r.worst_defect == doctest::Approx(-(x1 - x2) * (x1 - x2) / 16.0).epsilon(0).scale(0).epsilon(1e-5));
  }
  SUBCASE("preconditions") {
    const std::vector<double> lo{0, 0}, hi{1, 1};
    const ModelSpec crowd = builtin_model("crowd2");
    CHECK_NOTHROW(concavity_check(crowd, lo, hi, 10, 0));
    const ModelSpec mq = parse_model("d = 2\nT = 1\nactions = [0, 1]\nQ[1][1] = auto\nQ[1][2] = u*m2\ng[1] = 0\ng[2] = 0\n");
    CHECK_THROWS_AS(concavity_check(mq, lo, hi, 10, 0), InvalidArgument);
  }
}

TEST_CASE("brute_force_value") {
  SUBCASE("no payoff at all") {
    const ModelSpec model = builtin_model("zero");
    const TimeGrid grid(1.0, 40);
    const std::vector<double> mu0{0.5, 0.5}, sigma{0.0, 0.0};
    const DistributionFlow m = forward_nonlinear(model, mu0, RandomizedStrategy(grid, 2, 3));
    CHECK(brute_force_value(model, mu0, m, sigma, 4, 3).best_payoff == 0.0);
  }
  SUBCASE("two-state: leaving at full rate is optimal") {
    const ModelSpec model = builtin_model("two-state");
    const TimeGrid grid(1.0, 2000);
    const std::vector<double> mu0{1.0, 0.0}, sigma{0.0, 1.0};
    const DistributionFlow m = forward_nonlinear(model, mu0, RandomizedStrategy(grid, 2, 2));
    const BruteForceResult r = brute_force_value(model, mu0, m, sigma, 4, 2);
    CHECK(r.candidates == 16);  // state 2 is action-independent
    CHECK(r.best_payoff == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(0).scale(0).epsilon(1e-9));
    for (std::size_t n = 0; n < grid.N; ++n) CHECK(r.best.weights(0, n)[1] == 1.0);
    // Agrees with payoff() on the returned strategy.
    CHECK(r.best_payoff == doctest::Approx(payoff(model, mu0, r.best, m, sigma)).epsilon(1e-13));
  }
  SUBCASE("section4 with sigma = 0: enumeration stays below the Bellman value") {
    const ModelSpec model = builtin_model("section4");
    const TimeGrid grid(1.0, 240);
    const std::vector<double> mu0{1.0 / 3, 1.0 / 3, 1.0 / 3}, sigma{0.0, 0.0, 0.0};
    const DistributionFlow m = forward_nonlinear(model, section4::m0(), RandomizedStrategy(grid, 3, 101));
    const ValueFlow phi = backward_bellman(model, m, sigma);
    const double bellman = std::inner_product(mu0.begin(), mu0.end(), phi.at(0).begin(), 0.0);
    const BruteForceResult r = brute_force_value(model, mu0, m, sigma, 4, 3);
    CHECK(r.best_payoff <= bellman + 1e-9);
    CHECK(r.best_payoff >= bellman - 1e-9);  // with sigma = 0, u = 0 everywhere is optimal and on the grid
    CHECK(r.actions == std::vector<std::size_t>{0, 50, 100});
  }
  SUBCASE("parallel and serial agree bit for bit") {
    const ModelSpec model = builtin_model("coupled3", 5);
    const TimeGrid grid(1.0, 60);
    const std::vector<double> mu0{0.2, 0.3, 0.5}, sigma{1.0, -0.5, 0.25};
    const DistributionFlow m = forward_nonlinear(model, std::vector<double>{0.6, 0.4, 0.0}, RandomizedStrategy::uniform(grid, 3, 5));
    const BruteForceResult a = brute_force_value(model, mu0, m, sigma, 3, 3);
    const BruteForceResult b = brute_force_value_serial(model, mu0, m, sigma, 3, 3);
    CHECK(a.best_payoff == b.best_payoff);
    CHECK(a.best == b.best);
    CHECK(a.candidates == b.candidates);
  }
  SUBCASE("enumeration guard") {
    const ModelSpec model = builtin_model("coupled3", 5);
    const TimeGrid grid(1.0, 60);
    const std::vector<double> mu0{0.2, 0.3, 0.5}, sigma{0.0, 0.0, 0.0};
    const DistributionFlow m = forward_nonlinear(model, mu0, RandomizedStrategy(grid, 3, 5));
    CHECK_THROWS_AS(brute_force_value(model, mu0, m, sigma, 9, 2), InvalidArgument);
    CHECK_THROWS_AS(brute_force_value(model, mu0, m, sigma, 2, 6), InvalidArgument);
    CHECK_THROWS_AS(brute_force_value(model, mu0, m, sigma, 8, 5), InvalidArgument);  // 5^24 candidates
  }
}

TEST_CASE("Bellman value dominates enumeration and the gap shrinks") {
  const ModelSpec model = builtin_model("monotone2", 5);
  const TimeGrid grid(1.0, 240);
  const std::vector<double> mu0{0.5, 0.5}, sigma{0.0, 0.5};
  const DistributionFlow m = forward_nonlinear(model, std::vector<double>{0.8, 0.2}, RandomizedStrategy::uniform(grid, 2, 5));
  const ValueFlow phi = backward_bellman(model, m, sigma);
  const double bellman = std::inner_product(mu0.begin(), mu0.end(), phi.at(0).begin(), 0.0);
  double prev = -1.0;
  for (std::size_t steps : {1, 2, 4, 6}) {
    const double bf = brute_force_value(model, mu0, m, sigma, steps, 5).best_payoff;
    CHECK(bellman >= bf - 1e-9);
    CHECK(bf >= prev - 1e-12);  // finer partitions contain the coarser ones
    prev = bf;
  }
  CHECK(bellman - prev < 1e-3);
}

TEST_CASE("uniqueness_probe on a constructed monotone solution") {
  const ModelSpec model = builtin_model("monotone2", 11);
  const TimeGrid grid(1.0, 40);
  const std::vector<double> m0{0.9, 0.1};
  const FixedPointResult fp = solve_mfg_fixedpoint(model, m0, grid, 0.5, 200);
  REQUIRE(fp.converged);
  const PlanningProblem p = problem_for(model, 40, m0, {fp.m_flow.final()[0], fp.m_flow.final()[1]});
  OptimizerSettings opts;
  opts.max_outer_iters = 6;
  opts.max_inner_iters = 150;
  const UniquenessReport r = uniqueness_probe(model, p, 2.0, 3, opts);
  CHECK(r.results.size() == 3);
  CHECK(r.feasible == 3);
  for (const auto& x : r.results) CHECK(std::fabs(x.J) < 1e-5);
  CHECK(r.m_dispersion < 1e-3);
  CHECK(r.phi_dispersion < 1e-3);
}

TEST_CASE("check_classical weighs violations by the strategy") {
  const ModelSpec model = builtin_model("two-state");
  const TimeGrid grid(1.0, 100);
  const std::vector<double> m0{1.0, 0.0};
  RandomizedStrategy nu = RandomizedStrategy::dirac(grid, 2, 2, 1);
  for (std::size_t n = 0; n < grid.N; ++n) {
    nu.weights(0, n)[0] = 1e-3;
    nu.weights(0, n)[1] = 1.0 - 1e-3;
  }
  const DistributionFlow m = forward_nonlinear(model, m0, nu);
  const PlanningProblem p = problem_for(model, 100, m0, {m.final()[0], m.final()[1]});
  const ClassicalReport r = check_classical(model, {nu, {0.0, 1.0}}, p, 1e-12);
  // Staying costs phi_2 - phi_1 per unit of rate; the mean deficit carries the 1e-3 weight.
  CHECK(r.support_violation > 0.3);
  CHECK(r.violation == doctest::Approx(1e-3 * r.support_violation).epsilon(1e-9));
  CHECK_FALSE(r.argmax_ok);
  CHECK(check_classical(model, {nu, {0.0, 1.0}}, p, 1e-3).argmax_ok);
}

TEST_CASE("optimizer output on a constructed monotone problem is certified classical") {
  const ModelSpec model = builtin_model("monotone2", 11);
  const TimeGrid grid(1.0, 100);
  const std::vector<double> m0{0.9, 0.1};
  const FixedPointResult fp = solve_mfg_fixedpoint(model, m0, grid, 0.5, 400);
  REQUIRE(fp.converged);
  const DistributionFlow m = forward_nonlinear(model, m0, fp.strategy);
  const PlanningProblem p = problem_for(model, 100, m0, {m.final()[0], m.final()[1]});
  const Decision star{fp.strategy, eval_sigma(model, m.final())};
  CHECK(check_classical(model, star, p, 1e-12).pass);
  OptimizerSettings opts;
  opts.n_starts = 2;
  const RegretResult r = solve_constrained(model, p, 2.0, opts);
  CHECK(std::fabs(r.J) <= std::fabs(regret_J(model, p, star).J) + 1e-6);
  CHECK(check_classical(model, r.decision, p, 1e-9).pass);
  opts.purify = false;
  const RegretResult relaxed = solve_constrained(model, p, 2.0, opts);
  CHECK(relaxed.feasible);
}
