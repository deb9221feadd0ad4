// Serial reference vs OpenMP timing for the parallel kernels, with a check
// that both produce identical results.

#include <CLI11.hpp>
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "mfgplan/analysis.hpp"
#include "mfgplan/chain.hpp"
#include "mfgplan/dynamics.hpp"
#include "mfgplan/model.hpp"
#include "mfgplan/planning.hpp"

using namespace mfgplan;

namespace {

double seconds(const std::function<void()>& f, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

int failures = 0;

void report(const char* name, double serial, double parallel, bool same) {
  std::printf("%-14s serial %9.4f s  parallel %9.4f s  speedup %5.2f  %s\n", name, serial, parallel, serial / parallel,
              same ? "identical" : "MISMATCH");
  if (!same) ++failures;
}

RandomizedStrategy steering(const ModelSpec& model, const TimeGrid& grid) {
  const std::vector<double> cuts{section4::kSwitchTime};
  return RandomizedStrategy::from_control(
      grid, model.actions, model.d, [](std::size_t i, double t) { return i == 0 ? section4::utilde(t) : 0.0; }, cuts);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Benchmark of the parallel kernels against their serial references"};
  std::size_t paths = 200000, steps = 400, starts = 4, brute_steps = 6;
  int reps = 3;
  app.add_option("--paths", paths, "Monte Carlo paths")->capture_default_str();
  app.add_option("--steps", steps, "Time steps")->capture_default_str();
  app.add_option("--starts", starts, "Optimizer starts")->capture_default_str();
  app.add_option("--brute-steps", brute_steps, "Time blocks for the brute-force enumeration")->capture_default_str();
  app.add_option("--reps", reps, "Repetitions (best time is reported)")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  std::printf("threads: %d\n", omp_get_max_threads());
  const ModelSpec model = builtin_model("section4");
  const TimeGrid grid(model.T, steps);
  const RandomizedStrategy nu = steering(model, grid);
  const DistributionFlow m = forward_nonlinear(model, section4::m0(), nu);
  const std::vector<double> sigma{0.0, 1.0, -1.0};

  {
    ChainResult a, b;
    const double ts = seconds([&] { a = simulate_paths_serial(model, m, nu, section4::m0(), paths, 7, sigma); }, reps);
    const double tp = seconds([&] { b = simulate_paths(model, m, nu, section4::m0(), paths, 7, sigma); }, reps);
    report("chain", ts, tp, a.counts == b.counts && a.payoff_mean == b.payoff_mean);
  }
  {
    BruteForceResult a, b;
    const std::vector<double> mu0{1.0 / 3, 1.0 / 3, 1.0 / 3};
    const double ts = seconds([&] { a = brute_force_value_serial(model, mu0, m, sigma, brute_steps, 3); }, reps);
    const double tp = seconds([&] { b = brute_force_value(model, mu0, m, sigma, brute_steps, 3); }, reps);
    report("brute-force", ts, tp, a.best_payoff == b.best_payoff && a.best == b.best);
  }
  {
    const ModelSpec small = builtin_model("section4", 21);
    PlanningProblem p;
    p.grid = TimeGrid(small.T, steps / 4 ? steps / 4 : 1);
    p.m0 = section4::m0();
    p.mT = section4::mT();
    p.mu0.assign(3, 1.0 / 3);
    OptimizerSettings opts;
    opts.n_starts = starts;
    RegretResult a, b;
    const double ts = seconds([&] { a = solve_constrained_serial(small, p, 1.0, opts); }, 1);
    const double tp = seconds([&] { b = solve_constrained(small, p, 1.0, opts); }, 1);
    report("multi-start", ts, tp, a.J == b.J && a.decision.strategy == b.decision.strategy);
  }
  return failures == 0 ? 0 : 1;
}
