#include "mfgplan/chain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <ostream>
#include <random>

#include <omp.h>

#include "mfgplan/error.hpp"

namespace mfgplan {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class PathRng {
 public:
  PathRng(std::uint64_t seed, std::uint64_t path) : gen_(splitmix64(seed ^ splitmix64(path + 0x632be59bd9b4e019ULL))) {}
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double exponential() { return -std::log1p(-uniform()); }

 private:
  std::mt19937_64 gen_;
};

// Everything shared by all paths.
struct Plan {
  const ModelSpec* model;
  const DistributionFlow* m_flow;
  const RandomizedStrategy* nu;
  std::size_t d, K, N;
  double h;
  std::vector<double> mu0_cdf;
  std::vector<double> rate;       // dominating rate per step
  std::vector<double> cum;        // integrated dominating rate at nodes
  std::vector<double> g_start;    // [n*d + i] relaxed payoff at t_n with nu_n
  std::vector<double> g_end;      // [n*d + i] relaxed payoff at t_{n+1} with nu_n
  std::vector<double> g_prefix;   // [n*d + i] integral of the payoff interpolant up to t_n
  std::vector<double> sigma;
  std::vector<char> q_state;      // rows whose expressions need evaluation
};

Plan make_plan(const ModelSpec& model, const DistributionFlow& m_flow, const RandomizedStrategy& nu, std::span<const double> mu0,
               std::size_t n_paths, std::span<const double> sigma) {
  if (n_paths < 1) throw InvalidArgument("n_paths must be >= 1");
  if (mu0.size() != model.d) throw InvalidArgument("mu0 has the wrong dimension");
  require_simplex(mu0, "mu0");
  if (!(m_flow.grid == nu.grid()) || m_flow.d != model.d) throw InvalidArgument("m flow and strategy grids differ");
  if (nu.d() != model.d || nu.K() != model.actions.size()) throw InvalidArgument("strategy shape does not match the model");
  if (!sigma.empty() && sigma.size() != model.d) throw InvalidArgument("sigma has the wrong dimension");
  Plan p;
  p.model = &model;
  p.m_flow = &m_flow;
  p.nu = &nu;
  p.d = model.d;
  p.K = nu.K();
  p.N = nu.grid().N;
  p.h = nu.grid().h();
  p.sigma.assign(sigma.begin(), sigma.end());
  double acc = 0.0;
  for (double x : mu0) p.mu0_cdf.push_back(acc += x);
  p.mu0_cdf.back() = 1.0;

  const StageTables tables(model, nu.grid());
  const std::size_t d = p.d, K = p.K, N = p.N;
  p.rate.assign(N, 0.0);
  p.cum.assign(N + 1, 0.0);
  p.g_start.assign(N * d, 0.0);
  p.g_end.assign(N * d, 0.0);
  p.g_prefix.assign((N + 1) * d, 0.0);
  std::vector<double> m(d), row(d);
  ActionTable scratch;
  for (std::size_t n = 0; n < N; ++n) {
    double lam = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
      m_at_half(m_flow, 2 * n + r, m);
      const ActionTable& tab = tables.at(2 * n + r, m, scratch);
      for (std::size_t i = 0; i < d; ++i) {
        const auto w = nu.weights(i, n);
        for (std::size_t k = 0; k < K; ++k) {
          if (w[k] == 0.0) continue;
          lam = std::max(lam, -tab.q_row(k, i)[i]);
        }
      }
      if (r == 1) continue;
      for (std::size_t i = 0; i < d; ++i) {
        double g;
        relaxed_row(tab, i, nu.weights(i, n), row.data(), &g);
        (r == 0 ? p.g_start : p.g_end)[n * d + i] = g;
      }
    }
    if (!std::isfinite(lam)) throw InvalidArgument("dominating jump rate is not finite at step " + std::to_string(n));
    p.rate[n] = 1.05 * lam;
    p.cum[n + 1] = p.cum[n] + p.rate[n] * p.h;
    for (std::size_t i = 0; i < d; ++i)
      p.g_prefix[(n + 1) * d + i] = p.g_prefix[n * d + i] + 0.5 * p.h * (p.g_start[n * d + i] + p.g_end[n * d + i]);
  }
  return p;
}

// Integral of state i's payoff interpolant from 0 to tau, with tau in step n.
double payoff_integral(const Plan& p, std::size_t i, std::size_t n, double tau) {
  if (n >= p.N) return p.g_prefix[p.N * p.d + i];
  const double x = tau - p.nu->grid().t(n);
  const double gs = p.g_start[n * p.d + i], ge = p.g_end[n * p.d + i];
  return p.g_prefix[n * p.d + i] + x * gs + (ge - gs) * x * x / (2.0 * p.h);
}

struct PathStats {
  std::uint64_t virtual_jumps = 0;
  std::uint64_t real_jumps = 0;
  std::uint64_t violations = 0;
};

// Simulates one path; adds node occupancy to diff (size (N+2)*d).
double run_path(const Plan& p, std::uint64_t seed, std::uint64_t path, std::vector<std::int64_t>& diff, PathStats& stats, PathSample* dump) {
  PathRng rng(seed, path);
  const std::size_t d = p.d, N = p.N, K = p.K;
  const TimeGrid& grid = p.nu->grid();
  const double u0 = rng.uniform();
  std::size_t x = static_cast<std::size_t>(std::upper_bound(p.mu0_cdf.begin(), p.mu0_cdf.end(), u0) - p.mu0_cdf.begin());
  x = std::min(x, d - 1);
  if (dump) dump->states.push_back(x);

  double hazard = 0.0, pay = 0.0, seg_start = 0.0;
  std::size_t step = 0, first_node = 0;
  std::vector<double> m(d);
  std::vector<double> rates(d);
  const double total = p.cum[N];
  while (true) {
    const double target = hazard + rng.exponential();
    if (!(target < total)) break;
    // step containing the event: cum[n] <= target < cum[n+1]
    const std::size_t n = static_cast<std::size_t>(std::upper_bound(p.cum.begin() + step, p.cum.end(), target) - p.cum.begin()) - 1;
    const double t_ev = std::min(grid.t(n) + (target - p.cum[n]) / p.rate[n], grid.t(n + 1));
    hazard = target;
    ++stats.virtual_jumps;
    // draw the action from nu_{x,n}
    const auto w = p.nu->weights(x, n);
    double r = rng.uniform(), c = 0.0;
    std::size_t k = 0;
    for (; k + 1 < K; ++k) {
      c += w[k];
      if (r < c) break;
    }
    while (w[k] == 0.0 && k > 0) --k;
    // rates out of x at (t_ev, m(t_ev), u_k)
    const double a = (t_ev - grid.t(n)) / p.h;
    const auto m0 = p.m_flow->at(n), m1 = p.m_flow->at(n + 1);
    for (std::size_t i = 0; i < d; ++i) m[i] = (1.0 - a) * m0[i] + a * m1[i];
    const EvalEnv env{t_ev, p.model->actions[k], m};
    double exit = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      rates[j] = j == x ? 0.0 : std::max(0.0, p.model->q(x, j).eval(env));
      exit += rates[j];
    }
    if (exit > p.rate[n]) ++stats.violations;
    const double v = rng.uniform() * p.rate[n];
    step = n;
    if (v >= exit) continue;
    std::size_t j = 0;
    double cj = 0.0;
    for (; j < d; ++j) {
      if (j == x) continue;
      cj += rates[j];
      if (v < cj) break;
    }
    if (j >= d) {
      j = d - 1;
      while (j == x || rates[j] == 0.0) --j;
    }
    ++stats.real_jumps;
    pay += payoff_integral(p, x, n, t_ev) - seg_start;
    seg_start = payoff_integral(p, j, n, t_ev);
    diff[first_node * d + x] += 1;
    diff[(n + 1) * d + x] -= 1;
    first_node = n + 1;
    x = j;
    if (dump) {
      dump->jump_times.push_back(t_ev);
      dump->states.push_back(x);
    }
  }
  diff[first_node * d + x] += 1;
  diff[(N + 1) * d + x] -= 1;
  pay += payoff_integral(p, x, N, grid.T) - seg_start;
  if (!p.sigma.empty()) pay += p.sigma[x];
  if (dump) dump->payoff = pay;
  return pay;
}

ChainResult finish(const Plan& p, std::size_t n_paths, const std::vector<std::int64_t>& diff, const std::vector<double>& payoffs,
                   const PathStats& stats) {
  ChainResult res;
  const std::size_t d = p.d, N = p.N;
  res.n_paths = n_paths;
  res.empirical = DistributionFlow(p.nu->grid(), d);
  res.counts.assign((N + 1) * d, 0);
  std::vector<std::int64_t> run(d, 0);
  for (std::size_t n = 0; n <= N; ++n) {
    for (std::size_t i = 0; i < d; ++i) {
      run[i] += diff[n * d + i];
      res.counts[n * d + i] = static_cast<std::uint64_t>(run[i]);
      res.empirical.values[n * d + i] = static_cast<double>(run[i]) / static_cast<double>(n_paths);
    }
  }
  double sum = 0.0;
  for (double v : payoffs) sum += v;
  res.payoff_mean = sum / static_cast<double>(n_paths);
  double ss = 0.0;
  for (double v : payoffs) ss += (v - res.payoff_mean) * (v - res.payoff_mean);
  res.payoff_se = n_paths > 1 ? std::sqrt(ss / static_cast<double>(n_paths - 1) / static_cast<double>(n_paths)) : 0.0;
  res.virtual_jumps = stats.virtual_jumps;
  res.real_jumps = stats.real_jumps;
  res.bound_violations = stats.violations;
  res.dominating_rate = p.rate;
  return res;
}

}  // namespace

ChainResult simulate_paths_serial(const ModelSpec& model, const DistributionFlow& m_flow, const RandomizedStrategy& nu,
                                  std::span<const double> mu0, std::size_t n_paths, std::uint64_t seed, std::span<const double> sigma,
                                  const ChainOptions& options) {
  const Plan p = make_plan(model, m_flow, nu, mu0, n_paths, sigma);
  std::vector<std::int64_t> diff((p.N + 2) * p.d, 0);
  std::vector<double> payoffs(n_paths);
  std::vector<PathSample> dumped(std::min(options.dump_paths, n_paths));
  PathStats stats;
  for (std::size_t path = 0; path < n_paths; ++path)
    payoffs[path] = run_path(p, seed, path, diff, stats, path < dumped.size() ? &dumped[path] : nullptr);
  ChainResult res = finish(p, n_paths, diff, payoffs, stats);
  res.dumped = std::move(dumped);
  return res;
}

ChainResult simulate_paths(const ModelSpec& model, const DistributionFlow& m_flow, const RandomizedStrategy& nu,
                           std::span<const double> mu0, std::size_t n_paths, std::uint64_t seed, std::span<const double> sigma,
                           const ChainOptions& options) {
  const Plan p = make_plan(model, m_flow, nu, mu0, n_paths, sigma);
  std::vector<std::int64_t> diff((p.N + 2) * p.d, 0);
  std::vector<double> payoffs(n_paths);
  std::vector<PathSample> dumped(std::min(options.dump_paths, n_paths));
  PathStats stats;
  std::exception_ptr failure;
#pragma omp parallel
  {
    std::vector<std::int64_t> local((p.N + 2) * p.d, 0);
    PathStats ls;
#pragma omp for schedule(static)
    for (std::int64_t path = 0; path < static_cast<std::int64_t>(n_paths); ++path) {
      try {
        const auto k = static_cast<std::size_t>(path);
        payoffs[k] = run_path(p, seed, k, local, ls, k < dumped.size() ? &dumped[k] : nullptr);
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
#pragma omp critical
    {
      for (std::size_t c = 0; c < local.size(); ++c) diff[c] += local[c];
      stats.virtual_jumps += ls.virtual_jumps;
      stats.real_jumps += ls.real_jumps;
      stats.violations += ls.violations;
    }
  }
  if (failure) std::rethrow_exception(failure);
  ChainResult res = finish(p, n_paths, diff, payoffs, stats);
  res.dumped = std::move(dumped);
  return res;
}

void write_paths_csv(std::ostream& os, const std::vector<PathSample>& paths) {
  os << "path,jump_time,state\n";
  char buf[40];
  for (std::size_t p = 0; p < paths.size(); ++p) {
    os << p << ",0," << paths[p].states.front() + 1 << "\n";
    for (std::size_t k = 0; k < paths[p].jump_times.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", paths[p].jump_times[k]);
      os << p << "," << buf << "," << paths[p].states[k + 1] + 1 << "\n";
    }
  }
}

}  // namespace mfgplan
