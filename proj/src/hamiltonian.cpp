#include "mfgplan/hamiltonian.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "mfgplan/error.hpp"

namespace mfgplan {

namespace {

inline double maximand(const ActionTable& tab, std::size_t k, std::size_t i, const double* phi) {
  const double* r = tab.q.data() + (k * tab.d + i) * tab.d;
  double s = tab.g[k * tab.d + i];
  for (std::size_t j = 0; j < tab.d; ++j) s += r[j] * phi[j];
  return s;
}

void check_finite(std::span<const double> phi) {
  for (double v : phi)
    if (!std::isfinite(v)) throw InvalidArgument("phi must be finite");
}

}  // namespace

void hamiltonian_table(const ActionTable& tab, std::span<const double> phi, double* H, std::size_t* argmax) {
  for (std::size_t i = 0; i < tab.d; ++i) {
    double best = maximand(tab, 0, i, phi.data());
    std::size_t arg = 0;
    if (tab.row_varies[i]) {
      for (std::size_t k = 1; k < tab.K; ++k) {
        const double v = maximand(tab, k, i, phi.data());
        if (v > best) {
          best = v;
          arg = k;
        }
      }
    }
    H[i] = best;
    if (argmax) argmax[i] = arg;
  }
}

std::vector<double> hamiltonian(const ModelSpec& model, double t, std::span<const double> m, std::span<const double> phi) {
  if (phi.size() != model.d) throw InvalidArgument("phi has the wrong dimension");
  check_finite(phi);
  ActionTable tab;
  fill_action_table(model, t, m, tab);
  std::vector<double> H(model.d);
  hamiltonian_table(tab, phi, H.data(), nullptr);
  return H;
}

std::vector<std::vector<std::size_t>> argmax_set(const ActionTable& tab, std::span<const double> phi, double tol) {
  if (!(tol >= 0.0)) throw InvalidArgument("argmax tolerance must be nonnegative");
  std::vector<double> H(tab.d);
  hamiltonian_table(tab, phi, H.data(), nullptr);
  std::vector<std::vector<std::size_t>> out(tab.d);
  for (std::size_t i = 0; i < tab.d; ++i) {
    for (std::size_t k = 0; k < tab.K; ++k) {
      if (maximand(tab, k, i, phi.data()) >= H[i] - tol) out[i].push_back(k);
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> argmax_set(const ModelSpec& model, double t, std::span<const double> m,
                                                 std::span<const double> phi, double tol) {
  if (phi.size() != model.d) throw InvalidArgument("phi has the wrong dimension");
  check_finite(phi);
  ActionTable tab;
  fill_action_table(model, t, m, tab);
  return argmax_set(tab, phi, tol);
}

ValueFlow backward_bellman(const ModelSpec& model, const DistributionFlow& m_flow, std::span<const double> phi_T) {
  const StageTables tables(model, m_flow.grid);
  return backward_bellman(tables, m_flow, phi_T);
}

ValueFlow backward_bellman(const StageTables& tables, const DistributionFlow& m_flow, std::span<const double> phi_T) {
  const std::size_t d = tables.model().d;
  if (phi_T.size() != d) throw InvalidArgument("phi_T has the wrong dimension");
  check_finite(phi_T);
  if (!(m_flow.grid == tables.grid()) || m_flow.d != d) throw InvalidArgument("m flow does not match the time grid");
  const TimeGrid& grid = tables.grid();
  const std::size_t N = grid.N;
  const double h = grid.h();
  ValueFlow flow(grid, d);
  std::copy(phi_T.begin(), phi_T.end(), flow.at(N).begin());
  std::vector<double> m(d), z(d), k1(d), k2(d), k3(d), k4(d);
  ActionTable scratch;
  for (std::size_t n = N; n-- > 0;) {
    const auto phi = flow.at(n + 1);
    m_at_half(m_flow, 2 * n + 2, m);
    hamiltonian_table(tables.at(2 * n + 2, m, scratch), phi, k1.data(), nullptr);
    m_at_half(m_flow, 2 * n + 1, m);
    const ActionTable& mid = tables.at(2 * n + 1, m, scratch);
    for (std::size_t i = 0; i < d; ++i) z[i] = phi[i] + 0.5 * h * k1[i];
    hamiltonian_table(mid, z, k2.data(), nullptr);
    for (std::size_t i = 0; i < d; ++i) z[i] = phi[i] + 0.5 * h * k2[i];
    hamiltonian_table(mid, z, k3.data(), nullptr);
    m_at_half(m_flow, 2 * n, m);
    for (std::size_t i = 0; i < d; ++i) z[i] = phi[i] + h * k3[i];
    hamiltonian_table(tables.at(2 * n, m, scratch), z, k4.data(), nullptr);
    auto out = flow.at(n);
    for (std::size_t i = 0; i < d; ++i) {
      out[i] = phi[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      if (!(std::fabs(out[i]) <= kValueOverflow)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "value overflow: |phi_%zu| exceeded %.0e at node %zu (t = %.6g)", i + 1, kValueOverflow, n, grid.t(n));
        throw IntegrationError(buf);
      }
    }
  }
  return flow;
}

RandomizedStrategy argmax_strategy(const StageTables& tables, const DistributionFlow& m_flow, const ValueFlow& phi_flow) {
  const ModelSpec& model = tables.model();
  const std::size_t d = model.d;
  const TimeGrid& grid = tables.grid();
  RandomizedStrategy nu(grid, d, model.actions.size());
  std::vector<double> m(d), phi(d), H(d);
  std::vector<std::size_t> arg(d);
  ActionTable scratch;
  for (std::size_t n = 0; n < grid.N; ++n) {
    m_at_half(m_flow, 2 * n + 1, m);
    for (std::size_t i = 0; i < d; ++i) phi[i] = 0.5 * (phi_flow.at(n)[i] + phi_flow.at(n + 1)[i]);
    hamiltonian_table(tables.at(2 * n + 1, m, scratch), phi, H.data(), arg.data());
    for (std::size_t i = 0; i < d; ++i) nu.set_dirac(i, n, arg[i]);
  }
  return nu;
}

RandomizedStrategy argmax_strategy(const ModelSpec& model, const DistributionFlow& m_flow, const ValueFlow& phi_flow) {
  const StageTables tables(model, m_flow.grid);
  return argmax_strategy(tables, m_flow, phi_flow);
}

double running_reward(const StageTables& tables, const DistributionFlow& mu_flow, const DistributionFlow& m_flow,
                      const RandomizedStrategy& nu) {
  const std::size_t d = tables.model().d;
  const TimeGrid& grid = tables.grid();
  const std::size_t N = grid.N;
  const std::size_t K = nu.K();
  const double h = grid.h();
  std::vector<double> row(d), g(d);
  ActionTable scratch;
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double* w = nu.data().data() + n * K;
    double step = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
      const std::size_t node = n + r;
      const ActionTable& tab = tables.at(2 * node, m_flow.at(node), scratch);
      const auto mu = mu_flow.at(node);
      for (std::size_t i = 0; i < d; ++i) {
        relaxed_row(tab, i, {w + i * N * K, K}, row.data(), &g[i]);
        step += mu[i] * g[i];
      }
    }
    total += 0.5 * h * step;
  }
  return total;
}

double payoff(const ModelSpec& model, std::span<const double> mu0, const RandomizedStrategy& nu, const DistributionFlow& m_flow,
              std::span<const double> sigma) {
  if (sigma.size() != model.d) throw InvalidArgument("sigma has the wrong dimension");
  const StageTables tables(model, nu.grid());
  const DistributionFlow mu = forward_linear(tables, mu0, m_flow, nu);
  double terminal = 0.0;
  for (std::size_t i = 0; i < model.d; ++i) terminal += mu.final()[i] * sigma[i];
  return terminal + running_reward(tables, mu, m_flow, nu);
}

}  // namespace mfgplan
