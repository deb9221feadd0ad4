#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mfgplan/dynamics.hpp"
#include "mfgplan/model.hpp"

namespace mfgplan {

/// |phi| above this during backward integration is reported as overflow.
inline constexpr double kValueOverflow = 1e12;

/// H_i = max_k [Q_i(u_k) . phi + g_i(u_k)] over a precomputed table. The
/// maximiser index (smallest on ties) goes to `argmax` when non-null.
void hamiltonian_table(const ActionTable& tab, std::span<const double> phi, double* H, std::size_t* argmax);

std::vector<double> hamiltonian(const ModelSpec& model, double t, std::span<const double> m, std::span<const double> phi);

/// Per state, every action index whose maximand is within tol of H_i, in increasing action order.
std::vector<std::vector<std::size_t>> argmax_set(const ModelSpec& model, double t, std::span<const double> m,
                                                 std::span<const double> phi, double tol);
std::vector<std::vector<std::size_t>> argmax_set(const ActionTable& tab, std::span<const double> phi, double tol);

/// dphi/dt = -H(t, m(t), phi), phi(T) = phi_T, by RK4 backwards in time with
/// m linear inside each step.
ValueFlow backward_bellman(const ModelSpec& model, const DistributionFlow& m_flow, std::span<const double> phi_T);
ValueFlow backward_bellman(const StageTables& tables, const DistributionFlow& m_flow, std::span<const double> phi_T);

/// Pure strategy taking, on each step, the smallest grid maximiser at the
/// step midpoint (m and phi averaged over the step ends).
RandomizedStrategy argmax_strategy(const StageTables& tables, const DistributionFlow& m_flow, const ValueFlow& phi_flow);
RandomizedStrategy argmax_strategy(const ModelSpec& model, const DistributionFlow& m_flow, const ValueFlow& phi_flow);

/// Trapezoid sum over steps of mu . g(t, m, nu_n) at both step ends, with
/// the step's weights held.
double running_reward(const StageTables& tables, const DistributionFlow& mu_flow, const DistributionFlow& m_flow,
                      const RandomizedStrategy& nu);

/// Reward of a player starting from mu0: mu(T) . sigma + integral of mu(t) . g(t, m(t), nu(t)).
double payoff(const ModelSpec& model, std::span<const double> mu0, const RandomizedStrategy& nu, const DistributionFlow& m_flow,
              std::span<const double> sigma);

}  // namespace mfgplan
