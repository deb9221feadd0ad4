#include "mfgplan/planning.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mfgplan/expression.hpp"
#include "mfgplan/hamiltonian.hpp"

namespace mfgplan {

namespace {

constexpr double kTieTol = 1e-7;
constexpr double kInf = std::numeric_limits<double>::infinity();

// out_j = sum_i y_i Q_ij, same arithmetic as the forward integrators.
inline void left_multiply(const double* Q, const double* y, double* out, std::size_t d) {
  std::fill(out, out + d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double yi = y[i];
    if (yi == 0.0) continue;
    const double* r = Q + i * d;
    for (std::size_t j = 0; j < d; ++j) out[j] += yi * r[j];
  }
}

inline double maximand(const ActionTable& tab, std::size_t k, std::size_t i, const double* phi) {
  const double* r = tab.q.data() + (k * tab.d + i) * tab.d;
  double s = tab.g[k * tab.d + i];
  for (std::size_t j = 0; j < tab.d; ++j) s += r[j] * phi[j];
  return s;
}

// Reverse of out = y Qbar(w) for the cotangent v:
//   ybar += Qbar v, G_ik += y_i (q_ki . v), mbar += m-derivative through Q.
// With A non-null the weight term is deferred: A_ij += y_i v_j on varying rows.
void rate_vjp(const ActionTable& tab, const ActionTableGrad* grad, const double* Qbar, const double* w, std::size_t stride,
              const double* y, const double* v, double* ybar, double* mbar, double* G, double* A = nullptr) {
  const std::size_t d = tab.d, K = tab.K;
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += Qbar[i * d + j] * v[j];
    ybar[i] += s;
  }
  for (std::size_t i = 0; i < d; ++i) {
    const double yi = y[i];
    if (!tab.row_varies[i] || yi == 0.0) continue;
    if (A) {
      for (std::size_t j = 0; j < d; ++j) A[i * d + j] += yi * v[j];
      continue;
    }
    double* Gi = G + i * stride;
    for (std::size_t k = 0; k < K; ++k) {
      const double* r = tab.q.data() + (k * d + i) * d;
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += r[j] * v[j];
      Gi[k] += yi * s;
    }
  }
  if (!grad) return;
  for (std::size_t i = 0; i < d; ++i) {
    const double yi = y[i];
    if (yi == 0.0) continue;
    for (std::size_t k = 0; k < K; ++k) {
      const double wk = tab.row_varies[i] ? w[i * stride + k] : (k == 0 ? 1.0 : 0.0);
      if (wk == 0.0) continue;
      const double* dq = grad->dq.data() + (k * d + i) * d * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double c = yi * wk * v[j];
        if (c == 0.0) continue;
        for (std::size_t l = 0; l < d; ++l) mbar[l] += c * dq[j * d + l];
      }
    }
  }
}

// Reverse of H = max_k [q_k . z + g_k] at the recorded maximisers.
void ham_vjp(const ActionTable& tab, const ActionTableGrad* grad, const std::uint32_t* arg, const double* z, const double* v,
             double* zbar, double* mbar) {
  const std::size_t d = tab.d;
  for (std::size_t i = 0; i < d; ++i) {
    const double vi = v[i];
    if (vi == 0.0) continue;
    const std::size_t a = arg[i];
    const double* r = tab.q.data() + (a * d + i) * d;
    for (std::size_t j = 0; j < d; ++j) zbar[j] += vi * r[j];
    if (!grad) continue;
    const double* dq = grad->dq.data() + (a * d + i) * d * d;
    const double* dg = grad->dg.data() + (a * d + i) * d;
    for (std::size_t l = 0; l < d; ++l) {
      double s = dg[l];
      for (std::size_t j = 0; j < d; ++j) s += dq[j * d + l] * z[j];
      mbar[l] += vi * s;
    }
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

// Splits on commas outside parentheses.
std::vector<std::string> split_top_level(const std::string& s) {
  std::vector<std::string> parts;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '(') ++depth;
    if (s[i] == ')') --depth;
    if (s[i] == ',' && depth == 0) {
      parts.push_back(trim(std::string_view(s).substr(start, i - start)));
      start = i + 1;
    }
  }
  parts.push_back(trim(std::string_view(s).substr(start)));
  return parts;
}

std::vector<double> parse_vector(const std::string& text, int line) {
  std::string s = trim(text);
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') s = trim(std::string_view(s).substr(1, s.size() - 2));
  auto parts = split_top_level(s);
  if (parts.size() == 1 && s.size() >= 2 && s.front() == '(' && s.back() == ')') {
    auto inner = split_top_level(trim(std::string_view(s).substr(1, s.size() - 2)));
    if (inner.size() > 1) parts = inner;
  }
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.empty()) throw ParseError("empty vector entry", line, 1);
    try {
      const Expression e = parse_expression(p, SymbolTable::constants());
      out.push_back(e.eval(EvalEnv{0.0, 0.0, {}}));
    } catch (const ParseError& err) {
      throw ParseError(std::string("bad vector entry '") + p + "': " + err.what(), line, 1);
    } catch (const EvalError& err) {
      throw ParseError(std::string("bad vector entry '") + p + "': " + err.what(), line, 1);
    }
  }
  return out;
}

// key = value lines with `#` comments.
template <class F>
void for_each_assignment(std::string_view text, F&& f) {
  std::istringstream in{std::string(text)};
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string s = trim(raw);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line, 1);
    const std::string key = trim(std::string_view(s).substr(0, eq));
    const std::string value = trim(std::string_view(s).substr(eq + 1));
    if (key.empty()) throw ParseError("missing key", line, 1);
    if (value.empty()) throw ParseError("missing value for " + key, line, static_cast<int>(eq) + 2);
    f(key, value, line);
  }
}

double euclid(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

// Zero mean, then radial scaling into the alpha-ball. Adding a constant to
// phi_T shifts phi by the same constant and leaves J unchanged, so the
// zero-mean representative is the one of smallest norm.
void project_phi(std::span<double> phi, double alpha) {
  double mean = 0.0;
  for (double v : phi) mean += v;
  mean /= static_cast<double>(phi.size());
  for (double& v : phi) v -= mean;
  const double n = euclid(phi);
  if (n > alpha) {
    const double s = alpha / n;
    for (double& v : phi) v *= s;
  }
}

std::vector<char> varying_rows(const RegretEvaluator& ev) {
  ActionTable scratch;
  const auto& tab = ev.tables().at(0, ev.problem().m0, scratch);
  return tab.row_varies;
}

}  // namespace

// ---------------------------------------------------------------------------
// Problem, schedule and settings

void PlanningProblem::validate(std::size_t d) const {
  if (m0.size() != d) throw InvalidArgument("m0 has the wrong dimension");
  if (mT.size() != d) throw InvalidArgument("mT has the wrong dimension");
  if (mu0.size() != d) throw InvalidArgument("mu0 has the wrong dimension");
  require_simplex(m0, "m0");
  require_simplex(mT, "mT");
  require_simplex(mu0, "mu0");
  for (double v : mu0)
    if (!(v > 0.0)) throw InvalidArgument("mu0 entries must be strictly positive");
}

std::vector<double> parse_vector(std::string_view text) { return parse_vector(std::string(text), 0); }

PlanningProblem parse_problem(std::string_view text, const TimeGrid& grid, std::size_t d) {
  PlanningProblem p;
  p.grid = grid;
  bool have_m0 = false, have_mT = false, have_mu0 = false;
  for_each_assignment(text, [&](const std::string& key, const std::string& value, int line) {
    std::vector<double> v = parse_vector(value, line);
    if (v.size() != d)
      throw ParseError(key + " has " + std::to_string(v.size()) + " entries, expected " + std::to_string(d), line, 1);
    if (key == "m0") {
      p.m0 = std::move(v);
      have_m0 = true;
    } else if (key == "mT") {
      p.mT = std::move(v);
      have_mT = true;
    } else if (key == "mu0") {
      p.mu0 = std::move(v);
      have_mu0 = true;
    } else {
      throw ParseError("unknown problem key '" + key + "'", line, 1);
    }
  });
  if (!have_m0) throw ParseError("problem file is missing m0", 0, 0);
  if (!have_mT) throw ParseError("problem file is missing mT", 0, 0);
  if (!have_mu0) p.mu0.assign(d, 1.0 / static_cast<double>(d));
  p.validate(d);
  return p;
}

AlphaSchedule::AlphaSchedule(std::vector<double> radii) : radii_(std::move(radii)) {
  if (radii_.empty()) throw InvalidArgument("alpha schedule is empty");
  for (std::size_t n = 0; n < radii_.size(); ++n) {
    if (!(radii_[n] > 0.0) || !std::isfinite(radii_[n])) throw InvalidArgument("alpha radii must be positive and finite");
    if (n > 0 && !(radii_[n] > radii_[n - 1])) throw InvalidArgument("alpha radii must be strictly increasing");
  }
}

AlphaSchedule AlphaSchedule::parse(std::string_view text) {
  std::vector<double> radii;
  for (const auto& part : split_top_level(std::string(text))) {
    char* end = nullptr;
    const double v = std::strtod(part.c_str(), &end);
    if (part.empty() || end != part.c_str() + part.size()) throw ParseError("bad alpha radius '" + part + "'", 0, 0);
    radii.push_back(v);
  }
  return AlphaSchedule(std::move(radii));
}

AlphaSchedule AlphaSchedule::standard() { return AlphaSchedule({1, 2, 4, 8, 16, 32}); }

OptimizerSettings OptimizerSettings::parse(std::string_view text) {
  OptimizerSettings o;
  for_each_assignment(text, [&](const std::string& key, const std::string& value, int line) {
    auto real = [&]() {
      char* end = nullptr;
      const double v = std::strtod(value.c_str(), &end);
      if (end != value.c_str() + value.size() || !std::isfinite(v)) throw ParseError("bad number for " + key, line, 1);
      return v;
    };
    auto count = [&]() {
      const double v = real();
      if (v < 0 || v != std::floor(v)) throw ParseError(key + " must be a nonnegative integer", line, 1);
      return static_cast<std::size_t>(v);
    };
    if (key == "n_starts") o.n_starts = count();
    else if (key == "max_outer_iters") o.max_outer_iters = count();
    else if (key == "max_inner_iters") o.max_inner_iters = count();
    else if (key == "feasibility_tol") o.feasibility_tol = real();
    else if (key == "opt_tol") o.opt_tol = real();
    else if (key == "cluster_tol") o.cluster_tol = real();
    else if (key == "seed") {
      char* end = nullptr;
      o.seed = std::strtoull(value.c_str(), &end, 10);
      if (end != value.c_str() + value.size()) throw ParseError("bad seed", line, 1);
    } else if (key == "penalty_init") o.penalty_init = real();
    else if (key == "penalty_growth") o.penalty_growth = real();
    else if (key == "penalty_max") o.penalty_max = real();
    else if (key == "step_min") o.step_min = real();
    else if (key == "step_max") o.step_max = real();
    else if (key == "nonmonotone_window") o.nonmonotone_window = count();
    else if (key == "armijo") o.armijo = real();
    else if (key == "metric_terms") o.metric_terms = count();
    else if (key == "restoration_iters") o.restoration_iters = count();
    else if (key == "gradient_check" || key == "purify") {
      bool flag;
      if (value == "true" || value == "1") flag = true;
      else if (value == "false" || value == "0") flag = false;
      else throw ParseError(key + " must be true or false", line, 1);
      (key == "purify" ? o.purify : o.gradient_check) = flag;
    } else {
      throw ParseError("unknown optimizer setting '" + key + "'", line, 1);
    }
  });
  if (o.n_starts < 1) throw InvalidArgument("n_starts must be at least 1");
  if (o.max_outer_iters < 1 || o.max_inner_iters < 1) throw InvalidArgument("iteration limits must be at least 1");
  if (!(o.feasibility_tol > 0) || !(o.opt_tol > 0) || !(o.cluster_tol > 0)) throw InvalidArgument("tolerances must be positive");
  if (!(o.penalty_init > 0) || !(o.penalty_growth >= 1) || !(o.penalty_max >= o.penalty_init))
    throw InvalidArgument("penalty parameters out of range");
  if (!(o.step_min > 0) || !(o.step_max > o.step_min)) throw InvalidArgument("step bounds out of range");
  if (o.nonmonotone_window < 1) throw InvalidArgument("nonmonotone_window must be at least 1");
  if (!(o.armijo > 0 && o.armijo < 1)) throw InvalidArgument("armijo must lie in (0, 1)");
  if (o.metric_terms < 1) throw InvalidArgument("metric_terms must be at least 1");
  return o;
}

// ---------------------------------------------------------------------------
// Regret evaluator

RegretEvaluator::RegretEvaluator(const ModelSpec& model, const PlanningProblem& problem)
    : model_(&model),
      problem_(problem),
      tables_(model, problem.grid),
      d_(model.d),
      K_(model.actions.size()),
      N_(problem.grid.N),
      h_(problem.grid.h()),
      m_(problem.grid, model.d),
      mu_(problem.grid, model.d),
      phi_(problem.grid, model.d) {
  problem.validate(model.d);
  if (tables_.m_dependent()) half_.resize(2 * N_ + 1);
  z_.assign(3 * N_ * d_, 0.0);
  arg_.assign(4 * N_ * d_, 0);
  relQ_.assign(3 * N_ * d_ * d_, 0.0);
  relG_.assign(3 * N_ * d_, 0.0);
}

void RegretEvaluator::fill_relaxed() {
  const std::size_t K = K_, N = N_;
  ActionTable scratch;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t r = 0; r < 3; ++r)
      relaxed_all(half_table(2 * n + r, scratch), W_ + n * K, N * K, relQ(n, r), relG(n, r));
}

const ActionTable& RegretEvaluator::half_table(std::size_t s, ActionTable& scratch) const {
  if (!half_.empty()) return half_[s];
  return tables_.at(s, m_.at(0), scratch);
}

void RegretEvaluator::forward() {
  const std::size_t d = d_, K = K_, N = N_, stride = N * K;
  const double h = h_;
  const TimeGrid& grid = problem_.grid;
  std::vector<double> Q(d * d), g(d), y(d), k1(d), k2(d), k3(d), k4(d), mh(d);
  ActionTable scratch;

  // m: nonlinear Kolmogorov equation.
  std::copy(problem_.m0.begin(), problem_.m0.end(), m_.at(0).begin());
  m_.clipped_nodes.clear();
  const double* w = nullptr;
  const bool m_dep = tables_.m_dependent();
  if (!m_dep) fill_relaxed();
  auto rate = [&](std::size_t n, std::size_t r, const double* state, double* out) {
    if (!m_dep) {
      left_multiply(relQ(n, r), state, out, d);
      return;
    }
    const ActionTable& tab = tables_.at(2 * n + r, {state, d}, scratch);
    relaxed_all(tab, w, stride, Q.data(), g.data());
    left_multiply(Q.data(), state, out, d);
  };
  for (std::size_t n = 0; n < N; ++n) {
    const auto mn = m_.at(n);
    w = W_ + n * K;
    rate(n, 0, mn.data(), k1.data());
    for (std::size_t i = 0; i < d; ++i) y[i] = mn[i] + 0.5 * h * k1[i];
    rate(n, 1, y.data(), k2.data());
    for (std::size_t i = 0; i < d; ++i) y[i] = mn[i] + 0.5 * h * k2[i];
    rate(n, 1, y.data(), k3.data());
    for (std::size_t i = 0; i < d; ++i) y[i] = mn[i] + h * k3[i];
    rate(n, 2, y.data(), k4.data());
    auto next = m_.at(n + 1);
    for (std::size_t i = 0; i < d; ++i) next[i] = mn[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    if (enforce_simplex(next, n + 1, grid.t(n + 1))) m_.clipped_nodes.push_back(n + 1);
  }

  if (!half_.empty()) {
    for (std::size_t s = 0; s <= 2 * N; ++s) {
      m_at_half(m_, s, mh);
      tables_.at(s, mh, half_[s]);
    }
    fill_relaxed();
  }

  // phi: Bellman equation backwards, recording maximisers and stage points.
  std::copy(phiT_.begin(), phiT_.end(), phi_.at(N).begin());
  tie_gap_ = kInf;
  auto ham = [&](const ActionTable& tab, const double* phi, double* H, std::uint32_t* arg) {
    for (std::size_t i = 0; i < d; ++i) {
      double best = maximand(tab, 0, i, phi);
      std::uint32_t a = 0;
      if (tab.row_varies[i]) {
        double second = -kInf;
        for (std::size_t k = 1; k < tab.K; ++k) {
          const double v = maximand(tab, k, i, phi);
          if (v > best) {
            second = best;
            best = v;
            a = static_cast<std::uint32_t>(k);
          } else if (v > second) {
            second = v;
          }
        }
        tie_gap_ = std::min(tie_gap_, best - second);
      }
      H[i] = best;
      arg[i] = a;
    }
  };
  for (std::size_t n = N; n-- > 0;) {
    const auto phi = phi_.at(n + 1);
    double* z = z_.data() + 3 * n * d;
    std::uint32_t* arg = arg_.data() + 4 * n * d;
    ham(half_table(2 * n + 2, scratch), phi.data(), k1.data(), arg);
    const ActionTable& mid = half_table(2 * n + 1, scratch);
    for (std::size_t i = 0; i < d; ++i) z[i] = phi[i] + 0.5 * h * k1[i];
    ham(mid, z, k2.data(), arg + d);
    for (std::size_t i = 0; i < d; ++i) z[d + i] = phi[i] + 0.5 * h * k2[i];
    ham(mid, z + d, k3.data(), arg + 2 * d);
    for (std::size_t i = 0; i < d; ++i) z[2 * d + i] = phi[i] + h * k3[i];
    ham(half_table(2 * n, scratch), z + 2 * d, k4.data(), arg + 3 * d);
    auto out = phi_.at(n);
    for (std::size_t i = 0; i < d; ++i) {
      out[i] = phi[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      if (!(std::fabs(out[i]) <= kValueOverflow)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "value overflow: |phi_%zu| exceeded %.0e at node %zu (t = %.6g)", i + 1, kValueOverflow, n,
                      grid.t(n));
        throw IntegrationError(buf);
      }
    }
  }

  // mu: linear Kolmogorov equation along m.
  std::copy(problem_.mu0.begin(), problem_.mu0.end(), mu_.at(0).begin());
  mu_.clipped_nodes.clear();
  for (std::size_t n = 0; n < N; ++n) {
    const auto mu = mu_.at(n);
    left_multiply(relQ(n, 0), mu.data(), k1.data(), d);
    for (std::size_t i = 0; i < d; ++i) y[i] = mu[i] + 0.5 * h * k1[i];
    left_multiply(relQ(n, 1), y.data(), k2.data(), d);
    for (std::size_t i = 0; i < d; ++i) y[i] = mu[i] + 0.5 * h * k2[i];
    left_multiply(relQ(n, 1), y.data(), k3.data(), d);
    for (std::size_t i = 0; i < d; ++i) y[i] = mu[i] + h * k3[i];
    left_multiply(relQ(n, 2), y.data(), k4.data(), d);
    auto next = mu_.at(n + 1);
    for (std::size_t i = 0; i < d; ++i) next[i] = mu[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    if (enforce_simplex(next, n + 1, grid.t(n + 1))) mu_.clipped_nodes.push_back(n + 1);
  }
}

RegretEvaluator::Value RegretEvaluator::evaluate(std::span<const double> W, std::span<const double> phi_T,
                                                 std::span<const double> lambda, double rho, std::vector<double>* gW,
                                                 std::vector<double>* gphi) {
  const std::size_t d = d_, K = K_, N = N_;
  if (W.size() != d * N * K) throw InvalidArgument("strategy weights have the wrong size");
  if (phi_T.size() != d) throw InvalidArgument("phi_T has the wrong dimension");
  if (!lambda.empty() && lambda.size() != d) throw InvalidArgument("multiplier has the wrong dimension");
  for (double v : phi_T)
    if (!std::isfinite(v)) throw InvalidArgument("phi_T must be finite");
  W_ = W.data();
  phiT_.assign(phi_T.begin(), phi_T.end());
  forward();

  // Trapezoid running reward with the step's weights held, as in running_reward.
  const double h = h_;
  double quad = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    double step = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
      const auto mu = mu_.at(n + r);
      const double* g = relG(n, 2 * r);
      for (std::size_t i = 0; i < d; ++i) step += mu[i] * g[i];
    }
    quad += 0.5 * h * step;
  }
  Value out;
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    a += problem_.mu0[i] * phi_.at(0)[i];
    b += mu_.final()[i] * phi_.final()[i];
  }
  out.J = a - b - quad;
  out.c.resize(d);
  double cc = 0.0, lc = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    out.c[i] = m_.final()[i] - problem_.mT[i];
    cc += out.c[i] * out.c[i];
    if (!lambda.empty()) lc += lambda[i] * out.c[i];
  }
  out.gap = std::sqrt(cc);
  out.L = out.J + lc + 0.5 * rho * cc;

  if (gW || gphi) {
    std::vector<double> GW, GP;
    reverse(lambda, rho, out.c, GW, GP);
    if (gW) *gW = std::move(GW);
    if (gphi) *gphi = std::move(GP);
  }
  return out;
}

void RegretEvaluator::reverse(std::span<const double> lambda, double rho, const std::vector<double>& c, std::vector<double>& GW,
                              std::vector<double>& gphi) {
  const std::size_t d = d_, K = K_, N = N_, stride = N * K;
  const double h = h_;
  const bool m_dep = tables_.m_dependent();
  const bool q_dep = tables_.q_uses_m();
  GW.assign(d * N * K, 0.0);
  std::vector<double> mbar((N + 1) * d, 0.0), mubar((N + 1) * d, 0.0), phibar((N + 1) * d, 0.0);
  auto at = [d](std::vector<double>& v, std::size_t n) { return v.data() + n * d; };

  // J = mu0 . phi(0) - mu(T) . phi(T) - quadrature; L adds the constraint terms.
  for (std::size_t i = 0; i < d; ++i) {
    at(phibar, 0)[i] += problem_.mu0[i];
    at(phibar, N)[i] -= mu_.final()[i];
    at(mubar, N)[i] -= phi_.final()[i];
    at(mbar, N)[i] += (lambda.empty() ? 0.0 : lambda[i]) + rho * c[i];
  }

  // Weight gradients are collected per step and stage time as y v^T outer
  // products (accQ_) and payoff coefficients (accG_), then contracted with
  // the action tables once at the end.
  accQ_.assign(relQ_.size(), 0.0);
  accG_.assign(relG_.size(), 0.0);
  ActionTable scratch;
  ActionTableGrad gscratch;
  std::vector<double> mh(d);
  for (std::size_t n = 0; n < N; ++n) {
    const double* w = W_ + n * K;
    for (std::size_t r = 0; r < 2; ++r) {
      const std::size_t node = n + r;
      const ActionTable& tab = half_table(2 * node, scratch);
      const auto mu = mu_.at(node);
      const double* gbar = relG(n, 2 * r);
      double* B = accG(n, 2 * r);
      for (std::size_t i = 0; i < d; ++i) {
        at(mubar, node)[i] -= 0.5 * h * gbar[i];
        B[i] -= 0.5 * h * mu[i];
      }
      if (tables_.g_uses_m()) {
        const ActionTableGrad& gt = tables_.grad_at(2 * node, m_.at(node), gscratch);
        double* mb = at(mbar, node);
        for (std::size_t i = 0; i < d; ++i) {
          for (std::size_t k = 0; k < K; ++k) {
            const double wk = tab.row_varies[i] ? w[i * stride + k] : (k == 0 ? 1.0 : 0.0);
            if (wk == 0.0) continue;
            const double cf = 0.5 * h * mu[i] * wk;
            for (std::size_t l = 0; l < d; ++l) mb[l] -= cf * gt.dg[(k * d + i) * d + l];
          }
        }
      }
    }
  }

  std::vector<double> v1(d), v2(d), v3(d), v4(d), tmp(d), mt(d);
  auto set_weights = [&](const double* ybar) {
    for (std::size_t i = 0; i < d; ++i) {
      v1[i] = h / 6.0 * ybar[i];
      v2[i] = h / 3.0 * ybar[i];
      v3[i] = h / 3.0 * ybar[i];
      v4[i] = h / 6.0 * ybar[i];
    }
  };
  auto clear = [&]() {
    std::fill(tmp.begin(), tmp.end(), 0.0);
    std::fill(mt.begin(), mt.end(), 0.0);
  };
  auto grad_half = [&](std::size_t s) -> const ActionTableGrad* {
    m_at_half(m_, s, mh);
    return &tables_.grad_at(s, mh, gscratch);
  };
  auto add_mid = [&](std::size_t n) {
    for (std::size_t l = 0; l < d; ++l) {
      at(mbar, n)[l] += 0.5 * mt[l];
      at(mbar, n + 1)[l] += 0.5 * mt[l];
    }
  };

  // Bellman, reversed: phi_n depends on phi_{n+1}, so cotangents flow from n = 0 up.
  for (std::size_t n = 0; n < N; ++n) {
    const double* ybar = at(phibar, n);
    double* pb = at(phibar, n + 1);
    for (std::size_t i = 0; i < d; ++i) pb[i] += ybar[i];
    set_weights(ybar);
    const double* z = z_.data() + 3 * n * d;
    const std::uint32_t* arg = arg_.data() + 4 * n * d;

    clear();
    ham_vjp(half_table(2 * n, scratch), m_dep ? grad_half(2 * n) : nullptr, arg + 3 * d, z + 2 * d, v4.data(), tmp.data(), mt.data());
    for (std::size_t i = 0; i < d; ++i) {
      pb[i] += tmp[i];
      v3[i] += h * tmp[i];
      at(mbar, n)[i] += mt[i];
    }
    const ActionTable& mid = half_table(2 * n + 1, scratch);
    const ActionTableGrad* gmid = m_dep ? grad_half(2 * n + 1) : nullptr;
    clear();
    ham_vjp(mid, gmid, arg + 2 * d, z + d, v3.data(), tmp.data(), mt.data());
    for (std::size_t i = 0; i < d; ++i) {
      pb[i] += tmp[i];
      v2[i] += 0.5 * h * tmp[i];
    }
    add_mid(n);
    clear();
    ham_vjp(mid, gmid, arg + d, z, v2.data(), tmp.data(), mt.data());
    for (std::size_t i = 0; i < d; ++i) {
      pb[i] += tmp[i];
      v1[i] += 0.5 * h * tmp[i];
    }
    add_mid(n);
    clear();
    ham_vjp(half_table(2 * n + 2, scratch), m_dep ? grad_half(2 * n + 2) : nullptr, arg, phi_.at(n + 1).data(), v1.data(),
            tmp.data(), mt.data());
    for (std::size_t i = 0; i < d; ++i) {
      pb[i] += tmp[i];
      at(mbar, n + 1)[i] += mt[i];
    }
  }
  gphi.assign(at(phibar, N), at(phibar, N) + d);

  // mu, reversed.
  std::vector<double> k1(d), k2(d), k3(d), y2(d), y3(d), y4(d);
  for (std::size_t n = N; n-- > 0;) {
    const double* w = W_ + n * K;
    const ActionTable& t0 = half_table(2 * n, scratch);
    const ActionTable& tm = half_table(2 * n + 1, scratch);
    const ActionTable& t1 = half_table(2 * n + 2, scratch);
    const double *Q0 = relQ(n, 0), *Qm = relQ(n, 1), *Q1 = relQ(n, 2);
    const double* y1 = mu_.at(n).data();
    left_multiply(Q0, y1, k1.data(), d);
    for (std::size_t i = 0; i < d; ++i) y2[i] = y1[i] + 0.5 * h * k1[i];
    left_multiply(Qm, y2.data(), k2.data(), d);
    for (std::size_t i = 0; i < d; ++i) y3[i] = y1[i] + 0.5 * h * k2[i];
    left_multiply(Qm, y3.data(), k3.data(), d);
    for (std::size_t i = 0; i < d; ++i) y4[i] = y1[i] + h * k3[i];

    const double* ybar = at(mubar, n + 1);
    double* mb = at(mubar, n);
    for (std::size_t i = 0; i < d; ++i) mb[i] += ybar[i];
    set_weights(ybar);

    clear();
    rate_vjp(t1, q_dep ? grad_half(2 * n + 2) : nullptr, Q1, w, stride, y4.data(), v4.data(), tmp.data(), mt.data(), nullptr,
             accQ(n, 2));
    for (std::size_t i = 0; i < d; ++i) {
      mb[i] += tmp[i];
      v3[i] += h * tmp[i];
      at(mbar, n + 1)[i] += mt[i];
    }
    const ActionTableGrad* gmid = q_dep ? grad_half(2 * n + 1) : nullptr;
    clear();
    rate_vjp(tm, gmid, Qm, w, stride, y3.data(), v3.data(), tmp.data(), mt.data(), nullptr, accQ(n, 1));
    for (std::size_t i = 0; i < d; ++i) {
      mb[i] += tmp[i];
      v2[i] += 0.5 * h * tmp[i];
    }
    add_mid(n);
    clear();
    rate_vjp(tm, gmid, Qm, w, stride, y2.data(), v2.data(), tmp.data(), mt.data(), nullptr, accQ(n, 1));
    for (std::size_t i = 0; i < d; ++i) {
      mb[i] += tmp[i];
      v1[i] += 0.5 * h * tmp[i];
    }
    add_mid(n);
    clear();
    rate_vjp(t0, q_dep ? grad_half(2 * n) : nullptr, Q0, w, stride, y1, v1.data(), tmp.data(), mt.data(), nullptr, accQ(n, 0));
    for (std::size_t i = 0; i < d; ++i) {
      mb[i] += tmp[i];
      at(mbar, n)[i] += mt[i];
    }
  }

  // m, reversed. With m-dependent tables the stage tables are recomputed at
  // the RK4 stage points and weight gradients go straight into GW.
  std::vector<double> Q1(d * d), Q2(d * d), Q3(d * d), Q4(d * d), g(d);
  ActionTable s1, s2, s3, s4;
  for (std::size_t n = N; n-- > 0;) {
    const double* w = W_ + n * K;
    double* G = m_dep ? GW.data() + n * K : nullptr;
    double* A0 = m_dep ? nullptr : accQ(n, 0);
    double* A1 = m_dep ? nullptr : accQ(n, 1);
    double* A2 = m_dep ? nullptr : accQ(n, 2);
    const double* y1 = m_.at(n).data();
    const ActionTable *t1, *t2, *t3, *t4;
    const double *P1, *P2, *P3, *P4;
    if (m_dep) {
      t1 = &tables_.at(2 * n, {y1, d}, s1);
      relaxed_all(*t1, w, stride, Q1.data(), g.data());
      P1 = Q1.data();
    } else {
      t1 = &half_table(2 * n, scratch);
      P1 = relQ(n, 0);
    }
    left_multiply(P1, y1, k1.data(), d);
    for (std::size_t i = 0; i < d; ++i) y2[i] = y1[i] + 0.5 * h * k1[i];
    if (m_dep) {
      t2 = &tables_.at(2 * n + 1, y2, s2);
      relaxed_all(*t2, w, stride, Q2.data(), g.data());
      P2 = Q2.data();
    } else {
      t2 = &half_table(2 * n + 1, scratch);
      P2 = relQ(n, 1);
    }
    left_multiply(P2, y2.data(), k2.data(), d);
    for (std::size_t i = 0; i < d; ++i) y3[i] = y1[i] + 0.5 * h * k2[i];
    if (m_dep) {
      t3 = &tables_.at(2 * n + 1, y3, s3);
      relaxed_all(*t3, w, stride, Q3.data(), g.data());
      P3 = Q3.data();
    } else {
      t3 = t2;
      P3 = P2;
    }
    left_multiply(P3, y3.data(), k3.data(), d);
    for (std::size_t i = 0; i < d; ++i) y4[i] = y1[i] + h * k3[i];
    if (m_dep) {
      t4 = &tables_.at(2 * n + 2, y4, s4);
      relaxed_all(*t4, w, stride, Q4.data(), g.data());
      P4 = Q4.data();
    } else {
      t4 = &half_table(2 * n + 2, scratch);
      P4 = relQ(n, 2);
    }

    const double* ybar = at(mbar, n + 1);
    double* mb = at(mbar, n);
    for (std::size_t i = 0; i < d; ++i) mb[i] += ybar[i];
    set_weights(ybar);

    std::fill(tmp.begin(), tmp.end(), 0.0);
    rate_vjp(*t4, q_dep ? &tables_.grad_at(2 * n + 2, y4, gscratch) : nullptr, P4, w, stride, y4.data(), v4.data(), tmp.data(),
             tmp.data(), G, A2);
    for (std::size_t i = 0; i < d; ++i) {
      mb[i] += tmp[i];
      v3[i] += h * tmp[i];
    }
    std::fill(tmp.begin(), tmp.end(), 0.0);
    rate_vjp(*t3, q_dep ? &tables_.grad_at(2 * n + 1, y3, gscratch) : nullptr, P3, w, stride, y3.data(), v3.data(), tmp.data(),
             tmp.data(), G, A1);
    for (std::size_t i = 0; i < d; ++i) {
      mb[i] += tmp[i];
      v2[i] += 0.5 * h * tmp[i];
    }
    std::fill(tmp.begin(), tmp.end(), 0.0);
    rate_vjp(*t2, q_dep ? &tables_.grad_at(2 * n + 1, y2, gscratch) : nullptr, P2, w, stride, y2.data(), v2.data(), tmp.data(),
             tmp.data(), G, A1);
    for (std::size_t i = 0; i < d; ++i) {
      mb[i] += tmp[i];
      v1[i] += 0.5 * h * tmp[i];
    }
    std::fill(tmp.begin(), tmp.end(), 0.0);
    rate_vjp(*t1, q_dep ? &tables_.grad_at(2 * n, {y1, d}, gscratch) : nullptr, P1, w, stride, y1, v1.data(), tmp.data(),
             tmp.data(), G, A0);
    for (std::size_t i = 0; i < d; ++i) mb[i] += tmp[i];
  }

  // G_ik += sum_j q_k(i, j) A_ij + g_k(i) B_i at every stage time.
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t r = 0; r < 3; ++r) {
      const ActionTable& tab = half_table(2 * n + r, scratch);
      const double* A = accQ(n, r);
      const double* B = accG(n, r);
      for (std::size_t i = 0; i < d; ++i) {
        if (!tab.row_varies[i]) continue;
        const double* Ai = A + i * d;
        double* Gi = GW.data() + (i * N + n) * K;
        for (std::size_t k = 0; k < K; ++k) {
          const double* q = tab.q.data() + (k * d + i) * d;
          double s = tab.g[k * d + i] * B[i];
          for (std::size_t j = 0; j < d; ++j) s += q[j] * Ai[j];
          Gi[k] += s;
        }
      }
    }
  }

  // Restrict to the tangent space of each weight simplex; rows that do not
  // depend on the action carry no gradient.
  const std::vector<char> varies = varying_rows(*this);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t n = 0; n < N; ++n) {
      double* G = GW.data() + (i * N + n) * K;
      if (!varies[i]) {
        std::fill(G, G + K, 0.0);
        continue;
      }
      double mean = 0.0;
      for (std::size_t k = 0; k < K; ++k) mean += G[k];
      mean /= static_cast<double>(K);
      for (std::size_t k = 0; k < K; ++k) G[k] -= mean;
    }
  }
}

RegretResult regret_J(const ModelSpec& model, const PlanningProblem& problem, const Decision& decision) {
  const RandomizedStrategy& nu = decision.strategy;
  if (!(nu.grid() == problem.grid)) throw InvalidArgument("decision and problem use different time grids");
  if (nu.d() != model.d || nu.K() != model.actions.size()) throw InvalidArgument("strategy does not match the model");
  nu.validate();
  RegretEvaluator ev(model, problem);
  const auto v = ev.evaluate(nu.data(), decision.phi_T, {}, 0.0);
  RegretResult r;
  r.decision = decision;
  r.m_flow = ev.m_flow();
  r.mu_flow = ev.mu_flow();
  r.phi_flow = ev.phi_flow();
  r.J = v.J;
  r.terminal_gap = v.gap;
  return r;
}

// ---------------------------------------------------------------------------
// Gradient check

GradientCheckReport check_gradient(const ModelSpec& model, const PlanningProblem& problem, const Decision& at,
                                   std::size_t n_directions, std::uint64_t seed, std::span<const double> lambda, double rho) {
  RegretEvaluator ev(model, problem);
  const std::size_t d = model.d, K = model.actions.size(), N = problem.grid.N;
  const std::vector<double>& W = at.strategy.data();
  std::vector<double> gW, gphi;
  ev.evaluate(W, at.phi_T, lambda, rho, &gW, &gphi);
  const std::vector<std::uint32_t> base = ev.argmax_pattern();
  GradientCheckReport rep;
  rep.tie_adjacent = ev.tie_gap() < kTieTol;

  std::mt19937_64 gen(splitmix64(seed));
  std::normal_distribution<double> normal;
  const double eps = 1e-6;
  std::vector<double> dW(W.size()), dphi(d), Wp(W.size()), Wm(W.size()), pp(d), pm(d);
  const std::size_t max_attempts = 50 * std::max<std::size_t>(n_directions, 1);
  for (std::size_t attempt = 0; rep.directions < n_directions && attempt < max_attempts; ++attempt) {
    // Random tangent direction on the cells' active supports.
    for (std::size_t c = 0; c < d * N; ++c) {
      double mean = 0.0;
      std::size_t active = 0;
      for (std::size_t k = 0; k < K; ++k) {
        const bool on = W[c * K + k] > 1e-4;
        dW[c * K + k] = on ? normal(gen) : 0.0;
        mean += dW[c * K + k];
        active += on;
      }
      if (active > 0) mean /= static_cast<double>(active);
      for (std::size_t k = 0; k < K; ++k)
        if (W[c * K + k] > 1e-4) dW[c * K + k] -= mean;
    }
    for (double& v : dphi) v = normal(gen);
    const double nw = euclid(dW), np = euclid(dphi);
    if (nw > 0)
      for (double& v : dW) v /= nw;
    for (double& v : dphi) v /= np;

    for (std::size_t k = 0; k < W.size(); ++k) {
      Wp[k] = W[k] + eps * dW[k];
      Wm[k] = W[k] - eps * dW[k];
    }
    for (std::size_t i = 0; i < d; ++i) {
      pp[i] = at.phi_T[i] + eps * dphi[i];
      pm[i] = at.phi_T[i] - eps * dphi[i];
    }
    const double Lp = ev.evaluate(Wp, pp, lambda, rho).L;
    const bool same_p = ev.argmax_pattern() == base;
    const double Lm = ev.evaluate(Wm, pm, lambda, rho).L;
    const bool same_m = ev.argmax_pattern() == base;
    if (!same_p || !same_m) {
      ++rep.rerolls;
      continue;
    }
    const double fd = (Lp - Lm) / (2.0 * eps);
    double ad = 0.0;
    for (std::size_t k = 0; k < W.size(); ++k) ad += gW[k] * dW[k];
    for (std::size_t i = 0; i < d; ++i) ad += gphi[i] * dphi[i];
    const double rel = std::fabs(fd - ad) / std::max({std::fabs(fd), std::fabs(ad), 1e-10});
    rep.max_relative_error = std::max(rep.max_relative_error, rel);
    ++rep.directions;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Optimizer

void project_simplex(std::span<double> x) {
  const std::size_t K = x.size();
  if (K == 0) return;
  std::vector<double> u(x.begin(), x.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double css = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < K; ++j) {
    css += u[j];
    const double t = (css - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  for (double& v : x) v = std::max(v - theta, 0.0);
}

Decision initial_decision(const ModelSpec& model, const PlanningProblem& problem, double alpha, std::uint64_t seed,
                          std::size_t start) {
  const std::size_t d = model.d, K = model.actions.size(), N = problem.grid.N;
  Decision dec;
  dec.phi_T.assign(d, 0.0);
  if (start == 0) {
    dec.strategy = RandomizedStrategy::uniform(problem.grid, d, K);
    return dec;
  }
  dec.strategy = RandomizedStrategy(problem.grid, d, K);
  std::mt19937_64 gen(splitmix64(seed ^ splitmix64(start + 0x5bd1e995ULL)));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal;
  // Piecewise-constant blends of a random action with the uniform vector.
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t blocks = 1 + gen() % 8;
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t k = gen() % K;
      const double mix = unif(gen);
      const std::size_t n0 = b * N / blocks, n1 = (b + 1) * N / blocks;
      for (std::size_t n = n0; n < n1; ++n) {
        auto w = dec.strategy.weights(i, n);
        for (std::size_t a = 0; a < K; ++a) w[a] = mix / static_cast<double>(K);
        w[k] += 1.0 - mix;
      }
    }
  }
  for (double& v : dec.phi_T) v = normal(gen);
  project_phi(dec.phi_T, kInf);
  const double n = euclid(dec.phi_T);
  const double radius = alpha * std::pow(unif(gen), 1.0 / static_cast<double>(d));
  if (n > 0)
    for (double& v : dec.phi_T) v *= radius / n;
  return dec;
}

namespace {

// Feasibility restoration on c(W) = m(T) - mT with phi_T held. Each step
// solves the bound-constrained Gauss-Newton model
//   min_{W+d in simplices} 1/2 |c + Jc d|^2 + delta/2 h |d|^2
// through its d-dimensional dual, maximised by semismooth Newton (the inner
// minimiser is a per-cell simplex projection). Used when the augmented
// Lagrangian stalls next to a corner of the reachable set, where no finite
// multiplier exists.
void restore_feasibility(RegretEvaluator& ev, const std::vector<std::size_t>& cells, std::vector<double>& W,
                         const std::vector<double>& phi, double tol, std::size_t max_iters) {
  const std::size_t d = ev.model().d, K = ev.model().actions.size();
  const double h = ev.problem().grid.h();
  constexpr double delta = 1e-8;
  const double scale = 1.0 / (delta * h);
  std::vector<double> g0, gp, e(d), D(W.size(), 0.0), trial, p(K);
  std::vector<std::vector<double>> Jc(d);
  auto value = [&](const std::vector<double>& w) {
    try {
      return ev.evaluate(w, phi, {}, 0.0).gap;
    } catch (const IntegrationError&) {
      return kInf;
    }
  };
  // Inner minimiser d(y) and the dual value.
  auto primal = [&](const std::vector<double>& y, std::vector<double>& out) {
    double quad = 0.0;
    for (std::size_t cell : cells) {
      const std::size_t b = cell * K;
      for (std::size_t k = 0; k < K; ++k) {
        double s = 0.0;
        for (std::size_t a = 0; a < d; ++a) s += Jc[a][b + k] * y[a];
        p[k] = W[b + k] - scale * s;
      }
      project_simplex(p);
      for (std::size_t k = 0; k < K; ++k) {
        out[b + k] = p[k] - W[b + k];
        quad += out[b + k] * out[b + k];
      }
    }
    return quad;
  };
  double gap = value(W);
  for (std::size_t it = 0; it < max_iters && gap > tol; ++it) {
    const std::vector<double> c = ev.evaluate(W, phi, {}, 0.0, &g0, &gp).c;
    for (std::size_t i = 0; i < d; ++i) {
      e.assign(d, 0.0);
      e[i] = 1.0;
      ev.evaluate(W, phi, e, 0.0, &Jc[i], &gp);
      for (std::size_t q = 0; q < W.size(); ++q) Jc[i][q] -= g0[q];
    }
    auto dual = [&](const std::vector<double>& y, std::vector<double>& dd, std::vector<double>& grad) {
      const double quad = primal(y, dd);
      double val = 0.5 * delta * h * quad;
      grad.assign(d, 0.0);
      for (std::size_t a = 0; a < d; ++a) {
        double jd = 0.0;
        for (std::size_t cell : cells)
          for (std::size_t k = 0; k < K; ++k) jd += Jc[a][cell * K + k] * dd[cell * K + k];
        grad[a] = c[a] + jd - y[a];
        val += y[a] * (c[a] + jd) - 0.5 * y[a] * y[a];
      }
      return val;
    };
    std::vector<double> y(d, 0.0), G, yt(d), Gt, Dt(W.size(), 0.0);
    double gval = dual(y, D, G);
    for (int newton = 0; newton < 40; ++newton) {
      double gn = 0.0;
      for (double v : G) gn = std::max(gn, std::fabs(v));
      if (gn <= 1e-3 * tol) break;
      // (I + scale * Jc_F P_F Jc_F^T) step = G on the projection's free set.
      std::vector<double> M(d * d, 0.0), ca(d), cb(d);
      for (std::size_t cell : cells) {
        const std::size_t b = cell * K;
        std::size_t nf = 0;
        std::fill(ca.begin(), ca.end(), 0.0);
        for (std::size_t k = 0; k < K; ++k)
          if (W[b + k] + D[b + k] > 0.0) {
            ++nf;
            for (std::size_t a = 0; a < d; ++a) ca[a] += Jc[a][b + k];
          }
        if (nf < 2) continue;
        for (std::size_t a = 0; a < d; ++a) ca[a] /= static_cast<double>(nf);
        for (std::size_t k = 0; k < K; ++k) {
          if (!(W[b + k] + D[b + k] > 0.0)) continue;
          for (std::size_t a = 0; a < d; ++a) cb[a] = Jc[a][b + k] - ca[a];
          for (std::size_t a = 0; a < d; ++a)
            for (std::size_t a2 = 0; a2 < d; ++a2) M[a * d + a2] += scale * cb[a] * cb[a2];
        }
      }
      for (std::size_t a = 0; a < d; ++a) M[a * d + a] += 1.0;
      std::vector<double> step = G;
      for (std::size_t col = 0; col < d; ++col) {
        for (std::size_t r = col + 1; r < d; ++r) {
          const double f = M[r * d + col] / M[col * d + col];
          for (std::size_t k = col; k < d; ++k) M[r * d + k] -= f * M[col * d + k];
          step[r] -= f * step[col];
        }
      }
      for (std::size_t r = d; r-- > 0;) {
        for (std::size_t k = r + 1; k < d; ++k) step[r] -= M[r * d + k] * step[k];
        step[r] /= M[r * d + r];
      }
      double slope = 0.0;
      for (std::size_t a = 0; a < d; ++a) slope += G[a] * step[a];
      double s = 1.0;
      bool ok = false;
      for (int ls = 0; ls < 40; ++ls, s *= 0.5) {
        for (std::size_t a = 0; a < d; ++a) yt[a] = y[a] + s * step[a];
        const double v = dual(yt, Dt, Gt);
        if (v >= gval + 1e-4 * s * slope) {
          y = yt;
          D.swap(Dt);
          G = Gt;
          gval = v;
          ok = true;
          break;
        }
      }
      if (!ok) break;
    }
    double t = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
      trial = W;
      for (std::size_t cell : cells)
        for (std::size_t k = 0; k < K; ++k) trial[cell * K + k] = std::max(0.0, W[cell * K + k] + t * D[cell * K + k]);
      const double g = value(trial);
      if (g < gap) {
        W.swap(trial);
        gap = g;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
}

}  // namespace

RegretResult optimize_from(RegretEvaluator& ev, const Decision& init, double alpha, const OptimizerSettings& opts) {
  if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
  const ModelSpec& model = ev.model();
  const PlanningProblem& problem = ev.problem();
  const std::size_t d = model.d, K = model.actions.size(), N = problem.grid.N;
  const double h = problem.grid.h();
  if (!(init.strategy.grid() == problem.grid) || init.strategy.d() != d || init.strategy.K() != K)
    throw InvalidArgument("initial decision does not match the problem");
  if (init.phi_T.size() != d) throw InvalidArgument("initial phi_T has the wrong dimension");

  const std::vector<char> varies = varying_rows(ev);
  std::vector<std::size_t> cells;  // weight cells the optimizer moves
  for (std::size_t i = 0; i < d; ++i)
    if (varies[i])
      for (std::size_t n = 0; n < N; ++n) cells.push_back(i * N + n);

  auto project = [&](std::vector<double>& W, std::vector<double>& phi) {
    for (std::size_t c : cells) project_simplex({W.data() + c * K, K});
    project_phi(phi, alpha);
  };

  std::vector<double> W = init.strategy.data(), phi = init.phi_T;
  project(W, phi);
  std::vector<double> lambda(d, 0.0);
  double rho = opts.penalty_init;

  std::vector<double> gW, gphi, tW, tphi, tgW, tgphi, dW(W.size()), dphi(d), pW(W.size()), pphi(d);
  RegretEvaluator::Value val;
  auto eval = [&](const std::vector<double>& w, const std::vector<double>& p, std::vector<double>& gw, std::vector<double>& gp,
                  RegretEvaluator::Value& out) {
    try {
      out = ev.evaluate(w, p, lambda, rho, &gw, &gp);
      return std::isfinite(out.L);
    } catch (const IntegrationError&) {
      return false;
    }
  };

  // Projected step P(x - s*D^{-1}g) - x with D = h on weights, 1 on phi_T.
  auto projected_step = [&](double s, std::vector<double>& outW, std::vector<double>& outphi) {
    double sup = 0.0;
    for (std::size_t c : cells) {
      double* o = outW.data() + c * K;
      const double* x = W.data() + c * K;
      const double* g = gW.data() + c * K;
      for (std::size_t k = 0; k < K; ++k) o[k] = x[k] - s * g[k] / h;
      project_simplex({o, K});
      for (std::size_t k = 0; k < K; ++k) {
        o[k] -= x[k];
        sup = std::max(sup, std::fabs(o[k]));
      }
    }
    for (std::size_t i = 0; i < d; ++i) outphi[i] = phi[i] - s * gphi[i];
    project_phi(outphi, alpha);
    for (std::size_t i = 0; i < d; ++i) {
      outphi[i] -= phi[i];
      sup = std::max(sup, std::fabs(outphi[i]));
    }
    return sup;
  };

  RegretResult res;
  if (!eval(W, phi, gW, gphi, val)) throw IntegrationError("optimizer start point cannot be evaluated");
  double prev_gap = kInf;
  double stationarity = kInf;
  double best_J = kInf;  // best feasible point seen, after restoration
  std::vector<double> best_W, best_phi;
  std::size_t inner_total = 0, outer = 0;
  for (outer = 0; outer < opts.max_outer_iters; ++outer) {
    if (outer > 0 && !eval(W, phi, gW, gphi, val)) break;
    std::vector<double> history{val.L};
    double sigma = 1.0;
    {
      const double s0 = projected_step(1.0, dW, dphi);
      sigma = s0 > 0 ? std::clamp(1.0 / s0, opts.step_min, opts.step_max) : 1.0;
    }
    for (std::size_t it = 0; it < opts.max_inner_iters; ++it) {
      stationarity = projected_step(1.0, pW, pphi);
      if (stationarity <= opts.opt_tol) break;
      projected_step(sigma, dW, dphi);
      double slope = 0.0;
      for (std::size_t c : cells)
        for (std::size_t k = 0; k < K; ++k) slope += gW[c * K + k] * dW[c * K + k];
      for (std::size_t i = 0; i < d; ++i) slope += gphi[i] * dphi[i];
      if (!(slope < 0.0)) break;
      const double ref = *std::max_element(history.begin(), history.end());
      double t = 1.0;
      RegretEvaluator::Value tv;
      bool accepted = false;
      tW = W;
      tphi = phi;
      for (int ls = 0; ls < 60; ++ls) {
        for (std::size_t c : cells)
          for (std::size_t k = 0; k < K; ++k) tW[c * K + k] = W[c * K + k] + t * dW[c * K + k];
        for (std::size_t i = 0; i < d; ++i) tphi[i] = phi[i] + t * dphi[i];
        const bool ok = eval(tW, tphi, tgW, tgphi, tv);
        if (ok && tv.L <= ref + opts.armijo * t * slope) {
          accepted = true;
          break;
        }
        double next = 0.5 * t;
        if (ok) {
          const double denom = 2.0 * (tv.L - val.L - t * slope);
          if (denom > 0) {
            const double tq = -slope * t * t / denom;
            if (tq >= 0.1 * t && tq <= 0.9 * t) next = tq;
          }
        }
        t = next;
      }
      if (!accepted) break;
      double sts = 0.0, sty = 0.0;
      for (std::size_t c : cells) {
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t q = c * K + k;
          const double s = tW[q] - W[q];
          sts += h * s * s;
          sty += s * (tgW[q] - gW[q]);
        }
      }
      for (std::size_t i = 0; i < d; ++i) {
        const double s = tphi[i] - phi[i];
        sts += s * s;
        sty += s * (tgphi[i] - gphi[i]);
      }
      sigma = sty > 0 ? std::clamp(sts / sty, opts.step_min, opts.step_max) : opts.step_max;
      std::swap(W, tW);
      std::swap(phi, tphi);
      std::swap(gW, tgW);
      std::swap(gphi, tgphi);
      val = tv;
      history.push_back(val.L);
      if (history.size() > opts.nonmonotone_window) history.erase(history.begin());
      ++inner_total;
    }
    const double gap = val.gap;
    if (gap > opts.feasibility_tol && opts.restoration_iters > 0) {
      std::vector<double> rW = W;
      restore_feasibility(ev, cells, rW, phi, 0.5 * opts.feasibility_tol, opts.restoration_iters);
      RegretEvaluator::Value rv;
      if (eval(rW, phi, tgW, tgphi, rv) && rv.gap <= opts.feasibility_tol && rv.J < best_J) {
        best_J = rv.J;
        best_W = rW;
        best_phi = phi;
      }
    } else if (gap <= opts.feasibility_tol && val.J < best_J) {
      best_J = val.J;
      best_W = W;
      best_phi = phi;
    }
    if (gap <= opts.feasibility_tol && stationarity <= opts.opt_tol) {
      ++outer;
      break;
    }
    for (std::size_t i = 0; i < d; ++i) lambda[i] += rho * val.c[i];
    if (gap > 0.25 * prev_gap) rho = std::min(rho * opts.penalty_growth, opts.penalty_max);
    prev_gap = gap;
  }
  if (!best_W.empty() && !(val.gap <= opts.feasibility_tol && val.J <= best_J)) {
    W = best_W;
    phi = best_phi;
  }

  RandomizedStrategy nu(problem.grid, d, K);
  nu.data() = W;
  // Renormalise away rounding from the projections.
  for (std::size_t c = 0; c < d * N; ++c) {
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += nu.data()[c * K + k];
    for (std::size_t k = 0; k < K; ++k) nu.data()[c * K + k] /= s;
  }
  auto fin = ev.evaluate(nu.data(), phi, {}, 0.0);
  if (opts.purify) {
    // Near a classical solution the relaxed iterate mixes neighbouring
    // actions on switching steps; the grid-argmax strategy of its own value
    // flow removes that. A few rounds of the argmax map are tried, and a pure
    // candidate is kept when it is feasible and does not raise the J of a
    // feasible relaxed result.
    bool best_feasible = fin.gap <= opts.feasibility_tol;
    std::optional<RandomizedStrategy> chosen;
    RegretEvaluator::Value chosen_value = fin;
    for (int round = 0; round < 3; ++round) {
      RandomizedStrategy pure = argmax_strategy(ev.tables(), ev.m_flow(), ev.phi_flow());
      const auto pv = ev.evaluate(pure.data(), phi, {}, 0.0);
      if (pv.gap <= opts.feasibility_tol && (!best_feasible || pv.J <= chosen_value.J)) {
        best_feasible = true;
        chosen_value = pv;
        chosen = std::move(pure);
        if (pv.gap == 0.0) break;
      }
    }
    if (chosen) {
      nu = std::move(*chosen);
      fin = chosen_value;
    }
    fin = ev.evaluate(nu.data(), phi, {}, 0.0);
  }
  res.decision.strategy = std::move(nu);
  res.decision.phi_T = phi;
  res.m_flow = ev.m_flow();
  res.mu_flow = ev.mu_flow();
  res.phi_flow = ev.phi_flow();
  res.J = fin.J;
  res.terminal_gap = fin.gap;
  res.alpha = alpha;
  res.feasible = fin.gap <= opts.feasibility_tol;
  res.outer_iterations = outer;
  res.inner_iterations = inner_total;
  res.stationarity = stationarity;
  res.multiplier = lambda;
  return res;
}

namespace {

Decision start_decision(const ModelSpec& model, const PlanningProblem& problem, double alpha, const OptimizerSettings& opts,
                        const Decision* warm, std::size_t s) {
  if (s == 0 && warm) return *warm;
  return initial_decision(model, problem, alpha, opts.seed, s);
}

void run_gradient_check(const ModelSpec& model, const PlanningProblem& problem, double alpha, const OptimizerSettings& opts) {
  for (std::size_t s = 1; s <= 20; ++s) {
    const Decision at = initial_decision(model, problem, alpha, opts.seed, s);
    const auto rep = check_gradient(model, problem, at, 5, opts.seed + s);
    if (rep.tie_adjacent || rep.directions == 0) continue;
    if (rep.max_relative_error > 1e-4) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "gradient check failed: adjoint and finite differences differ by %.3g (relative)",
                    rep.max_relative_error);
      throw Error(buf);
    }
    return;
  }
}

RegretResult select_best(std::vector<RegretResult>& results) {
  const RegretResult* best = nullptr;
  for (const auto& r : results) {
    if (!r.feasible) continue;
    if (!best || r.J < best->J) best = &r;
  }
  if (best) return *best;
  const RegretResult* closest = &results.front();
  for (const auto& r : results)
    if (r.terminal_gap < closest->terminal_gap) closest = &r;
  char buf[200];
  std::snprintf(buf, sizeof buf, "no start reached the terminal constraint; best gap %.3g (start %zu)", closest->terminal_gap,
                closest->start);
  throw InfeasibleError(buf, *closest);
}

RegretResult solve_impl(const ModelSpec& model, const PlanningProblem& problem, double alpha, const OptimizerSettings& opts,
                        const Decision* warm, bool parallel) {
  if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
  problem.validate(model.d);
  if (opts.gradient_check) run_gradient_check(model, problem, alpha, opts);
  const std::size_t S = opts.n_starts;
  std::vector<RegretResult> results(S);
  std::vector<std::exception_ptr> errors(S);
  if (parallel) {
#pragma omp parallel
    {
      RegretEvaluator ev(model, problem);
#pragma omp for schedule(dynamic, 1)
      for (std::size_t s = 0; s < S; ++s) {
        try {
          results[s] = optimize_from(ev, start_decision(model, problem, alpha, opts, warm, s), alpha, opts);
          results[s].start = s;
        } catch (...) {
          errors[s] = std::current_exception();
        }
      }
    }
  } else {
    RegretEvaluator ev(model, problem);
    for (std::size_t s = 0; s < S; ++s) {
      try {
        results[s] = optimize_from(ev, start_decision(model, problem, alpha, opts, warm, s), alpha, opts);
        results[s].start = s;
      } catch (...) {
        errors[s] = std::current_exception();
      }
    }
  }
  std::vector<RegretResult> done;
  for (std::size_t s = 0; s < S; ++s)
    if (!errors[s]) done.push_back(std::move(results[s]));
  if (done.empty()) std::rethrow_exception(errors.front());
  return select_best(done);
}

}  // namespace

RegretResult solve_constrained(const ModelSpec& model, const PlanningProblem& problem, double alpha, const OptimizerSettings& opts,
                               const Decision* warm) {
  return solve_impl(model, problem, alpha, opts, warm, true);
}

RegretResult solve_constrained_serial(const ModelSpec& model, const PlanningProblem& problem, double alpha,
                                      const OptimizerSettings& opts, const Decision* warm) {
  return solve_impl(model, problem, alpha, opts, warm, false);
}

SequenceResult minimal_regret_sequence(const ModelSpec& model, const PlanningProblem& problem, const AlphaSchedule& schedule,
                                       const OptimizerSettings& opts) {
  SequenceResult seq;
  for (double alpha : schedule.radii()) {
    const RegretResult* prev = seq.results.empty() ? nullptr : &seq.results.back();
    RegretResult r;
    try {
      r = solve_constrained(model, problem, alpha, opts, prev ? &prev->decision : nullptr);
    } catch (const InfeasibleError& e) {
      r = e.best();
    }
    if (prev && prev->feasible && (!r.feasible || prev->J < r.J)) {
      RegretResult carried = *prev;
      carried.alpha = alpha;
      carried.warm_candidate = true;
      r = std::move(carried);
    }
    seq.results.push_back(std::move(r));
  }
  for (std::size_t n = 1; n < seq.results.size(); ++n)
    seq.metric_gaps.push_back(strategy_metric(seq.results[n - 1].decision.strategy, seq.results[n].decision.strategy,
                                              model.actions, opts.metric_terms));
  seq.cauchy_tail = !seq.metric_gaps.empty() && seq.metric_gaps.back() <= opts.cluster_tol;
  return seq;
}

// ---------------------------------------------------------------------------
// Strategy metric

double strategy_metric(const RandomizedStrategy& a, const RandomizedStrategy& b, const ActionGrid& actions, std::size_t L) {
  if (!(a.grid() == b.grid())) throw InvalidArgument("strategies use different time grids");
  if (a.d() != b.d() || a.K() != b.K()) throw InvalidArgument("strategies have different shapes");
  if (actions.size() != a.K()) throw InvalidArgument("action grid does not match the strategies");
  if (L < 1) throw InvalidArgument("strategy metric needs at least one test function");
  const TimeGrid& grid = a.grid();
  const std::size_t d = a.d(), K = a.K(), N = grid.N;
  const double T = grid.T;
  const double umin = actions[0], umax = actions[K - 1];

  struct Term {
    std::size_t ft, fu;
    bool sin_t, sin_u;
  };
  std::vector<Term> family;
  for (std::size_t s = 0; family.size() < L; ++s) {
    for (std::size_t ft = 0; ft <= s && family.size() < L; ++ft) {
      const std::size_t fu = s - ft;
      const Term cand[4] = {{ft, fu, false, false}, {ft, fu, true, false}, {ft, fu, false, true}, {ft, fu, true, true}};
      for (const Term& c : cand) {
        if ((c.sin_t && ft == 0) || (c.sin_u && fu == 0)) continue;
        if (family.size() < L) family.push_back(c);
      }
    }
  }

  std::vector<double> diff(a.data().size());
  for (std::size_t q = 0; q < diff.size(); ++q) diff[q] = a.data()[q] - b.data()[q];
  std::vector<double> tint(N), uval(K);
  double total = 0.0;
  double weight = 1.0;
  for (const Term& term : family) {
    weight *= 0.5;
    const double omega = 2.0 * std::numbers::pi * static_cast<double>(term.ft) / T;
    for (std::size_t n = 0; n < N; ++n) {
      const double t0 = grid.t(n), t1 = grid.t(n + 1);
      if (term.ft == 0) tint[n] = t1 - t0;
      else if (term.sin_t) tint[n] = (std::cos(omega * t0) - std::cos(omega * t1)) / omega;
      else tint[n] = (std::sin(omega * t1) - std::sin(omega * t0)) / omega;
    }
    for (std::size_t k = 0; k < K; ++k) {
      const double v = umax > umin ? (actions[k] - umin) / (umax - umin) : 0.0;
      const double arg = 2.0 * std::numbers::pi * static_cast<double>(term.fu) * v;
      uval[k] = term.sin_u ? std::sin(arg) : std::cos(arg);
    }
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* w = diff.data() + (i * N + n) * K;
        double inner = 0.0;
        for (std::size_t k = 0; k < K; ++k) inner += w[k] * uval[k];
        s += tint[n] * inner;
      }
      total += weight * std::fabs(s);
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json result_to_json(const RegretResult& r) {
  nlohmann::json j;
  j["alpha"] = r.alpha;
  j["J"] = r.J;
  j["terminal_gap"] = r.terminal_gap;
  j["feasible"] = r.feasible;
  j["warm_candidate"] = r.warm_candidate;
  j["start"] = r.start;
  j["outer_iterations"] = r.outer_iterations;
  j["inner_iterations"] = r.inner_iterations;
  j["stationarity"] = r.stationarity;
  j["phi_T"] = r.decision.phi_T;
  if (!r.m_flow.values.empty()) {
    const auto mT = r.m_flow.final();
    j["m_T"] = std::vector<double>(mT.begin(), mT.end());
  }
  j["multiplier"] = r.multiplier;
  return j;
}

}  // namespace

std::string result_json(const RegretResult& r, int indent) { return result_to_json(r).dump(indent); }

std::string sequence_json(const SequenceResult& seq, int indent) {
  nlohmann::json j;
  j["results"] = nlohmann::json::array();
  for (const auto& r : seq.results) j["results"].push_back(result_to_json(r));
  j["metric_gaps"] = seq.metric_gaps;
  j["cauchy_tail"] = seq.cauchy_tail;
  return j.dump(indent);
}

}  // namespace mfgplan
