#include "mfgplan/model.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <sstream>

#include "mfgplan/error.hpp"

namespace mfgplan {

// ---------------------------------------------------------------------------
// ActionGrid

ActionGrid ActionGrid::explicit_list(std::vector<double> points) {
  if (points.empty()) throw InvalidArgument("action list is empty");
  std::sort(points.begin(), points.end());
  for (std::size_t k = 1; k < points.size(); ++k) {
    if (points[k] == points[k - 1]) throw InvalidArgument("action list contains duplicate value");
  }
  ActionGrid g;
  g.points_ = std::move(points);
  g.source_ = Source::Explicit;
  return g;
}

ActionGrid ActionGrid::interval(double lo, double hi, std::size_t K) {
  if (K < 2) throw InvalidArgument("interval action grid needs K >= 2");
  if (!(hi > lo)) throw InvalidArgument("interval action grid needs b > a");
  ActionGrid g;
  g.points_.resize(K);
  for (std::size_t k = 0; k < K; ++k) g.points_[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(K - 1);
  g.points_.back() = hi;
  g.source_ = Source::Interval;
  return g;
}

double ActionGrid::min() const { return points_.front(); }
double ActionGrid::max() const { return points_.back(); }

std::size_t ActionGrid::nearest(double u) const {
  std::size_t best = 0;
  double dist = std::fabs(points_[0] - u);
  for (std::size_t k = 1; k < points_.size(); ++k) {
    const double dk = std::fabs(points_[k] - u);
    if (dk < dist) {
      dist = dk;
      best = k;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// ModelSpec

bool ModelSpec::q_uses_m() const {
  return std::any_of(Q.begin(), Q.end(), [](const Expression& e) { return e.uses_m(); });
}

bool ModelSpec::g_uses_m() const {
  return std::any_of(g.begin(), g.end(), [](const Expression& e) { return e.uses_m(); });
}

bool ModelSpec::uses_t() const {
  auto ut = [](const Expression& e) { return e.uses_t(); };
  return std::any_of(Q.begin(), Q.end(), ut) || std::any_of(g.begin(), g.end(), ut);
}

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Splits "a, b, c" at top-level commas, returning each piece with its offset.
std::vector<std::pair<std::string, std::size_t>> split_args(std::string_view s, std::size_t offset) {
  std::vector<std::pair<std::string, std::size_t>> out;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || (s[i] == ',' && depth == 0)) {
      out.emplace_back(std::string(s.substr(start, i - start)), offset + start);
      start = i + 1;
    } else if (s[i] == '(') {
      ++depth;
    } else if (s[i] == ')') {
      --depth;
    }
  }
  return out;
}

Expression parse_at(std::string_view text, std::size_t offset, const SymbolTable& symbols, int line) {
  try {
    return parse_expression(text, symbols);
  } catch (const ParseError& e) {
    std::string msg = e.what();
    if (auto p = msg.find(": "); p != std::string::npos && msg.rfind("line", 0) == 0) msg = msg.substr(p + 2);
    throw ParseError(msg, line, static_cast<int>(offset) + e.column());
  }
}

double parse_constant_at(std::string_view text, std::size_t offset, int line) {
  const Expression e = parse_at(text, offset, SymbolTable::constants(), line);
  try {
    return e.eval({});
  } catch (const EvalError& err) {
    throw ParseError(err.what(), line, static_cast<int>(offset) + 1);
  }
}

// Parses "[i]" or "[i][j]" suffixes; returns 1-based indices.
std::vector<std::size_t> parse_indices(std::string_view key, std::size_t start, int line, std::size_t key_offset) {
  std::vector<std::size_t> idx;
  std::size_t p = start;
  while (p < key.size()) {
    if (key[p] != '[') throw ParseError("malformed index in '" + std::string(key) + "'", line, static_cast<int>(key_offset + p) + 1);
    const std::size_t close = key.find(']', p);
    if (close == std::string_view::npos) throw ParseError("missing ']'", line, static_cast<int>(key_offset + p) + 1);
    const std::string num = trim(key.substr(p + 1, close - p - 1));
    if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos)
      throw ParseError("index must be a positive integer", line, static_cast<int>(key_offset + p) + 2);
    idx.push_back(std::stoul(num));
    p = close + 1;
  }
  return idx;
}

ExprNodePtr auto_diagonal(const std::vector<Expression>& Q, std::size_t d, std::size_t i) {
  ExprNodePtr sum;
  for (std::size_t j = 0; j < d; ++j) {
    if (j == i) continue;
    const auto& e = Q[i * d + j];
    if (e.root().op == ExprOp::Const && e.root().value == 0.0) continue;
    sum = sum ? make_binary(ExprOp::Add, sum, e.root_ptr()) : e.root_ptr();
  }
  if (!sum) return make_const(0.0);
  return make_unary(ExprOp::Neg, sum);
}

bool is_zero_literal(const Expression& e) { return e.root().op == ExprOp::Const && e.root().value == 0.0; }

std::string witness(double t, std::span<const double> m, double u) {
  std::ostringstream os;
  os.precision(17);
  os << "(t=" << t << ", m=(";
  for (std::size_t i = 0; i < m.size(); ++i) os << (i ? ", " : "") << m[i];
  os << "), u=" << u << ")";
  return os.str();
}

void check_kolmogorov_row(const double* row, std::size_t d, std::size_t i, double t, std::span<const double> m, double u) {
  double sum = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    sum += row[j];
    if (j != i && row[j] < -kKolmogorovTol) {
      throw KolmogorovError("negative off-diagonal Q[" + std::to_string(i + 1) + "][" + std::to_string(j + 1) +
                            "] = " + fmt(row[j]) + " at " + witness(t, m, u));
    }
  }
  if (std::fabs(sum) > kKolmogorovTol) {
    throw KolmogorovError("row " + std::to_string(i + 1) + " of Q sums to " + fmt(sum) + " at " + witness(t, m, u));
  }
}

}  // namespace

ModelSpec parse_model(std::string_view text) {
  ModelSpec model;
  std::optional<std::size_t> d;
  std::optional<double> T;
  std::optional<ActionGrid> actions;
  std::map<std::pair<std::size_t, std::size_t>, Expression> q_entries;
  std::vector<bool> auto_diag;
  std::map<std::size_t, Expression> g_entries, g0_entries, g1_entries, sigma_entries;

  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view raw = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    if (trim(raw).empty()) {
      if (eol == text.size()) break;
      continue;
    }
    const std::size_t eq = raw.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no, 1);
    std::size_t key_start = 0;
    while (key_start < eq && std::isspace(static_cast<unsigned char>(raw[key_start]))) ++key_start;
    const std::string key = trim(raw.substr(0, eq));
    std::size_t value_start = eq + 1;
    while (value_start < raw.size() && std::isspace(static_cast<unsigned char>(raw[value_start]))) ++value_start;
    const std::string value = trim(raw.substr(eq + 1));
    const int value_col = static_cast<int>(value_start) + 1;
    if (value.empty()) throw ParseError("missing value for '" + key + "'", line_no, value_col);

    if (key == "d") {
      if (value.find_first_not_of("0123456789") != std::string::npos || std::stoul(value) < 1)
        throw ParseError("d must be a positive integer", line_no, value_col);
      if (d) throw ParseError("d declared twice", line_no, 1);
      d = std::stoul(value);
      auto_diag.assign(*d, false);
      continue;
    }
    if (key == "T") {
      T = parse_constant_at(value, value_start, line_no);
      if (!(*T > 0.0)) throw ParseError("T must be positive", line_no, value_col);
      continue;
    }
    if (key == "actions") {
      try {
        if (value.front() == '[') {
          if (value.back() != ']') throw ParseError("expected ']' closing the action list", line_no, value_col + static_cast<int>(value.size()) - 1);
          std::vector<double> pts;
          for (const auto& [piece, off] : split_args(std::string_view(value).substr(1, value.size() - 2), value_start + 1)) {
            const std::string p = trim(piece);
            if (p.empty()) throw ParseError("empty action value", line_no, static_cast<int>(off) + 1);
            pts.push_back(parse_constant_at(p, off + (piece.find(p)), line_no));
          }
          actions = ActionGrid::explicit_list(std::move(pts));
        } else if (value.rfind("interval", 0) == 0) {
          const auto open = value.find('(');
          if (open == std::string::npos || value.back() != ')') throw ParseError("expected interval(a, b, K)", line_no, value_col);
          const auto args = split_args(std::string_view(value).substr(open + 1, value.size() - open - 2), value_start + open + 1);
          if (args.size() != 3) throw ParseError("interval() takes 3 arguments", line_no, value_col);
          const double a = parse_constant_at(trim(args[0].first), args[0].second, line_no);
          const double b = parse_constant_at(trim(args[1].first), args[1].second, line_no);
          const double K = parse_constant_at(trim(args[2].first), args[2].second, line_no);
          if (K != std::floor(K) || K < 2) throw ParseError("interval K must be an integer >= 2", line_no, static_cast<int>(args[2].second) + 1);
          actions = ActionGrid::interval(a, b, static_cast<std::size_t>(K));
        } else {
          throw ParseError("actions must be [v1, ...] or interval(a, b, K)", line_no, value_col);
        }
      } catch (const InvalidArgument& e) {
        throw ParseError(e.what(), line_no, value_col);
      }
      continue;
    }

    // Indexed keys need d.
    const std::size_t bracket = key.find('[');
    const std::string base = key.substr(0, bracket);
    if (base != "Q" && base != "g" && base != "g0" && base != "g1" && base != "sigma")
      throw ParseError("unknown key '" + key + "'", line_no, static_cast<int>(key_start) + 1);
    if (bracket == std::string::npos) throw ParseError("'" + base + "' needs an index", line_no, static_cast<int>(key_start) + 1);
    if (!d) throw ParseError("'" + key + "' appears before 'd ='", line_no, static_cast<int>(key_start) + 1);
    const auto idx = parse_indices(key, bracket, line_no, key_start);
    const std::size_t want = base == "Q" ? 2 : 1;
    if (idx.size() != want) throw ParseError("'" + base + "' takes " + std::to_string(want) + " index(es)", line_no, static_cast<int>(key_start) + 1);
    for (std::size_t v : idx) {
      if (v < 1 || v > *d)
        throw ParseError("dimension mismatch: index " + std::to_string(v) + " in '" + key + "' outside 1.." + std::to_string(*d), line_no,
                         static_cast<int>(key_start) + 1);
    }
    auto duplicate = [&] { throw ParseError("'" + key + "' declared twice", line_no, static_cast<int>(key_start) + 1); };

    if (base == "Q") {
      const auto ij = std::make_pair(idx[0] - 1, idx[1] - 1);
      if (q_entries.count(ij) || (ij.first == ij.second && auto_diag[ij.first])) duplicate();
      if (value == "auto") {
        if (ij.first != ij.second) throw ParseError("'auto' is only allowed on the diagonal", line_no, value_col);
        auto_diag[ij.first] = true;
      } else {
        q_entries.emplace(ij, parse_at(value, value_start, SymbolTable::full(*d), line_no));
      }
    } else {
      SymbolTable sym = SymbolTable::full(*d);
      auto* target = &g_entries;
      if (base == "g0") {
        sym = SymbolTable{true, true, 0};
        target = &g0_entries;
      } else if (base == "g1") {
        sym = SymbolTable{true, false, *d};
        target = &g1_entries;
      } else if (base == "sigma") {
        sym = SymbolTable{false, false, *d};
        target = &sigma_entries;
      }
      if (target->count(idx[0] - 1)) duplicate();
      target->emplace(idx[0] - 1, parse_at(value, value_start, sym, line_no));
    }
    if (eol == text.size()) break;
  }

  if (!d) throw ParseError("missing 'd = <int>'", 0, 0);
  if (!T) throw ParseError("missing 'T = <real>'", 0, 0);
  if (!actions) throw ParseError("missing 'actions = ...'", 0, 0);

  model.d = *d;
  model.T = *T;
  model.actions = *actions;
  model.auto_diagonal = auto_diag;
  model.Q.assign(model.d * model.d, Expression());
  for (const auto& [ij, e] : q_entries) model.Q[ij.first * model.d + ij.second] = e;
  for (std::size_t i = 0; i < model.d; ++i) {
    if (auto_diag[i]) model.Q[i * model.d + i] = Expression(auto_diagonal(model.Q, model.d, i));
  }

  const bool split = !g0_entries.empty() || !g1_entries.empty();
  if (split && !g_entries.empty()) throw ParseError("running payoff given both as g[i] and as g0/g1 parts", 0, 0);
  if (split) {
    if (g0_entries.size() != model.d || g1_entries.size() != model.d)
      throw ParseError("dimension mismatch: split payoff needs g0[1..d] and g1[1..d] (d = " + std::to_string(model.d) + ")", 0, 0);
    SplitPayoff sp;
    for (std::size_t i = 0; i < model.d; ++i) {
      sp.g0.push_back(g0_entries.at(i));
      sp.g1.push_back(g1_entries.at(i));
      model.g.emplace_back(make_binary(ExprOp::Add, sp.g0.back().root_ptr(), sp.g1.back().root_ptr()));
    }
    model.split = std::move(sp);
  } else {
    if (g_entries.size() != model.d)
      throw ParseError("dimension mismatch: g has " + std::to_string(g_entries.size()) + " of " + std::to_string(model.d) + " entries", 0, 0);
    for (std::size_t i = 0; i < model.d; ++i) model.g.push_back(g_entries.at(i));
  }
  if (!sigma_entries.empty()) {
    if (sigma_entries.size() != model.d)
      throw ParseError("dimension mismatch: sigma has " + std::to_string(sigma_entries.size()) + " of " + std::to_string(model.d) + " entries", 0, 0);
    std::vector<Expression> s;
    for (std::size_t i = 0; i < model.d; ++i) s.push_back(sigma_entries.at(i));
    model.sigma = std::move(s);
  }
  return model;
}

std::string serialize_model(const ModelSpec& model) {
  std::ostringstream os;
  if (!model.name.empty()) os << "# " << model.name << "\n";
  os << "d = " << model.d << "\n";
  os << "T = " << fmt(model.T) << "\n";
  const auto& pts = model.actions.points();
  if (model.actions.source() == ActionGrid::Source::Interval) {
    os << "actions = interval(" << fmt(pts.front()) << ", " << fmt(pts.back()) << ", " << pts.size() << ")\n";
  } else {
    os << "actions = [";
    for (std::size_t k = 0; k < pts.size(); ++k) os << (k ? ", " : "") << fmt(pts[k]);
    os << "]\n";
  }
  for (std::size_t i = 0; i < model.d; ++i) {
    for (std::size_t j = 0; j < model.d; ++j) {
      if (i == j && model.auto_diagonal[i]) {
        os << "Q[" << i + 1 << "][" << j + 1 << "] = auto\n";
        continue;
      }
      const auto& e = model.q(i, j);
      if (is_zero_literal(e)) continue;
      os << "Q[" << i + 1 << "][" << j + 1 << "] = " << e.to_string() << "\n";
    }
  }
  if (model.split) {
    for (std::size_t i = 0; i < model.d; ++i) os << "g0[" << i + 1 << "] = " << model.split->g0[i].to_string() << "\n";
    for (std::size_t i = 0; i < model.d; ++i) os << "g1[" << i + 1 << "] = " << model.split->g1[i].to_string() << "\n";
  } else {
    for (std::size_t i = 0; i < model.d; ++i) os << "g[" << i + 1 << "] = " << model.g[i].to_string() << "\n";
  }
  if (model.sigma) {
    for (std::size_t i = 0; i < model.d; ++i) os << "sigma[" << i + 1 << "] = " << (*model.sigma)[i].to_string() << "\n";
  }
  return os.str();
}

bool same_model(const ModelSpec& a, const ModelSpec& b) {
  if (a.d != b.d || a.T != b.T || !(a.actions == b.actions)) return false;
  if (a.Q != b.Q || a.g != b.g || a.auto_diagonal != b.auto_diagonal) return false;
  if (a.split.has_value() != b.split.has_value()) return false;
  if (a.split && (a.split->g0 != b.split->g0 || a.split->g1 != b.split->g1)) return false;
  if (a.sigma.has_value() != b.sigma.has_value()) return false;
  if (a.sigma && *a.sigma != *b.sigma) return false;
  return true;
}

Matrix eval_Q(const ModelSpec& model, double t, std::span<const double> m, double u) {
  const std::size_t d = model.d;
  Matrix q(d, d);
  const EvalEnv env{t, u, m};
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) q(i, j) = model.q(i, j).eval(env);
    check_kolmogorov_row(&q.data[i * d], d, i, t, m, u);
  }
  return q;
}

std::vector<double> eval_g(const ModelSpec& model, double t, std::span<const double> m, double u) {
  std::vector<double> out(model.d);
  const EvalEnv env{t, u, m};
  for (std::size_t i = 0; i < model.d; ++i) out[i] = model.g[i].eval(env);
  return out;
}

std::vector<double> eval_sigma(const ModelSpec& model, std::span<const double> m) {
  if (!model.sigma) throw InvalidArgument("model declares no terminal payoff sigma");
  std::vector<double> out(model.d);
  const EvalEnv env{0.0, 0.0, m};
  for (std::size_t i = 0; i < model.d; ++i) out[i] = (*model.sigma)[i].eval(env);
  return out;
}

void fill_action_table(const ModelSpec& model, double t, std::span<const double> m, ActionTable& out) {
  const std::size_t d = model.d;
  const std::size_t K = model.actions.size();
  out.d = d;
  out.K = K;
  out.q.resize(K * d * d);
  out.g.resize(K * d);
  out.row_varies.assign(d, 0);
  EvalEnv env{t, model.actions[0], m};
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const Expression& e = model.q(i, j);
      if (e.uses_u() && K > 1) out.row_varies[i] = 1;
      if (!e.uses_u()) {
        const double v = e.eval(env);
        for (std::size_t k = 0; k < K; ++k) out.q[(k * d + i) * d + j] = v;
      } else {
        for (std::size_t k = 0; k < K; ++k) {
          env.u = model.actions[k];
          out.q[(k * d + i) * d + j] = e.eval(env);
        }
      }
    }
    const Expression& ge = model.g[i];
    if (ge.uses_u() && K > 1) out.row_varies[i] = 1;
    if (!ge.uses_u()) {
      const double v = ge.eval(env);
      for (std::size_t k = 0; k < K; ++k) out.g[k * d + i] = v;
    } else {
      for (std::size_t k = 0; k < K; ++k) {
        env.u = model.actions[k];
        out.g[k * d + i] = ge.eval(env);
      }
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < d; ++i) check_kolmogorov_row(&out.q[(k * d + i) * d], d, i, t, m, model.actions[k]);
  }
}

void fill_action_table_grad(const ModelSpec& model, double t, std::span<const double> m, ActionTableGrad& out) {
  const std::size_t d = model.d;
  const std::size_t K = model.actions.size();
  out.d = d;
  out.K = K;
  out.dq.assign(K * d * d * d, 0.0);
  out.dg.assign(K * d * d, 0.0);
  std::vector<double> grad(d);
  EvalEnv env{t, model.actions[0], m};
  auto fill = [&](const Expression& e, auto&& index) {
    if (!e.uses_m()) return;
    if (!e.uses_u()) {
      e.eval_gradient_m(env, grad);
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t l = 0; l < d; ++l) index(k, l) = grad[l];
      return;
    }
    for (std::size_t k = 0; k < K; ++k) {
      env.u = model.actions[k];
      e.eval_gradient_m(env, grad);
      for (std::size_t l = 0; l < d; ++l) index(k, l) = grad[l];
    }
  };
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      fill(model.q(i, j), [&](std::size_t k, std::size_t l) -> double& { return out.dq[((k * d + i) * d + j) * d + l]; });
    }
    fill(model.g[i], [&](std::size_t k, std::size_t l) -> double& { return out.dg[(k * d + i) * d + l]; });
  }
}

// ---------------------------------------------------------------------------
// Validation

namespace {

std::vector<double> random_simplex(std::size_t d, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> m(d);
  double s = 0.0;
  for (auto& x : m) s += (x = e(rng));
  for (auto& x : m) x /= s;
  return m;
}

double q_distance(const ModelSpec& model, double t, double u, std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  const EvalEnv ea{t, u, a}, eb{t, u, b};
  for (const auto& e : model.Q) {
    if (!e.uses_m()) continue;
    worst = std::max(worst, std::fabs(e.eval(ea) - e.eval(eb)));
  }
  return worst;
}

double l1(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return s;
}

}  // namespace

ValidationReport validate_model(const ModelSpec& model, std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw InvalidArgument("validate_model needs n_samples >= 1");
  ValidationReport rep;
  rep.n_samples = n_samples;
  rep.min_off_diagonal = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, model.actions.size() - 1);
  const std::size_t d = model.d;
  const bool q_m = model.q_uses_m();
  // Bisection depth grows with the sample budget, so a jump shows up as a
  // ratio that keeps doubling while a Lipschitz entry stays bounded.
  const std::size_t depth = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(n_samples) + 1.0))) + 10;

  for (std::size_t s = 0; s < n_samples; ++s) {
    const double t = unit(rng) * model.T;
    const double u = model.actions[pick(rng)];
    const auto m = random_simplex(d, rng);
    const EvalEnv env{t, u, m};
    try {
      for (std::size_t i = 0; i < d; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double v = model.q(i, j).eval(env);
          sum += v;
          if (j != i) {
            rep.min_off_diagonal = std::min(rep.min_off_diagonal, v);
            if (v < -kKolmogorovTol) {
              rep.kolmogorov_ok = false;
              if (rep.violations.size() < 8)
                rep.violations.push_back("negative off-diagonal Q[" + std::to_string(i + 1) + "][" + std::to_string(j + 1) + "] = " + fmt(v) +
                                         " at " + witness(t, m, u));
            }
          }
        }
        rep.max_row_sum_deviation = std::max(rep.max_row_sum_deviation, std::fabs(sum));
        if (std::fabs(sum) > kKolmogorovTol) {
          rep.kolmogorov_ok = false;
          if (rep.violations.size() < 8)
            rep.violations.push_back("row " + std::to_string(i + 1) + " sums to " + fmt(sum) + " at " + witness(t, m, u));
        }
      }
    } catch (const EvalError& e) {
      rep.kolmogorov_ok = false;
      if (rep.violations.size() < 8) rep.violations.push_back(std::string(e.what()) + " at " + witness(t, m, u));
      continue;
    }

    if (!q_m) continue;
    auto a = m;
    auto b = random_simplex(d, rng);
    // coarse pair: 10% of the way towards another random point
    for (std::size_t i = 0; i < d; ++i) b[i] = 0.9 * a[i] + 0.1 * b[i];
    try {
      double diff = q_distance(model, t, u, a, b);
      double dist = l1(a, b);
      if (dist <= 0.0) continue;
      rep.lipschitz_m_coarse = std::max(rep.lipschitz_m_coarse, diff / dist);
      if (diff == 0.0) continue;
      std::vector<double> mid(d);
      for (std::size_t k = 0; k < depth; ++k) {
        for (std::size_t i = 0; i < d; ++i) mid[i] = 0.5 * (a[i] + b[i]);
        const double left = q_distance(model, t, u, a, mid);
        const double right = q_distance(model, t, u, mid, b);
        if (left >= right) b = mid;
        else a = mid;
        diff = std::max(left, right);
        dist = l1(a, b);
        if (dist <= 0.0) break;
        rep.lipschitz_m = std::max(rep.lipschitz_m, diff / dist);
      }
    } catch (const EvalError&) {
    }
  }
  rep.lipschitz_m = std::max(rep.lipschitz_m, rep.lipschitz_m_coarse);
  rep.discontinuity_suspected = rep.lipschitz_m > 100.0 * std::max(rep.lipschitz_m_coarse, 1e-12) && rep.lipschitz_m > 1e3;
  if (!std::isfinite(rep.min_off_diagonal)) rep.min_off_diagonal = 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Built-in models

namespace {

std::string section4_text(std::size_t K, bool half) {
  std::ostringstream os;
  os << "# three-state model whose planning problem has no classical solution\n"
     << "d = 3\nT = 1\n"
     << "actions = interval(0, 1, " << K << ")\n"
     << "Q[1][1] = auto\n"
     << "Q[1][2] = u\n"
     << "Q[2][2] = auto\n"
     << "Q[2][3] = if(t < 1/3, 1, if(t < 2/3, -3*t + 2, 0))\n"
     << (half ? "g0[1] = -u^2/2\n" : "g0[1] = -u^2\n")
     << "g0[2] = 0\ng0[3] = 0\n"
     << "g1[1] = 0\ng1[2] = 0\ng1[3] = 0\n";
  return os.str();
}

}  // namespace

std::vector<std::string> builtin_model_names() {
  return {"section4", "section4-half", "zero", "two-state", "monotone2", "crowd2", "coupled3"};
}

std::string builtin_model_text(std::string_view name, std::size_t K) {
  if (name == "section4") return section4_text(K ? K : 101, false);
  if (name == "section4-half") return section4_text(K ? K : 101, true);
  if (name == "zero") {
    return "# no transitions, no running payoff\n"
           "d = 2\nT = 1\nactions = interval(0, 1, " + std::to_string(K ? K : 3) + ")\n"
           "g0[1] = 0\ng0[2] = 0\ng1[1] = 0\ng1[2] = 0\n"
           "sigma[1] = 1\nsigma[2] = -1\n";
  }
  if (name == "two-state") {
    return "# leave state 1 at rate u; reward for ending in state 2\n"
           "d = 2\nT = 1\nactions = [0, 1]\n"
           "Q[1][1] = auto\nQ[1][2] = u\n"
           "g[1] = 0\ng[2] = 0\n"
           "sigma[1] = 0\nsigma[2] = 1\n";
  }
  if (name == "monotone2") {
    return "# quadratic control cost, crowd-averse (strictly monotone) coupling\n"
           "d = 2\nT = 1\nactions = interval(0, 1, " + std::to_string(K ? K : 101) + ")\n"
           "Q[1][1] = auto\nQ[1][2] = u\n"
           "Q[2][1] = 0.5\nQ[2][2] = auto\n"
           "g0[1] = -u^2/2\ng0[2] = 0\n"
           "g1[1] = -m1\ng1[2] = -m2\n"
           "sigma[1] = 0\nsigma[2] = 0.5\n";
  }
  if (name == "crowd2") {
    return "# bang-bang switching with strong crowd aversion\n"
           "d = 2\nT = 1\nactions = [0, 1]\n"
           "Q[1][1] = auto\nQ[1][2] = 3*u\n"
           "Q[2][1] = 3*u\nQ[2][2] = auto\n"
           "g0[1] = 0\ng0[2] = 0\n"
           "g1[1] = -4*m1\ng1[2] = -4*m2\n"
           "sigma[1] = 0\nsigma[2] = 0\n";
  }
  if (name == "coupled3") {
    return "# three states, rates and payoffs depending on t, m and u\n"
           "d = 3\nT = 1\nactions = interval(0, 1, " + std::to_string(K ? K : 5) + ")\n"
           "Q[1][1] = auto\nQ[1][2] = u*(1 - m1) + 0.2\nQ[1][3] = 0.1*m3\n"
           "Q[2][1] = 0.3 + 0.2*t*m2\nQ[2][2] = auto\nQ[2][3] = 0.5*u + 0.4*m1\n"
           "Q[3][1] = 0.25 + 0.5*u*m2\nQ[3][3] = auto\n"
           "g[1] = -u^2/2 + 0.5*m2 - 0.3*m1*m1\n"
           "g[2] = -0.4*u^2 - m2 + 0.2*t\n"
           "g[3] = -0.6*u^2 + 0.8*u - m3*m3\n"
           "sigma[1] = 0.2\nsigma[2] = -0.1\nsigma[3] = 0\n";
  }
  throw InvalidArgument("unknown built-in model '" + std::string(name) + "'");
}

ModelSpec builtin_model(std::string_view name, std::size_t K) {
  ModelSpec m = parse_model(builtin_model_text(name, K));
  m.name = std::string(name);
  return m;
}

ModelSpec builtin_example_section4(std::size_t K, bool half_cost) {
  return builtin_model(half_cost ? "section4-half" : "section4", K);
}

namespace section4 {

std::vector<double> m0() { return {1.0, 0.0, 0.0}; }

std::vector<double> mT() {
  const double e = std::exp(-1.0 / 3.0);
  return {e, 1.0 - e, 0.0};
}

std::vector<double> mT_printed() {
  const double e = std::exp(-1.0 / 3.0);
  return {1.0 - e, e, 0.0};
}

double rho(double t) {
  if (t < 1.0 / 3.0) return 1.0;
  if (t < 2.0 / 3.0) return -3.0 * t + 2.0;
  return 0.0;
}

double utilde(double t) { return t < kSwitchTime ? 0.0 : 1.0; }

}  // namespace section4

}  // namespace mfgplan
