#include "mfgplan/expression.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>

#include "mfgplan/error.hpp"

namespace mfgplan {

bool operator==(const ExprNode& a, const ExprNode& b) {
  if (a.op != b.op || a.args.size() != b.args.size()) return false;
  if (a.op == ExprOp::Const && !(a.value == b.value)) return false;
  if (a.op == ExprOp::VarM && a.index != b.index) return false;
  for (std::size_t i = 0; i < a.args.size(); ++i) {
    if (!(*a.args[i] == *b.args[i])) return false;
  }
  return true;
}

ExprNodePtr make_const(double value) {
  auto n = std::make_shared<ExprNode>();
  n->op = ExprOp::Const;
  n->value = value;
  return n;
}

ExprNodePtr make_unary(ExprOp op, ExprNodePtr a) {
  auto n = std::make_shared<ExprNode>();
  n->op = op;
  n->args = {std::move(a)};
  return n;
}

ExprNodePtr make_binary(ExprOp op, ExprNodePtr a, ExprNodePtr b) {
  auto n = std::make_shared<ExprNode>();
  n->op = op;
  n->args = {std::move(a), std::move(b)};
  return n;
}

namespace {

ExprNodePtr make_var(ExprOp op, std::size_t index = 0) {
  auto n = std::make_shared<ExprNode>();
  n->op = op;
  n->index = index;
  return n;
}

ExprNodePtr make_if(ExprNodePtr c, ExprNodePtr a, ExprNodePtr b) {
  auto n = std::make_shared<ExprNode>();
  n->op = ExprOp::If;
  n->args = {std::move(c), std::move(a), std::move(b)};
  return n;
}

// Shortest text that reads back to the same double.
std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

const char* binary_symbol(ExprOp op) {
  switch (op) {
    case ExprOp::Add: return "+";
    case ExprOp::Sub: return "-";
    case ExprOp::Mul: return "*";
    case ExprOp::Div: return "/";
    case ExprOp::Pow: return "^";
    case ExprOp::Lt: return "<";
    case ExprOp::Le: return "<=";
    case ExprOp::Eq: return "=";
    case ExprOp::Ge: return ">=";
    case ExprOp::Gt: return ">";
    default: return nullptr;
  }
}

// ---------------------------------------------------------------------------
// Parser

class Parser {
 public:
  Parser(std::string_view text, const SymbolTable& symbols) : text_(text), symbols_(symbols) {}

  ExprNodePtr parse() {
    auto e = parse_comparison();
    skip_ws();
    if (pos_ < text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return e;
  }

 private:
  std::string_view text_;
  const SymbolTable& symbols_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw ParseError(msg, 0, static_cast<int>(at) + 1);
  }
  [[noreturn]] void fail(const std::string& msg) const { fail(msg, pos_); }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(std::string_view tok) {
    skip_ws();
    if (text_.substr(pos_, tok.size()) == tok) {
      pos_ += tok.size();
      return true;
    }
    return false;
  }

  void expect(char c) {
    skip_ws();
    if (pos_ >= text_.size()) fail(std::string("expected '") + c + "' but reached end of expression");
    if (text_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  ExprNodePtr parse_comparison() {
    auto lhs = parse_additive();
    skip_ws();
    ExprOp op;
    if (accept("<=")) op = ExprOp::Le;
    else if (accept(">=")) op = ExprOp::Ge;
    else if (accept("==")) op = ExprOp::Eq;
    else if (accept("<")) op = ExprOp::Lt;
    else if (accept(">")) op = ExprOp::Gt;
    else if (accept("=")) op = ExprOp::Eq;
    else return lhs;
    auto rhs = parse_additive();
    return make_binary(op, std::move(lhs), std::move(rhs));
  }

  ExprNodePtr parse_additive() {
    auto lhs = parse_multiplicative();
    for (;;) {
      if (accept("+")) lhs = make_binary(ExprOp::Add, std::move(lhs), parse_multiplicative());
      else if (accept("-")) lhs = make_binary(ExprOp::Sub, std::move(lhs), parse_multiplicative());
      else return lhs;
    }
  }

  ExprNodePtr parse_multiplicative() {
    auto lhs = parse_unary();
    for (;;) {
      if (accept("*")) lhs = make_binary(ExprOp::Mul, std::move(lhs), parse_unary());
      else if (accept("/")) lhs = make_binary(ExprOp::Div, std::move(lhs), parse_unary());
      else return lhs;
    }
  }

  ExprNodePtr parse_unary() {
    if (accept("-")) return make_unary(ExprOp::Neg, parse_unary());
    if (accept("+")) return parse_unary();
    return parse_power();
  }

  ExprNodePtr parse_power() {
    auto base = parse_primary();
    if (accept("^")) return make_binary(ExprOp::Pow, std::move(base), parse_unary());
    return base;
  }

  ExprNodePtr parse_primary() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of expression");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      auto e = parse_comparison();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
    fail("unexpected '" + std::string(1, c) + "'");
  }

  ExprNodePtr parse_number() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) ++pos_;
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < text_.size() && (text_[p] == '+' || text_[p] == '-')) ++p;
      if (p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p]))) {
        pos_ = p;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      }
    }
    const std::string tok(text_.substr(start, pos_ - start));
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size()) fail("malformed number '" + tok + "'", start);
    if (!std::isfinite(v)) fail("number out of range '" + tok + "'", start);
    return make_const(v);
  }

  ExprNodePtr parse_identifier() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
    const std::string name(text_.substr(start, pos_ - start));
    skip_ws();
    const bool call = pos_ < text_.size() && text_[pos_] == '(';
    if (call) return parse_call(name, start);

    if (name == "t") {
      if (!symbols_.allow_t) fail("unknown variable 't'", start);
      return make_var(ExprOp::VarT);
    }
    if (name == "u") {
      if (!symbols_.allow_u) fail("unknown variable 'u'", start);
      return make_var(ExprOp::VarU);
    }
    if (name.size() > 1 && name[0] == 'm' &&
        name.find_first_not_of("0123456789", 1) == std::string::npos) {
      const std::size_t k = std::stoul(name.substr(1));
      if (k == 0 || k > symbols_.d) fail("unknown variable '" + name + "'", start);
      return make_var(ExprOp::VarM, k - 1);
    }
    fail("unknown variable '" + name + "'", start);
  }

  ExprNodePtr parse_call(const std::string& name, std::size_t start) {
    expect('(');
    std::vector<ExprNodePtr> args;
    skip_ws();
    if (!(pos_ < text_.size() && text_[pos_] == ')')) {
      args.push_back(parse_comparison());
      while (accept(",")) args.push_back(parse_comparison());
    }
    expect(')');
    auto arity = [&](std::size_t n) {
      if (args.size() != n)
        fail(name + "() takes " + std::to_string(n) + " argument(s), got " + std::to_string(args.size()), start);
    };
    if (name == "exp") { arity(1); return make_unary(ExprOp::Exp, args[0]); }
    if (name == "log") { arity(1); return make_unary(ExprOp::Log, args[0]); }
    if (name == "abs") { arity(1); return make_unary(ExprOp::Abs, args[0]); }
    if (name == "min") { arity(2); return make_binary(ExprOp::Min, args[0], args[1]); }
    if (name == "max") { arity(2); return make_binary(ExprOp::Max, args[0], args[1]); }
    if (name == "if") { arity(3); return make_if(args[0], args[1], args[2]); }
    fail("unknown function '" + name + "'", start);
  }
};

// ---------------------------------------------------------------------------
// Compiler

enum Code : std::uint8_t {
  kConst,
  kVarT,
  kVarU,
  kVarM,
  kNeg,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kPow,
  kExp,
  kLog,
  kAbs,
  kMin,
  kMax,
  kLt,
  kLe,
  kEq,
  kGe,
  kGt,
  kJumpIfFalse,  // pops condition
  kJump,
};

Code code_of(ExprOp op) {
  switch (op) {
    case ExprOp::Neg: return kNeg;
    case ExprOp::Add: return kAdd;
    case ExprOp::Sub: return kSub;
    case ExprOp::Mul: return kMul;
    case ExprOp::Div: return kDiv;
    case ExprOp::Pow: return kPow;
    case ExprOp::Exp: return kExp;
    case ExprOp::Log: return kLog;
    case ExprOp::Abs: return kAbs;
    case ExprOp::Min: return kMin;
    case ExprOp::Max: return kMax;
    case ExprOp::Lt: return kLt;
    case ExprOp::Le: return kLe;
    case ExprOp::Eq: return kEq;
    case ExprOp::Ge: return kGe;
    case ExprOp::Gt: return kGt;
    default: return kConst;
  }
}

struct Compiler {
  std::vector<Expression::Instr> program;
  std::size_t depth = 0;
  std::size_t max_depth = 0;
  bool uses_t = false, uses_u = false, uses_m = false;

  void push(std::size_t n = 1) {
    depth += n;
    max_depth = std::max(max_depth, depth);
  }

  void emit(const ExprNode& node) {
    Expression::Instr ins;
    ins.node = &node;
    switch (node.op) {
      case ExprOp::Const:
        ins.code = kConst;
        ins.value = node.value;
        program.push_back(ins);
        push();
        return;
      case ExprOp::VarT:
        uses_t = true;
        ins.code = kVarT;
        program.push_back(ins);
        push();
        return;
      case ExprOp::VarU:
        uses_u = true;
        ins.code = kVarU;
        program.push_back(ins);
        push();
        return;
      case ExprOp::VarM:
        uses_m = true;
        ins.code = kVarM;
        ins.index = node.index;
        program.push_back(ins);
        push();
        return;
      case ExprOp::If: {
        emit(*node.args[0]);
        const std::size_t branch = program.size();
        program.push_back({kJumpIfFalse, 0, 0, 0.0, &node});
        --depth;
        emit(*node.args[1]);
        const std::size_t jump = program.size();
        program.push_back({kJump, 0, 0, 0.0, &node});
        --depth;  // only one branch value lives on the stack
        program[branch].jump = static_cast<std::int32_t>(program.size());
        emit(*node.args[2]);
        program[jump].jump = static_cast<std::int32_t>(program.size());
        return;
      }
      default:
        for (const auto& a : node.args) emit(*a);
        ins.code = code_of(node.op);
        program.push_back(ins);
        depth -= node.args.size() - 1;
        return;
    }
  }
};

struct Dual {
  double v = 0.0;
  double d = 0.0;
};

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

[[noreturn]] void eval_fail(const char* what, const ExprNode* node) {
  throw EvalError(std::string(what) + " in '" + to_string(*node) + "'");
}

// Scalar kernels. Comparison results and conditions carry zero derivative.
inline double k_neg(double a) { return -a; }
inline double k_add(double a, double b) { return a + b; }
inline double k_sub(double a, double b) { return a - b; }
inline double k_mul(double a, double b) { return a * b; }
inline double k_div(double a, double b, const ExprNode* n) {
  if (b == 0.0) eval_fail("division by zero", n);
  return a / b;
}
inline double k_pow(double a, double b, const ExprNode* n) {
  const double r = std::pow(a, b);
  if (!std::isfinite(r)) eval_fail("non-finite power", n);
  return r;
}
inline double k_exp(double a) { return std::exp(a); }
inline double k_log(double a, const ExprNode* n) {
  if (!(a > 0.0)) eval_fail("log of nonpositive value", n);
  return std::log(a);
}
inline double k_abs(double a) { return std::fabs(a); }
inline double k_min(double a, double b) { return b < a ? b : a; }
inline double k_max(double a, double b) { return b > a ? b : a; }

inline Dual k_neg(Dual a) { return {-a.v, -a.d}; }
inline Dual k_add(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual k_sub(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual k_mul(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual k_div(Dual a, Dual b, const ExprNode* n) {
  if (b.v == 0.0) eval_fail("division by zero", n);
  const double q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}
inline Dual k_pow(Dual a, Dual b, const ExprNode* n) {
  const double r = std::pow(a.v, b.v);
  if (!std::isfinite(r)) eval_fail("non-finite power", n);
  double d = 0.0;
  if (a.d != 0.0) {
    if (b.v == 0.0) d += 0.0;
    else d += b.v * std::pow(a.v, b.v - 1.0) * a.d;
  }
  if (b.d != 0.0 && a.v > 0.0) d += r * std::log(a.v) * b.d;
  return {r, d};
}
inline Dual k_exp(Dual a) {
  const double e = std::exp(a.v);
  return {e, e * a.d};
}
inline Dual k_log(Dual a, const ExprNode* n) {
  if (!(a.v > 0.0)) eval_fail("log of nonpositive value", n);
  return {std::log(a.v), a.d / a.v};
}
inline Dual k_abs(Dual a) { return a.v < 0.0 ? Dual{-a.v, -a.d} : a; }
inline Dual k_min(Dual a, Dual b) { return b.v < a.v ? b : a; }
inline Dual k_max(Dual a, Dual b) { return b.v > a.v ? b : a; }

template <typename S>
S make_scalar(double v) {
  if constexpr (std::is_same_v<S, double>) return v;
  else return S{v, 0.0};
}

}  // namespace

std::string to_string(const ExprNode& node) {
  switch (node.op) {
    case ExprOp::Const: return format_number(node.value);
    case ExprOp::VarT: return "t";
    case ExprOp::VarU: return "u";
    case ExprOp::VarM: return "m" + std::to_string(node.index + 1);
    case ExprOp::Neg: return "(-" + to_string(*node.args[0]) + ")";
    case ExprOp::Exp: return "exp(" + to_string(*node.args[0]) + ")";
    case ExprOp::Log: return "log(" + to_string(*node.args[0]) + ")";
    case ExprOp::Abs: return "abs(" + to_string(*node.args[0]) + ")";
    case ExprOp::Min: return "min(" + to_string(*node.args[0]) + ", " + to_string(*node.args[1]) + ")";
    case ExprOp::Max: return "max(" + to_string(*node.args[0]) + ", " + to_string(*node.args[1]) + ")";
    case ExprOp::If:
      return "if(" + to_string(*node.args[0]) + ", " + to_string(*node.args[1]) + ", " +
             to_string(*node.args[2]) + ")";
    default:
      return "(" + to_string(*node.args[0]) + " " + binary_symbol(node.op) + " " + to_string(*node.args[1]) + ")";
  }
}

Expression::Expression() : Expression(make_const(0.0)) {}

Expression::Expression(ExprNodePtr root) : root_(std::move(root)) {
  Compiler c;
  c.emit(*root_);
  program_ = std::move(c.program);
  max_stack_ = c.max_depth;
  uses_t_ = c.uses_t;
  uses_u_ = c.uses_u;
  uses_m_ = c.uses_m;
}

Expression Expression::constant(double value) { return Expression(make_const(value)); }

std::string Expression::to_string() const { return mfgplan::to_string(*root_); }

template <typename S>
S Expression::run(const EvalEnv& env, std::span<const double> dm) const {
  std::array<S, 64> fixed;
  std::vector<S> heap;
  S* stack = fixed.data();
  if (max_stack_ > fixed.size()) {
    heap.resize(max_stack_);
    stack = heap.data();
  }
  std::size_t sp = 0;
  const std::size_t n = program_.size();
  for (std::size_t pc = 0; pc < n; ++pc) {
    const Instr& ins = program_[pc];
    switch (ins.code) {
      case kConst: stack[sp++] = make_scalar<S>(ins.value); break;
      case kVarT: stack[sp++] = make_scalar<S>(env.t); break;
      case kVarU: stack[sp++] = make_scalar<S>(env.u); break;
      case kVarM:
        if constexpr (std::is_same_v<S, double>) {
          stack[sp++] = env.m[ins.index];
        } else {
          stack[sp++] = S{env.m[ins.index], dm.empty() ? 0.0 : dm[ins.index]};
        }
        break;
      case kNeg: stack[sp - 1] = k_neg(stack[sp - 1]); break;
      case kExp: stack[sp - 1] = k_exp(stack[sp - 1]); break;
      case kLog: stack[sp - 1] = k_log(stack[sp - 1], ins.node); break;
      case kAbs: stack[sp - 1] = k_abs(stack[sp - 1]); break;
      case kAdd: --sp; stack[sp - 1] = k_add(stack[sp - 1], stack[sp]); break;
      case kSub: --sp; stack[sp - 1] = k_sub(stack[sp - 1], stack[sp]); break;
      case kMul: --sp; stack[sp - 1] = k_mul(stack[sp - 1], stack[sp]); break;
      case kDiv: --sp; stack[sp - 1] = k_div(stack[sp - 1], stack[sp], ins.node); break;
      case kPow: --sp; stack[sp - 1] = k_pow(stack[sp - 1], stack[sp], ins.node); break;
      case kMin: --sp; stack[sp - 1] = k_min(stack[sp - 1], stack[sp]); break;
      case kMax: --sp; stack[sp - 1] = k_max(stack[sp - 1], stack[sp]); break;
      case kLt: --sp; stack[sp - 1] = make_scalar<S>(value_of(stack[sp - 1]) < value_of(stack[sp]) ? 1.0 : 0.0); break;
      case kLe: --sp; stack[sp - 1] = make_scalar<S>(value_of(stack[sp - 1]) <= value_of(stack[sp]) ? 1.0 : 0.0); break;
      case kEq: --sp; stack[sp - 1] = make_scalar<S>(value_of(stack[sp - 1]) == value_of(stack[sp]) ? 1.0 : 0.0); break;
      case kGe: --sp; stack[sp - 1] = make_scalar<S>(value_of(stack[sp - 1]) >= value_of(stack[sp]) ? 1.0 : 0.0); break;
      case kGt: --sp; stack[sp - 1] = make_scalar<S>(value_of(stack[sp - 1]) > value_of(stack[sp]) ? 1.0 : 0.0); break;
      case kJumpIfFalse:
        --sp;
        if (value_of(stack[sp]) == 0.0) pc = static_cast<std::size_t>(ins.jump) - 1;
        break;
      case kJump: pc = static_cast<std::size_t>(ins.jump) - 1; break;
      default: break;
    }
  }
  const S result = stack[0];
  if (!std::isfinite(value_of(result))) eval_fail("non-finite value", root_.get());
  return result;
}

double Expression::eval(const EvalEnv& env) const { return run<double>(env, {}); }

std::pair<double, double> Expression::eval_directional(const EvalEnv& env, std::span<const double> dm) const {
  const Dual r = run<Dual>(env, dm);
  return {r.v, r.d};
}

double Expression::eval_gradient_m(const EvalEnv& env, std::span<double> grad) const {
  std::fill(grad.begin(), grad.end(), 0.0);
  if (!uses_m_) return eval(env);
  std::vector<double> dir(env.m.size(), 0.0);
  double value = 0.0;
  for (std::size_t l = 0; l < env.m.size(); ++l) {
    dir[l] = 1.0;
    const Dual r = run<Dual>(env, dir);
    value = r.v;
    grad[l] = r.d;
    dir[l] = 0.0;
  }
  return value;
}

Expression parse_expression(std::string_view text, const SymbolTable& symbols) {
  Parser p(text, symbols);
  return Expression(p.parse());
}

}  // namespace mfgplan
