#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mfgplan {

/// Variables an expression may reference. `m1..m<d>` are the population
/// coordinates; `t` is time and `u` the scalar action.
struct SymbolTable {
  bool allow_t = false;
  bool allow_u = false;
  std::size_t d = 0;

  static SymbolTable constants() { return {}; }
  static SymbolTable full(std::size_t d) { return {true, true, d}; }
};

/// Variable bindings for evaluation.
struct EvalEnv {
  double t = 0.0;
  double u = 0.0;
  std::span<const double> m;
};

enum class ExprOp : std::uint8_t {
  Const,
  VarT,
  VarU,
  VarM,
  Neg,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Exp,
  Log,
  Abs,
  Min,
  Max,
  Lt,
  Le,
  Eq,
  Ge,
  Gt,
  If,
};

struct ExprNode;
using ExprNodePtr = std::shared_ptr<const ExprNode>;

struct ExprNode {
  ExprOp op = ExprOp::Const;
  double value = 0.0;      // Const
  std::size_t index = 0;   // VarM, 0-based
  std::vector<ExprNodePtr> args;
};

bool operator==(const ExprNode& a, const ExprNode& b);

/// Immutable arithmetic expression in (t, m, u), compiled to a stack program
/// on construction. Evaluation is reentrant.
class Expression {
 public:
  /// The constant 0.
  Expression();
  explicit Expression(ExprNodePtr root);

  static Expression constant(double value);

  const ExprNode& root() const { return *root_; }
  const ExprNodePtr& root_ptr() const { return root_; }

  double eval(const EvalEnv& env) const;

  /// Value and directional derivative along `dm` in the m coordinates.
  std::pair<double, double> eval_directional(const EvalEnv& env, std::span<const double> dm) const;

  /// Value and full gradient with respect to m (one forward-mode pass per coordinate).
  double eval_gradient_m(const EvalEnv& env, std::span<double> grad) const;

  bool uses_t() const { return uses_t_; }
  bool uses_u() const { return uses_u_; }
  bool uses_m() const { return uses_m_; }
  bool is_constant() const { return !uses_t_ && !uses_u_ && !uses_m_; }

  /// Fully parenthesised text that parses back to an equal tree.
  std::string to_string() const;

  friend bool operator==(const Expression& a, const Expression& b) { return *a.root_ == *b.root_; }

  struct Instr {
    std::uint8_t code = 0;
    std::int32_t jump = 0;  // absolute target for branch instructions
    std::size_t index = 0;
    double value = 0.0;
    const ExprNode* node = nullptr;
  };

 private:
  ExprNodePtr root_;
  std::vector<Instr> program_;
  std::size_t max_stack_ = 0;
  bool uses_t_ = false;
  bool uses_u_ = false;
  bool uses_m_ = false;

  template <typename Scalar>
  Scalar run(const EvalEnv& env, std::span<const double> dm) const;
};

/// Parses `text` against `symbols`. Errors carry a 1-based column within `text`.
Expression parse_expression(std::string_view text, const SymbolTable& symbols);

std::string to_string(const ExprNode& node);

// Tree builders used by the model loader.
ExprNodePtr make_const(double value);
ExprNodePtr make_unary(ExprOp op, ExprNodePtr a);
ExprNodePtr make_binary(ExprOp op, ExprNodePtr a, ExprNodePtr b);

}  // namespace mfgplan
