#include <cmath>
#include <vector>

#include "doctest.h"
#include "mfgplan/error.hpp"
#include "mfgplan/expression.hpp"

using namespace mfgplan;

namespace {
double ev(const char* text, double t = 0.0, double u = 0.0, std::vector<double> m = {}) {
  const Expression e = parse_expression(text, SymbolTable::full(m.size()));
  return e.eval({t, u, m});
}
}  // namespace

TEST_CASE("constant expressions") {
  CHECK(ev("exp(-1/3)") == doctest::Approx(std::exp(-1.0 / 3.0)).epsilon(1e-15));
  CHECK(ev("2^3^2") == 512.0);
  CHECK(ev("-2^2") == -4.0);
  CHECK(ev("1 - 2 - 3") == -4.0);
  CHECK(ev("8 / 2 / 2") == 2.0);
  CHECK(ev("min(3, 1) + max(2, 5) + abs(-4)") == 10.0);
  CHECK(ev("log(exp(2))") == doctest::Approx(2.0));
  CHECK(ev("1.5e2") == 150.0);
}

TEST_CASE("piecewise rate from the three-state example") {
  const char* rho = "if(t < 1/3, 1, if(t < 2/3, -3*t + 2, 0))";
  CHECK(ev(rho, 0.5) == doctest::Approx(0.5));
  CHECK(ev(rho, 0.0) == 1.0);
  CHECK(ev(rho, 0.9) == 0.0);
  CHECK(ev(rho, 1.0 / 3.0) == doctest::Approx(1.0));
}

TEST_CASE("variables") {
  CHECK(ev("u*(1-m1)", 0.0, 2.0, {0.25, 0.75}) == doctest::Approx(1.5));
  CHECK(ev("u*m2", 0.0, 1.0, {0.5, 0.5}) == 0.5);
  CHECK(ev("t*u + m1", 2.0, 3.0, {1.0}) == 7.0);
}

TEST_CASE("comparisons") {
  CHECK(ev("1 < 2") == 1.0);
  CHECK(ev("2 <= 2") == 1.0);
  CHECK(ev("2 = 2") == 1.0);
  CHECK(ev("2 == 3") == 0.0);
  CHECK(ev("3 >= 4") == 0.0);
  CHECK(ev("3 > 2") == 1.0);
}

TEST_CASE("if evaluates only the taken branch") {
  CHECK(ev("if(1 < 2, 5, 1/0)") == 5.0);
  CHECK_THROWS_AS(ev("if(1 > 2, 5, 1/0)"), EvalError);
}

TEST_CASE("runtime errors name the subexpression") {
  try {
    ev("1 + 3/(t-1)", 1.0);
    FAIL("expected EvalError");
  } catch (const EvalError& e) {
    CHECK(std::string(e.what()).find("division by zero") != std::string::npos);
    CHECK(std::string(e.what()).find("t") != std::string::npos);
  }
  CHECK_THROWS_AS(ev("log(0)"), EvalError);
  CHECK_THROWS_AS(ev("log(-1)"), EvalError);
}

TEST_CASE("parse errors") {
  CHECK_THROWS_AS(parse_expression("m5", SymbolTable::full(3)), ParseError);
  CHECK_THROWS_AS(parse_expression("u", SymbolTable::constants()), ParseError);
  CHECK_THROWS_AS(parse_expression("1 +", SymbolTable::constants()), ParseError);
  CHECK_THROWS_AS(parse_expression("(1", SymbolTable::constants()), ParseError);
  CHECK_THROWS_AS(parse_expression("foo(1)", SymbolTable::constants()), ParseError);
  try {
    parse_expression("1 + q", SymbolTable::full(1));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.column() == 5);
  }
}

TEST_CASE("serialization round-trips the tree") {
  const char* texts[] = {"if(t < 1/3, 1, if(t < 2/3, -3*t + 2, 0))", "-u^2/2 + m1*m2", "exp(-1/3)", "min(u, max(m1, 0.1))",
                         "-(-(u))", "0.1 + 0.2", "2^-1", "1e-300 + 1.2345678901234567e20*u"};
  for (const char* text : texts) {
    const Expression a = parse_expression(text, SymbolTable::full(2));
    const Expression b = parse_expression(a.to_string(), SymbolTable::full(2));
    CHECK(a == b);
    CHECK(a.to_string() == b.to_string());
  }
}

TEST_CASE("forward-mode gradient in m matches finite differences") {
  const Expression e = parse_expression("exp(m1*m2) + m3^3/(1 + m1) - log(1 + m2)*u + abs(m1 - m3)", SymbolTable::full(3));
  const std::vector<double> m{0.2, 0.3, 0.5};
  std::vector<double> grad(3);
  const double v = e.eval_gradient_m({0.1, 0.7, m}, grad);
  CHECK(v == doctest::Approx(e.eval({0.1, 0.7, m})));
  for (std::size_t l = 0; l < 3; ++l) {
    auto mp = m, mm = m;
    mp[l] += 1e-6;
    mm[l] -= 1e-6;
    const double fd = (e.eval({0.1, 0.7, mp}) - e.eval({0.1, 0.7, mm})) / 2e-6;
    CHECK(grad[l] == doctest::Approx(fd).epsilon(1e-7));
  }
  const std::vector<double> dm{1.0, -1.0, 0.0};
  const auto [val, dd] = e.eval_directional({0.1, 0.7, m}, dm);
  CHECK(val == doctest::Approx(v));
  CHECK(dd == doctest::Approx(grad[0] - grad[1]));
}

TEST_CASE("usage flags") {
  const Expression e = parse_expression("u*m2", SymbolTable::full(2));
  CHECK(e.uses_u());
  CHECK(e.uses_m());
  CHECK_FALSE(e.uses_t());
  CHECK(parse_expression("1+2", SymbolTable::constants()).is_constant());
}
