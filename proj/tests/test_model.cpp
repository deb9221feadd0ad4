#include <cmath>
#include <vector>

#include "doctest.h"
#include "mfgplan/error.hpp"
#include "mfgplan/model.hpp"

using namespace mfgplan;

TEST_CASE("minimal one-state model") {
  const ModelSpec m = parse_model("d = 1\nT = 1\nactions = [0]\nQ[1][1] = 0\ng[1] = 0\n");
  CHECK(m.d == 1);
  CHECK(m.T == 1.0);
  CHECK(m.actions.size() == 1);
  const std::vector<double> mm{1.0};
  CHECK(eval_Q(m, 0.0, mm, 0.0)(0, 0) == 0.0);
}

TEST_CASE("three-state example model") {
  const ModelSpec m = builtin_example_section4();
  CHECK(m.d == 3);
  CHECK(m.T == 1.0);
  CHECK(m.actions.size() == 101);
  CHECK(m.actions.min() == 0.0);
  CHECK(m.actions.max() == 1.0);
  const std::vector<double> mm{1.0, 0.0, 0.0};
  const Matrix q = eval_Q(m, 0.0, mm, 0.5);
  const double want[3][3] = {{-0.5, 0.5, 0}, {0, -1, 1}, {0, 0, 0}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(q(i, j) == doctest::Approx(want[i][j]));
  const auto g = eval_g(m, 0.3, mm, 0.8);
  CHECK(g[0] == doctest::Approx(-0.64));
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
  CHECK(builtin_example_section4(101, true).g[0].eval({0.0, 0.8, mm}) == doctest::Approx(-0.32));

  CHECK(section4::mT()[0] == doctest::Approx(0.716531).epsilon(1e-6));
  CHECK(section4::mT_printed()[1] == doctest::Approx(0.716531).epsilon(1e-6));
  CHECK(section4::mT()[0] + section4::mT()[1] == doctest::Approx(1.0));
  CHECK(section4::utilde(0.5) == 0.0);
  CHECK(section4::utilde(0.9) == 1.0);
  CHECK(section4::rho(1.0 / 3.0 - 1e-15) == 1.0);
  CHECK(-3.0 * (1.0 / 3.0) + 2.0 == doctest::Approx(1.0));
  for (double t : {0.0, 0.2, 0.4, 0.5, 0.6, 0.7, 0.95}) CHECK(eval_Q(m, t, mm, 0.0)(1, 2) == doctest::Approx(section4::rho(t)));
}

TEST_CASE("unknown variable and dimension errors") {
  CHECK_THROWS_AS(parse_model("d = 3\nT = 1\nactions = [0]\nQ[1][2] = m5\nQ[1][1] = auto\ng[1]=0\ng[2]=0\ng[3]=0\n"), ParseError);
  CHECK_THROWS_AS(parse_model("d = 2\nT = 1\nactions = [0]\ng[1] = 0\n"), ParseError);
  CHECK_THROWS_AS(parse_model("d = 2\nT = 1\nactions = [0]\nQ[3][1] = 1\ng[1] = 0\ng[2] = 0\n"), ParseError);
  CHECK_THROWS_AS(parse_model("d = 2\nT = 1\nactions = [0, 0]\ng[1] = 0\ng[2] = 0\n"), ParseError);
  CHECK_THROWS_AS(parse_model("T = 1\nactions = [0]\ng[1] = 0\n"), ParseError);
  CHECK_THROWS_AS(parse_model("d = 1\nT = 1\nactions = [0]\ng[1] = 0\ng[1] = 1\n"), ParseError);
  try {
    parse_model("d = 3\nT = 1\nactions = [0]\nQ[1][2] = u + m5\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
    CHECK(e.column() == 15);
    CHECK(std::string(e.what()).find("m5") != std::string::npos);
  }
}

TEST_CASE("comments, auto diagonal and interval actions") {
  const ModelSpec m = parse_model(
      "# header\n"
      "d = 2   # states\n"
      "T = 2\n"
      "actions = interval(0, 2, 5)\n"
      "Q[1][2] = u\n"
      "Q[1][1] = auto\n"
      "Q[2][1] = 1\n"
      "Q[2][2] = auto\n"
      "g[1] = -u^2\n"
      "g[2] = m1\n"
      "sigma[1] = 1\n"
      "sigma[2] = m2\n");
  CHECK(m.actions.size() == 5);
  CHECK(m.actions[1] == 0.5);
  CHECK(m.actions[4] == 2.0);
  const std::vector<double> mm{0.3, 0.7};
  const Matrix q = eval_Q(m, 0.0, mm, 1.5);
  CHECK(q(0, 0) == -1.5);
  CHECK(q(1, 1) == -1.0);
  const auto s = eval_sigma(m, mm);
  CHECK(s[1] == 0.7);
}

TEST_CASE("Kolmogorov violations") {
  const ModelSpec bad = parse_model("d = 2\nT = 1\nactions = [0]\nQ[1][2] = -1\nQ[1][1] = 1\ng[1] = 0\ng[2] = 0\n");
  const std::vector<double> mm{0.5, 0.5};
  try {
    eval_Q(bad, 0.0, mm, 0.0);
    FAIL("expected KolmogorovError");
  } catch (const KolmogorovError& e) {
    CHECK(std::string(e.what()).find("Q[1][2]") != std::string::npos);
  }
  const ModelSpec nodiag = parse_model("d = 2\nT = 1\nactions = [0]\nQ[1][2] = 1\ng[1] = 0\ng[2] = 0\n");
  CHECK_THROWS_AS(eval_Q(nodiag, 0.0, mm, 0.0), KolmogorovError);
  const ValidationReport rep = validate_model(bad, 50, 1);
  CHECK_FALSE(rep.kolmogorov_ok);
  CHECK_FALSE(rep.violations.empty());
}

TEST_CASE("zero model evaluates to zeros") {
  const ModelSpec z = builtin_model("zero");
  const std::vector<double> mm{0.5, 0.5};
  const Matrix q = eval_Q(z, 0.5, mm, 1.0);
  for (double v : q.data) CHECK(v == 0.0);
  for (double v : eval_g(z, 0.5, mm, 1.0)) CHECK(v == 0.0);
}

TEST_CASE("serialize then parse is the identity on built-ins") {
  for (const auto& name : builtin_model_names()) {
    CAPTURE(name);
    const ModelSpec a = builtin_model(name);
    ModelSpec b = parse_model(serialize_model(a));
    b.name = a.name;
    CHECK(same_model(a, b));
    CHECK(serialize_model(b) == serialize_model(a));
  }
}

TEST_CASE("validation") {
  const auto rep4 = validate_model(builtin_example_section4(), 1000, 7);
  CHECK(rep4.kolmogorov_ok);
  CHECK(rep4.max_row_sum_deviation <= 1e-12);
  CHECK(rep4.lipschitz_m == 0.0);
  CHECK_FALSE(rep4.discontinuity_suspected);

  const auto repz = validate_model(builtin_model("zero"), 100, 7);
  CHECK(repz.kolmogorov_ok);
  CHECK(repz.lipschitz_m == 0.0);

  const auto repc = validate_model(builtin_model("coupled3"), 1000, 7);
  CHECK(repc.kolmogorov_ok);
  CHECK(repc.lipschitz_m > 0.0);
  CHECK(repc.lipschitz_m < 10.0);
  CHECK_FALSE(repc.discontinuity_suspected);

  const ModelSpec jump = parse_model("d = 2\nT = 1\nactions = [0]\nQ[1][2] = if(m1 < 0.5, 0, 1)\nQ[1][1] = auto\ng[1] = 0\ng[2] = 0\n");
  const auto repj = validate_model(jump, 1000, 7);
  CHECK(repj.kolmogorov_ok);
  CHECK(repj.discontinuity_suspected);
  CHECK(repj.lipschitz_m > 1e3);
  // the estimate grows with the sample budget
  CHECK(validate_model(jump, 10000, 7).lipschitz_m > repj.lipschitz_m);
}

TEST_CASE("action tables match direct evaluation") {
  const ModelSpec m = builtin_model("coupled3");
  const std::vector<double> mm{0.2, 0.5, 0.3};
  ActionTable tab;
  fill_action_table(m, 0.4, mm, tab);
  ActionTableGrad grad;
  fill_action_table_grad(m, 0.4, mm, grad);
  for (std::size_t k = 0; k < m.actions.size(); ++k) {
    const Matrix q = eval_Q(m, 0.4, mm, m.actions[k]);
    const auto g = eval_g(m, 0.4, mm, m.actions[k]);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(tab.g_at(k, i) == g[i]);
      for (std::size_t j = 0; j < 3; ++j) CHECK(tab.q_row(k, i)[j] == q(i, j));
    }
    for (std::size_t l = 0; l < 3; ++l) {
      auto mp = mm, mn = mm;
      mp[l] += 1e-6;
      mn[l] -= 1e-6;
      const auto gp = eval_g(m, 0.4, mp, m.actions[k]);
      const auto gn = eval_g(m, 0.4, mn, m.actions[k]);
      for (std::size_t i = 0; i < 3; ++i) CHECK(grad.dg[(k * 3 + i) * 3 + l] == doctest::Approx((gp[i] - gn[i]) / 2e-6).epsilon(1e-6));
    }
  }
}
