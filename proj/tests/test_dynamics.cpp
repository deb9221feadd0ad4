#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "mfgplan/dynamics.hpp"
#include "mfgplan/error.hpp"

using namespace mfgplan;

namespace {

RandomizedStrategy random_strategy(const TimeGrid& grid, std::size_t d, std::size_t K, std::mt19937_64& rng) {
  RandomizedStrategy nu(grid, d, K);
  std::exponential_distribution<double> e(1.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t n = 0; n < grid.N; ++n) {
      auto w = nu.weights(i, n);
      double s = 0.0;
      for (double& x : w) s += (x = e(rng));
      for (double& x : w) x /= s;
    }
  }
  return nu;
}

RandomizedStrategy steering(const ModelSpec& model, std::size_t N) {
  const double cut = section4::kSwitchTime;
  return RandomizedStrategy::from_control(
      TimeGrid(1.0, N), model.actions, 3, [](std::size_t, double t) { return section4::utilde(t); }, std::span<const double>(&cut, 1));
}

}  // namespace

TEST_CASE("time grid") {
  const TimeGrid g(2.0, 8);
  CHECK(g.h() == 0.25);
  CHECK(g.t(0) == 0.0);
  CHECK(g.t(8) == 2.0);
  CHECK(g.half(3) == 0.375);
  CHECK_THROWS_AS(TimeGrid(1.0, 0), InvalidArgument);
}

TEST_CASE("relaxed generator and payoff") {
  const ModelSpec m2 = builtin_example_section4(2);
  const std::vector<double> mm{1, 0, 0};
  const std::vector<std::vector<double>> nu{{0.5, 0.5}, {1, 0}, {1, 0}};
  const Matrix q = relax_Q(m2, 0.0, mm, nu);
  CHECK(q(0, 0) == doctest::Approx(-0.5));
  CHECK(q(0, 1) == doctest::Approx(0.5));
  CHECK(q(0, 2) == 0.0);
  CHECK(relax_g(m2, 0.0, mm, nu)[0] == doctest::Approx(-0.5));

  const ModelSpec m = builtin_model("coupled3");
  const std::vector<double> m3{0.2, 0.3, 0.5};
  for (std::size_t k = 0; k < m.actions.size(); ++k) {
    std::vector<std::vector<double>> dir(3, std::vector<double>(m.actions.size(), 0.0));
    for (auto& v : dir) v[k] = 1.0;
    const Matrix a = relax_Q(m, 0.4, m3, dir);
    const Matrix b = eval_Q(m, 0.4, m3, m.actions[k]);
    for (std::size_t c = 0; c < 9; ++c) CHECK(a.data[c] == doctest::Approx(b.data[c]).epsilon(1e-15));
    const auto ga = relax_g(m, 0.4, m3, dir);
    const auto gb = eval_g(m, 0.4, m3, m.actions[k]);
    for (std::size_t i = 0; i < 3; ++i) CHECK(ga[i] == doctest::Approx(gb[i]).epsilon(1e-15));
  }
  // convex combination stays Kolmogorov
  std::vector<std::vector<double>> mix(3, std::vector<double>(m.actions.size(), 0.2));
  const Matrix r = relax_Q(m, 0.4, m3, mix);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j) s += r(i, j);
    CHECK(std::fabs(s) <= 1e-12);
  }
  const ModelSpec z = builtin_model("zero");
  const std::vector<double> mz{0.5, 0.5};
  for (double v : relax_Q(z, 0.3, mz, {{0.2, 0.3, 0.5}, {1, 0, 0}}).data) CHECK(v == 0.0);
}

TEST_CASE("steering control reaches the target") {
  const ModelSpec model = builtin_example_section4();
  const RandomizedStrategy nu = steering(model, 2000);
  nu.validate();
  // the switch falls inside cell 1333; it carries the exact occupation split
  const auto w = nu.weights(0, 1333);
  CHECK(w[0] == doctest::Approx((2.0 / 3.0 - 0.6665) / 0.0005));
  CHECK(w[100] == doctest::Approx((0.667 - 2.0 / 3.0) / 0.0005));
  const DistributionFlow flow = forward_nonlinear(model, section4::m0(), nu);
  const auto target = section4::mT();
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::fabs(flow.final()[i] - target[i]) <= 1e-6);
  CHECK(flow.clipped_nodes.empty());
}

TEST_CASE("closed-form two-state flow") {
  const ModelSpec model = builtin_model("two-state");
  const TimeGrid grid(1.0, 200);
  const DistributionFlow f = forward_nonlinear(model, std::vector<double>{1, 0}, RandomizedStrategy::dirac(grid, 2, 2, 1));
  CHECK(f.final()[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-10));
  CHECK(f.final()[1] == doctest::Approx(1 - std::exp(-1.0)).epsilon(1e-10));
}

TEST_CASE("zero model keeps every flow constant") {
  const ModelSpec model = builtin_model("zero");
  const TimeGrid grid(1.0, 10);
  std::mt19937_64 rng(3);
  const auto nu = random_strategy(grid, 2, 3, rng);
  const std::vector<double> m0{0.3, 0.7};
  const auto m = forward_nonlinear(model, m0, nu);
  const auto mu = forward_linear(model, std::vector<double>{0.9, 0.1}, m, nu);
  for (std::size_t n = 0; n <= 10; ++n) {
    CHECK(m.at(n)[0] == 0.3);
    CHECK(mu.at(n)[1] == 0.1);
  }
}

TEST_CASE("linear flow properties") {
  const ModelSpec model = builtin_model("coupled3");
  const TimeGrid grid(1.0, 100);
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    const auto nu = random_strategy(grid, 3, model.actions.size(), rng);
    const std::vector<double> m0{0.6, 0.3, 0.1};
    const auto m = forward_nonlinear(model, m0, nu);
    // mass and positivity
    const std::vector<double> a{0.2, 0.5, 0.3}, b{0.7, 0.1, 0.2};
    const auto fa = forward_linear(model, a, m, nu);
    const auto fb = forward_linear(model, b, m, nu);
    std::vector<double> mix(3);
    for (std::size_t i = 0; i < 3; ++i) mix[i] = 0.25 * a[i] + 0.75 * b[i];
    const auto fmix = forward_linear(model, mix, m, nu);
    for (std::size_t n = 0; n <= grid.N; ++n) {
      double s = 0.0;
      for (std::size_t i = 0; i < 3; ++i) {
        s += fa.at(n)[i];
        CHECK(fa.at(n)[i] > 0.0);
        CHECK(std::fabs(fmix.at(n)[i] - (0.25 * fa.at(n)[i] + 0.75 * fb.at(n)[i])) <= 1e-9);
      }
      CHECK(std::fabs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("the nonlinear flow solves its own linear equation") {
  // m-independent rates: the two integrators take identical steps
  const ModelSpec s4 = builtin_example_section4();
  const TimeGrid grid(1.0, 100);
  std::mt19937_64 rng(4);
  const auto nu = random_strategy(grid, 3, s4.actions.size(), rng);
  const std::vector<double> m0{0.5, 0.3, 0.2};
  const auto m = forward_nonlinear(s4, m0, nu);
  const auto mu = forward_linear(s4, m0, m, nu);
  for (std::size_t c = 0; c < m.values.size(); ++c) CHECK(std::fabs(mu.values[c] - m.values[c]) <= 1e-9);

  // m-dependent rates: linear interpolation of m inside a step costs O(h^2)
  const ModelSpec c3 = builtin_model("coupled3");
  std::vector<double> err;
  for (std::size_t N : {200, 400, 1600}) {
    const TimeGrid g(1.0, N);
    const auto u = RandomizedStrategy::uniform(g, 3, c3.actions.size());
    const auto mc = forward_nonlinear(c3, m0, u);
    const auto muc = forward_linear(c3, m0, mc, u);
    double e = 0.0;
    for (std::size_t c = 0; c < mc.values.size(); ++c) e = std::max(e, std::fabs(mc.values[c] - muc.values[c]));
    err.push_back(e);
  }
  CHECK(err[0] / err[1] == doctest::Approx(4.0).epsilon(0.05));
  CHECK(err[2] <= 1e-9);
}

TEST_CASE("fourth-order convergence in N") {
  const ModelSpec model = builtin_model("coupled3");
  std::vector<double> finals;
  for (std::size_t N : {20, 40, 80}) {
    const TimeGrid grid(1.0, N);
    const auto f = forward_nonlinear(model, std::vector<double>{1, 0, 0}, RandomizedStrategy::uniform(grid, 3, model.actions.size()));
    finals.push_back(f.final()[0]);
  }
  const double ratio = (finals[1] - finals[0]) / (finals[2] - finals[1]);
  CAPTURE(ratio);
  CHECK(ratio >= 8.0);
  CHECK(ratio <= 32.0);
}

TEST_CASE("negative-component policy") {
  std::vector<double> ok{0.5, 0.5 + 1e-12, -1e-12};
  CHECK_FALSE(enforce_simplex(ok, 1, 0.1));
  CHECK(ok[2] == -1e-12);
  std::vector<double> clip{0.5, 0.5 + 1e-8, -1e-8};
  CHECK(enforce_simplex(clip, 1, 0.1));
  CHECK(clip[2] == 0.0);
  CHECK(clip[0] + clip[1] == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<double> bad{0.5, 0.5 + 1e-5, -1e-5};
  CHECK_THROWS_AS(enforce_simplex(bad, 1, 0.1), IntegrationError);
  // a huge step drives RK4 far outside the simplex
  const ModelSpec stiff = parse_model("d = 2\nT = 1\nactions = [0]\nQ[1][2] = 50\nQ[1][1] = auto\ng[1] = 0\ng[2] = 0\n");
  CHECK_THROWS_AS(forward_nonlinear(stiff, std::vector<double>{1, 0}, RandomizedStrategy(TimeGrid(1.0, 2), 2, 1)), IntegrationError);
  CHECK_THROWS_AS(forward_nonlinear(stiff, std::vector<double>{0.5, 0.6}, RandomizedStrategy(TimeGrid(1.0, 2), 2, 1)), InvalidArgument);
}

TEST_CASE("strategy validation and conversion") {
  const TimeGrid grid(1.0, 4);
  RandomizedStrategy nu(grid, 2, 3);
  nu.validate();
  nu.weights(1, 2)[0] = 0.9;
  CHECK_THROWS_AS(nu.validate(), InvalidArgument);
  const ActionGrid acts = ActionGrid::interval(0, 1, 3);
  const double cuts[] = {0.3};
  const auto s = RandomizedStrategy::from_control(grid, acts, 1, [](std::size_t, double t) { return t < 0.3 ? 1.0 : 0.5; }, cuts);
  CHECK(s.weights(0, 0)[2] == 1.0);
  CHECK(s.weights(0, 1)[2] == doctest::Approx(0.2));
  CHECK(s.weights(0, 1)[1] == doctest::Approx(0.8));
  CHECK(s.weights(0, 3)[1] == 1.0);
}

TEST_CASE("CSV round trips") {
  const ModelSpec model = builtin_model("coupled3");
  const TimeGrid grid(1.0, 7);
  std::mt19937_64 rng(5);
  const auto nu = random_strategy(grid, 3, model.actions.size(), rng);
  const auto m = forward_nonlinear(model, std::vector<double>{0.2, 0.2, 0.6}, nu);
  std::stringstream fs;
  write_flow_csv(fs, m);
  CHECK(fs.str().rfind("t,x1,x2,x3\n", 0) == 0);
  const NodeSeries back = read_flow_csv(fs);
  CHECK(back.grid == m.grid);
  CHECK(back.values == m.values);

  std::stringstream ss;
  write_strategy_csv(ss, nu);
  const auto nu2 = read_strategy_csv(ss, grid, 3, model.actions.size());
  CHECK(nu2 == nu);

  std::stringstream bad("state,step,action_index,weight\n1,0,0,0.5\n");
  CHECK_THROWS_AS(read_strategy_csv(bad, grid, 3, model.actions.size()), ParseError);
  std::stringstream junk("state,step,action_index,weight\n1,0,x,1\n");
  CHECK_THROWS_AS(read_strategy_csv(junk, grid, 3, model.actions.size()), ParseError);
  std::stringstream uneven("t,x1\n0,1\n0.3,1\n1,1\n");
  CHECK_THROWS_AS(read_flow_csv(uneven), ParseError);
}
