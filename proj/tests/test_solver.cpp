#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "ebd/conic.hpp"
#include "ebd/errors.hpp"
#include "helpers.hpp"

using namespace ebd;
using namespace ebd::testhelpers;

namespace {

ConicProblem empty_shell(int n) {
  ConicProblem prob;
  prob.n = n;
  prob.P.resize(n, n);
  prob.q = Eigen::VectorXd::Zero(n);
  prob.A.resize(0, n);
  prob.b.resize(0);
  prob.G.resize(0, n);
  prob.h.resize(0);
  return prob;
}

}  // namespace

TEST_CASE("hand example: quadratic with one cone, unconstrained optimum feasible") {
  // min (x-2)^2 + y^2 s.t. |y| <= 0.5 x
  ConicProblem prob = empty_shell(2);
  prob.P = Eigen::MatrixXd(2, 2).setZero().sparseView();
  Eigen::MatrixXd pd(2, 2);
  pd << 2, 0, 0, 2;
  prob.P = pd.sparseView();
  prob.q << -4, 0;
  prob.c0 = 4.0;
  ConeBlock cone;
  Eigen::MatrixXd m(1, 2);
  m << 0, 1;
  cone.M = m.sparseView();
  cone.m = Eigen::VectorXd::Zero(1);
  cone.r.resize(2);
  cone.r.insert(0) = 0.5;
  cone.s = 0.0;
  prob.cones.push_back(cone);

  SolverResult res = solve(prob, 1e-9);
  REQUIRE(res.status == SolveStatus::optimal);
  CHECK(res.x(0) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(std::abs(res.x(1)) < 1e-5);
  CHECK(std::abs(res.objective) < 1e-6);
}

TEST_CASE("hand example: active linear constraint") {
  // min x^2 s.t. x >= 1
  ConicProblem prob = empty_shell(1);
  Eigen::MatrixXd pd(1, 1);
  pd << 2;
  prob.P = pd.sparseView();
  Eigen::MatrixXd g(1, 1);
  g << -1;
  prob.G = g.sparseView();
  prob.h = Eigen::VectorXd::Constant(1, -1.0);

  SolverResult res = solve(prob, 1e-9);
  REQUIRE(res.status == SolveStatus::optimal);
  CHECK(res.x(0) == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(res.objective == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("hand example: equality plus cone with semidefinite objective") {
  // min (x+1)^2 s.t. sqrt(y^2+z^2) <= x, y = 1; optimum x=(1,1,0), value 4.
  ConicProblem prob = empty_shell(3);
  Eigen::MatrixXd pd = Eigen::MatrixXd::Zero(3, 3);
  pd(0, 0) = 2.0;
  prob.P = pd.sparseView();
  prob.q << 2, 0, 0;
  prob.c0 = 1.0;
  Eigen::MatrixXd a(1, 3);
  a << 0, 1, 0;
  prob.A = a.sparseView();
  prob.b = Eigen::VectorXd::Constant(1, 1.0);
  ConeBlock cone;
  Eigen::MatrixXd m(2, 3);
  m << 0, 1, 0, 0, 0, 1;
  cone.M = m.sparseView();
  cone.m = Eigen::VectorXd::Zero(2);
  cone.r.resize(3);
  cone.r.insert(0) = 1.0;
  cone.s = 0.0;
  prob.cones.push_back(cone);

  SolverResult res = solve(prob, 1e-9);
  REQUIRE(res.status == SolveStatus::optimal);
  CHECK(res.x(0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(res.x(1) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(res.x(2)) < 1e-6);
  CHECK(res.objective == doctest::Approx(4.0).epsilon(1e-6));

  // Grid-search cross-check of the reduced 1-D problem x = sqrt(1+z^2).
  double best = 1e300;
  for (double z = -2.0; z <= 2.0; z += 1e-4) {
    double x = std::sqrt(1.0 + z * z);
    best = std::min(best, (x + 1.0) * (x + 1.0));
  }
  CHECK(res.objective == doctest::Approx(best).epsilon(1e-5));
}

TEST_CASE("project_soc examples and optimality") {
  Eigen::VectorXd interior(3);
  interior << 0, 0, 1;
  CHECK((project_soc(interior) - interior).norm() == 0.0);

  Eigen::VectorXd polar(3);
  polar << 1, 0, -2;
  CHECK(project_soc(polar).norm() == 0.0);

  Eigen::VectorXd outside(3);
  outside << 3, 0, 1;
  Eigen::VectorXd expect(3);
  expect << 2, 0, 2;
  CHECK((project_soc(outside) - expect).norm() < 1e-12);

  // Idempotence and nearest-point property against random cone points.
  std::mt19937_64 rng(99);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 200; ++trial) {
    int k = 2 + static_cast<int>(rng() % 4);
    Eigen::VectorXd v(k);
    for (int i = 0; i < k; ++i) v(i) = 3.0 * gauss(rng);
    Eigen::VectorXd pv = project_soc(v);
    CHECK((project_soc(pv) - pv).norm() < 1e-12);
    CHECK(pv(k - 1) >= pv.head(k - 1).norm() - 1e-12);
    for (int probe = 0; probe < 20; ++probe) {
      Eigen::VectorXd w(k);
      for (int i = 0; i < k - 1; ++i) w(i) = 2.0 * gauss(rng);
      w(k - 1) = w.head(k - 1).norm() + std::abs(gauss(rng));
      CHECK((v - pv).norm() <= (v - w).norm() + 1e-9);
    }
  }
}

TEST_CASE("random problems agree with the dual projected-gradient oracle") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    ConicProblem prob = random_feasible_problem(rng);
    SolverResult res = solve(prob, 1e-9, 200);
    REQUIRE(res.status == SolveStatus::optimal);
    double oracle = dual_projected_gradient_oracle(prob);
    CHECK(std::abs(res.objective - oracle) <= 1e-5 * (1.0 + std::abs(res.objective)));
  }
}

TEST_CASE("interior-point merit is monotone") {
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    ConicProblem prob = random_feasible_problem(rng);
    SolverResult res = solve(prob, 1e-9, 200);
    REQUIRE(!res.merit_trace.empty());
    for (std::size_t i = 1; i < res.merit_trace.size(); ++i)
      CHECK(res.merit_trace[i] <= res.merit_trace[i - 1] * (1.0 + 1e-12) + 1e-12);
  }
}

TEST_CASE("argmin is invariant to positive objective scaling") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    ConicProblem prob = random_feasible_problem(rng);
    ConicProblem scaled = prob;
    scaled.P = prob.P * 5.0;
    scaled.q = prob.q * 5.0;
    scaled.c0 = prob.c0 * 5.0;
    SolverResult a = solve(prob, 1e-10, 200);
    SolverResult b = solve(scaled, 1e-10, 200);
    REQUIRE(a.status == SolveStatus::optimal);
    REQUIRE(b.status == SolveStatus::optimal);
    CHECK((a.x - b.x).lpNorm<Eigen::Infinity>() < 1e-5);
    CHECK(b.objective == doctest::Approx(5.0 * a.objective).epsilon(1e-6));
  }
}

TEST_CASE("solve is deterministic") {
  std::mt19937_64 rng(31);
  ConicProblem prob = random_feasible_problem(rng);
  SolverResult a = solve(prob, 1e-9, 200);
  SolverResult b = solve(prob, 1e-9, 200);
  CHECK(a.x == b.x);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("infeasible problem is reported by the divergence certificate") {
  // min x^2 s.t. x >= 1 and x <= 0
  ConicProblem prob = empty_shell(1);
  Eigen::MatrixXd pd(1, 1);
  pd << 2;
  prob.P = pd.sparseView();
  Eigen::MatrixXd g(2, 1);
  g << -1, 1;
  prob.G = g.sparseView();
  prob.h.resize(2);
  prob.h << -1, 0;

  SolverResult res = solve(prob, 1e-9, 200);
  CHECK(res.status == SolveStatus::infeasible);
}

TEST_CASE("iteration limit reports the best iterate honestly") {
  std::mt19937_64 rng(13);
  ConicProblem prob = random_feasible_problem(rng);
  SolverResult res = solve(prob, 1e-9, 2);
  CHECK(res.status == SolveStatus::max_iterations);
  CHECK(res.x.allFinite());
  CHECK(!res.message.empty());
}

TEST_CASE("dump and parse round-trip reproduces the solution") {
  std::mt19937_64 rng(41);
  ConicProblem prob = random_feasible_problem(rng);
  ConicProblem back = ConicProblem::parse(prob.dump());
  SolverResult a = solve(prob, 1e-9, 200);
  SolverResult b = solve(back, 1e-9, 200);
  CHECK(a.objective == doctest::Approx(b.objective).epsilon(1e-12));
  CHECK((a.x - b.x).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("validation rejects inconsistent problems") {
  ConicProblem prob = empty_shell(2);
  Eigen::MatrixXd pd(2, 2);
  pd << 1, 0.5, 0.5, 1;
  prob.P = pd.sparseView();
  prob.q.resize(1);  // wrong size
  CHECK_THROWS_AS(prob.validate(), ConfigError);

  ConicProblem bad = empty_shell(2);
  Eigen::MatrixXd npd(2, 2);
  npd << 1, 0, 0, -1;  // indefinite
  bad.P = npd.sparseView();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
