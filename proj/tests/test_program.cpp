#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "ebd/errors.hpp"
#include "ebd/program.hpp"
#include "helpers.hpp"

using namespace ebd;
using namespace ebd::testhelpers;

namespace {

struct Fixture {
  CameraPair rig;
  FundamentalMatrix f;
  EpipolarTriangulation t;

  static Fixture make(double eta = 40.0, double w = 200.0, double h = 260.0) {
    CameraPair rig = two_view_rig(-4.0, Eigen::Vector3d(0.7, 0.1, -0.05));
    FundamentalMatrix f = FundamentalMatrix::from(rig.fundamental());
    GridConfig cfg;
    cfg.eta = eta;
    return Fixture{rig, f, EpipolarTriangulation::build({w, h}, f, cfg)};
  }
};

// The map induced by projecting the z = depth plane from view A to view B.
Eigen::Vector2d plane_transfer(const CameraPair& rig, const Eigen::Vector2d& p, double depth) {
  Eigen::Vector3d ray((p.x() - 128.0) / 400.0, (p.y() - 176.0) / 400.0, 1.0);
  return rig.project_b(ray * depth);
}

PLMap plane_map(const Fixture& fx, double depth) {
  PLMap map;
  for (const auto& v : fx.t.vertices()) map.targets.push_back(plane_transfer(fx.rig, v, depth));
  return map;
}

double cone_violation(const ConicProblem& prob, const Eigen::VectorXd& x) {
  double worst = -std::numeric_limits<double>::infinity();
  for (const ConeBlock& cone : prob.cones) {
    Eigen::VectorXd rd(prob.n);
    rd.setZero();
    for (Eigen::SparseVector<double>::InnerIterator it(cone.r); it; ++it)
      rd(it.index()) = it.value();
    worst = std::max(worst, (cone.M * x + cone.m).norm() - (rd.dot(x) + cone.s));
  }
  return worst;
}

double equality_violation(const ConicProblem& prob, const Eigen::VectorXd& x) {
  if (prob.A.rows() == 0) return 0.0;
  return (prob.A * x - prob.b).lpNorm<Eigen::Infinity>();
}

}  // namespace

TEST_CASE("affine coefficients: identity, global similarity, random reproduction") {
  Fixture fx = Fixture::make();

  PLMap id = PLMap::identity(fx.t);
  for (int face = 0; face < fx.t.face_count(); face += 11) {
    AffineDecomposition d = affine_coefficients(fx.t, face, id);
    CHECK(std::abs(d.a - 1.0) < 1e-9);
    CHECK(std::abs(d.b) < 1e-9);
    CHECK(std::abs(d.c) < 1e-9);
    CHECK(std::abs(d.d) < 1e-9);
    CHECK(d.t.norm() < 1e-6);
  }

  Similarity2 g;
  g.angle = 0.3;
  g.scale = 1.4;
  g.translation = Eigen::Vector2d(12, -7);
  PLMap sim;
  for (const auto& v : fx.t.vertices()) sim.targets.push_back(g.apply(v));
  AffineDecomposition expect = to_affine(g);
  for (int face = 0; face < fx.t.face_count(); face += 7) {
    AffineDecomposition d = affine_coefficients(fx.t, face, sim);
    CHECK(std::abs(d.a - expect.a) < 1e-9);
    CHECK(std::abs(d.b - expect.b) < 1e-9);
    CHECK(std::abs(d.c) < 1e-9);
    CHECK(std::abs(d.d) < 1e-9);
  }

  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss;
  PLMap random_map;
  for (const auto& v : fx.t.vertices())
    random_map.targets.push_back(v + Eigen::Vector2d(10 * gauss(rng), 10 * gauss(rng)));
  for (int face = 0; face < fx.t.face_count(); face += 5) {
    AffineDecomposition d = affine_coefficients(fx.t, face, random_map);
    for (int corner = 0; corner < 3; ++corner) {
      int v = fx.t.face(face).v[corner];
      CHECK((d.apply(fx.t.vertex(v)) - random_map.targets[v]).norm() <= 1e-9);
    }
  }
}

TEST_CASE("vertex rows: rectified reduction, count, ground-truth satisfaction") {
  FundamentalMatrix fr = FundamentalMatrix::from(rectified_f());
  GridConfig cfg;
  cfg.eta = 40.0;
  EpipolarTriangulation tr = EpipolarTriangulation::build({200, 260}, fr, cfg);
  std::vector<VertexLineRow> rows = vertex_epipolar_rows(tr, fr);
  CHECK(static_cast<int>(rows.size()) == tr.vertex_count());
  for (const VertexLineRow& row : rows) {
    // Row reduces to v~_y = v_y: coefficients (0, +-1), rhs +-v_y.
    CHECK(std::abs(row.coef.x()) < 1e-12);
    CHECK(std::abs(std::abs(row.coef.y()) - 1.0) < 1e-12);
    CHECK(row.rhs / row.coef.y() == doctest::Approx(tr.vertex(row.vertex).y()).epsilon(1e-12));
  }

  // Ground-truth plane transfer satisfies the rows of a generic rig.
  Fixture fx = Fixture::make();
  PLMap gt = plane_map(fx, 10.0);
  std::vector<VertexLineRow> gt_rows = vertex_epipolar_rows(fx.t, fx.f);
  for (const VertexLineRow& row : gt_rows) {
    double lhs = row.coef.dot(gt.targets[row.vertex]);
    CHECK(std::abs(lhs - row.rhs) < 1e-6);
  }
}

TEST_CASE("cone rows: identity geometry, along-line scaling, count") {
  FundamentalMatrix fr = FundamentalMatrix::from(rectified_f());
  GridConfig cfg;
  cfg.eta = 40.0;
  EpipolarTriangulation tr = EpipolarTriangulation::build({200, 260}, fr, cfg);

  EBDProgram prog;
  prog.n_vertices = tr.vertex_count();
  prog.problem.n = 2 * tr.vertex_count();
  face_cone_rows(tr, fr, DistortionBound(0.5), prog);
  CHECK(static_cast<int>(prog.problem.cones.size()) == tr.face_count());
  CHECK(prog.problem.G.rows() == tr.face_count());

  // Identity placement satisfies every cone strictly.
  Eigen::VectorXd x_id = PLMap::identity(tr).flatten();
  CHECK(cone_violation(prog.problem, x_id) < -0.4);  // slack about mu*a = 0.5

  // Scaling the along-line direction by 2: adapted (1.5, 0, 0.5, 0); the
  // cone holds iff mu >= 1/3.
  PLMap stretched;
  for (const auto& v : tr.vertices()) stretched.targets.emplace_back(2.0 * v.x(), v.y());
  Eigen::VectorXd x_s = stretched.flatten();
  for (int face = 0; face < tr.face_count(); face += 9) {
    AffineDecomposition ad = affine_coefficients(tr, face, stretched);
    CHECK(std::abs(ad.a - 1.5) < 1e-9);
    CHECK(std::abs(ad.c - 0.5) < 1e-9);
  }

  EBDProgram prog_03;
  prog_03.problem.n = 2 * tr.vertex_count();
  face_cone_rows(tr, fr, DistortionBound(0.3), prog_03);
  CHECK(cone_violation(prog_03.problem, x_s) > 1e-6);

  EBDProgram prog_04;
  prog_04.problem.n = 2 * tr.vertex_count();
  face_cone_rows(tr, fr, DistortionBound(0.4), prog_04);
  CHECK(cone_violation(prog_04.problem, x_s) < 1e-12);
}

TEST_CASE("build_iteration_program: vertex-pinned term and weight scaling") {
  Fixture fx = Fixture::make();
  const DistortionBound mu(0.6);

  // A term sitting exactly on a vertex gives objective ||v~_i - q||^2.
  int face = fx.t.face_count() / 2;
  int vertex = fx.t.face(face).v[0];
  Eigen::Vector2d target(91.0, 57.0);
  MatchTerm term;
  term.face = face;
  // Locate the vertex itself: barycentric (1,0,0) in this face.
  term.bary = fx.t.barycentric(face, fx.t.vertex(vertex));
  term.q = target;
  term.weight = 1.0;
  EBDProgram prog = build_iteration_program(fx.t, fx.f, mu, {term});

  Eigen::VectorXd x = PLMap::identity(fx.t).flatten();
  auto objective = [&](const Eigen::VectorXd& v) {
    return 0.5 * v.dot(prog.problem.P * v) + prog.problem.q.dot(v) + prog.problem.c0;
  };
  CHECK(objective(x) ==
        doctest::Approx((fx.t.vertex(vertex) - target).squaredNorm()).epsilon(1e-12));

  // Doubling the weights doubles the objective and keeps the minimizer.
  // A term on every vertex (with disagreeing targets) makes it unique.
  std::vector<MatchTerm> terms;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise;
  for (int v = 0; v < fx.t.vertex_count(); ++v) {
    auto fidx = fx.t.locate(fx.t.vertex(v));
    if (!fidx) continue;
    MatchTerm m;
    m.face = *fidx;
    m.bary = fx.t.barycentric(*fidx, fx.t.vertex(v));
    m.q = plane_transfer(fx.rig, fx.t.vertex(v), 10.0) +
          Eigen::Vector2d(3 * noise(rng), 3 * noise(rng));
    m.weight = 1.0;
    terms.push_back(m);
  }
  EBDProgram p1 = build_iteration_program(fx.t, fx.f, mu, terms);
  for (auto& m : terms) m.weight = 2.0;
  EBDProgram p2 = build_iteration_program(fx.t, fx.f, mu, terms);

  SolverResult r1 = solve(p1.problem, 1e-9, 200);
  SolverResult r2 = solve(p2.problem, 1e-9, 200);
  REQUIRE(r1.status == SolveStatus::optimal);
  REQUIRE(r2.status == SolveStatus::optimal);
  CHECK((r1.x - r2.x).lpNorm<Eigen::Infinity>() < 1e-4);

  double o1 = 0.5 * r1.x.dot(p1.problem.P * r1.x) + p1.problem.q.dot(r1.x) + p1.problem.c0;
  double o2 = 0.5 * r2.x.dot(p2.problem.P * r2.x) + p2.problem.q.dot(r2.x) + p2.problem.c0;
  CHECK(o2 == doctest::Approx(2.0 * o1).epsilon(1e-6).scale(1.0));

  CHECK_THROWS_AS(build_iteration_program(fx.t, fx.f, mu, {}), ConfigError);
}

TEST_CASE("feasible ground truth with a match on every vertex is recovered") {
  Fixture fx = Fixture::make();
  const DistortionBound mu(0.6);
  PLMap gt = plane_map(fx, 10.0);

  // The plane-transfer map must itself be feasible for this scene.
  for (int face = 0; face < fx.t.face_count(); ++face) {
    AffineDecomposition d = affine_coefficients(fx.t, face, gt);
    CHECK(mu_of(d) < 0.3);
  }

  std::vector<MatchTerm> terms;
  for (int v = 0; v < fx.t.vertex_count(); ++v) {
    auto fidx = fx.t.locate(fx.t.vertex(v));
    if (!fidx) continue;
    MatchTerm m;
    m.face = *fidx;
    m.bary = fx.t.barycentric(*fidx, fx.t.vertex(v));
    m.q = gt.targets[v];
    m.weight = 1.0;
    terms.push_back(m);
  }
  REQUIRE(static_cast<int>(terms.size()) == fx.t.vertex_count());

  EBDProgram prog = build_iteration_program(fx.t, fx.f, mu, terms);
  SolverResult res = solve(prog.problem, 1e-9, 200);
  REQUIRE(res.status == SolveStatus::optimal);
  CHECK(res.objective < 1e-8);
  PLMap recovered = prog.extract(res.x);
  for (int v = 0; v < fx.t.vertex_count(); ++v)
    CHECK((recovered.targets[v] - gt.targets[v]).norm() < 1e-5);
}

TEST_CASE("implied equalities: vertex rows force d=b and zero cross-line shift") {
  Fixture fx = Fixture::make();
  const DistortionBound mu(0.6);

  // Random objectives push the solution around the feasible set; every
  // feasible map must show the implied per-face equalities in adapted
  // coordinates and pass the membership test.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ux(0, 200), uy(0, 260);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 12; ++trial) {
    std::vector<MatchTerm> terms;
    while (terms.size() < 40) {
      Eigen::Vector2d p(ux(rng), uy(rng));
      auto fidx = fx.t.locate(p);
      if (!fidx) continue;
      MatchTerm m;
      m.face = *fidx;
      m.bary = fx.t.barycentric(*fidx, p);
      m.q = plane_transfer(fx.rig, p, 10.0) + Eigen::Vector2d(8 * gauss(rng), 8 * gauss(rng));
      m.weight = 0.2 + std::abs(gauss(rng));
      terms.push_back(m);
    }
    EBDProgram prog = build_iteration_program(fx.t, fx.f, mu, terms);
    SolverResult res = solve(prog.problem, 1e-9, 200);
    REQUIRE(res.status == SolveStatus::optimal);
    PLMap map = prog.extract(res.x);
    for (int face = 0; face < fx.t.face_count(); ++face) {
      AffineDecomposition world = affine_coefficients(fx.t, face, map);
      AffineDecomposition ad =
          adapt_to_lines(world, prog.face_lines[face].first, prog.face_lines[face].second);
      CHECK(std::abs(ad.d - ad.b) <= 1e-8);
      CHECK(std::abs(ad.t.y()) <= 1e-8);
      CHECK(check_epipolar_bd(world, prog.face_lines[face].first,
                              prog.face_lines[face].second, mu));
    }
  }
}

TEST_CASE("feasible-set convexity through solver outputs") {
  Fixture fx = Fixture::make(50.0, 150.0, 200.0);
  const DistortionBound mu(0.6);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> ux(0, 150), uy(0, 200), u01(0, 1);
  std::normal_distribution<double> gauss;

  auto random_feasible = [&]() {
    std::vector<MatchTerm> terms;
    while (terms.size() < 25) {
      Eigen::Vector2d p(ux(rng), uy(rng));
      auto fidx = fx.t.locate(p);
      if (!fidx) continue;
      MatchTerm m;
      m.face = *fidx;
      m.bary = fx.t.barycentric(*fidx, p);
      m.q = plane_transfer(fx.rig, p, 10.0) + Eigen::Vector2d(6 * gauss(rng), 6 * gauss(rng));
      m.weight = 0.2 + std::abs(gauss(rng));
      terms.push_back(m);
    }
    EBDProgram prog = build_iteration_program(fx.t, fx.f, mu, terms);
    SolverResult res = solve(prog.problem, 1e-9, 200);
    REQUIRE(res.status == SolveStatus::optimal);
    return std::make_pair(prog, res.x);
  };

  auto [prog0, xa] = random_feasible();
  for (int pair = 0; pair < 40; ++pair) {
    auto [progb, xb] = random_feasible();
    double lam = u01(rng);
    Eigen::VectorXd mix = lam * xa + (1 - lam) * xb;
    CHECK(equality_violation(prog0.problem, mix) <= 1e-7);
    CHECK(cone_violation(prog0.problem, mix) <= 1e-8);
    xa = xb;
  }
}
