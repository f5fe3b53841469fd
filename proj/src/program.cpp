#include "ebd/program.hpp"

#include <Eigen/Dense>
#include <map>

#include "ebd/errors.hpp"

namespace ebd {

namespace {
constexpr double kScaleFloor = 1e-9;  // strict a+c>0, realized as a >= floor
}

PLMap PLMap::identity(const EpipolarTriangulation& t) {
  PLMap m;
  m.targets = t.vertices();
  return m;
}

Eigen::VectorXd PLMap::flatten() const {
  Eigen::VectorXd x(2 * targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) x.segment<2>(2 * i) = targets[i];
  return x;
}

PLMap PLMap::unflatten(const Eigen::VectorXd& x) {
  PLMap m;
  m.targets.resize(x.size() / 2);
  for (std::size_t i = 0; i < m.targets.size(); ++i) m.targets[i] = x.segment<2>(2 * i);
  return m;
}

AffineDecomposition affine_coefficients(const EpipolarTriangulation& t, int face,
                                        const PLMap& map) {
  const auto& f = t.face(face);
  if (std::abs(t.signed_area(face)) < 1e-9) throw GeometryError("degenerate source face");
  Eigen::Matrix3d src;
  Eigen::Matrix<double, 2, 3> dst;
  for (int j = 0; j < 3; ++j) {
    src.col(j) << t.vertex(f.v[j]), 1.0;
    dst.col(j) = map.targets.at(f.v[j]);
  }
  Eigen::Matrix<double, 2, 3> coef = dst * src.inverse();
  return decompose(coef.leftCols<2>(), coef.col(2));
}

std::vector<VertexLineRow> vertex_epipolar_rows(const EpipolarTriangulation& t,
                                                const FundamentalMatrix& f) {
  std::vector<VertexLineRow> rows;
  rows.reserve(t.vertex_count());
  for (int i = 0; i < t.vertex_count(); ++i) {
    Eigen::Vector3d l = epipolar_line(f, t.vertex(i));
    VertexLineRow row;
    row.vertex = i;
    row.coef = l.head<2>();
    row.rhs = -l.z();
    rows.push_back(row);
  }
  return rows;
}

namespace {

// Linear expressions for the adapted similarity/anti-similarity coefficients
// (a,b,c,d) of one face, over the six unknowns of its vertices.
struct AdaptedCoefs {
  std::array<int, 3> verts;
  // coef[which](vert, axis), which in {a,b,c,d}
  std::array<Eigen::Matrix<double, 3, 2>, 4> coef;
};

AdaptedCoefs adapted_coefficients(const EpipolarTriangulation& t, int face,
                                  const DirectedLine& l1, const DirectedLine& l2) {
  const auto& fc = t.face(face);
  Eigen::Matrix3d src;
  for (int j = 0; j < 3; ++j) src.col(j) << t.vertex(fc.v[j]), 1.0;
  Eigen::Matrix3d s_inv = src.inverse();

  Eigen::Matrix2d r1 = line_adapted_similarity(l1).linear();
  Eigen::Matrix2d r2 = line_adapted_similarity(l2).linear();

  // The face's affine map is [M|t] = V~ * src^{-1}; in the adapted frames the
  // linear part is N = R2' M R1, so dN(p,q)/du_{vert,r} = R2(r,p) B(vert,q)
  // with B(vert,q) = sum_c s_inv(vert,c) R1(c,q).
  Eigen::Matrix<double, 3, 2> bm;
  for (int vert = 0; vert < 3; ++vert)
    for (int qq = 0; qq < 2; ++qq)
      bm(vert, qq) = s_inv(vert, 0) * r1(0, qq) + s_inv(vert, 1) * r1(1, qq);

  AdaptedCoefs out;
  out.verts = fc.v;
  for (int vert = 0; vert < 3; ++vert) {
    for (int r = 0; r < 2; ++r) {
      double n00 = r2(r, 0) * bm(vert, 0);
      double n01 = r2(r, 0) * bm(vert, 1);
      double n10 = r2(r, 1) * bm(vert, 0);
      double n11 = r2(r, 1) * bm(vert, 1);
      out.coef[0](vert, r) = 0.5 * (n00 + n11);  // a
      out.coef[1](vert, r) = 0.5 * (n01 - n10);  // b
      out.coef[2](vert, r) = 0.5 * (n00 - n11);  // c
      out.coef[3](vert, r) = 0.5 * (n01 + n10);  // d
    }
  }
  return out;
}

// Orientation of the directed line pair, resolved once per epipolar ray.
class RayOrientations {
 public:
  RayOrientations(const EpipolarTriangulation& t, const FundamentalMatrix& f) : t_(t), f_(f) {}

  const std::pair<DirectedLine, DirectedLine>& pair_for(int face) {
    int ray = t_.face(face).ray_id;
    auto it = cache_.find(ray);
    if (it == cache_.end())
      it = cache_.emplace(ray, orient_epipolar_pair(f_, t_.face(face).line)).first;
    return it->second;
  }

 private:
  const EpipolarTriangulation& t_;
  const FundamentalMatrix& f_;
  std::map<int, std::pair<DirectedLine, DirectedLine>> cache_;
};

}  // namespace

void face_cone_rows(const EpipolarTriangulation& t, const FundamentalMatrix& f,
                    const DistortionBound& mu, EBDProgram& prog) {
  const int n = 2 * t.vertex_count();
  RayOrientations rays(t, f);
  prog.face_lines.clear();
  prog.face_lines.reserve(t.face_count());

  const double root = std::sqrt(1.0 - mu.mu * mu.mu);
  std::vector<Eigen::Triplet<double>> g_trip;
  std::vector<double> g_rhs;

  for (int face = 0; face < t.face_count(); ++face) {
    const auto& pair = rays.pair_for(face);
    prog.face_lines.push_back(pair);
    AdaptedCoefs ac = adapted_coefficients(t, face, pair.first, pair.second);

    ConeBlock cone;
    cone.M.resize(2, n);
    cone.m = Eigen::VectorXd::Zero(2);
    cone.r.resize(n);
    cone.s = 0.0;
    std::vector<Eigen::Triplet<double>> m_trip;
    for (int vert = 0; vert < 3; ++vert) {
      for (int axis = 0; axis < 2; ++axis) {
        int var = 2 * ac.verts[vert] + axis;
        m_trip.emplace_back(0, var, root * ac.coef[1](vert, axis));
        m_trip.emplace_back(1, var, ac.coef[2](vert, axis));
        cone.r.coeffRef(var) += mu.mu * ac.coef[0](vert, axis);
        // Floor row -a <= -kScaleFloor keeps the along-line scale positive.
        g_trip.emplace_back(static_cast<int>(g_rhs.size()), var, -ac.coef[0](vert, axis));
      }
    }
    cone.M.setFromTriplets(m_trip.begin(), m_trip.end());
    prog.problem.cones.push_back(std::move(cone));
    g_rhs.push_back(-kScaleFloor);
  }

  prog.problem.G.resize(static_cast<int>(g_rhs.size()), n);
  prog.problem.G.setFromTriplets(g_trip.begin(), g_trip.end());
  prog.problem.h = Eigen::Map<Eigen::VectorXd>(g_rhs.data(), g_rhs.size());
}

EBDProgram build_iteration_program(const EpipolarTriangulation& t, const FundamentalMatrix& f,
                                   const DistortionBound& mu,
                                   const std::vector<MatchTerm>& terms) {
  if (terms.empty()) throw ConfigError("iteration program needs at least one match term");
  const int n = 2 * t.vertex_count();

  EBDProgram prog;
  prog.n_vertices = t.vertex_count();
  prog.problem.n = n;

  // Objective sum_m w_m ||h_m||^2 expanded over the stacked targets.
  std::vector<Eigen::Triplet<double>> p_trip;
  prog.problem.q = Eigen::VectorXd::Zero(n);
  prog.problem.c0 = 0.0;
  for (const MatchTerm& term : terms) {
    if (term.face < 0 || term.face >= t.face_count())
      throw ConfigError("match term references a missing face");
    if (!(term.weight > 0) || !std::isfinite(term.weight))
      throw ConfigError("match weights must be positive and finite");
    const auto& fc = t.face(term.face);
    for (int axis = 0; axis < 2; ++axis) {
      for (int va = 0; va < 3; ++va) {
        int ia = 2 * fc.v[va] + axis;
        prog.problem.q(ia) -= 2.0 * term.weight * term.bary(va) * term.q(axis);
        for (int vb = 0; vb < 3; ++vb) {
          int ib = 2 * fc.v[vb] + axis;
          p_trip.emplace_back(ia, ib, 2.0 * term.weight * term.bary(va) * term.bary(vb));
        }
      }
      prog.problem.c0 += term.weight * term.q(axis) * term.q(axis);
    }
  }
  prog.problem.P.resize(n, n);
  prog.problem.P.setFromTriplets(p_trip.begin(), p_trip.end());

  // Vertex-on-epipolar-line equalities.
  std::vector<VertexLineRow> rows = vertex_epipolar_rows(t, f);
  std::vector<Eigen::Triplet<double>> a_trip;
  prog.problem.b = Eigen::VectorXd::Zero(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    a_trip.emplace_back(static_cast<int>(r), 2 * rows[r].vertex, rows[r].coef.x());
    a_trip.emplace_back(static_cast<int>(r), 2 * rows[r].vertex + 1, rows[r].coef.y());
    prog.problem.b(r) = rows[r].rhs;
  }
  prog.problem.A.resize(static_cast<int>(rows.size()), n);
  prog.problem.A.setFromTriplets(a_trip.begin(), a_trip.end());

  face_cone_rows(t, f, mu, prog);
  return prog;
}

}  // namespace ebd
