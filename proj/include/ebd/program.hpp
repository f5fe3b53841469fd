#pragma once

#include <Eigen/Core>
#include <vector>

#include "ebd/conic.hpp"
#include "ebd/distortion.hpp"
#include "ebd/triangulation.hpp"

namespace ebd {

/// Target positions of the triangulation vertices; the unknown of the
/// deformation program.
struct PLMap {
  std::vector<Eigen::Vector2d> targets;

  static PLMap identity(const EpipolarTriangulation& t);
  Eigen::VectorXd flatten() const;  // (x0,y0,x1,y1,...)
  static PLMap unflatten(const Eigen::VectorXd& x);
};

/// One weighted match residual h = c_i v~_i + c_j v~_j + c_k v~_k - q.
struct MatchTerm {
  int face = -1;
  Eigen::Vector3d bary = Eigen::Vector3d::Zero();
  Eigen::Vector2d q = Eigen::Vector2d::Zero();
  double weight = 1.0;
};

/// One linear equality over the stacked unknowns: coefficients on a single
/// vertex's coordinates, keeping each vertex on its epipolar line.
struct VertexLineRow {
  int vertex = -1;
  Eigen::Vector2d coef = Eigen::Vector2d::Zero();
  double rhs = 0.0;
};

/// The assembled per-iteration convex program plus its variable layout.
struct EBDProgram {
  ConicProblem problem;
  int n_vertices = 0;
  // Directed line pair (source, target) used for each face's cone rows.
  std::vector<std::pair<DirectedLine, DirectedLine>> face_lines;

  PLMap extract(const Eigen::VectorXd& x) const { return PLMap::unflatten(x); }
};

// Affine map of one face under the piecewise-linear map: decomposition of
// [v~_i v~_j v~_k] * [[v_i v_j v_k],[1 1 1]]^{-1}; linear in the targets.
AffineDecomposition affine_coefficients(const EpipolarTriangulation& t, int face,
                                        const PLMap& map);

// One equality per vertex: (F (v,1)) . (v~,1) = 0 with the line normalized
// to unit norm on its first two entries.
std::vector<VertexLineRow> vertex_epipolar_rows(const EpipolarTriangulation& t,
                                                const FundamentalMatrix& f);

// Per-face second-order cone rows in line-adapted coordinates, written into
// `prog.problem`. The equalities d=b and t_y=0 are implied by the vertex
// rows and are not emitted; the strict positivity of the along-line scale is
// kept as a linear floor a >= 1e-9.
void face_cone_rows(const EpipolarTriangulation& t, const FundamentalMatrix& f,
                    const DistortionBound& mu, EBDProgram& prog);

// Full iteration program: weighted quadratic match objective, vertex
// equality rows, face cone rows.
EBDProgram build_iteration_program(const EpipolarTriangulation& t, const FundamentalMatrix& f,
                                   const DistortionBound& mu,
                                   const std::vector<MatchTerm>& terms);

}  // namespace ebd
