#pragma once

#include <Eigen/Core>

#include "ebd/geometry.hpp"

namespace ebd {

/// Unique split of a planar affine map into a similarity part (a,b), an
/// anti-similarity part (c,d) and a translation t. The linear part is
/// [[a+c, b+d], [d-b, a-c]].
struct AffineDecomposition {
  double a = 1.0, b = 0.0, c = 0.0, d = 0.0;
  Eigen::Vector2d t = Eigen::Vector2d::Zero();

  Eigen::Matrix2d linear() const;
  Eigen::Vector2d apply(const Eigen::Vector2d& p) const;
};

struct DistortionBound {
  double mu;
  explicit DistortionBound(double mu);
};

AffineDecomposition decompose(const Eigen::Matrix2d& m, const Eigen::Vector2d& t);

// Composition h = g `after` f as affine maps, h(x) = g(f(x)).
AffineDecomposition compose(const AffineDecomposition& g, const AffineDecomposition& f);
AffineDecomposition to_affine(const Similarity2& g);

// Scale-invariant deviation of f from a similarity: sqrt((c^2+d^2)/(a^2+b^2)).
// Throws GeometryError when the similarity part vanishes.
double mu_of(const AffineDecomposition& f);

// (1+mu_f)/(1-mu_f); equals the condition number of the linear part.
// Requires mu_of(f) < 1.
double conformal_distortion(const AffineDecomposition& f);

// mu_f <= mu. True implies the linear part preserves orientation.
bool check_bd(const AffineDecomposition& f, const DistortionBound& bound);

// Membership in the convex set of bounded-distortion maps carrying directed
// line l1 onto directed line l2: in line-adapted coordinates the map must
// satisfy t_y = 0, d = b (within 1e-9), a >= 1e-9 and the cone
// sqrt((1-mu^2) b^2 + c^2) <= mu a.
bool check_epipolar_bd(const AffineDecomposition& f, const DirectedLine& l1,
                       const DirectedLine& l2, const DistortionBound& bound);

// f expressed in the coordinate frames adapted to (l1, l2).
AffineDecomposition adapt_to_lines(const AffineDecomposition& f, const DirectedLine& l1,
                                   const DirectedLine& l2);

}  // namespace ebd
