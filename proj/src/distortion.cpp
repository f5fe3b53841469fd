#include "ebd/distortion.hpp"

#include <cmath>

#include "ebd/errors.hpp"

namespace ebd {

namespace {
constexpr double kEqualityTol = 1e-9;  // exact linear constraints, tested on external maps
constexpr double kPositivityFloor = 1e-9;
}  // namespace

Eigen::Matrix2d AffineDecomposition::linear() const {
  Eigen::Matrix2d m;
  m << a + c, b + d, d - b, a - c;
  return m;
}

Eigen::Vector2d AffineDecomposition::apply(const Eigen::Vector2d& p) const {
  return linear() * p + t;
}

DistortionBound::DistortionBound(double mu_) : mu(mu_) {
  if (!(mu > 0.0) || !(mu < 1.0)) throw ConfigError("distortion bound must lie in (0,1)");
}

AffineDecomposition decompose(const Eigen::Matrix2d& m, const Eigen::Vector2d& t) {
  AffineDecomposition f;
  f.a = (m(0, 0) + m(1, 1)) / 2.0;
  f.b = (m(0, 1) - m(1, 0)) / 2.0;
  f.c = (m(0, 0) - m(1, 1)) / 2.0;
  f.d = (m(0, 1) + m(1, 0)) / 2.0;
  f.t = t;
  return f;
}

AffineDecomposition compose(const AffineDecomposition& g, const AffineDecomposition& f) {
  Eigen::Matrix2d mg = g.linear(), mf = f.linear();
  return decompose(mg * mf, mg * f.t + g.t);
}

AffineDecomposition to_affine(const Similarity2& g) {
  return decompose(g.linear(), g.translation);
}

double mu_of(const AffineDecomposition& f) {
  double sim = f.a * f.a + f.b * f.b;
  if (!(sim > 0)) throw GeometryError("zero similarity part; distortion measure undefined");
  return std::sqrt((f.c * f.c + f.d * f.d) / sim);
}

double conformal_distortion(const AffineDecomposition& f) {
  double mu = mu_of(f);
  if (mu >= 1.0) throw GeometryError("orientation-degenerate map: mu_f >= 1");
  return (1.0 + mu) / (1.0 - mu);
}

bool check_bd(const AffineDecomposition& f, const DistortionBound& bound) {
  double sim = f.a * f.a + f.b * f.b;
  double anti = f.c * f.c + f.d * f.d;
  if (!(sim > 0)) return false;
  return anti <= bound.mu * bound.mu * sim;
}

AffineDecomposition adapt_to_lines(const AffineDecomposition& f, const DirectedLine& l1,
                                   const DirectedLine& l2) {
  AffineDecomposition g1 = to_affine(line_adapted_similarity(l1));
  AffineDecomposition g2_inv = to_affine(line_adapted_similarity(l2).inverse());
  return compose(g2_inv, compose(f, g1));
}

bool check_epipolar_bd(const AffineDecomposition& f, const DirectedLine& l1,
                       const DirectedLine& l2, const DistortionBound& bound) {
  AffineDecomposition ad = adapt_to_lines(f, l1, l2);
  if (std::abs(ad.t.y()) > kEqualityTol) return false;
  if (std::abs(ad.d - ad.b) > kEqualityTol) return false;
  if (ad.a < kPositivityFloor) return false;
  double mu = bound.mu;
  double lhs = std::sqrt((1.0 - mu * mu) * ad.b * ad.b + ad.c * ad.c);
  // Same tolerance as the equality tests: solver outputs land exactly on
  // the cone boundary and must still count as members.
  return lhs <= mu * ad.a + kEqualityTol;
}

}  // namespace ebd
