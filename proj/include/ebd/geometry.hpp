#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <utility>

namespace ebd {

/// 3x3 rank-2 fundamental matrix, stored with unit Frobenius norm and the
/// sign fixed so the largest-magnitude entry is positive. The normalization
/// makes serialized matrices comparable and makes F and -F identical.
class FundamentalMatrix {
 public:
  static FundamentalMatrix from(const Eigen::Matrix3d& m);

  const Eigen::Matrix3d& entries() const { return m_; }

  // Smallest singular value after normalization; rank-2 inputs give ~0.
  double rank_deficiency() const;

  FundamentalMatrix transposed() const;

 private:
  explicit FundamentalMatrix(const Eigen::Matrix3d& m) : m_(m) {}
  Eigen::Matrix3d m_;
};

/// Line through `point` with unit `direction`.
struct DirectedLine {
  Eigen::Vector2d point;
  Eigen::Vector2d direction;

  static DirectedLine through(const Eigen::Vector2d& point, const Eigen::Vector2d& direction);

  // Signed offset of p across the line (left of direction is positive).
  double offset(const Eigen::Vector2d& p) const;
  // Signed coordinate of p along the line measured from `point`.
  double along(const Eigen::Vector2d& p) const;
};

/// Orientation-preserving similarity x -> scale * R(angle) * x + translation.
struct Similarity2 {
  double angle = 0.0;
  double scale = 1.0;
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();

  Eigen::Matrix2d linear() const;
  Eigen::Vector2d apply(const Eigen::Vector2d& p) const;
  Similarity2 inverse() const;
};

struct Epipole {
  Eigen::Vector3d h;       // unit-norm homogeneous coordinates
  bool at_infinity = false;

  // Finite image point; only meaningful when !at_infinity.
  Eigen::Vector2d point() const { return Eigen::Vector2d(h.x() / h.z(), h.y() / h.z()); }
  // Common direction of the epipolar pencil when at_infinity.
  Eigen::Vector2d direction() const { return Eigen::Vector2d(h.x(), h.y()).normalized(); }
};

// Right null vector of F (the epipole in the first image). Throws
// GeometryError if F is numerically rank 3.
Epipole epipole(const FundamentalMatrix& f);

// Left null vector of F (the epipole in the second image).
Epipole left_epipole(const FundamentalMatrix& f);

// F*(p,1), normalized so the first two entries have unit norm. Throws
// GeometryError when p is the epipole.
Eigen::Vector3d epipolar_line(const FundamentalMatrix& f, const Eigen::Vector2d& p);

// First-order geometric error of the pair (p,q) w.r.t. the epipolar
// constraint, in squared pixels.
double sampson_distance(const FundamentalMatrix& f, const Eigen::Vector2d& p,
                        const Eigen::Vector2d& q);

// Given a directed epipolar line l1 in the first image, returns (l1, l2)
// where l2 is the corresponding line in the second image, directed so that
// transferring two ordered points of l1 through a fixed plane-induced
// homography of the canonical camera pair preserves their order.
std::pair<DirectedLine, DirectedLine> orient_epipolar_pair(const FundamentalMatrix& f,
                                                           const DirectedLine& l1);

// Unit-scale similarity g with g(0,0) = l.point and g's linear part mapping
// (1,0) to l.direction; carries the directed X-axis onto l.
Similarity2 line_adapted_similarity(const DirectedLine& l);

FundamentalMatrix read_fundamental(const std::filesystem::path& path);
void write_fundamental(const std::filesystem::path& path, const FundamentalMatrix& f);

}  // namespace ebd
