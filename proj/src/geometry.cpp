#include "ebd/geometry.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "ebd/errors.hpp"
#include "ebd/io.hpp"

namespace ebd {

namespace {

constexpr double kRankTol = 1e-8;
constexpr double kInfinityTol = 1e-9;

// Deterministic sign fix for a unit vector: make the largest-|.| entry positive.
void fix_sign(Eigen::Vector3d& v) {
  int idx = 0;
  v.cwiseAbs().maxCoeff(&idx);
  if (v[idx] < 0) v = -v;
}

Epipole null_vector(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullV);
  if (svd.singularValues()(2) >= kRankTol)
    throw GeometryError("fundamental matrix has numerical rank 3");
  Eigen::Vector3d e = svd.matrixV().col(2);
  e.normalize();
  fix_sign(e);
  Epipole out;
  out.h = e;
  out.at_infinity = std::abs(e.z()) < kInfinityTol;
  return out;
}

}  // namespace

FundamentalMatrix FundamentalMatrix::from(const Eigen::Matrix3d& m) {
  double norm = m.norm();
  if (!(norm > 0) || !m.allFinite())
    throw GeometryError("fundamental matrix must be finite and nonzero");
  Eigen::Matrix3d n = m / norm;
  // Sign convention: largest-magnitude entry positive, so F and -F coincide.
  int r = 0, c = 0;
  n.cwiseAbs().maxCoeff(&r, &c);
  if (n(r, c) < 0) n = -n;
  return FundamentalMatrix(n);
}

double FundamentalMatrix::rank_deficiency() const {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m_);
  return svd.singularValues()(2);
}

FundamentalMatrix FundamentalMatrix::transposed() const {
  return FundamentalMatrix::from(m_.transpose());
}

DirectedLine DirectedLine::through(const Eigen::Vector2d& point, const Eigen::Vector2d& direction) {
  double n = direction.norm();
  if (!(n > 0)) throw GeometryError("directed line needs a nonzero direction");
  return DirectedLine{point, direction / n};
}

double DirectedLine::offset(const Eigen::Vector2d& p) const {
  Eigen::Vector2d d = p - point;
  return direction.x() * d.y() - direction.y() * d.x();
}

double DirectedLine::along(const Eigen::Vector2d& p) const {
  return direction.dot(p - point);
}

Eigen::Matrix2d Similarity2::linear() const {
  Eigen::Matrix2d r;
  r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return scale * r;
}

Eigen::Vector2d Similarity2::apply(const Eigen::Vector2d& p) const {
  return linear() * p + translation;
}

Similarity2 Similarity2::inverse() const {
  Similarity2 inv;
  inv.angle = -angle;
  inv.scale = 1.0 / scale;
  inv.translation = -(inv.linear() * translation);
  return inv;
}

Epipole epipole(const FundamentalMatrix& f) { return null_vector(f.entries()); }

Epipole left_epipole(const FundamentalMatrix& f) {
  return null_vector(f.entries().transpose().eval());
}

Eigen::Vector3d epipolar_line(const FundamentalMatrix& f, const Eigen::Vector2d& p) {
  Eigen::Vector3d l = f.entries() * p.homogeneous();
  double n = l.head<2>().norm();
  if (n < 1e-12) throw GeometryError("point coincides with the epipole; epipolar line undefined");
  return l / n;
}

double sampson_distance(const FundamentalMatrix& f, const Eigen::Vector2d& p,
                        const Eigen::Vector2d& q) {
  const Eigen::Matrix3d& m = f.entries();
  Eigen::Vector3d fp = m * p.homogeneous();
  Eigen::Vector3d ftq = m.transpose() * q.homogeneous();
  double num = q.homogeneous().dot(fp);
  double den = fp.head<2>().squaredNorm() + ftq.head<2>().squaredNorm();
  if (den <= 1e-18) throw GeometryError("degenerate pair: both points at the epipoles");
  return num * num / den;
}

std::pair<DirectedLine, DirectedLine> orient_epipolar_pair(const FundamentalMatrix& f,
                                                           const DirectedLine& l1) {
  Epipole e1 = epipole(f);

  // l1 must belong to the epipolar pencil of the first image.
  if (e1.at_infinity) {
    Eigen::Vector2d d = e1.direction();
    double cross = std::abs(d.x() * l1.direction.y() - d.y() * l1.direction.x());
    if (cross > 1e-6)
      throw GeometryError("line is not parallel to the epipolar pencil direction");
  } else {
    if (std::abs(l1.offset(e1.point())) > 1.0)
      throw GeometryError("line does not pass through the epipole");
  }

  // The corresponding line as a set: F maps any point of l1 off the epipole
  // to the same homogeneous line.
  Eigen::Vector3d l2h;
  {
    bool ok = false;
    for (double t : {1.0, 2.0, 0.5, 5.0, -1.0}) {
      Eigen::Vector2d probe = l1.point + t * l1.direction;
      Eigen::Vector3d cand = f.entries() * probe.homogeneous();
      if (cand.head<2>().norm() > 1e-12) {
        l2h = cand / cand.head<2>().norm();
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("epipolar line orientation undetermined: degenerate pencil");
  }

  // Direct l2 to align with l1: of the two unit directions along l2, take
  // the one with a nonnegative dot against l1's direction. Corresponding
  // epipolar lines of two views of one scene are rotated against each other
  // by less than a right angle under the ordering assumption, so alignment
  // picks the direction in which true correspondences advance together; the
  // rectified pure-translation pair maps +x to +x under this rule.
  Eigen::Vector2d u2(-l2h.y(), l2h.x());
  Eigen::Vector2d d2 = l1.direction.dot(u2) >= 0.0 ? u2 : Eigen::Vector2d(-u2);

  // Anchor at the projection of l1's anchor onto l2.
  Eigen::Vector2d n2(l2h.x(), l2h.y());
  Eigen::Vector2d anchor = l1.point - (n2.dot(l1.point) + l2h.z()) * n2;
  return {l1, DirectedLine::through(anchor, d2)};
}

Similarity2 line_adapted_similarity(const DirectedLine& l) {
  Similarity2 g;
  g.angle = std::atan2(l.direction.y(), l.direction.x());
  g.scale = 1.0;
  g.translation = l.point;
  return g;
}

FundamentalMatrix read_fundamental(const std::filesystem::path& path) {
  std::vector<std::string> lines = split_lines(read_file(path));
  Eigen::Matrix3d m;
  int row = 0;
  for (const std::string& line : lines) {
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> vals = parse_doubles(line, "fundamental matrix file");
    if (vals.size() != 3) throw ParseError("expected 3 values per row in " + path.string());
    if (row >= 3) throw ParseError("too many rows in " + path.string());
    m.row(row) = Eigen::RowVector3d(vals[0], vals[1], vals[2]);
    ++row;
  }
  if (row != 3) throw ParseError("expected 3 rows in " + path.string());
  return FundamentalMatrix::from(m);
}

void write_fundamental(const std::filesystem::path& path, const FundamentalMatrix& f) {
  std::string out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      out += format_double(f.entries()(r, c));
      out += (c == 2) ? "\n" : " ";
    }
  }
  write_file_atomic(path, out);
}

}  // namespace ebd
