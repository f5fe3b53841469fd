#include "ebd/triangulation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "ebd/errors.hpp"
#include "ebd/io.hpp"

namespace ebd {

namespace {

constexpr double kMinFaceArea = 1e-6;  // px^2

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return a.x() * b.y() - a.y() * b.x();
}

// Separating-axis test for two convex polygons; touching counts as overlap.
template <std::size_t N, std::size_t M>
bool convex_overlap(const std::array<Eigen::Vector2d, N>& a,
                    const std::array<Eigen::Vector2d, M>& b) {
  auto separated_by_edges_of = [](const auto& poly, const auto& other) {
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Vector2d edge = poly[(i + 1) % n] - poly[i];
      Eigen::Vector2d axis(-edge.y(), edge.x());
      double amin = std::numeric_limits<double>::max(), amax = -amin;
      for (const auto& p : poly) {
        double d = axis.dot(p);
        amin = std::min(amin, d);
        amax = std::max(amax, d);
      }
      double bmin = std::numeric_limits<double>::max(), bmax = -bmin;
      for (const auto& p : other) {
        double d = axis.dot(p);
        bmin = std::min(bmin, d);
        bmax = std::max(bmax, d);
      }
      if (amax < bmin || bmax < amin) return true;
    }
    return false;
  };
  return !separated_by_edges_of(a, b) && !separated_by_edges_of(b, a);
}

double distance_to_rect(const ImageRect& rect, const Eigen::Vector2d& p) {
  double dx = std::max({0.0, -p.x(), p.x() - rect.width});
  double dy = std::max({0.0, -p.y(), p.y() - rect.height});
  return std::hypot(dx, dy);
}

struct GridBuilder {
  std::vector<Eigen::Vector2d> vertices;
  std::vector<EpipolarTriangulation::Face> faces;
  std::vector<EpipolarTriangulation::VertexParam> params;
  std::map<std::pair<int, int>, int> index;  // (ray, ring) -> vertex id

  int vertex_at(int ray, int ring, const Eigen::Vector2d& pos, double param) {
    auto [it, inserted] = index.try_emplace({ray, ring}, static_cast<int>(vertices.size()));
    if (inserted) {
      vertices.push_back(pos);
      params.push_back({ray, param});
    }
    return it->second;
  }

  // v0,v1 are the endpoints of the edge on the epipolar line, in outward
  // order; the stored triple is reordered counterclockwise.
  void add_face(int v0, int v1, int v2, int ray_id, const DirectedLine& line,
                const ImageRect& rect) {
    const Eigen::Vector2d &a = vertices[v0], &b = vertices[v1], &c = vertices[v2];
    double area2 = cross2(b - a, c - a);
    if (std::abs(area2) < 2.0 * kMinFaceArea) return;  // degenerate sliver
    std::array<Eigen::Vector2d, 3> tri{a, b, c};
    if (!convex_overlap(tri, rect.corners())) return;
    EpipolarTriangulation::Face f;
    f.v = area2 > 0 ? std::array<int, 3>{v0, v1, v2} : std::array<int, 3>{v1, v0, v2};
    f.line_edge = 0;
    f.ray_id = ray_id;
    f.line = line;
    faces.push_back(f);
  }
};

}  // namespace

std::array<Eigen::Vector2d, 4> ImageRect::corners() const {
  return {Eigen::Vector2d(0, 0), Eigen::Vector2d(width, 0), Eigen::Vector2d(width, height),
          Eigen::Vector2d(0, height)};
}

EpipolarTriangulation EpipolarTriangulation::build(const ImageRect& rect,
                                                   const FundamentalMatrix& f,
                                                   const GridConfig& cfg) {
  if (!(rect.width > 0) || !(rect.height > 0)) throw ConfigError("image rectangle is empty");
  if (!(cfg.eta > 0)) throw ConfigError("grid step eta must be positive");

  Epipole e = epipole(f);
  GridBuilder gb;
  EpipolarTriangulation out;
  const double eta = cfg.eta;

  if (e.at_infinity) {
    // Parallel epipolar pencil: lines with common direction u, spaced eta
    // apart along the normal; same diagonal-split rule as the polar grid.
    Eigen::Vector2d u = e.direction();
    Eigen::Vector2d n(-u.y(), u.x());
    double tlo = 1e300, thi = -1e300, slo = 1e300, shi = -1e300;
    for (const Eigen::Vector2d& c : rect.corners()) {
      tlo = std::min(tlo, u.dot(c));
      thi = std::max(thi, u.dot(c));
      slo = std::min(slo, n.dot(c));
      shi = std::max(shi, n.dot(c));
    }
    // Fit the steps so whole cells cover the ranges exactly; slivers of
    // leftover cells would make badly conditioned cone rows.
    int nt = std::max(1, static_cast<int>(std::ceil((thi - tlo) / eta)));
    int ns = std::max(1, static_cast<int>(std::ceil((shi - slo) / eta)));
    const double dt = (thi - tlo) / nt, dsn = (shi - slo) / ns;
    auto pos = [&](int j, int k) { return Eigen::Vector2d((tlo + j * dt) * u + (slo + k * dsn) * n); };
    for (int k = 0; k < ns; ++k) {
      for (int j = 0; j < nt; ++j) {
        int p00 = gb.vertex_at(k, j, pos(j, k), tlo + j * dt);
        int p10 = gb.vertex_at(k, j + 1, pos(j + 1, k), tlo + (j + 1) * dt);
        int p01 = gb.vertex_at(k + 1, j, pos(j, k + 1), tlo + j * dt);
        int p11 = gb.vertex_at(k + 1, j + 1, pos(j + 1, k + 1), tlo + (j + 1) * dt);
        DirectedLine lo = DirectedLine::through(gb.vertices[p00], u);
        DirectedLine hi = DirectedLine::through(gb.vertices[p01], u);
        // Diagonal p00-p11; each triangle keeps a full edge on its line.
        gb.add_face(p00, p10, p11, k, lo, rect);
        gb.add_face(p01, p11, p00, k + 1, hi, rect);
      }
    }
    out.ray_count_ = ns + 1;
  } else {
    const Eigen::Vector2d ep = e.point();
    double dist = distance_to_rect(rect, ep);
    double rmin = cfg.r_min.value_or(dist < eta ? eta : 0.0);
    if (rmin < 0) throw ConfigError("r_min must be nonnegative");
    if (dist == 0.0 && rmin <= 0.0)
      throw ConfigError("epipole inside the image requires a positive r_min");

    double rlo = std::max(rmin, dist);
    double rhi = 0.0;
    for (const Eigen::Vector2d& c : rect.corners()) rhi = std::max(rhi, (c - ep).norm());
    rhi = std::max(rhi, rlo + eta);
    // Fitted radial step, so rings land exactly on [rlo, rhi].
    int nrings = static_cast<int>(std::ceil((rhi - rlo) / eta)) + 1;
    const double dr = (rhi - rlo) / (nrings - 1);

    // Angular window subtended by the rectangle, full circle if inside.
    double theta0 = 0.0, range = 2.0 * M_PI;
    bool full_circle = rect.contains(ep);
    if (!full_circle) {
      double ref = std::atan2(rect.corners()[0].y() - ep.y(), rect.corners()[0].x() - ep.x());
      double lo = 0.0, hi = 0.0;
      for (const Eigen::Vector2d& c : rect.corners()) {
        double th = std::atan2(c.y() - ep.y(), c.x() - ep.x());
        double d = std::remainder(th - ref, 2.0 * M_PI);
        lo = std::min(lo, d);
        hi = std::max(hi, d);
      }
      theta0 = ref + lo;
      range = hi - lo;
    }
    // Arc length at the image-nearest radius is ~eta, for near-isotropic cells.
    double dtheta_raw = eta / std::max(rlo, eta);
    int nsect = std::max(full_circle ? 3 : 1, static_cast<int>(std::ceil(range / dtheta_raw)));
    if (!full_circle) {
      // One extra sector of margin on each side keeps clipped corners covered.
      theta0 -= range / nsect;
      nsect += 2;
      range += 2.0 * range / (nsect - 2);
    }
    double dtheta = range / nsect;

    auto ray_dir = [&](int i) {
      double th = theta0 + i * dtheta;
      return Eigen::Vector2d(std::cos(th), std::sin(th));
    };
    for (int i = 0; i < nsect; ++i) {
      int inext = (full_circle && i + 1 == nsect) ? 0 : i + 1;
      Eigen::Vector2d u0 = ray_dir(i), u1 = ray_dir(inext == 0 ? nsect : i + 1);
      for (int k = 0; k + 1 < nrings; ++k) {
        double r0 = rlo + k * dr, r1 = rlo + (k + 1) * dr;
        int p00 = gb.vertex_at(i, k, ep + r0 * u0, r0);
        int p01 = gb.vertex_at(i, k + 1, ep + r1 * u0, r1);
        int p10 = gb.vertex_at(inext, k, ep + r0 * u1, r0);
        int p11 = gb.vertex_at(inext, k + 1, ep + r1 * u1, r1);
        DirectedLine ray0 = DirectedLine::through(gb.vertices[p00], u0);
        DirectedLine ray1 = DirectedLine::through(gb.vertices[p10], u1);
        // Diagonal p00-p11 (inner ring at ray i to outer ring at ray i+1).
        gb.add_face(p00, p01, p11, i, ray0, rect);
        gb.add_face(p10, p11, p00, inext, ray1, rect);
      }
    }
    out.ray_count_ = nsect + (full_circle ? 0 : 1);
  }

  if (gb.faces.empty()) throw ConfigError("triangulation is empty; check grid configuration");

  // Compact to the vertices actually referenced by kept faces.
  std::vector<int> remap(gb.vertices.size(), -1);
  for (const auto& face : gb.faces)
    for (int v : face.v)
      if (remap[v] < 0) {
        remap[v] = static_cast<int>(out.vertices_.size());
        out.vertices_.push_back(gb.vertices[v]);
        out.params_.push_back(gb.params[v]);
      }
  for (auto face : gb.faces) {
    for (int j = 0; j < 3; ++j) face.v[j] = remap[face.v[j]];
    out.faces_.push_back(face);
  }
  out.rect_ = rect;
  return out;
}

double EpipolarTriangulation::signed_area(int face) const {
  const Face& f = faces_[face];
  const Eigen::Vector2d &a = vertices_[f.v[0]], &b = vertices_[f.v[1]], &c = vertices_[f.v[2]];
  return 0.5 * cross2(b - a, c - a);
}

std::optional<int> EpipolarTriangulation::locate(const Eigen::Vector2d& p) const {
  for (int i = 0; i < face_count(); ++i) {
    Eigen::Vector3d bc = barycentric(i, p);
    if (bc.minCoeff() >= -1e-9) return i;
  }
  return std::nullopt;
}

Eigen::Vector3d EpipolarTriangulation::barycentric(int face, const Eigen::Vector2d& p) const {
  const Face& f = faces_[face];
  const Eigen::Vector2d &a = vertices_[f.v[0]], &b = vertices_[f.v[1]], &c = vertices_[f.v[2]];
  double area2 = cross2(b - a, c - a);
  if (std::abs(area2) < 2.0 * kMinFaceArea) throw GeometryError("degenerate face");
  double ca = cross2(b - p, c - p) / area2;
  double cb = cross2(c - p, a - p) / area2;
  return Eigen::Vector3d(ca, cb, 1.0 - ca - cb);
}

std::string EpipolarTriangulation::export_text() const {
  std::ostringstream ss;
  ss << "vertices " << vertex_count() << "\n";
  for (const auto& v : vertices_) ss << format_double(v.x()) << " " << format_double(v.y()) << "\n";
  ss << "faces " << face_count() << "\n";
  for (const auto& f : faces_)
    ss << f.v[0] << " " << f.v[1] << " " << f.v[2] << " " << f.line_edge << "\n";
  return ss.str();
}

EpipolarTriangulation EpipolarTriangulation::import_text(const std::string& text) {
  std::vector<std::string> lines = split_lines(text);
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    while (pos < lines.size() && lines[pos].find_first_not_of(" \t") == std::string::npos) ++pos;
    if (pos >= lines.size()) throw ParseError("truncated triangulation text");
    return lines[pos++];
  };

  EpipolarTriangulation out;
  std::istringstream header(next_line());
  std::string tag;
  int n = 0;
  header >> tag >> n;
  if (tag != "vertices" || n < 3) throw ParseError("bad triangulation header");
  for (int i = 0; i < n; ++i) {
    std::vector<double> v = parse_doubles(next_line(), "triangulation vertex");
    if (v.size() != 2) throw ParseError("bad vertex line");
    out.vertices_.emplace_back(v[0], v[1]);
    out.params_.push_back({0, 0.0});
  }
  std::istringstream fheader(next_line());
  int m = 0;
  fheader >> tag >> m;
  if (tag != "faces" || m < 1) throw ParseError("bad triangulation face header");
  for (int i = 0; i < m; ++i) {
    std::istringstream fs(next_line());
    Face f;
    if (!(fs >> f.v[0] >> f.v[1] >> f.v[2] >> f.line_edge)) throw ParseError("bad face line");
    for (int v : f.v)
      if (v < 0 || v >= n) throw ParseError("face references missing vertex");
    f.ray_id = 0;
    f.line = DirectedLine{Eigen::Vector2d::Zero(), Eigen::Vector2d::UnitX()};
    out.faces_.push_back(f);
  }
  double w = 0, h = 0;
  for (const auto& v : out.vertices_) {
    w = std::max(w, v.x());
    h = std::max(h, v.y());
  }
  out.rect_ = ImageRect{w, h};
  out.has_lines_ = false;
  return out;
}

void write_triangulation(const std::filesystem::path& path, const EpipolarTriangulation& t) {
  write_file_atomic(path, t.export_text());
}

EpipolarTriangulation read_triangulation(const std::filesystem::path& path) {
  return EpipolarTriangulation::import_text(read_file(path));
}

}  // namespace ebd
