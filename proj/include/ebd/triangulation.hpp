#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <optional>
#include <vector>

#include "ebd/geometry.hpp"

namespace ebd {

struct ImageRect {
  double width = 0.0;
  double height = 0.0;

  bool contains(const Eigen::Vector2d& p, double margin = 0.0) const {
    return p.x() >= -margin && p.y() >= -margin && p.x() <= width + margin &&
           p.y() <= height + margin;
  }
  double diameter() const { return std::sqrt(width * width + height * height); }
  std::array<Eigen::Vector2d, 4> corners() const;
};

struct GridConfig {
  double eta = 25.0;  // radial step, pixels
  // Minimum radius around a finite epipole. Unset means automatic: eta when
  // the epipole is inside or within eta of the image, zero otherwise.
  std::optional<double> r_min;
};

/// Triangulation of the source image in which every face has one full edge
/// on an epipolar line. Immutable after build.
class EpipolarTriangulation {
 public:
  struct Face {
    std::array<int, 3> v;  // counterclockwise
    int line_edge;         // local edge index k: edge (v[k], v[(k+1)%3]) lies on the line
    int ray_id;
    DirectedLine line;  // the epipolar line, directed away from the epipole
  };
  struct VertexParam {
    int ray_id;
    double param;  // radius (finite epipole) or along-line coordinate (parallel pencil)
  };

  static EpipolarTriangulation build(const ImageRect& rect, const FundamentalMatrix& f,
                                     const GridConfig& cfg);

  int vertex_count() const { return static_cast<int>(vertices_.size()); }
  int face_count() const { return static_cast<int>(faces_.size()); }
  const Eigen::Vector2d& vertex(int i) const { return vertices_[i]; }
  const std::vector<Eigen::Vector2d>& vertices() const { return vertices_; }
  const Face& face(int i) const { return faces_[i]; }
  const std::vector<Face>& faces() const { return faces_; }
  const VertexParam& vertex_param(int i) const { return params_[i]; }
  int ray_count() const { return ray_count_; }
  const ImageRect& rect() const { return rect_; }
  bool has_lines() const { return has_lines_; }

  // Lowest-index face containing p (boundary inclusive), or nullopt.
  std::optional<int> locate(const Eigen::Vector2d& p) const;

  // Barycentric coordinates of p in the given face; they sum to one exactly.
  Eigen::Vector3d barycentric(int face, const Eigen::Vector2d& p) const;

  double signed_area(int face) const;

  // Structured-text export: "vertices N" then "x y" lines, "faces M" then
  // "i j k edge-id" lines. The import supports locate/barycentric only; the
  // directed lines are not representable in this format.
  std::string export_text() const;
  static EpipolarTriangulation import_text(const std::string& text);

 private:
  std::vector<Eigen::Vector2d> vertices_;
  std::vector<Face> faces_;
  std::vector<VertexParam> params_;
  int ray_count_ = 0;
  ImageRect rect_;
  bool has_lines_ = true;
};

void write_triangulation(const std::filesystem::path& path, const EpipolarTriangulation& t);
EpipolarTriangulation read_triangulation(const std::filesystem::path& path);

}  // namespace ebd
