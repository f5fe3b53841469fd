#include "ebd/synthetic.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "ebd/errors.hpp"
#include "ebd/io.hpp"

namespace ebd {

namespace {

Eigen::Vector3d camera_center(const Eigen::Matrix<double, 3, 4>& p) {
  Eigen::JacobiSVD<Eigen::Matrix<double, 3, 4>> svd(p, Eigen::ComputeFullV);
  Eigen::Vector4d c = svd.matrixV().col(3);
  if (std::abs(c(3)) < 1e-14) throw ConfigError("camera center at infinity is unsupported");
  return c.head<3>() / c(3);
}

// Projection with positive-depth check.
std::optional<Eigen::Vector2d> project(const Eigen::Matrix<double, 3, 4>& p,
                                       const Eigen::Vector3d& x) {
  Eigen::Vector3d y = p * x.homogeneous();
  if (y.z() <= 1e-12) return std::nullopt;
  return Eigen::Vector2d(y.hnormalized());
}

bool inside_polygon(const std::vector<Eigen::Vector2d>& poly, const Eigen::Vector2d& p) {
  bool in = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if ((poly[i].y() > p.y()) != (poly[j].y() > p.y()) &&
        p.x() < (poly[j].x() - poly[i].x()) * (p.y() - poly[i].y()) /
                        (poly[j].y() - poly[i].y()) +
                    poly[i].x())
      in = !in;
  }
  return in;
}

double polygon_area(const std::vector<Eigen::Vector2d>& poly) {
  double a = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++)
    a += poly[j].x() * poly[i].y() - poly[i].x() * poly[j].y();
  return 0.5 * std::abs(a);
}

FundamentalMatrix fundamental_from_cameras(const Eigen::Matrix<double, 3, 4>& pa,
                                           const Eigen::Matrix<double, 3, 4>& pb) {
  Eigen::Vector3d ca = camera_center(pa);
  Eigen::Vector3d eb = pb * ca.homogeneous();  // epipole in image B
  Eigen::Matrix3d cross;
  cross << 0, -eb.z(), eb.y(), eb.z(), 0, -eb.x(), -eb.y(), eb.x(), 0;
  Eigen::Matrix<double, 4, 3> pinv =
      pa.transpose() * (pa * pa.transpose()).inverse();
  return FundamentalMatrix::from(cross * pb * pinv);
}

}  // namespace

void SceneSpec::validate() const {
  if (!(image_a.width > 0 && image_a.height > 0 && image_b.width > 0 && image_b.height > 0))
    throw ConfigError("scene images must be nonempty");
  if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0))
    throw ConfigError("outlier fraction must lie in [0,1)");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be nonnegative");
  if (patches.empty()) throw ConfigError("scene needs at least one patch");
  for (const ScenePatch& patch : patches) {
    if (patch.polygon.size() < 3) throw ConfigError("patch polygon needs at least 3 vertices");
    if (!(patch.density > 0)) throw ConfigError("patch density must be positive");
    for (const Eigen::Vector2d& uv : patch.polygon) {
      Eigen::Vector3d x = patch.origin + uv.x() * patch.axis_u + uv.y() * patch.axis_v;
      if (!project(camera_a, x) || !project(camera_b, x))
        throw ConfigError("patch corner behind a camera");
    }
  }
}

GroundTruth::GroundTruth(SceneSpec spec, FundamentalMatrix f)
    : spec_(std::move(spec)), f_(f), center_a_(camera_center(spec_.camera_a)) {}

std::optional<Eigen::Vector2d> GroundTruth::sample(const Eigen::Vector2d& p) const {
  // Ray through the first camera center and the pixel; nearest patch hit.
  Eigen::Matrix<double, 4, 3> pinv = spec_.camera_a.transpose() *
                                     (spec_.camera_a * spec_.camera_a.transpose()).inverse();
  Eigen::Vector4d x0 = pinv * p.homogeneous();
  Eigen::Vector3d dir;
  if (std::abs(x0(3)) > 1e-12)
    dir = x0.head<3>() / x0(3) - center_a_;
  else
    dir = x0.head<3>();

  double best_t = std::numeric_limits<double>::infinity();
  Eigen::Vector3d best_x = Eigen::Vector3d::Zero();
  for (const ScenePatch& patch : spec_.patches) {
    Eigen::Matrix3d m;
    m.col(0) = patch.axis_u;
    m.col(1) = patch.axis_v;
    m.col(2) = -dir;
    if (std::abs(m.determinant()) < 1e-14) continue;  // ray parallel to the plane
    Eigen::Vector3d uvt = m.inverse() * (center_a_ - patch.origin);
    if (uvt(2) <= 1e-9 || uvt(2) >= best_t) continue;
    if (!inside_polygon(patch.polygon, uvt.head<2>())) continue;
    best_t = uvt(2);
    best_x = patch.origin + uvt(0) * patch.axis_u + uvt(1) * patch.axis_v;
  }
  if (!std::isfinite(best_t)) return std::nullopt;
  std::optional<Eigen::Vector2d> q = project(spec_.camera_b, best_x);
  // A correspondence exists only where the point is observed in both views.
  if (q && !spec_.image_b.contains(*q)) return std::nullopt;
  return q;
}

std::pair<FeatureSet, FeatureSet> GroundTruth::make_features() const {
  constexpr int kDim = 8;
  std::mt19937_64 rng(spec_.seed ^ 0xfeedfacecafebeefULL);
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> ux(0.0, spec_.image_b.width);
  std::uniform_real_distribution<double> uy(0.0, spec_.image_b.height);

  FeatureSet fa, fb;
  for (std::size_t i = 0; i < candidates_.size(); ++i) {
    Eigen::VectorXd base(kDim);
    for (int j = 0; j < kDim; ++j) base(j) = gauss(rng);
    Eigen::VectorXd da = base, db = base;
    for (int j = 0; j < kDim; ++j) {
      da(j) += 0.05 * gauss(rng);
      db(j) += 0.05 * gauss(rng);
    }
    fa.keypoints.push_back(candidates_.p[i]);
    fa.descriptors.push_back(da);
    fb.keypoints.push_back(candidates_.q[i]);
    fb.descriptors.push_back(db);
  }
  // Unrelated distractors in the second view exercise the ratio test.
  const std::size_t distractors = candidates_.size() / 2;
  for (std::size_t i = 0; i < distractors; ++i) {
    Eigen::VectorXd d(kDim);
    for (int j = 0; j < kDim; ++j) d(j) = gauss(rng);
    fb.keypoints.emplace_back(ux(rng), uy(rng));
    fb.descriptors.push_back(d);
  }
  return {fa, fb};
}

GroundTruth generate(const SceneSpec& spec) {
  spec.validate();
  GroundTruth gt(spec, fundamental_from_cameras(spec.camera_a, spec.camera_b));

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss;

  // Texture points per patch, uniform on the polygon by rejection.
  std::vector<Eigen::Vector2d> ps, qs;
  for (const ScenePatch& patch : spec.patches) {
    double ulo = 1e300, uhi = -1e300, vlo = 1e300, vhi = -1e300;
    for (const Eigen::Vector2d& c : patch.polygon) {
      ulo = std::min(ulo, c.x());
      uhi = std::max(uhi, c.x());
      vlo = std::min(vlo, c.y());
      vhi = std::max(vhi, c.y());
    }
    std::uniform_real_distribution<double> du(ulo, uhi), dv(vlo, vhi);
    const int want = std::max(1, static_cast<int>(std::lround(patch.density * polygon_area(patch.polygon))));
    int made = 0, guard = 0;
    while (made < want && guard < want * 1000) {
      ++guard;
      Eigen::Vector2d uv(du(rng), dv(rng));
      if (!inside_polygon(patch.polygon, uv)) continue;
      Eigen::Vector3d x = patch.origin + uv.x() * patch.axis_u + uv.y() * patch.axis_v;
      auto pa = project(spec.camera_a, x);
      auto pb = project(spec.camera_b, x);
      ++made;
      if (!pa || !pb) continue;
      if (!spec.image_a.contains(*pa) || !spec.image_b.contains(*pb)) continue;
      ps.push_back(*pa);
      qs.push_back(*pb);
    }
  }
  if (ps.empty()) throw ConfigError("scene produced no visible texture points");

  const int n = static_cast<int>(ps.size());
  gt.labels_.assign(n, true);

  // Outliers: a deterministic random subset replaced by points uniform on
  // the epipolar band, mimicking repeated texture along the line.
  const int n_out = static_cast<int>(std::floor(spec.outlier_fraction * n));
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_real_distribution<double> ux(0.0, spec.image_b.width);
  std::uniform_real_distribution<double> uy(0.0, spec.image_b.height);
  for (int k = 0; k < n_out; ++k) {
    int i = order[k];
    for (int guard = 0; guard < 100000; ++guard) {
      Eigen::Vector2d q(ux(rng), uy(rng));
      if (sampson_distance(gt.f_, ps[i], q) < spec.band_delta) {
        qs[i] = q;
        gt.labels_[i] = false;
        break;
      }
    }
  }

  // Gaussian pixel noise on the second-view inlier points.
  for (int i = 0; i < n; ++i) {
    if (!gt.labels_[i] || spec.noise_sigma == 0.0) continue;
    qs[i].x() += spec.noise_sigma * gauss(rng);
    qs[i].y() += spec.noise_sigma * gauss(rng);
  }

  gt.candidates_.p = std::move(ps);
  gt.candidates_.q = std::move(qs);
  return gt;
}

EvalReport evaluate(const PLMap& map, const EpipolarTriangulation& t, const GroundTruth& gt,
                    const std::vector<double>& thresholds, double grid_step) {
  if (!(grid_step > 0)) throw ConfigError("evaluation grid step must be positive");
  EvalReport report;
  report.thresholds = thresholds;
  std::sort(report.thresholds.begin(), report.thresholds.end());

  std::vector<double> errors;
  const ImageRect& rect = gt.spec().image_a;
  for (double y = 0.5 * grid_step; y < rect.height; y += grid_step) {
    for (double x = 0.5 * grid_step; x < rect.width; x += grid_step) {
      Eigen::Vector2d p(x, y);
      std::optional<Eigen::Vector2d> q_true = gt.sample(p);
      if (!q_true) continue;
      ++report.samples;
      std::optional<Eigen::Vector2d> q_map = evaluate_map(map, t, p);
      if (!q_map) {
        errors.push_back(std::numeric_limits<double>::infinity());
        continue;
      }
      ++report.covered;
      errors.push_back((*q_map - *q_true).norm());
    }
  }
  if (report.samples == 0) throw ConfigError("ground truth covers no evaluation samples");
  if (report.covered < (report.samples + 1) / 2)
    throw ConfigError("map domain covers less than half of the evaluation samples");

  auto fraction_within = [&](double thr) {
    long count = std::count_if(errors.begin(), errors.end(), [&](double e) { return e <= thr; });
    return static_cast<double>(count) / static_cast<double>(report.samples);
  };
  for (double thr : report.thresholds) report.fractions.push_back(fraction_within(thr));
  report.fraction_at_1px = fraction_within(1.0);
  return report;
}

std::string EvalReport::to_csv() const {
  std::ostringstream ss;
  ss << "threshold,fraction\n";
  for (std::size_t i = 0; i < thresholds.size(); ++i)
    ss << format_double(thresholds[i]) << "," << format_double(fractions[i]) << "\n";
  return ss.str();
}

EvalReport EvalReport::from_csv(const std::string& text) {
  std::vector<std::string> lines = split_lines(text);
  EvalReport r;
  bool header = false;
  for (const std::string& line : lines) {
    if (line.empty()) continue;
    if (!header) {
      if (line != "threshold,fraction") throw ParseError("bad eval table header");
      header = true;
      continue;
    }
    std::string spaced = line;
    std::replace(spaced.begin(), spaced.end(), ',', ' ');
    std::vector<double> vals = parse_doubles(spaced, "eval table");
    if (vals.size() != 2) throw ParseError("bad eval table row");
    r.thresholds.push_back(vals[0]);
    r.fractions.push_back(vals[1]);
  }
  if (!header) throw ParseError("eval table missing header");
  return r;
}

void emit_plots(const EvalReport& report, const std::filesystem::path& svg_path,
                const std::filesystem::path& csv_path) {
  write_file_atomic(csv_path, report.to_csv());

  const double w = 480, h = 320, ml = 48, mb = 36, mt = 16, mr = 16;
  double tmax = 1.0;
  for (double t : report.thresholds) tmax = std::max(tmax, t);
  auto px = [&](double t) { return ml + (w - ml - mr) * (t / tmax); };
  auto py = [&](double f) { return h - mb - (h - mb - mt) * f; };

  std::ostringstream ss;
  ss << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  ss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  ss << "  <rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"white\"/>\n";
  ss << "  <line x1=\"" << ml << "\" y1=\"" << py(0) << "\" x2=\"" << w - mr << "\" y2=\""
     << py(0) << "\" stroke=\"black\"/>\n";
  ss << "  <line x1=\"" << ml << "\" y1=\"" << py(0) << "\" x2=\"" << ml << "\" y2=\"" << mt
     << "\" stroke=\"black\"/>\n";
  ss << "  <text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 8
     << "\" font-size=\"12\" text-anchor=\"middle\">error threshold (px)</text>\n";
  ss << "  <text x=\"14\" y=\"" << (mt + h - mb) / 2
     << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
     << (mt + h - mb) / 2 << ")\">fraction within</text>\n";
  if (!report.thresholds.empty()) {
    ss << "  <polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < report.thresholds.size(); ++i) {
      ss << px(report.thresholds[i]) << "," << py(report.fractions[i]);
      if (i + 1 < report.thresholds.size()) ss << " ";
    }
    ss << "\"/>\n";
    for (std::size_t i = 0; i < report.thresholds.size(); ++i)
      ss << "  <circle cx=\"" << px(report.thresholds[i]) << "\" cy=\""
         << py(report.fractions[i]) << "\" r=\"2.5\" fill=\"#1f6fb2\"/>\n";
  }
  ss << "</svg>\n";
  write_file_atomic(svg_path, ss.str());
}

namespace {

void write_vec3(std::ostringstream& ss, const char* tag, const Eigen::Vector3d& v) {
  ss << tag << " " << format_double(v.x()) << " " << format_double(v.y()) << " "
     << format_double(v.z()) << "\n";
}

}  // namespace

void write_scene(const std::filesystem::path& path, const SceneSpec& spec) {
  std::ostringstream ss;
  ss << "ebd-scene 1\n";
  ss << "image-a " << format_double(spec.image_a.width) << " "
     << format_double(spec.image_a.height) << "\n";
  ss << "image-b " << format_double(spec.image_b.width) << " "
     << format_double(spec.image_b.height) << "\n";
  for (int cam = 0; cam < 2; ++cam) {
    const auto& p = cam == 0 ? spec.camera_a : spec.camera_b;
    ss << (cam == 0 ? "camera-a" : "camera-b");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) ss << " " << format_double(p(r, c));
    ss << "\n";
  }
  ss << "noise-sigma " << format_double(spec.noise_sigma) << "\n";
  ss << "outlier-fraction " << format_double(spec.outlier_fraction) << "\n";
  ss << "band-delta " << format_double(spec.band_delta) << "\n";
  ss << "seed " << spec.seed << "\n";
  ss << "patches " << spec.patches.size() << "\n";
  for (const ScenePatch& patch : spec.patches) {
    ss << "patch\n";
    write_vec3(ss, "origin", patch.origin);
    write_vec3(ss, "axis-u", patch.axis_u);
    write_vec3(ss, "axis-v", patch.axis_v);
    ss << "density " << format_double(patch.density) << "\n";
    ss << "polygon " << patch.polygon.size() << "\n";
    for (const Eigen::Vector2d& c : patch.polygon)
      ss << format_double(c.x()) << " " << format_double(c.y()) << "\n";
  }
  write_file_atomic(path, ss.str());
}

SceneSpec read_scene(const std::filesystem::path& path) {
  std::vector<std::string> lines = split_lines(read_file(path));
  std::size_t pos = 0;
  auto next = [&]() -> std::string {
    while (pos < lines.size() && lines[pos].find_first_not_of(" \t") == std::string::npos) ++pos;
    if (pos >= lines.size()) throw ParseError("truncated scene file");
    return lines[pos++];
  };
  auto expect = [&](const std::string& tag) -> std::istringstream {
    std::string line = next();
    std::istringstream ls(line);
    std::string got;
    ls >> got;
    if (got != tag) throw ParseError("scene file: expected '" + tag + "', got '" + got + "'");
    return ls;
  };

  if (next() != "ebd-scene 1") throw ParseError("not a scene file");
  SceneSpec spec;
  expect("image-a") >> spec.image_a.width >> spec.image_a.height;
  expect("image-b") >> spec.image_b.width >> spec.image_b.height;
  {
    auto ls = expect("camera-a");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        if (!(ls >> spec.camera_a(r, c))) throw ParseError("scene file: short camera-a");
  }
  {
    auto ls = expect("camera-b");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        if (!(ls >> spec.camera_b(r, c))) throw ParseError("scene file: short camera-b");
  }
  expect("noise-sigma") >> spec.noise_sigma;
  expect("outlier-fraction") >> spec.outlier_fraction;
  expect("band-delta") >> spec.band_delta;
  expect("seed") >> spec.seed;
  long npatches = 0;
  expect("patches") >> npatches;
  for (long i = 0; i < npatches; ++i) {
    expect("patch");
    ScenePatch patch;
    expect("origin") >> patch.origin.x() >> patch.origin.y() >> patch.origin.z();
    expect("axis-u") >> patch.axis_u.x() >> patch.axis_u.y() >> patch.axis_u.z();
    expect("axis-v") >> patch.axis_v.x() >> patch.axis_v.y() >> patch.axis_v.z();
    expect("density") >> patch.density;
    long nverts = 0;
    expect("polygon") >> nverts;
    for (long vtx = 0; vtx < nverts; ++vtx) {
      std::vector<double> vals = parse_doubles(next(), "scene polygon");
      if (vals.size() != 2) throw ParseError("scene polygon vertex needs 2 values");
      patch.polygon.emplace_back(vals[0], vals[1]);
    }
    spec.patches.push_back(std::move(patch));
  }
  spec.validate();
  return spec;
}

namespace {

Eigen::Matrix3d intrinsics() {
  Eigen::Matrix3d k;
  k << 400, 0, 80, 0, 400, 112, 0, 0, 1;
  return k;
}

Eigen::Matrix<double, 3, 4> make_camera(const Eigen::Matrix3d& r, const Eigen::Vector3d& center) {
  Eigen::Matrix<double, 3, 4> rt;
  rt.leftCols<3>() = r;
  rt.col(3) = -r * center;
  return intrinsics() * rt;
}

std::vector<Eigen::Vector2d> rect_polygon(double hu, double hv) {
  return {Eigen::Vector2d(-hu, -hv), Eigen::Vector2d(hu, -hv), Eigen::Vector2d(hu, hv),
          Eigen::Vector2d(-hu, hv)};
}

}  // namespace

SceneSpec default_scene() {
  SceneSpec spec;
  spec.image_a = {160, 224};
  spec.image_b = {160, 224};
  spec.camera_a = make_camera(Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero());
  // Yaw roughly atan(baseline/depth) re-centers the scene in the second
  // view, so the same patches stay visible in both.
  Eigen::Matrix3d r =
      (Eigen::AngleAxisd(-2.6 * M_PI / 180.0, Eigen::Vector3d::UnitY()) *
       Eigen::AngleAxisd(0.5 * M_PI / 180.0, Eigen::Vector3d::UnitX()))
          .toRotationMatrix();
  spec.camera_b = make_camera(r, Eigen::Vector3d(0.45, 0.05, -0.04));
  spec.noise_sigma = 0.3;
  spec.outlier_fraction = 0.3;
  spec.band_delta = 5.0;
  spec.seed = 7;

  // Three slanted strips forming a continuous piecewise-planar relief: the
  // depths agree at the shared edges, so the surface creases without
  // jumping. Slants stay under 45 degrees.
  const double am = -0.2, al = 0.55, ar = -0.58;  // slant angles about y
  const double zm = 9.7;                          // middle depth at x = 0
  const double xl = -0.70, xr = 0.70;             // crease x positions
  const double zl_edge = zm + xl * std::tan(am);  // depth at the left crease
  const double zr_edge = zm + xr * std::tan(am);
  const double half_l = 0.62, half_m = 0.70, half_r = 0.62;
  const double half_v = 2.3;
  const double density = 20.8;

  ScenePatch middle;
  middle.origin = Eigen::Vector3d(0.0, 0.0, zm);
  middle.axis_u = Eigen::Vector3d(std::cos(am), 0.0, std::sin(am));
  middle.axis_v = Eigen::Vector3d::UnitY();
  middle.polygon = rect_polygon(half_m, half_v);
  middle.density = density;

  ScenePatch left;
  {
    double xc = xl - half_l * std::cos(al);
    double zc = zl_edge - half_l * std::sin(al);
    left.origin = Eigen::Vector3d(xc, 0.0, zc);
    left.axis_u = Eigen::Vector3d(std::cos(al), 0.0, std::sin(al));
    left.axis_v = Eigen::Vector3d::UnitY();
    left.polygon = rect_polygon(half_l, half_v);
    left.density = density;
  }

  ScenePatch right;
  {
    double xc = xr + half_r * std::cos(ar);
    double zc = zr_edge + half_r * std::sin(ar);
    right.origin = Eigen::Vector3d(xc, 0.0, zc);
    right.axis_u = Eigen::Vector3d(std::cos(ar), 0.0, std::sin(ar));
    right.axis_v = Eigen::Vector3d::UnitY();
    right.polygon = rect_polygon(half_r, half_v);
    right.density = density;
  }

  spec.patches = {left, middle, right};
  return spec;
}

SceneSpec fronto_parallel_scene() {
  SceneSpec spec;
  spec.image_a = {160, 224};
  spec.image_b = {160, 224};
  spec.camera_a = make_camera(Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero());
  spec.camera_b = make_camera(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.2, 0.0, 0.0));
  spec.noise_sigma = 0.0;
  spec.outlier_fraction = 0.0;
  spec.seed = 11;

  // One plane extending past both views, densely textured, so every face of
  // the triangulation receives matches.
  ScenePatch plane;
  plane.origin = Eigen::Vector3d(0.1, 0.0, 10.0);
  plane.axis_u = Eigen::Vector3d::UnitX();
  plane.axis_v = Eigen::Vector3d::UnitY();
  plane.polygon = rect_polygon(2.3, 3.05);
  plane.density = 60.0;
  spec.patches = {plane};
  return spec;
}

}  // namespace ebd
