#include "ebd/matching.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <random>
#include <sstream>

#include "ebd/errors.hpp"
#include "ebd/io.hpp"

namespace ebd {

void FeatureSet::validate() const {
  if (keypoints.size() != descriptors.size())
    throw ParseError("feature set keypoints and descriptors must align");
  if (!descriptors.empty()) {
    const auto dim = descriptors.front().size();
    for (const auto& d : descriptors)
      if (d.size() != dim) throw ParseError("feature descriptors must share one dimension");
  }
}

void MatchParams::validate() const {
  if (!(delta > 0)) throw ConfigError("Sampson bound delta must be positive");
  if (!(ratio > 1)) throw ConfigError("ratio factor must exceed 1");
}

MatchSet epipolar_match(const FeatureSet& a, const FeatureSet& b, const FundamentalMatrix& f,
                        const MatchParams& params) {
  a.validate();
  b.validate();
  params.validate();
  if (a.size() == 0 || b.size() == 0) throw ParseError("feature sets must be nonempty");

  MatchSet out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    int best = -1;
    double d1 = std::numeric_limits<double>::infinity();
    double d2 = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (!(sampson_distance(f, a.keypoints[i], b.keypoints[j]) < params.delta)) continue;
      double dist = (a.descriptors[i] - b.descriptors[j]).norm();
      if (dist < d1) {
        d2 = d1;
        d1 = dist;
        best = static_cast<int>(j);
      } else if (dist < d2) {
        d2 = dist;
      }
    }
    if (best < 0) continue;  // nothing inside the band
    if (d2 < params.ratio * d1) continue;
    out.p.push_back(a.keypoints[i]);
    out.q.push_back(b.keypoints[best]);
  }
  return out;
}

namespace {

// Hartley normalization: translate to the centroid, scale mean length to sqrt(2).
Eigen::Matrix3d normalizing_transform(const std::vector<Eigen::Vector2d>& pts,
                                      const std::vector<int>& idx) {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (int i : idx) mean += pts[i];
  mean /= static_cast<double>(idx.size());
  double scale = 0.0;
  for (int i : idx) scale += (pts[i] - mean).norm();
  scale /= static_cast<double>(idx.size());
  if (scale < 1e-12) scale = 1.0;
  double s = std::sqrt(2.0) / scale;
  Eigen::Matrix3d t;
  t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
  return t;
}

std::optional<FundamentalMatrix> eight_point(const MatchSet& m, const std::vector<int>& idx) {
  Eigen::Matrix3d t1 = normalizing_transform(m.p, idx);
  Eigen::Matrix3d t2 = normalizing_transform(m.q, idx);
  Eigen::MatrixXd rows(idx.size(), 9);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    Eigen::Vector3d p = t1 * m.p[idx[r]].homogeneous();
    Eigen::Vector3d q = t2 * m.q[idx[r]].homogeneous();
    rows.row(r) << q.x() * p.x(), q.x() * p.y(), q.x(), q.y() * p.x(), q.y() * p.y(), q.y(),
        p.x(), p.y(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(rows, Eigen::ComputeFullV);
  Eigen::Matrix<double, 9, 1> fvec = svd.matrixV().col(8);
  Eigen::Matrix3d fn;
  fn << fvec(0), fvec(1), fvec(2), fvec(3), fvec(4), fvec(5), fvec(6), fvec(7), fvec(8);

  // Rank-2 enforcement by singular-value truncation.
  Eigen::JacobiSVD<Eigen::Matrix3d> fsvd(fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d sv = fsvd.singularValues();
  sv(2) = 0.0;
  fn = fsvd.matrixU() * sv.asDiagonal() * fsvd.matrixV().transpose();

  Eigen::Matrix3d denorm = t2.transpose() * fn * t1;
  if (!(denorm.norm() > 0) || !denorm.allFinite()) return std::nullopt;
  return FundamentalMatrix::from(denorm);
}

// Least-squares homography fit; used only to warn about the planar degeneracy.
bool homography_consistent(const MatchSet& m, const std::vector<int>& idx) {
  if (idx.size() < 8) return false;
  Eigen::Matrix3d t1 = normalizing_transform(m.p, idx);
  Eigen::Matrix3d t2 = normalizing_transform(m.q, idx);
  Eigen::MatrixXd rows(2 * idx.size(), 9);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    Eigen::Vector3d p = t1 * m.p[idx[r]].homogeneous();
    Eigen::Vector3d q = t2 * m.q[idx[r]].homogeneous();
    rows.row(2 * r) << 0, 0, 0, -p.x(), -p.y(), -1, q.y() * p.x(), q.y() * p.y(), q.y();
    rows.row(2 * r + 1) << p.x(), p.y(), 1, 0, 0, 0, -q.x() * p.x(), -q.x() * p.y(), -q.x();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(rows, Eigen::ComputeFullV);
  Eigen::Matrix<double, 9, 1> hv = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  Eigen::Matrix3d h = t2.inverse() * hn * t1;

  int good = 0;
  for (int i : idx) {
    Eigen::Vector3d q = h * m.p[i].homogeneous();
    if (std::abs(q.z()) < 1e-12) continue;
    if ((q.hnormalized() - m.q[i]).norm() < 3.0) ++good;
  }
  return good >= static_cast<int>(0.9 * idx.size());
}

}  // namespace

FundamentalEstimate estimate_fundamental(const MatchSet& matches, const RansacParams& params) {
  const int n = static_cast<int>(matches.size());
  if (n < 8) throw ParseError("fundamental estimation needs at least 8 pairs");

  FundamentalEstimate best;
  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;

  for (int iter = 0; iter < params.iterations; ++iter) {
    // Per-iteration generator derived from the master seed, so iterations
    // could run in parallel without changing the result.
    std::mt19937_64 rng(params.seed * 0x9e3779b97f4a7c15ULL + iter + 1);
    std::vector<int> sample;
    while (sample.size() < 8) {
      int cand = static_cast<int>(rng() % n);
      if (std::find(sample.begin(), sample.end(), cand) == sample.end())
        sample.push_back(cand);
    }
    std::optional<FundamentalMatrix> f = eight_point(matches, sample);
    if (!f) continue;

    std::vector<bool> inl(n, false);
    int count = 0;
    for (int i = 0; i < n; ++i) {
      double d;
      try {
        d = sampson_distance(*f, matches.p[i], matches.q[i]);
      } catch (const GeometryError&) {
        continue;
      }
      if (d < params.inlier_threshold) {
        inl[i] = true;
        ++count;
      }
    }
    if (count > best.consensus_size) {
      best.consensus_size = count;
      best.consensus = inl;
      best.f = f;
    }
  }

  if (best.consensus_size < 8) {
    best.f.reset();
    return best;
  }

  // Refit on the final consensus.
  std::vector<int> idx;
  for (int i = 0; i < n; ++i)
    if (best.consensus[i]) idx.push_back(i);
  if (std::optional<FundamentalMatrix> refit = eight_point(matches, idx)) best.f = refit;
  best.degenerate_warning = homography_consistent(matches, idx);
  return best;
}

FeatureSet read_features(const std::filesystem::path& path) {
  std::vector<std::string> lines = split_lines(read_file(path));
  FeatureSet fs;
  long dim = -1;
  for (const std::string& line : lines) {
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (dim < 0) {
      std::istringstream ls(line);
      std::string tag;
      ls >> tag >> dim;
      if (tag != "dim" || dim < 1) throw ParseError("feature file must start with 'dim D'");
      continue;
    }
    std::vector<double> vals = parse_doubles(line, "feature file");
    if (static_cast<long>(vals.size()) != dim + 2)
      throw ParseError("feature line has wrong arity in " + path.string());
    fs.keypoints.emplace_back(vals[0], vals[1]);
    Eigen::VectorXd d(dim);
    for (long j = 0; j < dim; ++j) d(j) = vals[2 + j];
    fs.descriptors.push_back(std::move(d));
  }
  if (dim < 0) throw ParseError("feature file missing header: " + path.string());
  fs.validate();
  return fs;
}

void write_features(const std::filesystem::path& path, const FeatureSet& fs) {
  fs.validate();
  std::ostringstream ss;
  long dim = fs.descriptors.empty() ? 0 : fs.descriptors.front().size();
  ss << "dim " << dim << "\n";
  for (std::size_t i = 0; i < fs.size(); ++i) {
    ss << format_double(fs.keypoints[i].x()) << " " << format_double(fs.keypoints[i].y());
    for (long j = 0; j < dim; ++j) ss << " " << format_double(fs.descriptors[i](j));
    ss << "\n";
  }
  write_file_atomic(path, ss.str());
}

MatchSet read_matches(const std::filesystem::path& path) {
  std::vector<std::string> lines = split_lines(read_file(path));
  MatchSet ms;
  bool header_seen = false;
  for (const std::string& line : lines) {
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (!header_seen) {
      if (line != "x1,y1,x2,y2") throw ParseError("match file must start with 'x1,y1,x2,y2'");
      header_seen = true;
      continue;
    }
    std::string spaced = line;
    std::replace(spaced.begin(), spaced.end(), ',', ' ');
    std::vector<double> vals = parse_doubles(spaced, "match file");
    if (vals.size() != 4) throw ParseError("match line needs 4 values in " + path.string());
    ms.p.emplace_back(vals[0], vals[1]);
    ms.q.emplace_back(vals[2], vals[3]);
  }
  if (!header_seen) throw ParseError("match file missing header: " + path.string());
  return ms;
}

void write_matches(const std::filesystem::path& path, const MatchSet& ms) {
  std::ostringstream ss;
  ss << "x1,y1,x2,y2\n";
  for (std::size_t i = 0; i < ms.size(); ++i)
    ss << format_double(ms.p[i].x()) << "," << format_double(ms.p[i].y()) << ","
       << format_double(ms.q[i].x()) << "," << format_double(ms.q[i].y()) << "\n";
  write_file_atomic(path, ss.str());
}

}  // namespace ebd
