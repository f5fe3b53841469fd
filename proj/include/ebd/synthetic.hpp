#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ebd/geometry.hpp"
#include "ebd/irls.hpp"
#include "ebd/matching.hpp"
#include "ebd/triangulation.hpp"

namespace ebd {

/// Planar patch: points origin + u*axis_u + v*axis_v for (u,v) inside the
/// polygon given in patch coordinates.
struct ScenePatch {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d axis_u = Eigen::Vector3d::UnitX();
  Eigen::Vector3d axis_v = Eigen::Vector3d::UnitY();
  std::vector<Eigen::Vector2d> polygon;
  double density = 5.0;  // texture points per unit patch area
};

struct SceneSpec {
  ImageRect image_a, image_b;
  Eigen::Matrix<double, 3, 4> camera_a, camera_b;
  double noise_sigma = 0.3;      // pixels, second view
  double outlier_fraction = 0.3;
  double band_delta = 5.0;       // Sampson bound for the synthetic hard outliers
  std::uint64_t seed = 1;
  std::vector<ScenePatch> patches;

  void validate() const;
};

class GroundTruth {
 public:
  GroundTruth(SceneSpec spec, FundamentalMatrix f);

  const SceneSpec& spec() const { return spec_; }
  const FundamentalMatrix& f() const { return f_; }
  const MatchSet& candidates() const { return candidates_; }
  const std::vector<bool>& inlier_labels() const { return labels_; }

  // Noise-free dense correspondence by ray casting into the nearest patch;
  // nullopt off the patches.
  std::optional<Eigen::Vector2d> sample(const Eigen::Vector2d& p) const;

  // Synthetic descriptor sets that let the band matcher reproduce the
  // candidate pairs, plus unmatched distractors in the second view.
  std::pair<FeatureSet, FeatureSet> make_features() const;

 private:
  friend GroundTruth generate(const SceneSpec& spec);
  SceneSpec spec_;
  FundamentalMatrix f_;
  MatchSet candidates_;
  std::vector<bool> labels_;
  Eigen::Vector3d center_a_ = Eigen::Vector3d::Zero();
};

// Samples texture points on the patches, projects them into both views,
// perturbs the second view by the noise sigma and replaces the outlier
// fraction with points uniform on the epipolar band. Deterministic per seed.
GroundTruth generate(const SceneSpec& spec);

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<double> fractions;   // cumulative, aligned with thresholds
  double fraction_at_1px = 0.0;
  long samples = 0;
  long covered = 0;

  std::string to_csv() const;
  static EvalReport from_csv(const std::string& text);
};

// Dense-grid accuracy of the map against the ground-truth sampler. Samples
// the map fails to cover count as errors; throws when coverage drops below
// half.
EvalReport evaluate(const PLMap& map, const EpipolarTriangulation& t, const GroundTruth& gt,
                    const std::vector<double>& thresholds, double grid_step = 4.0);

// Cumulative-error curve as an SVG plus the raw table as CSV.
void emit_plots(const EvalReport& report, const std::filesystem::path& svg_path,
                const std::filesystem::path& csv_path);

void write_scene(const std::filesystem::path& path, const SceneSpec& spec);
SceneSpec read_scene(const std::filesystem::path& path);

// Built-in scenes; artifact choices, documented in the README.
SceneSpec default_scene();           // 3 slanted planes, noise and band outliers
SceneSpec fronto_parallel_scene();   // single fronto-parallel plane, parallel image planes

}  // namespace ebd
