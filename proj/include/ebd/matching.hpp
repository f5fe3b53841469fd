#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ebd/geometry.hpp"
#include "ebd/irls.hpp"

namespace ebd {

struct FeatureSet {
  std::vector<Eigen::Vector2d> keypoints;
  std::vector<Eigen::VectorXd> descriptors;  // uniform dimension

  std::size_t size() const { return keypoints.size(); }
  void validate() const;
};

struct MatchParams {
  double delta = 5.0;  // Sampson-distance bound
  double ratio = 2.0;  // second-best / best descriptor-distance factor

  void validate() const;
};

// Nearest-descriptor matching from A to B restricted to the epipolar band
// sampson_distance(F, p, q) < delta, accepted when the second-best candidate
// inside the band is at least `ratio` times worse (a single candidate always
// passes). Matching is directional: A -> B only.
MatchSet epipolar_match(const FeatureSet& a, const FeatureSet& b, const FundamentalMatrix& f,
                        const MatchParams& params);

struct RansacParams {
  int iterations = 2000;
  double inlier_threshold = 1.0;  // Sampson distance, px^2
  std::uint64_t seed = 0;
};

struct FundamentalEstimate {
  std::optional<FundamentalMatrix> f;
  std::vector<bool> consensus;
  int consensus_size = 0;
  // Set when the consensus is consistent with a single homography, the
  // classic degeneracy of the eight-point problem.
  bool degenerate_warning = false;
};

// Normalized eight-point estimation over RANSAC consensus with rank-2
// enforcement and a final refit; deterministic given the seed.
FundamentalEstimate estimate_fundamental(const MatchSet& matches, const RansacParams& params);

// Feature file: header "dim D", then one line "x y d1 ... dD" per feature.
FeatureSet read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const FeatureSet& fs);

// Match file: header "x1,y1,x2,y2", one comma-separated pair per line.
MatchSet read_matches(const std::filesystem::path& path);
void write_matches(const std::filesystem::path& path, const MatchSet& ms);

}  // namespace ebd
