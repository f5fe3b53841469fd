#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ebd/program.hpp"
#include "ebd/triangulation.hpp"

namespace ebd {

struct IRLSConfig {
  double p = 0.001;
  std::optional<double> eps_init;  // defaults to the image diameter
  double eps_final = 1.0;          // pixels
  double eps_factor = 0.5;
  double mu = 0.6;
  double inner_tol = 1e-6;  // relative energy change
  int inner_max_iter = 50;
  double solver_tol = 1e-8;
  // Degenerate programs (very few matches) can need a long monotone tail.
  int solver_max_iter = 500;
  std::optional<double> inlier_threshold;  // defaults to 2 * eps_final

  void validate() const;
};

/// Candidate correspondences between the two images.
struct MatchSet {
  std::vector<Eigen::Vector2d> p;  // image I
  std::vector<Eigen::Vector2d> q;  // image J

  std::size_t size() const { return p.size(); }
};

struct PhaseTrace {
  double eps = 0.0;
  std::vector<double> energies;  // one entry per inner solve
};

struct SolveReport {
  PLMap map;
  MatchSet matches;
  std::vector<double> residuals;  // ||Phi(p_m) - q_m||; NaN when dropped
  std::vector<bool> located;      // p_m found a containing face at ingest
  std::vector<bool> inliers;
  int dropped = 0;
  std::vector<PhaseTrace> trace;
  std::vector<int> underconstrained_rays;  // rays with zero match terms
  double inlier_threshold = 2.0;

  std::string serialize() const;
  static SolveReport deserialize(const std::string& text);
};

// Robust residual surrogate: r^p above eps, the matching C1 quadratic below.
double g_pe(double r, double p, double eps);

// IRLS weight max(s, eps)^(p-2); the induced quadratic majorizes g_pe.
double majorizer_weight(double s, double p, double eps);

// Outer optimization: majorize-minimize at fixed eps until the relative
// energy change drops below inner_tol, then shrink eps geometrically while
// eps > eps_final.
SolveReport run(const EpipolarTriangulation& t, const FundamentalMatrix& f,
                const MatchSet& matches, const IRLSConfig& cfg);

std::vector<bool> classify_inliers(const SolveReport& report, double threshold);

// Piecewise-linear evaluation of the map at p; nullopt outside the domain.
std::optional<Eigen::Vector2d> evaluate_map(const PLMap& map, const EpipolarTriangulation& t,
                                            const Eigen::Vector2d& p);

void write_report(const std::filesystem::path& path, const SolveReport& report);
SolveReport read_report(const std::filesystem::path& path);

}  // namespace ebd
