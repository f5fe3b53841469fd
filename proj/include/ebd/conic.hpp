#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <string>
#include <vector>

namespace ebd {

/// One second-order cone constraint ||M x + m|| <= r'x + s.
struct ConeBlock {
  Eigen::SparseMatrix<double> M;  // k x n
  Eigen::VectorXd m;              // k
  Eigen::SparseVector<double> r;  // n
  double s = 0.0;
};

/// minimize (1/2) x'P x + q'x + c0
/// s.t.     A x = b,  G x <= h,  cone blocks.
struct ConicProblem {
  int n = 0;
  Eigen::SparseMatrix<double> P;  // n x n symmetric PSD, full storage
  Eigen::VectorXd q;
  double c0 = 0.0;
  Eigen::SparseMatrix<double> A;  // p x n
  Eigen::VectorXd b;
  Eigen::SparseMatrix<double> G;  // l x n
  Eigen::VectorXd h;
  std::vector<ConeBlock> cones;

  // Dimension consistency plus a randomized PSD probe of P.
  void validate() const;

  std::string dump() const;
  static ConicProblem parse(const std::string& text);
};

enum class SolveStatus { optimal, infeasible, max_iterations };

const char* to_string(SolveStatus s);

struct SolverResult {
  SolveStatus status = SolveStatus::max_iterations;
  Eigen::VectorXd x;
  double objective = 0.0;           // (1/2)x'Px + q'x + c0
  double stationarity = 0.0;        // scaled dual residual
  double primal_feasibility = 0.0;  // scaled primal residual
  double complementarity = 0.0;     // duality gap / max(1, |objective|)
  int iterations = 0;
  std::string message;
  // Interior-point merit (primal res + dual res + relative gap) per
  // iteration; non-increasing by construction.
  std::vector<double> merit_trace;
};

struct SolverSettings {
  double tol = 1e-8;
  int max_iter = 200;
};

SolverResult solve(const ConicProblem& problem, double tol = 1e-8, int max_iter = 200);

// Euclidean projection onto {(u, t) : ||u|| <= t}; the scalar t is the LAST
// coordinate of v. Requires v.size() >= 2.
Eigen::VectorXd project_soc(const Eigen::VectorXd& v);

}  // namespace ebd
