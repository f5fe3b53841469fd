#pragma once

// Shared fixtures for the test suites: synthetic camera pairs, random
// problem generators and the independent solver oracle.

#include <Eigen/Dense>
#include <random>

#include "ebd/conic.hpp"
#include "ebd/geometry.hpp"

namespace ebd::testhelpers {

inline Eigen::Matrix3d rectified_f() {
  Eigen::Matrix3d m;
  m << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  return m;
}

struct CameraPair {
  Eigen::Matrix<double, 3, 4> pa, pb;

  Eigen::Vector2d project_a(const Eigen::Vector3d& x) const {
    return (pa * x.homogeneous()).hnormalized();
  }
  Eigen::Vector2d project_b(const Eigen::Vector3d& x) const {
    return (pb * x.homogeneous()).hnormalized();
  }

  Eigen::Matrix3d fundamental() const {
    Eigen::JacobiSVD<Eigen::Matrix<double, 3, 4>> svd(pa, Eigen::ComputeFullV);
    Eigen::Vector4d c = svd.matrixV().col(3);
    Eigen::Vector3d eb = pb * c;
    Eigen::Matrix3d cross;
    cross << 0, -eb.z(), eb.y(), eb.z(), 0, -eb.x(), -eb.y(), eb.x(), 0;
    Eigen::Matrix<double, 4, 3> pinv = pa.transpose() * (pa * pa.transpose()).inverse();
    return cross * pb * pinv;
  }
};

inline CameraPair two_view_rig(double yaw_deg = -4.0, const Eigen::Vector3d& center_b =
                                                          Eigen::Vector3d(0.7, 0.1, -0.05)) {
  Eigen::Matrix3d k;
  k << 400, 0, 128, 0, 400, 176, 0, 0, 1;
  CameraPair rig;
  rig.pa.leftCols<3>() = Eigen::Matrix3d::Identity();
  rig.pa.col(3).setZero();
  rig.pa = k * rig.pa;
  Eigen::Matrix3d r =
      Eigen::AngleAxisd(yaw_deg * M_PI / 180.0, Eigen::Vector3d::UnitY()).toRotationMatrix();
  rig.pb.leftCols<3>() = r;
  rig.pb.col(3) = -r * center_b;
  rig.pb = k * rig.pb;
  return rig;
}

// Random conic problems with a strictly feasible witness and strongly convex
// objective, sized so the dual stays strongly concave for the oracle.
inline ConicProblem random_feasible_problem(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int n = 3 + static_cast<int>(rng() % 48);

  ConicProblem prob;
  prob.n = n;
  Eigen::MatrixXd bmat(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) bmat(i, j) = 0.3 * gauss(rng);
  Eigen::MatrixXd pd = bmat.transpose() * bmat + (0.5 + unif(rng)) * Eigen::MatrixXd::Identity(n, n);
  prob.P = pd.sparseView();
  prob.q = Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index) { return gauss(rng); });
  prob.c0 = gauss(rng);

  Eigen::VectorXd x0 = Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index) { return gauss(rng); });

  int budget = std::max(1, n / 2 - 1);
  const int p = static_cast<int>(rng() % (std::max(1, std::min(budget, n / 4)) + 1));
  budget -= p;
  Eigen::MatrixXd a(p, n);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = gauss(rng);
  prob.A = a.sparseView();
  prob.b = a * x0;

  int l = budget > 0 ? static_cast<int>(rng() % (std::min(budget, 6) + 1)) : 0;
  // The cone loop below always fires when budget stays >= 3, so forcing one
  // linear row here keeps every generated problem inside the cone path.
  if (l == 0 && budget < 3) l = 1;
  budget -= l;
  Eigen::MatrixXd g(l, n);
  for (int i = 0; i < l; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = gauss(rng);
  prob.G = g.sparseView();
  prob.h = g * x0;
  for (int i = 0; i < l; ++i) prob.h(i) += 0.1 + unif(rng);

  while (budget >= 3 && prob.cones.size() < 2 && (rng() % 2 == 0 || prob.cones.empty())) {
    const int k = 2 + static_cast<int>(rng() % std::min<long>(3, budget - 1));
    budget -= k + 1;
    ConeBlock cone;
    Eigen::MatrixXd m(k, n);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = gauss(rng);
    cone.M = m.sparseView();
    cone.m = Eigen::VectorXd::NullaryExpr(k, [&](Eigen::Index) { return gauss(rng); });
    cone.r.resize(n);
    for (int j = 0; j < n; ++j) cone.r.coeffRef(j) = 0.3 * gauss(rng);
    Eigen::VectorXd rd(n);
    for (int j = 0; j < n; ++j) rd(j) = cone.r.coeff(j);
    cone.s = (m * x0 + cone.m).norm() - rd.dot(x0) + 0.1 + unif(rng);
    prob.cones.push_back(std::move(cone));
  }
  return prob;
}

// Long-run projected-gradient ascent on the Lagrange dual; independent of
// the interior-point implementation. Requires P positive definite and a
// strictly feasible problem. Returns the optimal value (with c0).
inline double dual_projected_gradient_oracle(const ConicProblem& prob, long max_iters = 2000000,
                                             double grad_tol = 1e-11) {
  const int n = prob.n;
  const int p = static_cast<int>(prob.A.rows());
  const int l = static_cast<int>(prob.G.rows());
  Eigen::MatrixXd pd = Eigen::MatrixXd(prob.P);
  Eigen::LLT<Eigen::MatrixXd> llt(pd);

  // Stacked constraint matrix S and offsets: duals nu = (y, lambda, z_1..).
  int m_total = p + l;
  for (const ConeBlock& c : prob.cones) m_total += 1 + static_cast<int>(c.M.rows());
  Eigen::MatrixXd s(m_total, n);
  Eigen::VectorXd off(m_total);
  int row = 0;
  if (p > 0) {
    s.middleRows(row, p) = Eigen::MatrixXd(prob.A);
    off.segment(row, p) = -prob.b;
    row += p;
  }
  if (l > 0) {
    s.middleRows(row, l) = Eigen::MatrixXd(prob.G);
    off.segment(row, l) = -prob.h;
    row += l;
  }
  std::vector<int> cone_start;
  for (const ConeBlock& c : prob.cones) {
    const int k = static_cast<int>(c.M.rows());
    cone_start.push_back(row);
    Eigen::VectorXd rd(n);
    rd.setZero();
    for (Eigen::SparseVector<double>::InnerIterator it(c.r); it; ++it) rd(it.index()) = it.value();
    s.row(row) = rd.transpose();
    off(row) = c.s;
    s.middleRows(row + 1, k) = Eigen::MatrixXd(c.M);
    off.segment(row + 1, k) = c.m;
    row += 1 + k;
  }

  // Signs: L = f + y'(Ax-b) + lambda'(Gx-h) - sum z'(C x + c). Flip the cone
  // rows so the gradient is uniformly S x + off with duals nu.
  for (std::size_t kc = 0; kc < prob.cones.size(); ++kc) {
    int st = cone_start[kc];
    int len = 1 + static_cast<int>(prob.cones[kc].M.rows());
    s.middleRows(st, len) *= -1.0;
    off.segment(st, len) *= -1.0;
  }

  double lam_min = pd.selfadjointView<Eigen::Lower>().eigenvalues().minCoeff();
  double smax = Eigen::JacobiSVD<Eigen::MatrixXd>(s).singularValues().maxCoeff();
  double step = lam_min / (smax * smax + 1e-12);

  Eigen::VectorXd nu = Eigen::VectorXd::Zero(m_total);
  auto project = [&](Eigen::VectorXd& v) {
    for (int i = p; i < p + l; ++i) v(i) = std::max(0.0, v(i));
    for (std::size_t kc = 0; kc < prob.cones.size(); ++kc) {
      int st = cone_start[kc];
      int k = static_cast<int>(prob.cones[kc].M.rows());
      // project_soc expects the cone scalar last.
      Eigen::VectorXd packed(k + 1);
      packed.head(k) = v.segment(st + 1, k);
      packed(k) = v(st);
      packed = project_soc(packed);
      v(st) = packed(k);
      v.segment(st + 1, k) = packed.head(k);
    }
  };

  Eigen::VectorXd x(n);
  for (long it = 0; it < max_iters; ++it) {
    x = llt.solve(-(prob.q + s.transpose() * nu));
    Eigen::VectorXd grad = s * x + off;
    Eigen::VectorXd nu_new = nu + step * grad;
    project(nu_new);
    double moved = (nu_new - nu).norm();
    nu = nu_new;
    if (moved <= grad_tol * step * (1.0 + nu.norm())) break;
  }
  x = llt.solve(-(prob.q + s.transpose() * nu));
  double lagrangian = 0.5 * x.dot(pd * x) + prob.q.dot(x) + nu.dot(s * x + off);
  return lagrangian + prob.c0;
}

}  // namespace ebd::testhelpers
