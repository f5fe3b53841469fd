#include "ebd/conic.hpp"

#include <Eigen/SparseCholesky>
#include <cmath>
#include <optional>
#include <random>
#include <sstream>

#include "ebd/errors.hpp"
#include "ebd/io.hpp"

namespace ebd {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

// ---------------------------------------------------------------------------
// Composite cone R^l x Q^{m_1} x ... x Q^{m_k}: vector operations on the
// stacked slack/dual vectors, Nesterov-Todd scaling, and the scaled-space
// algebra of the interior-point method.

struct ConeLayout {
  int l = 0;                  // nonnegative-orthant block
  std::vector<int> q;         // SOC block sizes (each >= 2)
  std::vector<int> q_start;   // offsets of the SOC blocks
  int dim = 0;

  void finalize() {
    dim = l;
    q_start.clear();
    for (int m : q) {
      q_start.push_back(dim);
      dim += m;
    }
  }
  int degree() const { return l + static_cast<int>(q.size()); }
};

// Nesterov-Todd scaling: diagonal d for the orthant, a unit-hyperbolic-norm
// vector v and scalar beta per SOC block, so that W z = W^{-T} s = lambda.
struct Scaling {
  Eigen::VectorXd d;
  std::vector<Eigen::VectorXd> v;
  std::vector<double> beta;

  void identity(const ConeLayout& lay) {
    d = Eigen::VectorXd::Ones(lay.l);
    v.clear();
    beta.clear();
    for (int m : lay.q) {
      Eigen::VectorXd vk = Eigen::VectorXd::Zero(m);
      vk(0) = 1.0;
      v.push_back(vk);
      beta.push_back(1.0);
    }
  }
};

double jnrm2(const Eigen::Ref<const Eigen::VectorXd>& u) {
  double t = u(0) * u(0) - u.tail(u.size() - 1).squaredNorm();
  return std::sqrt(std::max(0.0, t));
}

double jdot(const Eigen::Ref<const Eigen::VectorXd>& u,
            const Eigen::Ref<const Eigen::VectorXd>& w) {
  return u(0) * w(0) - u.tail(u.size() - 1).dot(w.tail(w.size() - 1));
}

// min { t | x + t*e in cone }, e the cone's unit element.
double max_step(const ConeLayout& lay, const Eigen::VectorXd& x) {
  double t = -std::numeric_limits<double>::infinity();
  if (lay.l > 0) t = -x.head(lay.l).minCoeff();
  for (std::size_t k = 0; k < lay.q.size(); ++k) {
    const int o = lay.q_start[k], m = lay.q[k];
    t = std::max(t, x.segment(o + 1, m - 1).norm() - x(o));
  }
  return std::isfinite(t) ? t : 0.0;
}

// x := W x (forward) or W^{-1} x (inverse). W is symmetric per block.
void scale_w(const ConeLayout& lay, const Scaling& w, Eigen::VectorXd& x, bool inverse) {
  if (lay.l > 0) {
    if (inverse)
      x.head(lay.l).array() /= w.d.array();
    else
      x.head(lay.l).array() *= w.d.array();
  }
  for (std::size_t k = 0; k < lay.q.size(); ++k) {
    const int o = lay.q_start[k], m = lay.q[k];
    const Eigen::VectorXd& v = w.v[k];
    Eigen::VectorXd xk = x.segment(o, m);
    if (!inverse) {
      // beta * (2 v (v'x) - J x)
      double vx = v.dot(xk);
      Eigen::VectorXd jx(m);
      jx(0) = xk(0);
      jx.tail(m - 1) = -xk.tail(m - 1);
      x.segment(o, m) = w.beta[k] * (2.0 * vx * v - jx);
    } else {
      // (1/beta) * (2 J v (v'Jx) - J x)
      Eigen::VectorXd jx(m);
      jx(0) = xk(0);
      jx.tail(m - 1) = -xk.tail(m - 1);
      double vjx = v.dot(jx);
      Eigen::VectorXd jv(m);
      jv(0) = v(0);
      jv.tail(m - 1) = -v.tail(m - 1);
      x.segment(o, m) = (2.0 * vjx * jv - jx) / w.beta[k];
    }
  }
}

// x := lambda o\ x (inverse of the Jordan product by lambda).
void sinv(const ConeLayout& lay, const Eigen::VectorXd& lmbda, Eigen::VectorXd& x) {
  if (lay.l > 0) x.head(lay.l).array() /= lmbda.head(lay.l).array();
  for (std::size_t k = 0; k < lay.q.size(); ++k) {
    const int o = lay.q_start[k], m = lay.q[k];
    double aa = jnrm2(lmbda.segment(o, m));
    aa *= aa;
    double cc = x(o);
    double dd = lmbda.segment(o + 1, m - 1).dot(x.segment(o + 1, m - 1));
    x(o) = cc * lmbda(o) - dd;
    x.segment(o + 1, m - 1) = (aa / lmbda(o)) * x.segment(o + 1, m - 1) +
                              (dd / lmbda(o) - cc) * lmbda.segment(o + 1, m - 1);
    x.segment(o, m) /= aa;
  }
}

// x := y o x (Jordan product).
void sprod(const ConeLayout& lay, const Eigen::VectorXd& y, Eigen::VectorXd& x) {
  if (lay.l > 0) x.head(lay.l).array() *= y.head(lay.l).array();
  for (std::size_t k = 0; k < lay.q.size(); ++k) {
    const int o = lay.q_start[k], m = lay.q[k];
    double dd = y.segment(o, m).dot(x.segment(o, m));
    double x0 = x(o);
    x.segment(o + 1, m - 1) =
        y(o) * x.segment(o + 1, m - 1) + x0 * y.segment(o + 1, m - 1);
    x(o) = dd;
  }
}

// x := lambda o lambda.
Eigen::VectorXd ssqr(const ConeLayout& lay, const Eigen::VectorXd& lmbda) {
  Eigen::VectorXd x(lay.dim);
  if (lay.l > 0) x.head(lay.l) = lmbda.head(lay.l).array().square();
  for (std::size_t k = 0; k < lay.q.size(); ++k) {
    const int o = lay.q_start[k], m = lay.q[k];
    x(o) = lmbda.segment(o, m).squaredNorm();
    x.segment(o + 1, m - 1) = 2.0 * lmbda(o) * lmbda.segment(o + 1, m - 1);
  }
  return x;
}

// x := H(lambda^{1/2})^{-1} x (forward) or H(lambda^{1/2}) x (inverse),
// H the Hessian of the barrier; maps steps into lambda-relative coordinates.
void scale2(const ConeLayout& lay, const Eigen::VectorXd& lmbda, Eigen::VectorXd& x,
            bool inverse) {
  if (lay.l > 0) {
    if (inverse)
      x.head(lay.l).array() *= lmbda.head(lay.l).array();
    else
      x.head(lay.l).array() /= lmbda.head(lay.l).array();
  }
  for (std::size_t k = 0; k < lay.q.size(); ++k) {
    const int o = lay.q_start[k], m = lay.q[k];
    double a = jnrm2(lmbda.segment(o, m));
    double lx;
    if (!inverse)
      lx = jdot(lmbda.segment(o, m), x.segment(o, m)) / a;
    else
      lx = lmbda.segment(o, m).dot(x.segment(o, m)) / a;
    double x0 = x(o);
    x(o) = lx;
    double c = (lx + x0) / (lmbda(o) / a + 1.0) / a;
    if (!inverse) c = -c;
    x.segment(o + 1, m - 1) += c * lmbda.segment(o + 1, m - 1);
    x.segment(o, m) *= inverse ? a : 1.0 / a;
  }
}

// Initial scaling from a strictly feasible (s, z) pair.
void compute_scaling(const ConeLayout& lay, const Eigen::VectorXd& s, const Eigen::VectorXd& z,
                     Scaling& w, Eigen::VectorXd& lmbda) {
  lmbda.resize(lay.dim);
  w.d = (s.head(lay.l).array() / z.head(lay.l).array()).sqrt();
  lmbda.head(lay.l) = (s.head(lay.l).array() * z.head(lay.l).array()).sqrt();
  w.v.assign(lay.q.size(), Eigen::VectorXd());
  w.beta.assign(lay.q.size(), 0.0);
  for (std::size_t k = 0; k < lay.q.size(); ++k) {
    const int o = lay.q_start[k], m = lay.q[k];
    double aa = jnrm2(s.segment(o, m));
    double bb = jnrm2(z.segment(o, m));
    w.beta[k] = std::sqrt(aa / bb);
    double cc = std::sqrt((s.segment(o, m).dot(z.segment(o, m)) / aa / bb + 1.0) / 2.0);
    Eigen::VectorXd v = -z.segment(o, m) / bb;
    v(0) = -v(0);
    v += s.segment(o, m) / aa;
    v /= 2.0 * cc;
    v(0) += 1.0;
    v /= std::sqrt(2.0 * v(0));
    w.v[k] = v;

    lmbda(o) = cc;
    double dd = 2.0 * cc + s(o) / aa + z(o) / bb;
    lmbda.segment(o + 1, m - 1) = ((cc + z(o) / bb) / dd / aa) * s.segment(o + 1, m - 1) +
                                  ((cc + s(o) / aa) / dd / bb) * z.segment(o + 1, m - 1);
    lmbda.segment(o, m) *= std::sqrt(aa * bb);
  }
}

// Updates W and lambda from the stepped iterates expressed in the current
// scaling (ds = W^{-T} s_new, dz = W z_new); afterwards W z_new = W^{-T}
// s_new = lambda again.
void update_scaling(const ConeLayout& lay, Scaling& w, Eigen::VectorXd& lmbda,
                    Eigen::VectorXd& ds, Eigen::VectorXd& dz) {
  if (lay.l > 0) {
    Eigen::ArrayXd sroot = ds.head(lay.l).array().sqrt();
    Eigen::ArrayXd zroot = dz.head(lay.l).array().sqrt();
    w.d.array() *= sroot / zroot;
    lmbda.head(lay.l) = sroot * zroot;
  }
  for (std::size_t k = 0; k < lay.q.size(); ++k) {
    const int o = lay.q_start[k], m = lay.q[k];
    Eigen::VectorXd& v = w.v[k];

    double aa = jnrm2(ds.segment(o, m));
    ds.segment(o, m) /= aa;
    double bb = jnrm2(dz.segment(o, m));
    dz.segment(o, m) /= bb;
    double cc = std::sqrt((1.0 + ds.segment(o, m).dot(dz.segment(o, m))) / 2.0);
    double vs = v.dot(ds.segment(o, m));
    double vz = jdot(v, dz.segment(o, m));
    double vq = (vs + vz) / 2.0 / cc;
    double vu = vs - vz;

    lmbda(o) = cc;
    double wk0 = 2.0 * v(0) * vq - (ds(o) + dz(o)) / 2.0 / cc;
    double dd = (v(0) * vu - ds(o) / 2.0 + dz(o) / 2.0) / (wk0 + 1.0);
    lmbda.segment(o + 1, m - 1) = (2.0 * (-dd * vq + 0.5 * vu)) * v.tail(m - 1) +
                                  (0.5 * (1.0 - dd / cc)) * ds.segment(o + 1, m - 1) +
                                  (0.5 * (1.0 + dd / cc)) * dz.segment(o + 1, m - 1);
    lmbda.segment(o, m) *= std::sqrt(aa * bb);

    v *= 2.0 * vq;
    v(0) -= ds(o) / (2.0 * cc);
    v.tail(m - 1) += (0.5 / cc) * ds.segment(o + 1, m - 1);
    v -= dz.segment(o, m) / (2.0 * cc);
    v(0) += 1.0;
    v /= std::sqrt(2.0 * v(0));
    w.beta[k] *= std::sqrt(aa / bb);
  }
}

// ---------------------------------------------------------------------------
// KKT system
//
//   [ P   A'  G' ] [ux]   [bx]
//   [ A   0   0  ] [uy] = [by]
//   [ G   0 -W'W ] [uw]   [bz]
//
// factored as a statically regularized quasi-definite matrix with Eigen's
// simplicial LDLT, plus iterative refinement against the exact system.

class KktSolver {
 public:
  KktSolver(const SpMat& P, const SpMat& A, const SpMat& G, const ConeLayout& lay)
      : P_(P), A_(A), G_(G), lay_(lay), n_(P.cols()), p_(A.rows()), cdim_(G.rows()) {
    N_ = n_ + p_ + cdim_;
    double scale = 1.0;
    auto absmax = [&scale](const SpMat& m) {
      for (int i = 0; i < m.outerSize(); ++i)
        for (SpMat::InnerIterator it(m, i); it; ++it)
          scale = std::max(scale, std::abs(it.value()));
    };
    absmax(P_);
    absmax(A_);
    absmax(G_);
    delta_base_ = 1e-9 * scale;
    base_triplets_ = structure_triplets();
    delta_ = delta_base_;
    Scaling w;
    w.identity(lay_);
    assemble(w);
    ldlt_.analyzePattern(kkt_);
  }

  bool factor(const Scaling& w) {
    w_ = w;
    // Escalate the static regularization if the unpivoted factorization of
    // the quasi-definite matrix stumbles; refinement absorbs the shift.
    delta_ = delta_base_;
    for (int attempt = 0; attempt < 5; ++attempt) {
      assemble(w);
      ldlt_.factorize(kkt_);
      if (ldlt_.info() == Eigen::Success) return true;
      delta_ *= 100.0;
    }
    return false;
  }

  // Exact-system product for refinement.
  Eigen::VectorXd multiply(const Eigen::VectorXd& u) const {
    Eigen::VectorXd out(N_);
    auto ux = u.head(n_), uy = u.segment(n_, p_), uw = u.tail(cdim_);
    out.head(n_) = P_ * ux + A_.transpose() * uy + G_.transpose() * uw;
    out.segment(n_, p_) = A_ * ux;
    Eigen::VectorXd wtw = uw;
    scale_w(lay_, w_, wtw, false);
    scale_w(lay_, w_, wtw, false);  // W symmetric: W'W u = W(W u)
    out.tail(cdim_) = G_ * ux - wtw;
    return out;
  }

  bool solve(Eigen::VectorXd& bx, Eigen::VectorXd& by, Eigen::VectorXd& bz) const {
    Eigen::VectorXd rhs(N_);
    rhs << bx, by, bz;
    Eigen::VectorXd u = ldlt_.solve(rhs);
    if (!u.allFinite()) return false;
    for (int pass = 0; pass < 3; ++pass) {
      Eigen::VectorXd r = rhs - multiply(u);
      if (r.lpNorm<Eigen::Infinity>() <= 1e-13 * (1.0 + rhs.lpNorm<Eigen::Infinity>())) break;
      u += ldlt_.solve(r);
    }
    if (!u.allFinite()) return false;
    bx = u.head(n_);
    by = u.segment(n_, p_);
    bz = u.tail(cdim_);
    return true;
  }

 private:
  std::vector<Triplet> structure_triplets() const {
    std::vector<Triplet> t;
    for (int i = 0; i < P_.outerSize(); ++i)
      for (SpMat::InnerIterator it(P_, i); it; ++it)
        t.emplace_back(it.row(), it.col(), it.value());
    for (int i = 0; i < A_.outerSize(); ++i)
      for (SpMat::InnerIterator it(A_, i); it; ++it) {
        t.emplace_back(n_ + it.row(), it.col(), it.value());
        t.emplace_back(it.col(), n_ + it.row(), it.value());
      }
    for (int i = 0; i < G_.outerSize(); ++i)
      for (SpMat::InnerIterator it(G_, i); it; ++it) {
        t.emplace_back(n_ + p_ + it.row(), it.col(), it.value());
        t.emplace_back(it.col(), n_ + p_ + it.row(), it.value());
      }
    return t;
  }

  void assemble(const Scaling& w) {
    std::vector<Triplet> t = base_triplets_;
    for (int i = 0; i < n_; ++i) t.emplace_back(i, i, delta_);
    for (int i = 0; i < p_ + cdim_; ++i) t.emplace_back(n_ + i, n_ + i, -delta_);
    const int off = n_ + p_;
    for (int i = 0; i < lay_.l; ++i)
      t.emplace_back(off + i, off + i, -w.d(i) * w.d(i));
    for (std::size_t k = 0; k < lay_.q.size(); ++k) {
      const int o = off + lay_.q_start[k], m = lay_.q[k];
      const Eigen::VectorXd& v = w.v[k];
      // W'W = beta^2 H^2 with H = 2 v v' - J.
      Eigen::MatrixXd hh = 4.0 * v.squaredNorm() * (v * v.transpose());
      Eigen::VectorXd jv(m);
      jv(0) = v(0);
      jv.tail(m - 1) = -v.tail(m - 1);
      hh -= 2.0 * (v * jv.transpose() + jv * v.transpose());
      hh += Eigen::MatrixXd::Identity(m, m);
      hh *= w.beta[k] * w.beta[k];
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < m; ++c) t.emplace_back(o + r, o + c, -hh(r, c));
    }
    kkt_.resize(N_, N_);
    kkt_.setFromTriplets(t.begin(), t.end());
  }

  SpMat P_, A_, G_;
  ConeLayout lay_;
  int n_, p_, cdim_, N_ = 0;
  double delta_ = 1e-9;
  double delta_base_ = 1e-9;
  std::vector<Triplet> base_triplets_;
  SpMat kkt_;
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
  Scaling w_;
};

// Internal standard form: cone constraint Gc x + s = hc with s in the cone.
// The objective is normalized to unit magnitude (the argmin is invariant to
// positive scaling) so the KKT blocks stay comparably scaled no matter how
// small the caller's weights are; reported values are scaled back.
struct StandardForm {
  SpMat P, A, Gc;
  Eigen::VectorXd q, b, hc;
  double c0 = 0.0;
  double obj_scale = 1.0;
  ConeLayout lay;
};

StandardForm to_standard_form(const ConicProblem& prob) {
  StandardForm sf;
  // The quadratic part sets the KKT (1,1) block, so it drives the scaling.
  double pmag = 0.0;
  for (int i = 0; i < prob.P.outerSize(); ++i)
    for (SpMat::InnerIterator it(prob.P, i); it; ++it)
      pmag = std::max(pmag, std::abs(it.value()));
  double mag = pmag > 0 ? pmag
                        : (prob.q.size() > 0 ? prob.q.lpNorm<Eigen::Infinity>() : 0.0);
  sf.obj_scale = mag > 0 ? std::clamp(mag, 1e-10, 1e10) : 1.0;
  sf.P = prob.P / sf.obj_scale;
  sf.q = prob.q / sf.obj_scale;
  sf.c0 = prob.c0 / sf.obj_scale;
  sf.A = prob.A;
  sf.b = prob.b;
  sf.lay.l = static_cast<int>(prob.G.rows());
  int cdim = sf.lay.l;
  for (const ConeBlock& c : prob.cones) {
    sf.lay.q.push_back(static_cast<int>(c.M.rows()) + 1);
    cdim += static_cast<int>(c.M.rows()) + 1;
  }
  sf.lay.finalize();

  std::vector<Triplet> t;
  sf.hc.resize(cdim);
  for (int i = 0; i < prob.G.outerSize(); ++i)
    for (SpMat::InnerIterator it(prob.G, i); it; ++it)
      t.emplace_back(it.row(), it.col(), it.value());
  sf.hc.head(sf.lay.l) = prob.h;
  int row = sf.lay.l;
  for (const ConeBlock& c : prob.cones) {
    // slack = (r'x + s, M x + m) in Q  <=>  -[r'; M] x <= (s; m) conewise
    for (Eigen::SparseVector<double>::InnerIterator it(c.r); it; ++it)
      t.emplace_back(row, it.index(), -it.value());
    sf.hc(row) = c.s;
    for (int i = 0; i < c.M.outerSize(); ++i)
      for (SpMat::InnerIterator it(c.M, i); it; ++it)
        t.emplace_back(row + 1 + it.row(), it.col(), -it.value());
    sf.hc.segment(row + 1, c.M.rows()) = c.m;
    row += static_cast<int>(c.M.rows()) + 1;
  }
  sf.Gc.resize(cdim, prob.n);
  sf.Gc.setFromTriplets(t.begin(), t.end());
  return sf;
}

}  // namespace

void ConicProblem::validate() const {
  if (n <= 0) throw ConfigError("conic problem has no variables");
  if (P.rows() != n || P.cols() != n || q.size() != n)
    throw ConfigError("objective dimensions inconsistent with n");
  if (A.rows() != b.size() || (A.rows() > 0 && A.cols() != n))
    throw ConfigError("equality dimensions inconsistent");
  if (G.rows() != h.size() || (G.rows() > 0 && G.cols() != n))
    throw ConfigError("inequality dimensions inconsistent");
  for (const ConeBlock& c : cones) {
    if (c.M.rows() < 1 || c.M.cols() != n || c.m.size() != c.M.rows() || c.r.size() != n)
      throw ConfigError("cone block dimensions inconsistent");
  }
  // Symmetry and a randomized PSD probe.
  SpMat diff = SpMat(P.transpose()) - P;
  for (int i = 0; i < diff.outerSize(); ++i)
    for (SpMat::InnerIterator it(diff, i); it; ++it)
      if (std::abs(it.value()) > 1e-9) throw ConfigError("objective matrix not symmetric");
  std::mt19937 rng(12345);
  std::normal_distribution<double> gauss;
  for (int probe = 0; probe < 8; ++probe) {
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x(i) = gauss(rng);
    x.normalize();
    if (x.dot(P * x) < -1e-9) throw ConfigError("objective matrix not PSD");
  }
}

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::max_iterations: return "max-iterations";
  }
  return "?";
}

Eigen::VectorXd project_soc(const Eigen::VectorXd& v) {
  const int k = static_cast<int>(v.size());
  if (k < 2) throw ConfigError("project_soc needs at least 2 coordinates");
  double t = v(k - 1);
  double nu = v.head(k - 1).norm();
  if (nu <= t) return v;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(k);
  if (nu <= -t) return out;
  double alpha = 0.5 * (nu + t);
  out.head(k - 1) = (alpha / nu) * v.head(k - 1);
  out(k - 1) = alpha;
  return out;
}

SolverResult solve(const ConicProblem& prob, double tol, int max_iter) {
  if (!(tol > 0)) throw ConfigError("solver tolerance must be positive");
  if (max_iter < 1) throw ConfigError("max_iter must be positive");
  prob.validate();

  StandardForm sf = to_standard_form(prob);
  const ConeLayout& lay = sf.lay;
  const int n = prob.n, p = static_cast<int>(sf.A.rows()), cdim = lay.dim;

  SolverResult res;
  res.x = Eigen::VectorXd::Zero(n);

  KktSolver kkt(sf.P, sf.A, sf.Gc, lay);

  // Unconstrained-in-the-cone case: one symmetric solve.
  if (cdim == 0) {
    Scaling w;
    w.identity(lay);
    if (!kkt.factor(w)) throw SolverError("singular KKT matrix");
    Eigen::VectorXd bx = -sf.q, by = sf.b, bz(0);
    if (!kkt.solve(bx, by, bz)) throw SolverError("KKT solve failed");
    res.x = bx;
    res.status = SolveStatus::optimal;
    res.objective = sf.obj_scale * (0.5 * bx.dot(sf.P * bx) + sf.q.dot(bx) + sf.c0);
    res.iterations = 0;
    return res;
  }

  const double resx0 = std::max(1.0, sf.q.norm());
  const double resy0 = std::max(1.0, sf.b.norm());
  const double resz0 = std::max(1.0, sf.hc.norm());

  Eigen::VectorXd x, y, s, z;
  {
    // Initial point: solve with W = I, then shift (s, z) into the cone.
    Scaling w;
    w.identity(lay);
    if (!kkt.factor(w)) throw SolverError("rank deficiency in problem data (initial factor)");
    Eigen::VectorXd bx = -sf.q, by = sf.b, bz = sf.hc;
    if (!kkt.solve(bx, by, bz)) throw SolverError("initial KKT solve failed");
    x = bx;
    y = by;
    z = bz;
    s = -z;
    auto shift = [&](Eigen::VectorXd& u) {
      double ts = max_step(lay, u);
      if (ts >= -1e-8 * std::max(u.norm(), 1.0)) {
        double a = 1.0 + ts;
        u.head(lay.l).array() += a;
        for (std::size_t k = 0; k < lay.q.size(); ++k) u(lay.q_start[k]) += a;
      }
    };
    shift(s);
    shift(z);
  }

  double gap = s.dot(z);
  // Fixed scale for the merit's gap term; keeps the measure non-increasing
  // along Newton directions (the residual terms scale exactly by 1-alpha and
  // the gap derivative at zero step is -(1-sigma)*gap <= 0).
  const double gap_scale = std::max(1.0, gap);
  const double STEP = 0.99;
  Scaling W;
  Eigen::VectorXd lmbda;
  double best_merit = std::numeric_limits<double>::infinity();
  SolverResult best = res;

  for (int iters = 0; iters <= max_iter; ++iters) {
    Eigen::VectorXd px = sf.P * x;
    Eigen::VectorXd rx = px + sf.q + sf.A.transpose() * y + sf.Gc.transpose() * z;
    double f0 = 0.5 * x.dot(px) + sf.q.dot(x);
    Eigen::VectorXd ry = sf.A * x - sf.b;
    Eigen::VectorXd rz = s + sf.Gc * x - sf.hc;

    double pcost = f0;
    double dcost = f0 + y.dot(ry) + z.dot(rz) - gap;
    double relgap = std::numeric_limits<double>::quiet_NaN();
    if (pcost < 0.0)
      relgap = gap / -pcost;
    else if (dcost > 0.0)
      relgap = gap / dcost;
    double pres = std::max(ry.norm() / resy0, rz.norm() / resz0);
    double dres = rx.norm() / resx0;
    double merit = pres + dres + gap / gap_scale;
    res.merit_trace.push_back(merit);

    if (merit < best_merit) {
      best_merit = merit;
      best.x = x;
      best.objective = sf.obj_scale * (pcost + sf.c0);
      best.stationarity = dres;
      best.primal_feasibility = pres;
      best.complementarity = gap / std::max(1.0, std::abs(pcost));
      best.iterations = iters;
    }

    if (pres <= tol && dres <= tol &&
        (gap <= tol || (std::isfinite(relgap) && relgap <= tol))) {
      res.status = SolveStatus::optimal;
      res.x = x;
      res.objective = sf.obj_scale * (pcost + sf.c0);
      res.stationarity = dres;
      res.primal_feasibility = pres;
      res.complementarity = gap / std::max(1.0, std::abs(pcost));
      res.iterations = iters;
      return res;
    }

    // Divergence certificate: when the dual iterates blow up, test the
    // normalized (y, z) as an approximate Farkas witness of infeasibility
    // (A'y + G'z = 0, b'y + h'z < 0, z in the cone).
    double dual_norm = (p > 0 ? y.lpNorm<Eigen::Infinity>() : 0.0) + z.lpNorm<Eigen::Infinity>();
    if (dual_norm > 1e3) {
      Eigen::VectorXd yn = y / dual_norm, zn = z / dual_norm;
      double ray_res = (sf.A.transpose() * yn + sf.Gc.transpose() * zn).lpNorm<Eigen::Infinity>();
      double ray_obj = sf.b.dot(yn) + sf.hc.dot(zn);
      if (ray_res < 1e-7 && ray_obj < -1e-7) {
        SolverResult out = best;
        out.merit_trace = res.merit_trace;
        out.status = SolveStatus::infeasible;
        out.message = "Farkas ray found; primal infeasible";
        return out;
      }
    }

    if (iters == max_iter) {
      SolverResult out = best;
      out.merit_trace = res.merit_trace;
      out.status = SolveStatus::max_iterations;
      out.message = "iteration limit reached";
      return out;
    }

    if (iters == 0) compute_scaling(lay, s, z, W, lmbda);
    Eigen::VectorXd lmbdasq = ssqr(lay, lmbda);

    if (!kkt.factor(W)) {
      if (iters == 0) throw SolverError("rank deficiency in problem data (first scaled factor)");
      SolverResult out = best;
      out.merit_trace = res.merit_trace;
      out.status = SolveStatus::max_iterations;
      out.message = "singular KKT matrix";
      return out;
    }

    // Solves the full Newton system with complementarity rhs bs, returning
    // scaled directions (dz = W z_step, ds = W^{-T} s_step).
    auto newton = [&](Eigen::VectorXd& bx, Eigen::VectorXd& by, Eigen::VectorXd& bz,
                      Eigen::VectorXd& bs) -> bool {
      Eigen::VectorXd sb = bs;
      sinv(lay, lmbda, sb);
      Eigen::VectorXd wsb = sb;
      scale_w(lay, W, wsb, false);
      Eigen::VectorXd bz2 = bz - wsb;
      if (!kkt.solve(bx, by, bz2)) return false;
      // bz2 now holds the true dual step; store the scaled direction.
      Eigen::VectorXd dz = bz2;
      scale_w(lay, W, dz, false);
      bz = dz;
      bs = sb - dz;
      return true;
    };

    auto newton_refined = [&](Eigen::VectorXd& bx, Eigen::VectorXd& by, Eigen::VectorXd& bz,
                              Eigen::VectorXd& bs) -> bool {
      Eigen::VectorXd bx0 = bx, by0 = by, bz0 = bz, bs0 = bs;
      if (!newton(bx, by, bz, bs)) return false;
      for (int pass = 0; pass < 1; ++pass) {
        // Residuals of the full system at the current direction.
        Eigen::VectorXd uzt = bz;  // true dual step
        scale_w(lay, W, uzt, true);
        Eigen::VectorXd ust = bs;  // true slack step
        scale_w(lay, W, ust, false);
        Eigen::VectorXd vx = bx0 - (sf.P * bx + sf.A.transpose() * by + sf.Gc.transpose() * uzt);
        Eigen::VectorXd vy = by0 - sf.A * bx;
        Eigen::VectorXd vz = bz0 - (sf.Gc * bx + ust);
        Eigen::VectorXd vs = bs0;
        Eigen::VectorXd prod = bz + bs;
        sprod(lay, lmbda, prod);
        vs -= prod;
        if (!newton(vx, vy, vz, vs)) return false;
        bx += vx;
        by += vy;
        bz += vz;
        bs += vs;
      }
      return true;
    };

    const double mu = gap / lay.degree();
    double sigma = 0.0;
    double step = 1.0;
    Eigen::VectorXd dx, dy, dz, ds, ws3;

    // Fills (dx, dy, dz, ds) with the Newton direction for centering sigma,
    // optionally with the Mehrotra second-order correction; leaves dz, ds in
    // lambda-relative coordinates and returns the cone-boundary step bound.
    auto compute_direction = [&](double sigma_val, bool with_correction, double boundary)
        -> std::optional<double> {
      ds = Eigen::VectorXd::Zero(cdim);
      if (with_correction) ds -= ws3;
      ds -= lmbdasq;
      if (sigma_val != 0.0) {
        ds.head(lay.l).array() += sigma_val * mu;
        for (std::size_t k = 0; k < lay.q.size(); ++k) ds(lay.q_start[k]) += sigma_val * mu;
      }
      dx = -rx;
      dy = -ry;
      dz = -rz;
      if (!newton_refined(dx, dy, dz, ds)) return std::nullopt;
      double dsdz = ds.dot(dz);
      if (!with_correction && sigma_val == 0.0) {
        ws3 = ds;
        sprod(lay, dz, ws3);
      }
      scale2(lay, lmbda, ds, false);
      scale2(lay, lmbda, dz, false);
      double t = std::max({0.0, max_step(lay, ds), max_step(lay, dz)});
      step = (t == 0.0) ? 1.0 : std::min(1.0, boundary / t);
      return dsdz;
    };

    bool ok = true;
    for (int pass = 0; pass <= 1 && ok; ++pass) {
      std::optional<double> dsdz =
          compute_direction(pass == 0 ? 0.0 : sigma, pass == 1, pass == 0 ? 1.0 : STEP);
      if (!dsdz) {
        ok = false;
        break;
      }
      if (pass == 0)
        sigma = std::pow(std::min(1.0, std::max(0.0, 1.0 - step + *dsdz / gap * step * step)), 3.0);
    }
    if (!ok) {
      SolverResult out = best;
      out.merit_trace = res.merit_trace;
      out.status = SolveStatus::max_iterations;
      out.message = "numerical breakdown in Newton step";
      return out;
    }

    // Backtrack if the merit would increase; the Newton direction always
    // decreases it for a small enough step, so this almost never triggers.
    auto trial_merit = [&](double alpha) {
      Eigen::VectorXd dst = ds, dzt = dz;
      scale2(lay, lmbda, dst, true);
      scale2(lay, lmbda, dzt, true);
      scale_w(lay, W, dst, false);
      scale_w(lay, W, dzt, true);
      Eigen::VectorXd xt = x + alpha * dx;
      Eigen::VectorXd yt = y + alpha * dy;
      Eigen::VectorXd st = s + alpha * dst;
      Eigen::VectorXd zt = z + alpha * dzt;
      Eigen::VectorXd pxt = sf.P * xt;
      double prest = std::max((sf.A * xt - sf.b).norm() / resy0,
                              (st + sf.Gc * xt - sf.hc).norm() / resz0);
      double drest = (pxt + sf.q + sf.A.transpose() * yt + sf.Gc.transpose() * zt).norm() / resx0;
      return prest + drest + st.dot(zt) / gap_scale;
    };
    // Backtrack if the merit would increase. The corrected direction almost
    // always passes at the full step; when it only passes after the step has
    // collapsed (the second-order term fights descent, typical of infeasible
    // problems), fall back to the plain centering direction, whose merit
    // derivative is strictly negative, and backtrack on that.
    auto accept_step = [&](int max_halvings) {
      double full = step;
      for (int bt = 0; bt < max_halvings; ++bt) {
        if (trial_merit(step) <= merit * (1.0 + 1e-12) + 1e-12) return true;
        step *= 0.5;
      }
      step = full;
      return false;
    };
    if (!accept_step(20)) {
      if (!compute_direction(std::min(sigma, 0.99), false, STEP)) {
        SolverResult out = best;
        out.merit_trace = res.merit_trace;
        out.status = SolveStatus::max_iterations;
        out.message = "numerical breakdown in Newton step";
        return out;
      }
      accept_step(50);
    }

    x += step * dx;
    y += step * dy;

    // New iterates in the current scaling: e + step * d in lambda-relative
    // coordinates, mapped back through H(lambda^{1/2}).
    ds *= step;
    dz *= step;
    ds.head(lay.l).array() += 1.0;
    dz.head(lay.l).array() += 1.0;
    for (std::size_t k = 0; k < lay.q.size(); ++k) {
      ds(lay.q_start[k]) += 1.0;
      dz(lay.q_start[k]) += 1.0;
    }
    scale2(lay, lmbda, ds, true);
    scale2(lay, lmbda, dz, true);

    update_scaling(lay, W, lmbda, ds, dz);

    s = lmbda;
    scale_w(lay, W, s, false);
    z = lmbda;
    scale_w(lay, W, z, true);

    gap = lmbda.squaredNorm();
  }

  return best;  // unreachable; loop exits via max_iter branch
}

// ---------------------------------------------------------------------------
// Text dump/restore, shared with the assembled deformation programs for
// differential testing against external conic solvers.

namespace {

void dump_sparse(std::ostringstream& ss, const std::string& tag, const SpMat& m) {
  ss << tag << " " << m.rows() << " " << m.cols() << " " << m.nonZeros() << "\n";
  for (int i = 0; i < m.outerSize(); ++i)
    for (SpMat::InnerIterator it(m, i); it; ++it)
      ss << it.row() << " " << it.col() << " " << format_double(it.value()) << "\n";
}

void dump_vector(std::ostringstream& ss, const std::string& tag, const Eigen::VectorXd& v) {
  ss << tag << " " << v.size();
  for (int i = 0; i < v.size(); ++i) ss << " " << format_double(v(i));
  ss << "\n";
}

struct Parser {
  std::vector<std::string> lines;
  std::size_t pos = 0;

  std::string next() {
    while (pos < lines.size() && lines[pos].find_first_not_of(" \t") == std::string::npos) ++pos;
    if (pos >= lines.size()) throw ParseError("truncated conic problem dump");
    return lines[pos++];
  }

  SpMat read_sparse(const std::string& tag) {
    std::istringstream head(next());
    std::string t;
    long rows = 0, cols = 0, nnz = 0;
    head >> t >> rows >> cols >> nnz;
    if (t != tag) throw ParseError("expected '" + tag + "' section");
    std::vector<Triplet> trip;
    for (long i = 0; i < nnz; ++i) {
      std::istringstream ls(next());
      int r = 0, c = 0;
      double v = 0;
      if (!(ls >> r >> c >> v)) throw ParseError("bad triplet in " + tag);
      trip.emplace_back(r, c, v);
    }
    SpMat m(rows, cols);
    m.setFromTriplets(trip.begin(), trip.end());
    return m;
  }

  Eigen::VectorXd read_vector(const std::string& tag) {
    std::istringstream ls(next());
    std::string t;
    long size = 0;
    ls >> t >> size;
    if (t != tag) throw ParseError("expected '" + tag + "' section");
    Eigen::VectorXd v(size);
    for (long i = 0; i < size; ++i)
      if (!(ls >> v(i))) throw ParseError("short vector in " + tag);
    return v;
  }
};

}  // namespace

std::string ConicProblem::dump() const {
  std::ostringstream ss;
  ss << "conic-problem 1\n";
  ss << "n " << n << "\n";
  ss << "c0 " << format_double(c0) << "\n";
  dump_vector(ss, "q", q);
  dump_sparse(ss, "P", P);
  dump_sparse(ss, "A", A);
  dump_vector(ss, "b", b);
  dump_sparse(ss, "G", G);
  dump_vector(ss, "h", h);
  ss << "cones " << cones.size() << "\n";
  for (const ConeBlock& c : cones) {
    Eigen::VectorXd rd(c.r.size());
    rd.setZero();
    for (Eigen::SparseVector<double>::InnerIterator it(c.r); it; ++it) rd(it.index()) = it.value();
    dump_vector(ss, "r", rd);
    ss << "s " << format_double(c.s) << "\n";
    dump_sparse(ss, "M", c.M);
    dump_vector(ss, "m", c.m);
  }
  return ss.str();
}

ConicProblem ConicProblem::parse(const std::string& text) {
  Parser p;
  p.lines = split_lines(text);
  if (p.next() != "conic-problem 1") throw ParseError("not a conic problem dump");
  ConicProblem prob;
  {
    std::istringstream ls(p.next());
    std::string t;
    ls >> t >> prob.n;
    if (t != "n") throw ParseError("expected n");
  }
  {
    std::istringstream ls(p.next());
    std::string t;
    ls >> t >> prob.c0;
    if (t != "c0") throw ParseError("expected c0");
  }
  prob.q = p.read_vector("q");
  prob.P = p.read_sparse("P");
  prob.A = p.read_sparse("A");
  prob.b = p.read_vector("b");
  prob.G = p.read_sparse("G");
  prob.h = p.read_vector("h");
  long ncones = 0;
  {
    std::istringstream ls(p.next());
    std::string t;
    ls >> t >> ncones;
    if (t != "cones") throw ParseError("expected cones");
  }
  for (long i = 0; i < ncones; ++i) {
    ConeBlock c;
    Eigen::VectorXd rd = p.read_vector("r");
    c.r.resize(rd.size());
    for (int j = 0; j < rd.size(); ++j)
      if (rd(j) != 0.0) c.r.insert(j) = rd(j);
    {
      std::istringstream ls(p.next());
      std::string t;
      ls >> t >> c.s;
      if (t != "s") throw ParseError("expected s");
    }
    c.M = p.read_sparse("M");
    c.m = p.read_vector("m");
    prob.cones.push_back(std::move(c));
  }
  prob.validate();
  return prob;
}

}  // namespace ebd
