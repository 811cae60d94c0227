#ifndef QH_MODEL_HPP
#define QH_MODEL_HPP

// Quasihomogeneous n-body model: masses, the two homogeneous potential
// terms W (degree -a) and V (degree -b), their first and second derivatives,
// the mass metric and the classical integrals.
//
// Every formula is written once, templated on the spatial dimension D
// (1, 2 or 3).  A configuration is a D x n matrix whose columns are the body
// positions; tangent vectors and covectors (gradients, momenta) use the same
// layout.  Flattened views index body i, axis k at i*D + k.

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qh/errors.hpp"

namespace qh {

template <int D>
using Points = Eigen::Matrix<double, D, Eigen::Dynamic>;

template <int D>
inline Eigen::Map<const Eigen::VectorXd> flat(const Points<D>& p) {
  return {p.data(), p.size()};
}

template <int D>
inline Points<D> unflat(const Eigen::Ref<const Eigen::VectorXd>& x) {
  Points<D> p(D, x.size() / D);
  Eigen::Map<Eigen::VectorXd>(p.data(), p.size()) = x;
  return p;
}

/// Masses m_1..m_n and total mass.
class MassSystem {
 public:
  explicit MassSystem(std::vector<double> masses) : masses_(static_cast<Eigen::Index>(masses.size())) {
    if (masses.size() < 2) throw ValidationError("MassSystem needs n >= 2 bodies");
    total_ = 0.0;
    for (std::size_t i = 0; i < masses.size(); ++i) {
      if (!(masses[i] > 0.0) || !std::isfinite(masses[i])) {
        std::ostringstream os;
        os << "mass m" << (i + 1) << " = " << masses[i] << " is not strictly positive";
        throw ValidationError(os.str());
      }
      masses_[static_cast<Eigen::Index>(i)] = masses[i];
      total_ += masses[i];
    }
  }

  int n() const { return static_cast<int>(masses_.size()); }
  double operator[](int i) const { return masses_[i]; }
  const Eigen::VectorXd& masses() const { return masses_; }
  std::vector<double> as_vector() const { return {masses_.data(), masses_.data() + masses_.size()}; }
  double total() const { return total_; }

  /// M r: scales each column by its mass.
  template <int D>
  Points<D> apply(const Points<D>& r) const {
    return r * masses_.asDiagonal();
  }
  /// M^{-1} p.
  template <int D>
  Points<D> apply_inverse(const Points<D>& p) const {
    return p * masses_.cwiseInverse().asDiagonal();
  }

 private:
  Eigen::VectorXd masses_;
  double total_ = 0.0;
};

/// Exponents and coefficients of U = alpha * sum m_i m_j / r^a + beta * sum m_i m_j / r^b.
struct PotentialParams {
  double a = 1.0;
  double b = 2.0;
  double alpha = 1.0;
  double beta = 1.0;

  void validate() const {
    if (!(a >= 0.0)) throw ValidationError("exponent a must satisfy a >= 0");
    if (!(b > a)) throw ValidationError("exponents must satisfy a < b");
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ValidationError("coefficients alpha, beta must be >= 0");
    if (alpha == 0.0 && beta == 0.0) throw ValidationError("alpha and beta cannot both be zero");
  }

  bool is_manev() const { return a == 1.0 && beta > 0.0; }

  /// The a-term alone (beta := 0).
  PotentialParams weak_only() const { return {a, b, alpha, 0.0}; }
  /// The b-term alone (alpha := 0).
  PotentialParams strong_only() const { return {a, b, 0.0, beta}; }
};

/// Throws ManevOnlyError unless a == 1 and beta > 0.
inline void require_manev(const PotentialParams& pp) {
  pp.validate();
  if (!pp.is_manev()) {
    std::ostringstream os;
    os << "operation requires a Manev-type potential (a = 1, beta > 0); got a = " << pp.a
       << ", beta = " << pp.beta;
    throw ManevOnlyError(os.str());
  }
}

// ---------------------------------------------------------------------------
// Mass metric

/// <r, w> = r^T M w.
template <int D>
double mass_inner(const Points<D>& r, const Points<D>& w, const MassSystem& ms) {
  return (r.cwiseProduct(w) * ms.masses()).sum();
}

/// I = <r, r> = sum m_i |r_i|^2.
template <int D>
double moment_of_inertia(const Points<D>& r, const MassSystem& ms) {
  return mass_inner(r, r, ms);
}

/// Pairing of a covector with a vector, sum_i (u_i, v_i).
template <int D>
double pair(const Points<D>& u, const Points<D>& v) {
  return u.cwiseProduct(v).sum();
}

template <int D>
Eigen::Matrix<double, D, 1> center_of_mass(const Points<D>& r, const MassSystem& ms) {
  return r * ms.masses() / ms.total();
}

template <int D>
Points<D> recentered(const Points<D>& r, const MassSystem& ms) {
  return r.colwise() - center_of_mass(r, ms);
}

/// I = (1/m~) sum_{i<j} m_i m_j r_ij^2; equals <r,r> when the centre of mass is at 0.
template <int D>
double inertia_from_distances(const Points<D>& r, const MassSystem& ms) {
  double acc = 0.0;
  for (int i = 0; i < ms.n(); ++i)
    for (int j = i + 1; j < ms.n(); ++j) acc += ms[i] * ms[j] * (r.col(i) - r.col(j)).squaredNorm();
  return acc / ms.total();
}

template <int D>
double min_pair_distance(const Points<D>& r) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < r.cols(); ++i)
    for (int j = i + 1; j < r.cols(); ++j) best = std::min(best, (r.col(i) - r.col(j)).norm());
  return best;
}

/// Relative scale of the collision guard: eps_min = kCollisionGuard * sqrt(I / m~).
inline constexpr double kCollisionGuard = 1e-10;

template <int D>
void check_no_collision(const Points<D>& r, const MassSystem& ms) {
  if (r.cols() != ms.n()) throw ValidationError("configuration size does not match the mass system");
  const double size = std::sqrt(moment_of_inertia(recentered(r, ms), ms) / ms.total());
  const double eps = kCollisionGuard * size;
  for (int i = 0; i < ms.n(); ++i)
    for (int j = i + 1; j < ms.n(); ++j) {
      const double d = (r.col(i) - r.col(j)).norm();
      if (!(d > eps)) {
        std::ostringstream os;
        os << "bodies " << (i + 1) << " and " << (j + 1) << " at distance " << d
           << " (guard " << eps << ")";
        throw CollisionError(os.str());
      }
    }
}

// ---------------------------------------------------------------------------
// Validated value types

/// Positions with the centre of mass at the origin and no collisions.
template <int D>
class Configuration {
 public:
  Configuration() = default;

  /// Validates the centre-of-mass and collision invariants.
  static Configuration from_points(Points<D> r, const MassSystem& ms, double com_tol = 1e-12) {
    check_no_collision(r, ms);
    const double scale = std::max(1.0, r.cwiseAbs().maxCoeff()) * ms.total();
    if ((r * ms.masses()).norm() > com_tol * scale)
      throw ValidationError("configuration centre of mass is not at the origin");
    return Configuration(std::move(r));
  }

  /// Shifts r so its centre of mass sits at the origin, then validates.
  static Configuration centered(const Points<D>& r, const MassSystem& ms) {
    return from_points(recentered(r, ms), ms);
  }

  const Points<D>& positions() const { return r_; }
  int n() const { return static_cast<int>(r_.cols()); }

 private:
  explicit Configuration(Points<D> r) : r_(std::move(r)) {}
  Points<D> r_;
};

/// Positions and momenta p = M r_dot, with zero total linear momentum.
template <int D>
struct PhaseState {
  Configuration<D> config;
  Points<D> momenta;

  static PhaseState make(Configuration<D> c, Points<D> p, double tol = 1e-12) {
    if (p.cols() != c.n()) throw ValidationError("momenta size does not match the configuration");
    const double scale = std::max(1.0, p.cwiseAbs().maxCoeff());
    if (p.rowwise().sum().norm() > tol * scale * c.n())
      throw ValidationError("total linear momentum is not zero");
    return {std::move(c), std::move(p)};
  }
};

// ---------------------------------------------------------------------------
// Potential terms.  Each homogeneous part is c * sum_{i<j} m_i m_j |r_i - r_j|^{-e}.

namespace detail {

template <int D>
double term_value(const Points<D>& r, const MassSystem& ms, double e, double c) {
  if (c == 0.0) return 0.0;
  double acc = 0.0;
  for (int i = 0; i < ms.n(); ++i)
    for (int j = i + 1; j < ms.n(); ++j) acc += ms[i] * ms[j] * std::pow((r.col(i) - r.col(j)).norm(), -e);
  return c * acc;
}

template <int D>
void add_term_gradient(const Points<D>& r, const MassSystem& ms, double e, double c, Points<D>& g) {
  if (c == 0.0 || e == 0.0) return;
  for (int i = 0; i < ms.n(); ++i)
    for (int j = i + 1; j < ms.n(); ++j) {
      const Eigen::Matrix<double, D, 1> d = r.col(i) - r.col(j);
      const double k = -e * c * ms[i] * ms[j] * std::pow(d.norm(), -e - 2.0);
      g.col(i) += k * d;
      g.col(j) -= k * d;
    }
}

// Pair-sum form of the first derivative applied to a direction.
template <int D>
double term_directional(const Points<D>& r, const MassSystem& ms, double e, double c, const Points<D>& v) {
  if (c == 0.0 || e == 0.0) return 0.0;
  double acc = 0.0;
  for (int i = 0; i < ms.n(); ++i)
    for (int j = i + 1; j < ms.n(); ++j) {
      const Eigen::Matrix<double, D, 1> d = r.col(i) - r.col(j);
      acc += ms[i] * ms[j] * std::pow(d.norm(), -e - 2.0) * d.dot(v.col(i) - v.col(j));
    }
  return -e * c * acc;
}

template <int D>
double term_hessian_form(const Points<D>& r, const MassSystem& ms, double e, double c, const Points<D>& v,
                         const Points<D>& w) {
  if (c == 0.0 || e == 0.0) return 0.0;
  double acc = 0.0;
  for (int i = 0; i < ms.n(); ++i)
    for (int j = i + 1; j < ms.n(); ++j) {
      const Eigen::Matrix<double, D, 1> d = r.col(i) - r.col(j);
      const Eigen::Matrix<double, D, 1> dv = v.col(i) - v.col(j);
      const Eigen::Matrix<double, D, 1> dw = w.col(i) - w.col(j);
      const double d2 = d.squaredNorm();
      acc += ms[i] * ms[j] * std::pow(d2, -0.5 * e - 1.0) *
             ((e + 2.0) / d2 * d.dot(dv) * d.dot(dw) - dv.dot(dw));
    }
  return e * c * acc;
}

template <int D>
void add_term_hessian(const Points<D>& r, const MassSystem& ms, double e, double c, Eigen::MatrixXd& h) {
  if (c == 0.0 || e == 0.0) return;
  using Block = Eigen::Matrix<double, D, D>;
  for (int i = 0; i < ms.n(); ++i)
    for (int j = i + 1; j < ms.n(); ++j) {
      const Eigen::Matrix<double, D, 1> d = r.col(i) - r.col(j);
      const double d2 = d.squaredNorm();
      const double k = e * c * ms[i] * ms[j] * std::pow(d2, -0.5 * e - 1.0);
      const Block blk = k * ((e + 2.0) / d2 * d * d.transpose() - Block::Identity());
      h.template block<D, D>(i * D, i * D) += blk;
      h.template block<D, D>(j * D, j * D) += blk;
      h.template block<D, D>(i * D, j * D) -= blk;
      h.template block<D, D>(j * D, i * D) -= blk;
    }
}

}  // namespace detail

/// W(r) = alpha * sum_{i<j} m_i m_j / |r_i - r_j|^a.
template <int D>
double potential_W(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp) {
  check_no_collision(r, ms);
  return detail::term_value(r, ms, pp.a, pp.alpha);
}

/// V(r) = beta * sum_{i<j} m_i m_j / |r_i - r_j|^b.
template <int D>
double potential_V(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp) {
  check_no_collision(r, ms);
  return detail::term_value(r, ms, pp.b, pp.beta);
}

template <int D>
double potential_U(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp) {
  check_no_collision(r, ms);
  return detail::term_value(r, ms, pp.a, pp.alpha) + detail::term_value(r, ms, pp.b, pp.beta);
}

/// aW(r) + bV(r), i.e. -DU(r)(r) by Euler's identity.
template <int D>
double euler_weight(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp) {
  check_no_collision(r, ms);
  return pp.a * detail::term_value(r, ms, pp.a, pp.alpha) + pp.b * detail::term_value(r, ms, pp.b, pp.beta);
}

template <int D>
Points<D> gradient_W(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp) {
  check_no_collision(r, ms);
  Points<D> g = Points<D>::Zero(D, ms.n());
  detail::add_term_gradient(r, ms, pp.a, pp.alpha, g);
  return g;
}

template <int D>
Points<D> gradient_V(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp) {
  check_no_collision(r, ms);
  Points<D> g = Points<D>::Zero(D, ms.n());
  detail::add_term_gradient(r, ms, pp.b, pp.beta, g);
  return g;
}

/// Full gradient of U as n covectors.
template <int D>
Points<D> gradient_U(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp) {
  check_no_collision(r, ms);
  Points<D> g = Points<D>::Zero(D, ms.n());
  detail::add_term_gradient(r, ms, pp.a, pp.alpha, g);
  detail::add_term_gradient(r, ms, pp.b, pp.beta, g);
  return g;
}

/// DU(r)(v) = -a alpha sum_{i<j} m_i m_j |r_ij|^{-a-2} (r_i - r_j, v_i - v_j) - (same with b, beta).
template <int D>
double grad_U(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp, const Points<D>& v) {
  check_no_collision(r, ms);
  return detail::term_directional(r, ms, pp.a, pp.alpha, v) + detail::term_directional(r, ms, pp.b, pp.beta, v);
}

/// D^2U(r)(v, w): for each term e in {a, b} with coefficient c,
/// e c sum_{i<j} m_i m_j |r_ij|^{-e-2} [ (e+2)/|r_ij|^2 (r_ij, v_ij)(r_ij, w_ij) - (v_ij, w_ij) ].
template <int D>
double hess_U(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp, const Points<D>& v,
              const Points<D>& w) {
  check_no_collision(r, ms);
  return detail::term_hessian_form(r, ms, pp.a, pp.alpha, v, w) +
         detail::term_hessian_form(r, ms, pp.b, pp.beta, v, w);
}

/// Dense Dn x Dn matrix of D^2U in flattened coordinates.
template <int D>
Eigen::MatrixXd hessian_matrix_U(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp) {
  check_no_collision(r, ms);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(D * ms.n(), D * ms.n());
  detail::add_term_hessian(r, ms, pp.a, pp.alpha, h);
  detail::add_term_hessian(r, ms, pp.b, pp.beta, h);
  return h;
}

/// Tolerance used to decide that r lies on the inertia sphere of radius^2 I0.
inline constexpr double kSphereTol = 1e-10;

/// Second derivative of U restricted to the sphere <r,r> = I0:
/// D^2U(r)(v,w) + (aW(r) + bV(r)) / I0 * <v, w>.  v, w must be tangent to the sphere.
template <int D>
double hess_U_restricted(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp, double inertia_I0,
                         const Points<D>& v, const Points<D>& w) {
  const double inertia = moment_of_inertia(r, ms);
  if (std::abs(inertia - inertia_I0) > kSphereTol * inertia_I0) {
    std::ostringstream os;
    os << "<r,r> = " << inertia << " differs from I0 = " << inertia_I0;
    throw NotOnSphereError(os.str());
  }
  return hess_U(r, ms, pp, v, w) + euler_weight(r, ms, pp) / inertia_I0 * mass_inner(v, w, ms);
}

/// Mass-orthonormal basis (columns, flattened) of the tangent space at r of the
/// inertia sphere intersected with the zero-centre-of-mass subspace.
/// Dimension D*n - D - 1.
template <int D>
Eigen::MatrixXd inertia_sphere_tangent_basis(const Points<D>& r, const MassSystem& ms) {
  const int n = ms.n();
  const int dim = D * n;
  Eigen::VectorXd w(dim);
  for (int i = 0; i < n; ++i) w.segment<D>(i * D).setConstant(ms[i]);
  auto inner = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& y) { return x.cwiseProduct(w).dot(y); };

  std::vector<Eigen::VectorXd> fixed;
  for (int k = 0; k < D; ++k) {
    Eigen::VectorXd t = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < n; ++i) t[i * D + k] = 1.0;
    fixed.push_back(t / std::sqrt(inner(t, t)));
  }
  Eigen::VectorXd rad = flat(r);
  fixed.push_back(rad);

  // Gram-Schmidt of the constraint normals, then of the standard basis against them.
  std::vector<Eigen::VectorXd> normals;
  auto project_out = [&](Eigen::VectorXd x, const std::vector<Eigen::VectorXd>& against) {
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : against) x -= inner(q, x) * q;
    return x;
  };
  for (auto& f : fixed) {
    Eigen::VectorXd x = project_out(f, normals);
    const double nrm = std::sqrt(inner(x, x));
    if (nrm <= 0.0) throw DegenerateStateError("configuration is degenerate (zero size)");
    normals.push_back(x / nrm);
  }

  const int k_target = dim - D - 1;
  Eigen::MatrixXd basis(dim, k_target);
  std::vector<Eigen::VectorXd> all = normals;
  int found = 0;
  for (int c = 0; c < dim && found < k_target; ++c) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(dim);
    e[c] = 1.0 / std::sqrt(w[c]);
    Eigen::VectorXd x = project_out(e, all);
    const double nrm = std::sqrt(inner(x, x));
    if (nrm < 1e-8) continue;
    x /= nrm;
    all.push_back(x);
    basis.col(found++) = x;
  }
  if (found != k_target) throw DegenerateStateError("could not complete the tangent basis");
  return basis;
}

/// Matrix of the restricted second derivative on the basis above.  r must lie on
/// the sphere of its own moment of inertia (always true) and the centre of mass
/// must be at the origin.
template <int D>
Eigen::MatrixXd restricted_hessian_matrix(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp) {
  const Eigen::MatrixXd e = inertia_sphere_tangent_basis(r, ms);
  const double inertia = moment_of_inertia(r, ms);
  Eigen::MatrixXd a = e.transpose() * hessian_matrix_U(r, ms, pp) * e;
  a += (euler_weight(r, ms, pp) / inertia) * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  return 0.5 * (a + a.transpose());
}

// ---------------------------------------------------------------------------
// Integrals of motion

template <int D>
double kinetic(const PhaseState<D>& ps, const MassSystem& ms) {
  return 0.5 * pair(ps.momenta, ms.apply_inverse(ps.momenta));
}

/// H = (1/2) p^T M^{-1} p - U(r).
template <int D>
double hamiltonian(const PhaseState<D>& ps, const MassSystem& ms, const PotentialParams& pp) {
  return kinetic(ps, ms) - potential_U(ps.config.positions(), ms, pp);
}

/// Planar angular momentum J = sum m_i r_i x v_i = sum r_i x p_i.  Zero on a line.
template <int D>
double angular_momentum(const PhaseState<D>& ps, const MassSystem&) {
  static_assert(D == 1 || D == 2, "angular momentum is exposed for the line and the plane");
  if constexpr (D == 1) {
    return 0.0;
  } else {
    const auto& r = ps.config.positions();
    const auto& p = ps.momenta;
    return (r.row(0).cwiseProduct(p.row(1)) - r.row(1).cwiseProduct(p.row(0))).sum();
  }
}

}  // namespace qh

#endif  // QH_MODEL_HPP
