#ifndef QH_COLLISION_FLOW_HPP
#define QH_COLLISION_FLOW_HPP

// Flow on the total collision manifold C = {rho = 0, u^T M^{-1} u + v^2 = 2V(s)}:
// its equilibria (u = 0, v = +-sqrt(2V(s0)), s0 a CC of V on the unit mass
// sphere), the monotone quantity v, the linearization at the equilibria and the
// resulting stable/unstable manifold dimensions inside the energy surface.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qh/central_config.hpp"
#include "qh/errors.hpp"
#include "qh/integrate.hpp"
#include "qh/mcgehee.hpp"
#include "qh/model.hpp"

namespace qh {

using Complex = std::complex<double>;

struct ManifoldDims {
  int dim_unstable = 0;
  int dim_stable = 0;
  int dim_energy_surface = 0;
  int zero_modes = 0;  // zero eigenvalues inside E_h (the rotational mode, planar only)
};

struct EquilibriumReport {
  Points<2> s0;  // planar embedding of the shape
  Ambient ambient = Ambient::planar;
  int v_sign = +1;
  double v_value = 0.0;
  double b = 0.0;
  std::vector<double> lambda;                    // spectrum of A, the Hessian of V on the unit sphere
  std::vector<std::pair<Complex, Complex>> mu;   // one pair per lambda
  int index = 0;
  int zero_modes = 0;                            // zero eigenvalues of A
  double residual = 0.0;                         // |b V(s0) M s0 + grad V(s0)|_inf
  std::optional<ManifoldDims> dims;              // filled for b > 2
};

/// mu^{1,2} = (1/4) [ (b-2) v +- sqrt((2-b)^2 v^2 + 16 lambda) ], complex when the
/// discriminant is negative.
inline std::vector<std::pair<Complex, Complex>> eigen_closed_form(const std::vector<double>& lambdas, double v,
                                                                  double b) {
  std::vector<std::pair<Complex, Complex>> out;
  for (double l : lambdas) {
    const Complex disc = std::sqrt(Complex((2.0 - b) * (2.0 - b) * v * v + 16.0 * l, 0.0));
    out.emplace_back(0.25 * ((b - 2.0) * v + disc), 0.25 * ((b - 2.0) * v - disc));
  }
  return out;
}

namespace detail {

template <int D>
double equilibrium_residual(const Points<D>& s, const MassSystem& ms, const PotentialParams& pv) {
  return (pv.b * potential_V(s, ms, pv) * ms.apply(s) + gradient_V(s, ms, pv)).cwiseAbs().maxCoeff();
}

inline void check_unit_sphere(const Points<2>& s, const MassSystem& ms) {
  const double q = moment_of_inertia(s, ms);
  if (std::abs(q - 1.0) > kSphereTol) {
    std::ostringstream os;
    os << "s^T M s = " << q << " is not 1";
    throw NotOnSphereError(os.str());
  }
}

inline void require_strong(double b, const char* what) {
  if (!(b > 2.0)) {
    std::ostringstream os;
    os << what << " assumes b > 2 (got b = " << b << ")";
    throw ValidationError(os.str());
  }
}

template <int D>
Eigen::MatrixXd hessian_of_restricted_V(const Points<D>& s, const MassSystem& ms, const PotentialParams& pv) {
  return restricted_hessian_matrix(s, ms, pv);
}

}  // namespace detail

/// Throws OffManifoldError when |u^T M^{-1} u + v^2 - 2V(s)| > tol * max(1, 2V(s)).
template <int D>
void require_on_C(const McGeheeState<D>& st, const MassSystem& ms, const PotentialParams& pp, double tol) {
  const double rel = collision_relation(st, ms, pp);
  const double scale = std::max(1.0, 2.0 * potential_V(st.s, ms, pp));
  if (std::abs(rel) > tol * scale || st.rho != 0.0) {
    std::ostringstream os;
    os << "state is off the collision manifold (rho = " << st.rho << ", relation " << rel << ")";
    throw OffManifoldError(os.str());
  }
}

/// v' = (b/2) v^2 + u^T M^{-1} u - b V(s),  s' = M^{-1} u,
/// u' = (b/2 - 1) u v - (u^T M^{-1} u) M s + b V(s) M s + grad V(s).
template <int D>
McGeheeRates<D> field_on_C(const McGeheeState<D>& st, const MassSystem& ms, const PotentialParams& pp,
                           double tol = 1e-8) {
  require_manev(pp);
  require_on_C(st, ms, pp, tol);
  McGeheeRates<D> d = vector_field(st, ms, pp);
  d.rho = 0.0;
  return d;
}

/// v' restricted to C: (1 - b/2) u^T M^{-1} u.  Non-positive for b > 2.
template <int D>
double gradient_like_rate(const McGeheeState<D>& st, const MassSystem& ms, const PotentialParams& pp,
                          double tol = 1e-8) {
  require_on_C(st, ms, pp, tol);
  return (1.0 - 0.5 * pp.b) * u_norm2(st.u, ms);
}

/// Equilibrium reports (both signs of v) for CCs of V on the unit mass sphere.
inline std::vector<EquilibriumReport> find_equilibria(const MassSystem& ms, const PotentialParams& pp,
                                                      const std::vector<Points<2>>& ccs_of_V, Ambient ambient,
                                                      double tol = 1e-9);

/// Linearization of the energy-restricted system at an equilibrium, in the
/// chart (rho, v, xi, eta) where xi, eta are coordinates of s and u on an
/// orthonormal basis of the tangent space of the unit sphere.
struct Linearization {
  Eigen::MatrixXd jacobian;
  std::vector<Complex> eigenvalues;
};

inline Linearization linearize_at_equilibrium(const EquilibriumReport& rep, const MassSystem& ms,
                                              const PotentialParams& pp) {
  detail::require_strong(pp.b, "the collision-manifold linearization");
  const PotentialParams pv = pp.strong_only();

  auto build = [&](auto s) {
    constexpr int D = decltype(s)::RowsAtCompileTime;
    const Eigen::MatrixXd e = inertia_sphere_tangent_basis(s, ms);
    const int k = static_cast<int>(e.cols());
    const int m = static_cast<int>(s.size());
    // Jacobian of F(s) = b V(s) M s + grad V(s) in flattened coordinates.
    Eigen::VectorXd w(m);
    for (int i = 0; i < ms.n(); ++i) w.segment<D>(i * D).setConstant(ms[i]);
    const Eigen::VectorXd msv = w.cwiseProduct(flat(s));
    const Eigen::VectorXd gv = flat(Points<D>(gradient_V(s, ms, pv)));
    Eigen::MatrixXd jf = hessian_matrix_U(s, ms, pv);
    jf += pv.b * potential_V(s, ms, pv) * Eigen::MatrixXd(w.asDiagonal());
    jf += pv.b * msv * gv.transpose();
    const Eigen::MatrixXd a = e.transpose() * jf * e;

    const double c = (0.5 * pp.b - 1.0) * rep.v_value;
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 + 2 * k, 2 + 2 * k);
    j(0, 0) = rep.v_value;
    j.block(2, 2 + k, k, k) = Eigen::MatrixXd::Identity(k, k);
    j.block(2 + k, 2, k, k) = a;
    j.block(2 + k, 2 + k, k, k) = c * Eigen::MatrixXd::Identity(k, k);
    return j;
  };

  Linearization out;
  if (rep.ambient == Ambient::collinear)
    out.jacobian = build(to_line(rep.s0));
  else
    out.jacobian = build(rep.s0);

  Eigen::EigenSolver<Eigen::MatrixXd> es(out.jacobian, false);
  const auto ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) out.eigenvalues.push_back(ev[i]);
  std::sort(out.eigenvalues.begin(), out.eigenvalues.end(), [](Complex x, Complex y) {
    return x.real() != y.real() ? x.real() < y.real() : x.imag() < y.imag();
  });
  return out;
}

/// Sign counts of the numerical spectrum inside E_h.  The full linearization
/// has one extra zero eigenvalue (the v direction eliminated by the energy
/// relation), which is removed here.
inline ManifoldDims spectrum_sign_counts(const std::vector<Complex>& eig) {
  double big = 0.0;
  for (auto z : eig) big = std::max(big, std::abs(z));
  const double zt = 1e-8 * std::max(big, 1.0);
  ManifoldDims d;
  int zeros = 0;
  for (auto z : eig) {
    if (std::abs(z.real()) <= zt)
      ++zeros;
    else if (z.real() > 0.0)
      ++d.dim_unstable;
    else
      ++d.dim_stable;
  }
  d.zero_modes = std::max(0, zeros - 1);
  d.dim_energy_surface = static_cast<int>(eig.size()) - 1;
  return d;
}

/// Dimensions of W^u and W^s inside E_h, predicted from the index and
/// cross-checked against the numerical spectrum.
///
///   collinear: (n-1, n-2),               dim E_h = 2n-3
///   planar:    (2n-2+ind, 2n-4-ind),     dim E_h = 4n-5
///
/// for v > 0, swapped for v < 0.  For ind = 0 the planar pair is (2n-2, 2n-4).
/// Each negative Hessian eigenvalue contributes two roots with the sign of v,
/// which is why ind enters with a plus sign on the side of v.
inline ManifoldDims manifold_dimensions(const EquilibriumReport& rep, const MassSystem& ms,
                                        const PotentialParams& pp) {
  detail::require_strong(pp.b, "manifold dimension reports");
  const int n = ms.n();
  ManifoldDims pred;
  if (rep.ambient == Ambient::collinear) {
    pred.dim_unstable = n - 1;
    pred.dim_stable = n - 2;
    pred.dim_energy_surface = 2 * n - 3;
    pred.zero_modes = 0;
  } else {
    pred.dim_unstable = 2 * n - 2 + rep.index;
    pred.dim_stable = 2 * n - 4 - rep.index;
    pred.dim_energy_surface = 4 * n - 5;
    pred.zero_modes = 1;
  }
  if (rep.v_sign < 0) std::swap(pred.dim_unstable, pred.dim_stable);

  const ManifoldDims got = spectrum_sign_counts(linearize_at_equilibrium(rep, ms, pp).eigenvalues);
  if (got.dim_unstable != pred.dim_unstable || got.dim_stable != pred.dim_stable ||
      got.dim_energy_surface != pred.dim_energy_surface || got.zero_modes != pred.zero_modes) {
    std::ostringstream os;
    os << "spectrum sign counts (" << got.dim_unstable << ", " << got.dim_stable << ", zeros "
       << got.zero_modes << ") disagree with the predicted (" << pred.dim_unstable << ", "
       << pred.dim_stable << ", zeros " << pred.zero_modes << ")";
    throw MismatchError(os.str());
  }
  return pred;
}

inline std::vector<EquilibriumReport> find_equilibria(const MassSystem& ms, const PotentialParams& pp,
                                                      const std::vector<Points<2>>& ccs_of_V, Ambient ambient,
                                                      double tol) {
  require_manev(pp);
  const PotentialParams pv = pp.strong_only();
  std::vector<EquilibriumReport> out;
  for (const auto& s0 : ccs_of_V) {
    detail::check_unit_sphere(s0, ms);
    const double res = detail::equilibrium_residual(s0, ms, pv);
    const double scale = std::max(1.0, gradient_V(s0, ms, pv).cwiseAbs().maxCoeff());
    if (res > tol * scale) {
      std::ostringstream os;
      os << "shape is not a central configuration of V (residual " << res << ")";
      throw ToleranceError(os.str());
    }
    const IndexReport ir = ambient == Ambient::collinear ? restricted_index(to_line(s0), ms, pv, 0)
                                                         : restricted_index(s0, ms, pv, 1);
    const double vabs = std::sqrt(2.0 * potential_V(s0, ms, pv));
    for (int sign : {+1, -1}) {
      EquilibriumReport rep;
      rep.s0 = s0;
      rep.ambient = ambient;
      rep.v_sign = sign;
      rep.v_value = sign * vabs;
      rep.b = pp.b;
      rep.lambda = ir.eigenvalues;
      rep.index = ir.index;
      rep.zero_modes = ir.zero_modes;
      rep.residual = res;
      rep.mu = eigen_closed_form(rep.lambda, rep.v_value, pp.b);
      if (pp.b > 2.0) rep.dims = manifold_dimensions(rep, ms, pp);
      out.push_back(std::move(rep));
    }
  }
  return out;
}

inline std::vector<EquilibriumReport> find_equilibria(const MassSystem& ms, const PotentialParams& pp,
                                                      const std::vector<CCResult>& ccs_of_V, Ambient ambient,
                                                      double tol = 1e-9) {
  std::vector<Points<2>> shapes;
  for (const auto& c : ccs_of_V) shapes.push_back(c.config.positions());
  return find_equilibria(ms, pp, shapes, ambient, tol);
}

/// {v, 0} together with every closed-form mu, sorted like the numerical spectrum.
inline std::vector<Complex> predicted_spectrum(const EquilibriumReport& rep) {
  std::vector<Complex> out{Complex(rep.v_value, 0.0), Complex(0.0, 0.0)};
  for (const auto& [m1, m2] : rep.mu) {
    out.push_back(m1);
    out.push_back(m2);
  }
  std::sort(out.begin(), out.end(), [](Complex x, Complex y) {
    return x.real() != y.real() ? x.real() < y.real() : x.imag() < y.imag();
  });
  return out;
}

/// Largest distance from each numerical eigenvalue to its nearest unused
/// closed-form value (greedy matching).
inline double spectrum_distance(std::vector<Complex> numeric, std::vector<Complex> predicted) {
  if (numeric.size() != predicted.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  std::vector<bool> used(predicted.size(), false);
  for (auto z : numeric) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0;
    for (std::size_t k = 0; k < predicted.size(); ++k)
      if (!used[k] && std::abs(z - predicted[k]) < best) best = std::abs(z - predicted[k]), bi = k;
    used[bi] = true;
    worst = std::max(worst, best);
  }
  return worst;
}

/// Necessary condition for a transversal homothetic orbit at s0: V restricted
/// to the unit sphere has a non-degenerate minimum there (index 0, exactly one
/// rotational zero mode).  A degenerate point raises ToleranceError.
inline bool transversality_necessary(const Points<2>& s0, const MassSystem& ms, const PotentialParams& pp) {
  require_manev(pp);
  detail::check_unit_sphere(s0, ms);
  const IndexReport ir = restricted_index(s0, ms, pp.strong_only(), 1);
  if (ir.index != 0) return false;
  for (double l : ir.eigenvalues)
    if (std::abs(l) >= ir.zero_tol && l <= ir.zero_tol) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Orbits on C

/// Places (s, u) on C: both are recentred, s is renormalized, u projected, and v chosen with the
/// given sign so that u^T M^{-1} u + v^2 = 2V(s).  If u is too large it is
/// scaled to use the fraction `max_u_share` of 2V(s).
template <int D>
McGeheeState<D> project_onto_C(Points<D> s, Points<D> u, int v_sign, const MassSystem& ms, const PotentialParams& pp,
                               double max_u_share = 0.9) {
  u.colwise() -= u.rowwise().mean();
  McGeheeState<D> st{0.0, recentered(s, ms), 0.0, std::move(u)};
  renormalize_mcgehee(st, ms);
  const double two_v = 2.0 * potential_V(st.s, ms, pp);
  double uu = u_norm2(st.u, ms);
  if (uu > max_u_share * two_v) {
    st.u *= std::sqrt(max_u_share * two_v / uu);
    uu = u_norm2(st.u, ms);
  }
  st.v = (v_sign >= 0 ? 1.0 : -1.0) * std::sqrt(two_v - uu);
  return st;
}

struct COrbitOptions {
  double tau_max = 1e3;
  double equilibrium_tol = 1e-9;
  /// Stop when two bodies of the normalized shape come closer than this.
  double collision_distance = 1e-4;
  IntegratorOptions integrator{.rel_tol = 1e-9, .abs_tol = 1e-12};
  /// Rescale (u, v) after each step so that |u|^2 + v^2 = 2V(s) holds exactly.
  /// The relation obeys R' = b v R, so without this step local errors grow
  /// like exp(b * integral of v) while v > 0.
  bool project_relation = true;
};

/// Integrates the flow on C.  Terminates at the equilibrium approach
/// (|u|, |field| < equilibrium_tol), a binary-collision approach, or tau_max.
/// Monitors: "v", "collision_relation", "sphere", "orthogonal", "rate".
template <int D>
Trajectory integrate_on_C(const McGeheeState<D>& st0, const MassSystem& ms, const PotentialParams& pp,
                          const COrbitOptions& opt = {}) {
  require_manev(pp);
  require_on_C(st0, ms, pp, 1e-8);
  const int n = ms.n();
  const Field f = mcgehee_ode<D>(ms, pp);
  std::vector<Event> events;
  events.push_back({"equilibrium",
                    [=](double t, const State& y) {
                      const auto st = unpack<D>(y, n);
                      const double du = st.u.cwiseAbs().maxCoeff();
                      double df;
                      try {
                        df = f(t, y).cwiseAbs().maxCoeff();
                      } catch (const CollisionError&) {
                        df = std::numeric_limits<double>::infinity();
                      }
                      return std::max(du, df) - opt.equilibrium_tol;
                    },
                    -1, true});
  events.push_back({"binary-collision",
                    [=](double, const State& y) {
                      return min_pair_distance(unpack<D>(y, n).s) - opt.collision_distance;
                    },
                    -1, true});
  auto defect = std::make_shared<double>(0.0);
  const Renormalizer sphere = mcgehee_renormalizer<D>(ms);
  Renormalizer renorm = sphere;
  if (opt.project_relation)
    renorm = [=](State& y) {
      sphere(y);
      auto st = unpack<D>(y, n);
      const double q = u_norm2(st.u, ms) + st.v * st.v;
      const double target = 2.0 * potential_V(st.s, ms, pp);
      *defect = q - target;
      if (!(q > 0.0)) return;
      const double k = std::sqrt(target / q);
      y[1] *= k;
      y.segment(2 + st.s.size(), st.u.size()) *= k;
    };
  std::vector<Monitor> mons{
      {"v", [](double, const State& y) { return y[1]; }},
      {"projection_defect", [defect](double, const State&) { return *defect; }},
      {"collision_relation",
       [=](double, const State& y) { return collision_relation(unpack<D>(y, n), ms, pp); }},
      {"sphere", [=](double, const State& y) { return constraint_residuals(unpack<D>(y, n), ms).sphere; }},
      {"orthogonal",
       [=](double, const State& y) { return constraint_residuals(unpack<D>(y, n), ms).orthogonal; }},
      {"rate", [=](double, const State& y) { return (1.0 - 0.5 * pp.b) * u_norm2(unpack<D>(y, n).u, ms); }},
  };
  IntegratorOptions io = opt.integrator;
  io.throw_on_error = false;
  return integrate(f, pack(st0), 0.0, opt.tau_max, io, events, renorm, mons);
}

struct EquilibriumMatch {
  int v_sign = 0;
  double shape_distance = std::numeric_limits<double>::infinity();
  double residual = std::numeric_limits<double>::infinity();
};

/// Classifies a C state against a list of CC shapes of V (and their images
/// under rotation): sign of v, smallest mass-metric distance to a shape after
/// optimal rotation, and the equilibrium residual at the state itself.
inline EquilibriumMatch classify_limit(const McGeheeState<2>& st, const std::vector<Points<2>>& shapes,
                                       const MassSystem& ms, const PotentialParams& pp) {
  EquilibriumMatch m;
  m.v_sign = st.v >= 0.0 ? +1 : -1;
  m.residual = detail::equilibrium_residual(st.s, ms, pp.strong_only());
  for (const auto& s0 : shapes)
    for (double refl : {1.0, -1.0}) {
      Points<2> c = s0;
      c.row(1) *= refl;
      // optimal planar rotation in the mass metric
      double sxx = 0.0, sxy = 0.0;
      for (int i = 0; i < ms.n(); ++i) {
        sxx += ms[i] * st.s.col(i).dot(c.col(i));
        sxy += ms[i] * (c(0, i) * st.s(1, i) - c(1, i) * st.s(0, i));
      }
      const double th = std::atan2(sxy, sxx);
      Eigen::Matrix2d rot;
      rot << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
      const Points<2> rc = rot * c;
      m.shape_distance = std::min(m.shape_distance, std::sqrt(moment_of_inertia(Points<2>(st.s - rc), ms)));
    }
  return m;
}

}  // namespace qh

#endif  // QH_COLLISION_FLOW_HPP
