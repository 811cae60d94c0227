#ifndef QH_MCGEHEE_HPP
#define QH_MCGEHEE_HPP

// McGehee blow-up of total collision for Manev-type potentials (a = 1):
//
//   rho = (r^T M r)^{1/2},  s = r / rho,
//   v = rho^{b/2} p^T s,    u = rho^{b/2} (p - (p^T s) M s),
//
// with fictitious time d tau = rho^{-1-b/2} dt.  States satisfy s^T M s = 1
// and u^T s = 0; rho = 0 is the invariant total collision manifold.
//
// Flattened ODE layout: y = [rho, v, s (D*n), u (D*n)], optionally followed by
// the physical time t.

#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "qh/errors.hpp"
#include "qh/integrate.hpp"
#include "qh/model.hpp"

namespace qh {

template <int D>
struct McGeheeState {
  double rho = 0.0;
  Points<D> s;
  double v = 0.0;
  Points<D> u;
};

/// d/d tau of each McGehee variable.
template <int D>
struct McGeheeRates {
  double rho = 0.0;
  Points<D> s;
  double v = 0.0;
  Points<D> u;
};

struct ConstraintResiduals {
  double sphere;      // |s^T M s - 1|
  double orthogonal;  // |u^T s|
};

template <int D>
ConstraintResiduals constraint_residuals(const McGeheeState<D>& st, const MassSystem& ms) {
  return {std::abs(moment_of_inertia(st.s, ms) - 1.0), std::abs(pair(st.u, st.s))};
}

/// u^T M^{-1} u.
template <int D>
double u_norm2(const Points<D>& u, const MassSystem& ms) {
  return pair(u, ms.apply_inverse(u));
}

template <int D>
McGeheeState<D> to_mcgehee(const PhaseState<D>& ps, const MassSystem& ms, const PotentialParams& pp) {
  require_manev(pp);
  const Points<D>& r = ps.config.positions();
  const double rho = std::sqrt(moment_of_inertia(r, ms));
  if (!(rho > 0.0)) throw ZeroSizeError("total collision (rho = 0) has no McGehee image from Cartesian data");
  McGeheeState<D> st;
  st.rho = rho;
  st.s = r / rho;
  const double ps_dot = pair(ps.momenta, st.s);
  const double scale = std::pow(rho, 0.5 * pp.b);
  st.v = scale * ps_dot;
  st.u = scale * (ps.momenta - ps_dot * ms.apply(st.s));
  return st;
}

template <int D>
PhaseState<D> from_mcgehee(const McGeheeState<D>& st, const MassSystem& ms, const PotentialParams& pp) {
  require_manev(pp);
  if (!(st.rho > 0.0)) throw ZeroSizeError("rho = 0 has no Cartesian preimage");
  const Points<D> r = st.rho * st.s;
  const Points<D> p = std::pow(st.rho, -0.5 * pp.b) * (st.u + st.v * ms.apply(st.s));
  return PhaseState<D>::make(Configuration<D>::from_points(r, ms, 1e-10), p, 1e-10);
}

/// The transformed equations of motion:
///   rho' = rho v
///   v'   = (b/2) v^2 + u^T M^{-1} u - rho^{b-1} W(s) - b V(s)
///   s'   = M^{-1} u
///   u'   = (b/2 - 1) u v - (u^T M^{-1} u) M s + rho^{b-1} [W(s) M s + grad W(s)] + b V(s) M s + grad V(s)
template <int D>
McGeheeRates<D> vector_field(const McGeheeState<D>& st, const MassSystem& ms, const PotentialParams& pp) {
  require_manev(pp);
  const double b = pp.b;
  const double w = potential_W(st.s, ms, pp);
  const double vpot = potential_V(st.s, ms, pp);
  const double uu = u_norm2(st.u, ms);
  const double rb1 = st.rho == 0.0 ? 0.0 : std::pow(st.rho, b - 1.0);
  const Points<D> msv = ms.apply(st.s);

  McGeheeRates<D> d;
  d.rho = st.rho * st.v;
  d.v = 0.5 * b * st.v * st.v + uu - rb1 * w - b * vpot;
  d.s = ms.apply_inverse(st.u);
  d.u = (0.5 * b - 1.0) * st.v * st.u - uu * msv + b * vpot * msv + gradient_V(st.s, ms, pp);
  if (rb1 != 0.0) d.u += rb1 * (w * msv + gradient_W(st.s, ms, pp));
  return d;
}

/// (1/2)(u^T M^{-1} u + v^2) - rho^{b-1} W(s) - V(s) - h rho^b; zero on E_h.
template <int D>
double energy_residual(const McGeheeState<D>& st, double h, const MassSystem& ms, const PotentialParams& pp) {
  const double rb1 = st.rho == 0.0 ? 0.0 : std::pow(st.rho, pp.b - 1.0);
  const double rb = st.rho == 0.0 ? 0.0 : std::pow(st.rho, pp.b);
  return 0.5 * (u_norm2(st.u, ms) + st.v * st.v) - rb1 * potential_W(st.s, ms, pp) - potential_V(st.s, ms, pp) -
         h * rb;
}

/// u^T M^{-1} u + v^2 - 2 V(s), the defining relation of the collision manifold.
template <int D>
double collision_relation(const McGeheeState<D>& st, const MassSystem& ms, const PotentialParams& pp) {
  return u_norm2(st.u, ms) + st.v * st.v - 2.0 * potential_V(st.s, ms, pp);
}

/// rho <= tol and |u^T M^{-1} u + v^2 - 2V(s)| <= tol (both inclusive).
template <int D>
bool on_collision_manifold(const McGeheeState<D>& st, double tol, const MassSystem& ms, const PotentialParams& pp) {
  return st.rho <= tol && std::abs(collision_relation(st, ms, pp)) <= tol;
}

/// Restores the centre of mass and total momentum, then s^T M s = 1 and
/// u^T s = 0, by exact projection.  Idempotent.
template <int D>
void renormalize_mcgehee(McGeheeState<D>& st, const MassSystem& ms) {
  st.s.colwise() -= ms.apply(st.s).rowwise().sum() / ms.total();
  st.u.colwise() -= st.u.rowwise().mean();
  const double q = moment_of_inertia(st.s, ms);
  if (!(q > 0.0) || !std::isfinite(q)) throw DegenerateStateError("s^T M s <= 0; cannot renormalize");
  st.s /= std::sqrt(q);
  const Points<D> msv = ms.apply(st.s);
  st.u -= (pair(st.u, st.s) / moment_of_inertia(st.s, ms)) * msv;
}

// ---------------------------------------------------------------------------
// Packing for the integrator

template <int D>
State pack(const McGeheeState<D>& st, bool with_time = false, double t = 0.0) {
  const Eigen::Index m = st.s.size();
  State y(2 + 2 * m + (with_time ? 1 : 0));
  y[0] = st.rho;
  y[1] = st.v;
  y.segment(2, m) = flat(st.s);
  y.segment(2 + m, m) = flat(st.u);
  if (with_time) y[2 + 2 * m] = t;
  return y;
}

template <int D>
McGeheeState<D> unpack(const State& y, int n) {
  const Eigen::Index m = static_cast<Eigen::Index>(D) * n;
  McGeheeState<D> st;
  st.rho = y[0];
  st.v = y[1];
  st.s = unflat<D>(y.segment(2, m));
  st.u = unflat<D>(y.segment(2 + m, m));
  return st;
}

template <int D>
State pack_rates(const McGeheeRates<D>& d) {
  const Eigen::Index m = d.s.size();
  State y(2 + 2 * m);
  y[0] = d.rho;
  y[1] = d.v;
  y.segment(2, m) = flat(d.s);
  y.segment(2 + m, m) = flat(d.u);
  return y;
}

/// McGehee field as an ODE right-hand side; with_time appends t' = rho^{1+b/2}.
template <int D>
Field mcgehee_ode(const MassSystem& ms, const PotentialParams& pp, bool with_time = false) {
  require_manev(pp);
  return [ms, pp, with_time](double, const State& y) {
    const auto st = unpack<D>(y, ms.n());
    State d = State::Zero(y.size());
    d.head(y.size() - (with_time ? 1 : 0)) = pack_rates(vector_field(st, ms, pp));
    if (with_time) d[y.size() - 1] = std::pow(std::max(st.rho, 0.0), 1.0 + 0.5 * pp.b);
    return d;
  };
}

template <int D>
Renormalizer mcgehee_renormalizer(const MassSystem& ms) {
  return [ms](State& y) {
    auto st = unpack<D>(y, ms.n());
    renormalize_mcgehee(st, ms);
    const Eigen::Index m = st.s.size();
    y.segment(2, m) = flat(st.s);
    y.segment(2 + m, m) = flat(st.u);
  };
}

// ---------------------------------------------------------------------------
// Cartesian Hamiltonian dynamics, y = [r (D*n), p (D*n)]

template <int D>
State pack_phase(const PhaseState<D>& ps) {
  const Eigen::Index m = ps.momenta.size();
  State y(2 * m);
  y.head(m) = flat(ps.config.positions());
  y.tail(m) = flat(ps.momenta);
  return y;
}

template <int D>
std::pair<Points<D>, Points<D>> unpack_phase(const State& y, int n) {
  const Eigen::Index m = static_cast<Eigen::Index>(D) * n;
  return {unflat<D>(y.head(m)), unflat<D>(y.tail(m))};
}

/// r' = M^{-1} p, p' = grad U(r).
template <int D>
Field cartesian_ode(const MassSystem& ms, const PotentialParams& pp) {
  pp.validate();
  return [ms, pp](double, const State& y) {
    const auto [r, p] = unpack_phase<D>(y, ms.n());
    State d(y.size());
    const Eigen::Index m = r.size();
    d.head(m) = flat(Points<D>(ms.apply_inverse(p)));
    d.tail(m) = flat(gradient_U(r, ms, pp));
    return d;
  };
}

}  // namespace qh

#endif  // QH_MCGEHEE_HPP
