#ifndef QH_HOMOTHETIC_HPP
#define QH_HOMOTHETIC_HPP

// Homothetic motions of a simultaneous central configuration s0: the shape is
// frozen (s = s0, u = 0) and only (rho, v) evolve, on the invariant plane P.
// On the energy level h,
//
//   v^2 / 2 = rho^{b-1} W(s0) + rho^b h + V(s0),
//
// and for h < 0 the orbit leaves total collision at v = +sqrt(2V(s0)),
// expands to rho_max and falls back to v = -sqrt(2V(s0)).

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "qh/central_config.hpp"
#include "qh/errors.hpp"
#include "qh/integrate.hpp"
#include "qh/mcgehee.hpp"
#include "qh/model.hpp"

namespace qh {

/// True iff s0 is central for W and for V separately, both residuals <= tol.
template <int D>
bool is_homothetic_admissible(const Points<D>& s0, const MassSystem& ms, const PotentialParams& pp,
                              double tol = 1e-9) {
  return simultaneous_residual(s0, ms, pp).max() <= tol;
}

namespace detail {

template <int D>
void require_admissible(const Points<D>& s0, const MassSystem& ms, const PotentialParams& pp, double tol) {
  const SimultaneousResidual r = simultaneous_residual(s0, ms, pp);
  if (r.max() > tol) {
    std::ostringstream os;
    os << "shape is not a simultaneous central configuration (residuals W " << r.res_W << ", V " << r.res_V
       << ")";
    throw AdmissibilityError(os.str());
  }
}

inline double pow_or_zero(double rho, double e) { return rho == 0.0 ? 0.0 : std::pow(rho, e); }

}  // namespace detail

struct PlaneRates {
  double rho;
  double v;
};

/// rho' = rho v,  v' = (b-1) rho^{b-1} W(s0) + b rho^b h.
template <int D>
PlaneRates plane_field(double rho, double v, const Points<D>& s0, const MassSystem& ms, const PotentialParams& pp,
                       double h, double tol = 1e-9) {
  require_manev(pp);
  detail::require_admissible(s0, ms, pp, tol);
  return {rho * v, (pp.b - 1.0) * detail::pow_or_zero(rho, pp.b - 1.0) * potential_W(s0, ms, pp) +
                       pp.b * detail::pow_or_zero(rho, pp.b) * h};
}

/// v' = (b/2) v^2 - rho^{b-1} W(s0) - b V(s0), the McGehee v equation at u = 0.
template <int D>
double plane_v_rate_unreduced(double rho, double v, const Points<D>& s0, const MassSystem& ms,
                              const PotentialParams& pp) {
  return 0.5 * pp.b * v * v - detail::pow_or_zero(rho, pp.b - 1.0) * potential_W(s0, ms, pp) -
         pp.b * potential_V(s0, ms, pp);
}

/// 2 (rho^{b-1} W(s0) + rho^b h + V(s0)).
template <int D>
double energy_curve_v2(double rho, const Points<D>& s0, const MassSystem& ms, const PotentialParams& pp, double h) {
  return 2.0 * (detail::pow_or_zero(rho, pp.b - 1.0) * potential_W(s0, ms, pp) +
                detail::pow_or_zero(rho, pp.b) * h + potential_V(s0, ms, pp));
}

/// The unique positive zero of energy_curve_v2 for h < 0: a geometric bracket
/// from rho = 1, then bisection to relative width 4 eps.
template <int D>
double rho_max_bisection(const Points<D>& s0, const MassSystem& ms, const PotentialParams& pp, double h) {
  if (!(h < 0.0)) throw EnergySignError("rho_max exists only for h < 0");
  auto f = [&](double r) { return energy_curve_v2(r, s0, ms, pp, h); };
  double lo = 0.0, hi = 1.0;
  for (int k = 0; f(hi) >= 0.0; ++k) {
    if (k > 2000) throw BracketError("no sign change of the energy curve");
    lo = hi;
    hi *= 2.0;
  }
  while (hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * hi) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (f(mid) >= 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Number of sign changes of energy_curve_v2 on a log-spaced grid over
/// [rho_lo, rho_hi].
template <int D>
int energy_curve_sign_changes(const Points<D>& s0, const MassSystem& ms, const PotentialParams& pp, double h,
                              double rho_lo = 1e-8, double rho_hi = 1e8, int samples = 4001) {
  int changes = 0;
  double prev = energy_curve_v2(rho_lo, s0, ms, pp, h);
  for (int k = 1; k < samples; ++k) {
    const double r = rho_lo * std::pow(rho_hi / rho_lo, static_cast<double>(k) / (samples - 1));
    const double cur = energy_curve_v2(r, s0, ms, pp, h);
    if ((prev > 0.0) != (cur > 0.0)) ++changes;
    prev = cur;
  }
  return changes;
}

struct PlaneSample {
  double tau;
  double rho;
  double v;
};

struct PlaneOrbit {
  Points<2> s0;
  double h = 0.0;
  double K = 0.0;  // V(s0)
  std::vector<PlaneSample> samples;
  double rho_max = 0.0;            // rho at the v = 0 event
  double rho_max_bisection = 0.0;  // zero of the energy curve
  double tau_max = 0.0;            // tau at the v = 0 event
  double v_start = 0.0, v_end = 0.0;
  double K_drift = 0.0;  // max |v^2/2 - rho^{b-1} W - rho^b h - K|
  Trajectory trajectory;
};

/// The truncated heteroclinic orbit from (rho_floor, +sqrt(v2)) to the return
/// of rho below rho_floor.
inline PlaneOrbit heteroclinic_orbit(const Points<2>& s0, const MassSystem& ms, const PotentialParams& pp, double h,
                                     double rho_floor = 1e-8, IntegratorOptions opt = {.rel_tol = 1e-12, .abs_tol = 1e-20},
                                     double tol = 1e-9) {
  require_manev(pp);
  if (!(pp.b > 1.0)) throw ValidationError("heteroclinic orbits assume b > 1");
  if (!(h < 0.0)) throw EnergySignError("heteroclinic orbits exist only for h < 0");
  if (!(rho_floor > 0.0)) throw ValidationError("rho_floor must be positive");
  detail::require_admissible(s0, ms, pp, tol);

  const double w = potential_W(s0, ms, pp);
  PlaneOrbit orb;
  orb.s0 = s0;
  orb.h = h;
  orb.K = potential_V(s0, ms, pp);
  orb.rho_max_bisection = rho_max_bisection(s0, ms, pp, h);

  const double b = pp.b;
  Field f = [=](double, const State& y) {
    State d(2);
    const double rho = std::max(y[0], 0.0);
    d[0] = y[0] * y[1];
    d[1] = (b - 1.0) * std::pow(rho, b - 1.0) * w + b * std::pow(rho, b) * h;
    return d;
  };
  auto kinv = [=](double, const State& y) {
    const double rho = std::max(y[0], 0.0);
    return 0.5 * y[1] * y[1] - std::pow(rho, b - 1.0) * w - std::pow(rho, b) * h - orb.K;
  };
  std::vector<Event> events{
      {"turn", [](double, const State& y) { return y[1]; }, -1, false},
      {"collapse", [=](double, const State& y) { return y[0] - rho_floor; }, -1, true},
  };
  State y0(2);
  y0 << rho_floor, std::sqrt(energy_curve_v2(rho_floor, s0, ms, pp, h));
  const double tau_budget = 1e6;
  orb.trajectory = integrate(f, y0, 0.0, tau_budget, opt, events, {}, {{"K_residual", kinv}});
  const Trajectory& tr = orb.trajectory;
  if (tr.termination != Termination::event || tr.events.empty() || tr.events.back().name != "collapse")
    throw NoConvergenceError("heteroclinic orbit did not return to rho_floor", tr.final_state()[0]);

  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    orb.samples.push_back({tr.times[k], tr.states[k][0], tr.states[k][1]});
    orb.K_drift = std::max(orb.K_drift, std::abs(tr.residuals[0][k]));
  }
  for (const auto& e : tr.events)
    if (e.name == "turn") {
      orb.tau_max = e.t;
      orb.rho_max = e.y[0];
    }
  orb.v_start = tr.states.front()[1];
  orb.v_end = tr.states.back()[1];
  return orb;
}

/// Lifts a plane sample to phase space: r = rho s0, p = rho^{-b/2} v M s0.
inline PhaseState<2> lift_plane_sample(const PlaneSample& smp, const Points<2>& s0, const MassSystem& ms,
                                       const PotentialParams& pp) {
  McGeheeState<2> st{smp.rho, s0, smp.v, Points<2>::Zero(2, s0.cols())};
  return from_mcgehee(st, ms, pp);
}

struct ShapeDrift {
  double max_deviation = 0.0;  // max over tau of the mass-metric distance |s(tau) - s0|
  double tau_exceeded = std::numeric_limits<double>::quiet_NaN();  // first tau with deviation > threshold
  Trajectory trajectory;
};

/// Starts the full McGehee field at (rho0, s0, u = 0, v >= 0 from the energy
/// relation) and records how far the shape drifts from s0.
template <int D>
ShapeDrift shape_drift(const Points<D>& s0, const MassSystem& ms, const PotentialParams& pp, double h, double rho0,
                       double tau_span, double threshold = 1e-4, IntegratorOptions opt = {}) {
  require_manev(pp);
  double v2 = energy_curve_v2(rho0, s0, ms, pp, h);
  const double scale = std::pow(rho0, pp.b - 1.0) * potential_W(s0, ms, pp) + potential_V(s0, ms, pp);
  if (v2 < -1e-12 * scale) throw EnergySignError("no real v on the energy level at this rho");
  v2 = std::max(v2, 0.0);
  McGeheeState<D> st{rho0, s0, std::sqrt(v2), Points<D>::Zero(s0.rows(), s0.cols())};
  const int n = ms.n();
  ShapeDrift out;
  auto dev = [=](double, const State& y) {
    const Points<D> s = unpack<D>(y, n).s;
    return std::sqrt(moment_of_inertia(Points<D>(s - s0), ms));
  };
  opt.throw_on_error = false;
  out.trajectory = integrate(mcgehee_ode<D>(ms, pp), pack(st), 0.0, tau_span, opt, {}, mcgehee_renormalizer<D>(ms),
                             {{"shape_deviation", dev}});
  const auto& d = out.trajectory.series("shape_deviation");
  for (std::size_t k = 0; k < d.size(); ++k) {
    out.max_deviation = std::max(out.max_deviation, d[k]);
    if (std::isnan(out.tau_exceeded) && d[k] > threshold) out.tau_exceeded = out.trajectory.times[k];
  }
  return out;
}

}  // namespace qh

#endif  // QH_HOMOTHETIC_HPP
