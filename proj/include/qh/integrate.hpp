#ifndef QH_INTEGRATE_HPP
#define QH_INTEGRATE_HPP

// Adaptive Dormand-Prince 5(4) integrator with PI step control, the standard
// fourth-order continuous extension, event localization by bisection on the
// dense output, and an optional projection applied after each accepted step.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qh/errors.hpp"

namespace qh {

using State = Eigen::VectorXd;
using Field = std::function<State(double, const State&)>;
using Renormalizer = std::function<void(State&)>;

struct Event {
  std::string name;
  std::function<double(double, const State&)> g;
  /// +1: only upward crossings of g, -1: only downward, 0: both.
  int direction = 0;
  bool terminal = true;
};

struct EventHit {
  std::string name;
  double t = 0.0;
  State y;
};

struct Monitor {
  std::string name;
  std::function<double(double, const State&)> value;
};

struct IntegratorOptions {
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
  double initial_step = 0.0;  // 0 = automatic
  double max_step = std::numeric_limits<double>::infinity();
  /// Fixed-step mode (no error control); used for order verification.
  std::optional<double> fixed_step{};
  std::size_t max_steps = 2'000'000;
  double event_tol = 1e-12;
  /// When false, failures end the run with termination == error instead of throwing.
  bool throw_on_error = true;
};

enum class Termination { time_budget, event, error };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::time_budget: return "time-budget";
    case Termination::event: return "event";
    case Termination::error: return "error";
  }
  return "?";
}

/// Continuous extension over one accepted step.
struct DenseSegment {
  double t0 = 0.0;
  double h = 0.0;
  State c1, c2, c3, c4, c5;

  State operator()(double t) const {
    const double th = (t - t0) / h;
    const double th1 = 1.0 - th;
    return c1 + th * (c2 + th1 * (c3 + th * (c4 + th1 * c5)));
  }
};

struct Trajectory {
  std::vector<double> times;
  std::vector<State> states;
  std::vector<std::string> residual_names;
  std::vector<std::vector<double>> residuals;  // one series per monitor
  std::vector<DenseSegment> segments;          // segments[k] spans times[k]..times[k+1]
  std::vector<EventHit> events;
  Termination termination = Termination::time_budget;
  std::string termination_detail;
  std::size_t rejected_steps = 0;

  const State& final_state() const { return states.back(); }
  double final_time() const { return times.back(); }

  const std::vector<double>& series(const std::string& name) const {
    for (std::size_t k = 0; k < residual_names.size(); ++k)
      if (residual_names[k] == name) return residuals[k];
    throw ValidationError("no residual series named " + name);
  }

  /// Dense-output evaluation for t in [times.front(), times.back()].
  State at(double t) const {
    if (segments.empty() || t <= times.front()) return states.front();
    if (t >= times.back()) return states.back();
    auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t k = static_cast<std::size_t>(std::distance(times.begin(), it)) - 1;
    return segments[std::min(k, segments.size() - 1)](t);
  }
};

namespace detail {

struct DormandPrince {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                          a76 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;
  static constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                          d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                          d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;
};

struct StepResult {
  State y1, k7, err;
  DenseSegment seg;
};

inline StepResult dp_step(const Field& f, double t, const State& y, const State& k1, double h) {
  using T = DormandPrince;
  const State k2 = f(t + T::c2 * h, y + h * (T::a21 * k1));
  const State k3 = f(t + T::c3 * h, y + h * (T::a31 * k1 + T::a32 * k2));
  const State k4 = f(t + T::c4 * h, y + h * (T::a41 * k1 + T::a42 * k2 + T::a43 * k3));
  const State k5 = f(t + T::c5 * h, y + h * (T::a51 * k1 + T::a52 * k2 + T::a53 * k3 + T::a54 * k4));
  const State k6 =
      f(t + h, y + h * (T::a61 * k1 + T::a62 * k2 + T::a63 * k3 + T::a64 * k4 + T::a65 * k5));
  StepResult out;
  out.y1 = y + h * (T::a71 * k1 + T::a73 * k3 + T::a74 * k4 + T::a75 * k5 + T::a76 * k6);
  out.k7 = f(t + h, out.y1);
  out.err = h * (T::e1 * k1 + T::e3 * k3 + T::e4 * k4 + T::e5 * k5 + T::e6 * k6 + T::e7 * out.k7);
  const State ydiff = out.y1 - y;
  const State bspl = h * k1 - ydiff;
  out.seg.t0 = t;
  out.seg.h = h;
  out.seg.c1 = y;
  out.seg.c2 = ydiff;
  out.seg.c3 = bspl;
  out.seg.c4 = ydiff - h * out.k7 - bspl;
  out.seg.c5 = h * (T::d1 * k1 + T::d3 * k3 + T::d4 * k4 + T::d5 * k5 + T::d6 * k6 + T::d7 * out.k7);
  return out;
}

inline bool all_finite(const State& y) { return y.allFinite(); }

}  // namespace detail

/// Integrates y' = field(t, y) from t0 towards t1 (t1 > t0).
inline Trajectory integrate(const Field& field, State y0, double t0, double t1, const IntegratorOptions& opt = {},
                            const std::vector<Event>& events = {}, const Renormalizer& renormalize = {},
                            const std::vector<Monitor>& monitors = {}) {
  if (!(opt.rel_tol > 0.0) || !(opt.abs_tol > 0.0)) throw ValidationError("integration tolerances must be > 0");
  if (!(t1 > t0)) throw ValidationError("integration span must be increasing");

  Trajectory tr;
  for (const auto& m : monitors) tr.residual_names.push_back(m.name);
  tr.residuals.resize(monitors.size());

  auto record = [&](double t, const State& y) {
    tr.times.push_back(t);
    tr.states.push_back(y);
    for (std::size_t k = 0; k < monitors.size(); ++k) tr.residuals[k].push_back(monitors[k].value(t, y));
  };

  auto fail = [&](Termination, const std::string& kind, const std::string& msg) -> Trajectory {
    if (opt.throw_on_error) {
      if (kind == "StiffnessError") throw StiffnessError(msg);
      throw FieldError(msg);
    }
    tr.termination = Termination::error;
    tr.termination_detail = kind + ": " + msg;
    return tr;
  };

  if (renormalize) renormalize(y0);
  State k1;
  try {
    k1 = field(t0, y0);
  } catch (const std::exception& e) {
    return fail(Termination::error, "FieldError", std::string("at initial state: ") + e.what());
  }
  if (!detail::all_finite(k1)) return fail(Termination::error, "FieldError", "field not finite at initial state");
  record(t0, y0);

  std::vector<double> g_prev(events.size());
  for (std::size_t k = 0; k < events.size(); ++k) g_prev[k] = events[k].g(t0, y0);

  auto err_norm = [&](const State& y, const State& y1, const State& err) {
    const State sc = (opt.abs_tol + opt.rel_tol * y.cwiseAbs().cwiseMax(y1.cwiseAbs()).array()).matrix();
    return std::sqrt((err.array() / sc.array()).square().mean());
  };

  double t = t0;
  State y = y0;
  const double span = t1 - t0;
  double h = 0.0;
  if (opt.fixed_step) {
    h = *opt.fixed_step;
  } else if (opt.initial_step > 0.0) {
    h = opt.initial_step;
  } else {
    const State sc = (opt.abs_tol + opt.rel_tol * y.cwiseAbs().array()).matrix();
    const double dnf = std::sqrt((y.array() / sc.array()).square().mean());
    const double dny = std::sqrt((k1.array() / sc.array()).square().mean());
    h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : 0.01 * dnf / dny;
    h = std::min(h, span);
  }
  h = std::min({h, opt.max_step, span});

  double err_old = 1e-4;
  constexpr double beta = 0.04, expo = 0.2 - beta * 0.75, safe = 0.9, fac_min = 0.2, fac_max = 10.0;
  bool last_rejected = false;
  std::string field_failure;

  for (std::size_t step = 0; step < opt.max_steps; ++step) {
    if (t >= t1) {
      tr.termination = Termination::time_budget;
      return tr;
    }
    const double min_h = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t));
    if (h < min_h) {
      std::ostringstream os;
      os << "step size underflow at t = " << t;
      if (!field_failure.empty()) return fail(Termination::error, "FieldError", os.str() + ": " + field_failure);
      return fail(Termination::error, "StiffnessError", os.str());
    }
    const bool hits_end = t + h >= t1;
    if (hits_end) h = t1 - t;

    detail::StepResult s;
    try {
      s = detail::dp_step(field, t, y, k1, h);
    } catch (const std::exception& e) {
      if (opt.fixed_step) return fail(Termination::error, "FieldError", e.what());
      h *= 0.25;
      ++tr.rejected_steps;
      last_rejected = true;
      field_failure = e.what();
      if (h < min_h) return fail(Termination::error, "FieldError", e.what());
      continue;
    }
    const bool finite = detail::all_finite(s.y1) && detail::all_finite(s.k7);
    double err = opt.fixed_step ? 0.0 : (finite ? err_norm(y, s.y1, s.err) : std::numeric_limits<double>::infinity());

    if (!opt.fixed_step && (err > 1.0 || !finite)) {
      ++tr.rejected_steps;
      const double fac = finite ? std::max(fac_min, safe * std::pow(err, -expo)) : 0.25;
      h *= std::min(1.0, fac);
      last_rejected = true;
      continue;
    }
    if (opt.fixed_step && !finite) return fail(Termination::error, "FieldError", "non-finite state");

    // Accepted.
    const double t_new = t + h;
    State y_new = s.y1;
    DenseSegment seg = s.seg;

    // Events on the dense output of this step.
    std::optional<std::size_t> stop_event;
    double stop_t = t_new;
    for (std::size_t k = 0; k < events.size(); ++k) {
      const double g0 = g_prev[k];
      const double g1 = events[k].g(t_new, y_new);
      const bool up = g0 < 0.0 && g1 >= 0.0;
      const bool down = g0 > 0.0 && g1 <= 0.0;
      const bool hit = (events[k].direction >= 0 && up) || (events[k].direction <= 0 && down);
      if (!hit) continue;
      double lo = t, hi = t_new, glo = g0;
      const double tol = opt.event_tol * std::max(1.0, std::abs(t_new));
      while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        const double gm = events[k].g(mid, seg(mid));
        if ((glo < 0.0) == (gm < 0.0) && gm != 0.0) {
          lo = mid;
          glo = gm;
        } else {
          hi = mid;
        }
      }
      EventHit eh{events[k].name, hi, seg(hi)};
      if (events[k].terminal) {
        if (!stop_event || hi < stop_t) {
          stop_event = k;
          stop_t = hi;
        }
      } else {
        tr.events.push_back(std::move(eh));
      }
    }

    if (stop_event) {
      // The event time comes from the dense output; the stored state is a
      // full step to that time, which is more accurate near singular fields.
      State ye = seg(stop_t);
      if (stop_t > t) {
        try {
          State yr = detail::dp_step(field, t, y, k1, stop_t - t).y1;
          if (detail::all_finite(yr)) ye = std::move(yr);
        } catch (const std::exception&) {
        }
      }
      if (renormalize) renormalize(ye);
      // Drop non-terminal hits that happened after the terminal one.
      std::erase_if(tr.events, [&](const EventHit& e) { return e.t > stop_t; });
      tr.events.push_back(EventHit{events[*stop_event].name, stop_t, ye});
      if (stop_t > t) {
        tr.segments.push_back(seg);
        record(stop_t, ye);
      }
      tr.termination = Termination::event;
      tr.termination_detail = events[*stop_event].name;
      return tr;
    }

    if (renormalize) renormalize(y_new);
    tr.segments.push_back(std::move(seg));
    t = t_new;
    y = std::move(y_new);
    record(t, y);
    for (std::size_t k = 0; k < events.size(); ++k) g_prev[k] = events[k].g(t, y);

    if (renormalize) {
      try {
        k1 = field(t, y);
      } catch (const std::exception& e) {
        return fail(Termination::error, "FieldError", e.what());
      }
    } else {
      k1 = s.k7;
    }

    if (!opt.fixed_step) {
      double fac = err == 0.0 ? fac_max : safe * std::pow(err_old, beta) / std::pow(err, expo);
      fac = std::clamp(fac, fac_min, fac_max);
      if (last_rejected) fac = std::min(fac, 1.0);
      h = std::min(h * fac, opt.max_step);
      err_old = std::max(err, 1e-4);
      last_rejected = false;
    }
    if (hits_end) {
      tr.termination = Termination::time_budget;
      return tr;
    }
  }
  return fail(Termination::error, "StiffnessError", "maximum number of steps exceeded");
}

}  // namespace qh

#endif  // QH_INTEGRATE_HPP
