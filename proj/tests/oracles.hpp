#ifndef QH_TESTS_ORACLES_HPP
#define QH_TESTS_ORACLES_HPP

// Independent reference computations for the tests: central finite
// differences, second differences along great circles of the inertia sphere,
// brute-force grid searches and random generators.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "qh/qh.hpp"

namespace qh::oracle {

using Scalar = std::function<double(const Eigen::VectorXd&)>;
using VectorFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Fourth-order central difference gradient.
inline Eigen::VectorXd fd_gradient(const Scalar& f, const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    auto at = [&](double d) {
      Eigen::VectorXd y = x;
      y[i] += d;
      return f(y);
    };
    g[i] = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
  }
  return g;
}

/// Fourth-order central difference Jacobian of a vector field.
inline Eigen::MatrixXd fd_jacobian(const VectorFn& f, const Eigen::VectorXd& x, double h) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd j(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    auto at = [&](double d) {
      Eigen::VectorXd y = x;
      y[i] += d;
      return f(y);
    };
    j.col(i) = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
  }
  return j;
}

/// Second derivative of t -> f(gamma(t)) at t = 0, gamma the great circle
/// through r with initial velocity v on the mass sphere <x, x> = <r, r>.
template <int D>
double geodesic_second_difference(const std::function<double(const Points<D>&)>& f, const Points<D>& r,
                                  const Points<D>& v, const MassSystem& ms, double h) {
  const double radius = std::sqrt(moment_of_inertia(r, ms));
  const double speed = std::sqrt(moment_of_inertia(v, ms));
  const Points<D> dir = v / speed;
  auto gamma = [&](double t) {
    const double th = t * speed / radius;
    return Points<D>(std::cos(th) * r + std::sin(th) * radius * dir);
  };
  return (-f(gamma(2 * h)) + 16 * f(gamma(h)) - 30 * f(r) + 16 * f(gamma(-h)) - f(gamma(-2 * h))) / (12 * h * h);
}

inline std::mt19937_64 rng(unsigned long long seed) { return std::mt19937_64(seed); }

inline std::vector<double> random_masses(std::mt19937_64& g, int n, double lo = 0.3, double hi = 3.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> m(n);
  for (auto& x : m) x = u(g);
  return m;
}

/// Random centred configuration with all pair distances at least min_sep.
template <int D>
Points<D> random_points(std::mt19937_64& g, const MassSystem& ms, double min_sep = 0.2) {
  std::normal_distribution<double> nd(0.0, 1.0);
  for (;;) {
    Points<D> r(D, ms.n());
    for (Eigen::Index k = 0; k < r.size(); ++k) r.data()[k] = nd(g);
    r = recentered(r, ms);
    if (min_pair_distance(r) >= min_sep) return r;
  }
}

/// Random vector tangent to the inertia sphere at r (centre of mass fixed).
template <int D>
Points<D> random_tangent(std::mt19937_64& g, const Points<D>& r, const MassSystem& ms) {
  const Eigen::MatrixXd e = inertia_sphere_tangent_basis(r, ms);
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd c(e.cols());
  for (auto& x : c) x = nd(g);
  return unflat<D>(e * c);
}

/// Unit-mass-norm random covector u with u^T s = 0 and sum u = 0.
template <int D>
Points<D> random_u(std::mt19937_64& g, const Points<D>& s, const MassSystem& ms, double scale) {
  const Points<D> t = random_tangent<D>(g, s, ms);
  return scale * ms.apply(t);
}

/// Random phase state with zero total momentum, scaled to the given size
/// sqrt(I) and momentum scale.
template <int D>
PhaseState<D> random_phase(std::mt19937_64& g, const MassSystem& ms, double size, double pscale,
                           double min_sep = 0.3) {
  Points<D> r = random_points<D>(g, ms, min_sep);
  r *= size / std::sqrt(moment_of_inertia(r, ms));
  std::normal_distribution<double> nd(0.0, pscale);
  Points<D> p(D, ms.n());
  for (Eigen::Index k = 0; k < p.size(); ++k) p.data()[k] = nd(g);
  p.colwise() -= p.rowwise().mean();
  return PhaseState<D>::make(Configuration<D>::from_points(r, ms, 1e-10), p, 1e-10);
}

/// Rigidly rotating planar state: r on a central configuration, p = M (omega x r)
/// with omega^2 = -2 sigma.
inline PhaseState<2> relative_equilibrium(const Points<2>& cc, const MassSystem& ms, const PotentialParams& pp) {
  const double sigma = cc_residual(cc, ms, pp).sigma;
  const double omega = std::sqrt(-2.0 * sigma);
  Points<2> v(2, cc.cols());
  v.row(0) = -omega * cc.row(1);
  v.row(1) = omega * cc.row(0);
  return PhaseState<2>::make(Configuration<2>::from_points(cc, ms, 1e-10), ms.apply(v), 1e-10);
}

struct SystemState {
  MassSystem ms;
  PhaseState<2> ps;
};

/// One heavy body and two light ones: the Routh regime, where the rotating
/// triangle is linearly stable and nearby orbits stay away from collisions.
inline std::vector<double> random_hierarchical_masses(std::mt19937_64& g) {
  std::uniform_real_distribution<double> heavy(0.5, 2.0), light(0.005, 0.02);
  return {heavy(g), light(g), light(g)};
}

/// Random long-lived planar state: a rotating equilateral configuration of
/// random masses and size rho, with positions, momenta and spin perturbed by
/// relative amounts up to `jitter`.
inline SystemState random_rotating_state(std::mt19937_64& g, const PotentialParams& pp, double rho,
                                         double jitter = 0.01) {
  const MassSystem ms(random_hierarchical_masses(g));
  const Points<2> cc = equilateral_cc({ms, pp, rho * rho}).plus.config.positions();
  PhaseState<2> re = relative_equilibrium(cc, ms, pp);
  std::uniform_real_distribution<double> u(-jitter, jitter);
  Points<2> r = cc, p = re.momenta * (1.0 + u(g));
  const double rs = r.cwiseAbs().maxCoeff(), ps = p.cwiseAbs().maxCoeff();
  for (Eigen::Index k = 0; k < r.size(); ++k) {
    r.data()[k] += rs * u(g);
    p.data()[k] += ps * u(g);
  }
  p.colwise() -= p.rowwise().mean();
  return {ms, PhaseState<2>::make(Configuration<2>::centered(r, ms), p, 1e-10)};
}

/// Brute-force collinear critical points of U on the sphere <x,x> = I0 for
/// three bodies in a given order: scan the gap fraction on a fine grid and
/// refine the local minima by golden-section search.
inline std::vector<Points<1>> grid_collinear3(const MassSystem& ms, const PotentialParams& pp, const Ordering& ord,
                                              double inertia_I0, int samples = 20000) {
  const auto& lab = ord.perm();
  auto place = [&](double t) {
    Points<1> x(1, 3);
    x(0, lab[0]) = 0.0;
    x(0, lab[1]) = t;
    x(0, lab[2]) = 1.0;
    x = recentered(x, ms);
    return Points<1>(x * std::sqrt(inertia_I0 / moment_of_inertia(x, ms)));
  };
  auto phi = [&](double t) { return potential_U(place(t), ms, pp); };
  std::vector<Points<1>> out;
  std::vector<double> ts(samples + 1), fs(samples + 1);
  for (int k = 0; k <= samples; ++k) {
    ts[k] = 1e-3 + (1.0 - 2e-3) * k / samples;
    fs[k] = phi(ts[k]);
  }
  for (int k = 1; k < samples; ++k) {
    if (!(fs[k] < fs[k - 1] && fs[k] <= fs[k + 1])) continue;
    double lo = ts[k - 1], hi = ts[k + 1];
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 200; ++it) {
      const double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
      (phi(c) < phi(d) ? hi : lo) = (phi(c) < phi(d) ? d : c);
    }
    out.push_back(place(0.5 * (lo + hi)));
  }
  return out;
}

}  // namespace qh::oracle

#endif  // QH_TESTS_ORACLES_HPP
