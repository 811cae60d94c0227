#ifndef QH_CENTRAL_CONFIG_HPP
#define QH_CENTRAL_CONFIG_HPP

// Central configurations of the quasihomogeneous potential.
//
//  * collinear:   one minimum of U on the inertia sphere per ordering class,
//                 n!/2 classes in total (Moulton count);
//  * equilateral: for a = 1 and three bodies, the two orientations of the
//                 triangle whose side is fixed by the inertia constraint;
//  * simultaneous: configurations that are central for W and V separately.
//
// General planar CC search is deliberately absent: for the Manev-type
// three-body problem the non-collinear CCs are exactly the equilateral ones.

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qh/errors.hpp"
#include "qh/model.hpp"

namespace qh {

enum class Ambient { collinear, planar };

inline const char* to_string(Ambient a) { return a == Ambient::collinear ? "collinear" : "planar"; }

struct CCQuery {
  MassSystem ms;
  PotentialParams pp;
  double inertia_I0 = 1.0;
  double grad_tol = 1e-12;
  int max_iter = 200;

  void validate() const {
    pp.validate();
    if (!(inertia_I0 > 0.0)) throw ValidationError("inertia_I0 must be > 0");
    if (!(grad_tol > 0.0)) throw ValidationError("grad_tol must be > 0");
    if (max_iter <= 0) throw ValidationError("max_iter must be > 0");
  }
};

/// Left-to-right order of the bodies on a line (0-based body indices), stored
/// as the canonical representative of {perm, reversed perm}.
class Ordering {
 public:
  explicit Ordering(std::vector<int> perm) : perm_(std::move(perm)) {
    std::vector<int> sorted = perm_;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (sorted[i] != static_cast<int>(i)) throw ValidationError("ordering is not a permutation of the bodies");
    std::vector<int> rev(perm_.rbegin(), perm_.rend());
    if (rev < perm_) perm_ = std::move(rev);
  }

  /// From 1-based body labels.
  static Ordering from_labels(const std::vector<int>& labels) {
    std::vector<int> p;
    for (int l : labels) p.push_back(l - 1);
    return Ordering(std::move(p));
  }

  /// Order in which the bodies appear along the line.
  template <int D>
  static Ordering from_line(const Points<D>& x) {
    std::vector<int> p(static_cast<std::size_t>(x.cols()));
    std::iota(p.begin(), p.end(), 0);
    std::sort(p.begin(), p.end(), [&](int i, int j) { return x(0, i) < x(0, j); });
    return Ordering(std::move(p));
  }

  /// All n!/2 canonical classes, in lexicographic order.
  static std::vector<Ordering> all(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    std::vector<Ordering> out;
    do {
      std::vector<int> rev(p.rbegin(), p.rend());
      if (p < rev) out.emplace_back(p);
    } while (std::next_permutation(p.begin(), p.end()));
    return out;
  }

  int size() const { return static_cast<int>(perm_.size()); }
  int operator[](int k) const { return perm_[static_cast<std::size_t>(k)]; }
  const std::vector<int>& perm() const { return perm_; }
  std::vector<int> labels() const {
    std::vector<int> l;
    for (int p : perm_) l.push_back(p + 1);
    return l;
  }
  bool operator==(const Ordering& o) const { return perm_ == o.perm_; }
  bool operator<(const Ordering& o) const { return perm_ < o.perm_; }

  std::string str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t k = 0; k < perm_.size(); ++k) os << (k ? "," : "") << perm_[k] + 1;
    os << ")";
    return os.str();
  }

 private:
  std::vector<int> perm_;
};

enum class CCKind { collinear, planar_equilateral };

struct CCResult {
  Configuration<2> config;
  double sigma = 0.0;
  std::optional<double> sigma1, sigma2;
  double residual = 0.0;
  CCKind kind = CCKind::collinear;
  std::optional<Ordering> ordering;
  int orientation = 0;  // +1 / -1 for the equilateral pair
  int index = 0;
  int zero_modes = 0;
  Ambient index_ambient = Ambient::collinear;
  std::vector<double> hess_eigs;
  int iterations = 0;
};

// ---------------------------------------------------------------------------
// Residuals

struct CCResidual {
  double sigma;
  double residual;
};

/// sigma from Euler's identity, sigma = -(aW + bV) / (2I), and the sup-norm of
/// grad U - sigma grad I.
template <int D>
CCResidual cc_residual(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp) {
  const double inertia = moment_of_inertia(r, ms);
  const double sigma = -euler_weight(r, ms, pp) / (2.0 * inertia);
  const Points<D> diff = gradient_U(r, ms, pp) - 2.0 * sigma * ms.apply(r);
  return {sigma, diff.cwiseAbs().maxCoeff()};
}

struct SimultaneousResidual {
  double sigma1, sigma2;
  double res_W, res_V;
  double max() const { return std::max(res_W, res_V); }
};

template <int D>
SimultaneousResidual simultaneous_residual(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp) {
  pp.validate();
  if (pp.alpha == 0.0 || pp.beta == 0.0)
    throw DegenerateTermError("simultaneous test needs both alpha > 0 and beta > 0");
  const double inertia = moment_of_inertia(r, ms);
  const double s1 = -pp.a * potential_W(r, ms, pp) / (2.0 * inertia);
  const double s2 = -pp.b * potential_V(r, ms, pp) / (2.0 * inertia);
  const Points<D> mr = ms.apply(r);
  const double rw = (gradient_W(r, ms, pp) - 2.0 * s1 * mr).cwiseAbs().maxCoeff();
  const double rv = (gradient_V(r, ms, pp) - 2.0 * s2 * mr).cwiseAbs().maxCoeff();
  return {s1, s2, rw, rv};
}

// ---------------------------------------------------------------------------
// Lines embedded in the plane

inline Points<2> embed_line(const Points<1>& x) {
  Points<2> r = Points<2>::Zero(2, x.cols());
  r.row(0) = x.row(0);
  return r;
}

/// Coordinates along the line carrying a collinear planar configuration.
inline Points<1> to_line(const Points<2>& r) {
  int bi = 0, bj = 1;
  double best = -1.0;
  for (int i = 0; i < r.cols(); ++i)
    for (int j = i + 1; j < r.cols(); ++j) {
      const double d = (r.col(i) - r.col(j)).norm();
      if (d > best) best = d, bi = i, bj = j;
    }
  Eigen::Vector2d dir = (r.col(bj) - r.col(bi)).normalized();
  if (dir.x() < 0.0 || (dir.x() == 0.0 && dir.y() < 0.0)) dir = -dir;
  const Eigen::Vector2d nrm(-dir.y(), dir.x());
  const double scale = r.cwiseAbs().maxCoeff();
  Points<1> x(1, r.cols());
  for (int i = 0; i < r.cols(); ++i) {
    if (std::abs(nrm.dot(r.col(i))) > 1e-9 * std::max(1.0, scale))
      throw ValidationError("configuration is not collinear through the origin");
    x(0, i) = dir.dot(r.col(i));
  }
  return x;
}

// ---------------------------------------------------------------------------
// Index (Morse index of U on the inertia sphere)

struct IndexReport {
  int index = 0;
  int zero_modes = 0;
  double zero_tol = 0.0;
  std::vector<double> eigenvalues;  // ascending
};

/// Spectrum of the restricted Hessian on the inertia-sphere tangent space.
/// |lambda| < 1e-8 * max(max|lambda|, |U|/I) counts as a rotational zero mode; more zero
/// modes than `expected_zero_modes` (or fewer) make the point degenerate.
template <int D>
IndexReport restricted_index(const Points<D>& r, const MassSystem& ms, const PotentialParams& pp,
                             int expected_zero_modes) {
  const Eigen::MatrixXd a = restricted_hessian_matrix(r, ms, pp);
  IndexReport rep;
  Eigen::VectorXd ev;
  if (a.size() > 0) ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a, Eigen::EigenvaluesOnly).eigenvalues();
  rep.eigenvalues.assign(ev.data(), ev.data() + ev.size());
  const double curvature = std::abs(potential_U(r, ms, pp)) / moment_of_inertia(r, ms);
  const double big = std::max(ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0, curvature);
  rep.zero_tol = 1e-8 * big;
  for (double l : rep.eigenvalues) {
    if (std::abs(l) < rep.zero_tol)
      ++rep.zero_modes;
    else if (l < 0.0)
      ++rep.index;
  }
  if (rep.zero_modes != expected_zero_modes) {
    std::ostringstream os;
    os << "restricted Hessian has " << rep.zero_modes << " near-zero eigenvalues, expected "
       << expected_zero_modes << " (degenerate or non-central configuration)";
    throw ToleranceError(os.str());
  }
  return rep;
}

/// Index of a central configuration, counted modulo the rotational zero mode
/// in the planar ambient.
inline IndexReport cc_index(const Points<2>& r, const MassSystem& ms, const PotentialParams& pp, Ambient ambient,
                            double rel_tol = 1e-8) {
  const double g = gradient_U(r, ms, pp).cwiseAbs().maxCoeff();
  const double res = cc_residual(r, ms, pp).residual;
  if (res > rel_tol * std::max(1.0, g)) {
    std::ostringstream os;
    os << "configuration is not central (residual " << res << ")";
    throw ToleranceError(os.str());
  }
  if (ambient == Ambient::collinear) return restricted_index(to_line(r), ms, pp, 0);
  return restricted_index(r, ms, pp, 1);
}

inline IndexReport cc_index(const CCResult& res, const MassSystem& ms, const PotentialParams& pp, Ambient ambient) {
  return cc_index(res.config.positions(), ms, pp, ambient);
}

namespace detail {

inline bool ordered(const Points<1>& x, const Ordering& ord) {
  for (int k = 0; k + 1 < ord.size(); ++k)
    if (!(x(0, ord[k + 1]) > x(0, ord[k]))) return false;
  return true;
}

inline Points<1> to_sphere(const Points<1>& x, const MassSystem& ms, double inertia_I0) {
  return x * std::sqrt(inertia_I0 / moment_of_inertia(x, ms));
}

inline void fill_result_metadata(CCResult& out, const MassSystem& ms, const PotentialParams& pp) {
  const auto& r = out.config.positions();
  const auto cr = cc_residual(r, ms, pp);
  out.sigma = cr.sigma;
  out.residual = cr.residual;
  if (pp.alpha > 0.0 && pp.beta > 0.0) {
    const double inertia = moment_of_inertia(r, ms);
    out.sigma1 = -pp.a * potential_W(r, ms, pp) / (2.0 * inertia);
    out.sigma2 = -pp.b * potential_V(r, ms, pp) / (2.0 * inertia);
  }
}

}  // namespace detail

/// The unique collinear CC in one ordering class, on the sphere <r,r> = I0.
///
/// Gaps between consecutive bodies stay positive along the iteration, so the
/// ordering never changes.  Each step is a Newton step for U restricted to the
/// sphere, taken in an orthonormal basis of the tangent space and pulled back
/// radially onto the sphere, with Armijo backtracking and a gradient fallback.
/// The restricted Hessian is positive definite on the whole component, so the
/// critical point found is its unique minimum.
inline CCResult solve_collinear_ordering(const Ordering& ord, const CCQuery& q) {
  q.validate();
  const MassSystem& ms = q.ms;
  const int n = ms.n();
  if (ord.size() != n) throw ValidationError("ordering size does not match the number of bodies");

  Points<1> x(1, n);
  for (int k = 0; k < n; ++k) x(0, ord[k]) = static_cast<double>(k);
  x = detail::to_sphere(recentered(x, ms), ms, q.inertia_I0);

  auto residual_of = [&](const Points<1>& p) { return cc_residual(p, ms, q.pp).residual; };

  // The residual cannot drop below the rounding level of the gradient itself.
  auto tol_at = [&](const Points<1>& p) {
    const double scale = gradient_U(p, ms, q.pp).cwiseAbs().maxCoeff();
    return std::max(q.grad_tol, 64.0 * std::numeric_limits<double>::epsilon() * scale);
  };
  double res = residual_of(x);
  Points<1> best = x;
  double best_res = res;
  int stall = 0;
  int it = 0;
  for (; it < q.max_iter && best_res > tol_at(best); ++it) {
    const Eigen::MatrixXd e = inertia_sphere_tangent_basis(x, ms);
    const Eigen::VectorXd g = e.transpose() * flat(gradient_U(x, ms, q.pp));
    const double inertia = moment_of_inertia(x, ms);
    Eigen::MatrixXd a = e.transpose() * hessian_matrix_U(x, ms, q.pp) * e;
    a += (euler_weight(x, ms, q.pp) / inertia) * Eigen::MatrixXd::Identity(a.rows(), a.cols());

    if (a.size() == 0) break;
    Eigen::VectorXd xi;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() == Eigen::Success) xi = -llt.solve(g);
    double slope = xi.size() ? g.dot(xi) : 0.0;
    if (!xi.size() || !(slope < 0.0) || !xi.allFinite()) {
      xi = -g;
      slope = -g.squaredNorm();
    }

    const double u0 = potential_U(x, ms, q.pp);
    const double slack = 64.0 * std::numeric_limits<double>::epsilon() * std::abs(u0);
    bool accepted = false;
    double t = 1.0;
    for (int bt = 0; bt < 80; ++bt, t *= 0.5) {
      Points<1> cand = x + t * unflat<1>(e * xi);
      if (!detail::ordered(cand, ord)) continue;
      cand = detail::to_sphere(cand, ms, q.inertia_I0);
      double u1;
      try {
        u1 = potential_U(cand, ms, q.pp);
      } catch (const CollisionError&) {
        continue;
      }
      if (u1 <= u0 + 1e-4 * t * slope + slack) {
        x = cand;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    res = residual_of(x);
    if (res < best_res) {
      best = x;
      if (res < 0.5 * best_res) stall = 0; else ++stall;
      best_res = res;
    } else {
      ++stall;
    }
    if (stall >= 6) break;
  }

  if (!(best_res <= tol_at(best))) {
    std::ostringstream os;
    os << "collinear solver did not reach grad_tol " << q.grad_tol << " for ordering " << ord.str()
       << " (last residual " << best_res << ", " << it << " iterations)";
    throw NoConvergenceError(os.str(), best_res);
  }

  CCResult out;
  out.config = Configuration<2>::from_points(embed_line(recentered(best, ms)), ms, 1e-10);
  out.kind = CCKind::collinear;
  out.ordering = ord;
  out.iterations = it;
  detail::fill_result_metadata(out, ms, q.pp);
  const IndexReport ir = restricted_index(best, ms, q.pp, 0);
  out.index = ir.index;
  out.zero_modes = ir.zero_modes;
  out.index_ambient = Ambient::collinear;
  out.hess_eigs = ir.eigenvalues;
  return out;
}

/// Number of canonical ordering classes, n!/2.
inline long long collinear_class_count(int n) {
  long long f = 1;
  for (int k = 2; k <= n; ++k) f *= k;
  return f / 2;
}

/// One CC per canonical ordering class.  Orderings may be solved on up to
/// `threads` workers; the result order is the canonical order regardless.
inline std::vector<CCResult> solve_collinear_all(const CCQuery& q, int max_bodies = 6, int threads = 1) {
  q.validate();
  if (q.ms.n() > max_bodies) {
    std::ostringstream os;
    os << "n = " << q.ms.n() << " exceeds the collinear enumeration cap " << max_bodies;
    throw ValidationError(os.str());
  }
  const std::vector<Ordering> ords = Ordering::all(q.ms.n());
  std::vector<CCResult> out(ords.size());
  auto solve_one = [&](std::size_t k) {
    try {
      out[k] = solve_collinear_ordering(ords[k], q);
    } catch (const NoConvergenceError& e) {
      throw NoConvergenceError(std::string("ordering ") + ords[k].str() + ": " + e.what(), e.last_residual());
    }
  };
  threads = std::max(1, std::min<int>(threads, static_cast<int>(ords.size())));
  if (threads == 1) {
    for (std::size_t k = 0; k < ords.size(); ++k) solve_one(k);
  } else {
    std::vector<std::future<void>> jobs;
    for (int w = 0; w < threads; ++w)
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t k = static_cast<std::size_t>(w); k < ords.size(); k += static_cast<std::size_t>(threads))
          solve_one(k);
      }));
    for (auto& j : jobs) j.get();
  }
  if (static_cast<long long>(out.size()) != collinear_class_count(q.ms.n()))
    throw MismatchError("collinear class count differs from n!/2");
  return out;
}

// ---------------------------------------------------------------------------
// Equilateral CCs of the Manev-type three-body problem

/// Side length forced by the inertia constraint, sqrt(I0 m~ / sum_{i<j} m_i m_j).
inline double equilateral_side(const MassSystem& ms, double inertia_I0) {
  double pairs = 0.0;
  for (int i = 0; i < ms.n(); ++i)
    for (int j = i + 1; j < ms.n(); ++j) pairs += ms[i] * ms[j];
  return std::sqrt(inertia_I0 * ms.total() / pairs);
}

/// Equilateral triangle of the given side, bodies 1 -> 2 -> 3 counter-clockwise
/// for orientation +1, mirrored across the x axis for -1.  Centre of mass at 0.
inline Points<2> equilateral_points(const MassSystem& ms, double side, int orientation) {
  if (ms.n() != 3) throw ValidationError("equilateral configurations need n = 3");
  const double circ = side / std::sqrt(3.0);
  Points<2> r(2, 3);
  for (int k = 0; k < 3; ++k) {
    const double th = M_PI / 2.0 + 2.0 * M_PI * k / 3.0;
    r(0, k) = circ * std::cos(th);
    r(1, k) = orientation * circ * std::sin(th);
  }
  return recentered(r, ms);
}

struct EquilateralPair {
  CCResult plus, minus;
  double side = 0.0;
};

inline EquilateralPair equilateral_cc(const CCQuery& q) {
  q.validate();
  if (q.ms.n() != 3) throw ValidationError("equilateral CCs are defined for n = 3");
  require_manev(q.pp);
  if (!(q.pp.alpha > 0.0)) throw ValidationError("equilateral CCs need alpha > 0");
  EquilateralPair out;
  out.side = equilateral_side(q.ms, q.inertia_I0);
  for (int o : {+1, -1}) {
    CCResult r;
    r.config = Configuration<2>::from_points(equilateral_points(q.ms, out.side, o), q.ms, 1e-10);
    const double inertia = moment_of_inertia(r.config.positions(), q.ms);
    if (std::abs(inertia - q.inertia_I0) > 1e-12 * q.inertia_I0 * 16)
      throw ToleranceError("equilateral configuration misses the inertia sphere");
    r.kind = CCKind::planar_equilateral;
    r.orientation = o;
    detail::fill_result_metadata(r, q.ms, q.pp);
    const IndexReport ir = restricted_index(r.config.positions(), q.ms, q.pp, 1);
    r.index = ir.index;
    r.zero_modes = ir.zero_modes;
    r.index_ambient = Ambient::planar;
    r.hess_eigs = ir.eigenvalues;
    (o > 0 ? out.plus : out.minus) = std::move(r);
  }
  return out;
}

/// Polynomial whose positive root is the common mutual distance of an
/// equilateral Manev-type CC:  f(r) = 2 sigma r^{b+2} + m~ alpha r^{b-1} + m~ b beta.
inline double equilateral_distance_polynomial(double r, double sigma, double b, double mtotal, double alpha = 1.0,
                                              double beta = 1.0) {
  return 2.0 * sigma * std::pow(r, b + 2.0) + mtotal * alpha * std::pow(r, b - 1.0) + mtotal * b * beta;
}

struct FRoot {
  double root = 0.0;
  int sign_changes = 0;   // found by the log-grid scan
  bool unique = false;    // sign_changes == 1
  double f_at_zero = 0.0;
};

/// Unique positive root of the polynomial above: geometric bracket expansion
/// from r = 1, bisection to 1e-14 relative, then a log-spaced sign scan over
/// [root * 1e-8, root * 1e8] (with f(0) as the left end) as a certificate.
inline FRoot f_root(double sigma, double b, double mtotal, double alpha = 1.0, double beta = 1.0) {
  if (!(b > 1.0)) throw ValidationError("f_root needs b > 1");
  if (!(mtotal > 0.0)) throw ValidationError("f_root needs a positive total mass");
  auto f = [&](double r) { return equilateral_distance_polynomial(r, sigma, b, mtotal, alpha, beta); };
  double lo = 0.0, hi = 1.0;
  if (f(1.0) > 0.0) {
    lo = 1.0;
    hi = 2.0;
    while (f(hi) > 0.0) {
      lo = hi;
      hi *= 2.0;
      if (hi > 1e100) throw BracketError("no sign change of f on (0, 1e100]; sigma must be negative");
    }
  } else {
    lo = 0.5;
    while (f(lo) <= 0.0) {
      hi = lo;
      lo *= 0.5;
      if (lo < 1e-100) throw BracketError("no sign change of f on [1e-100, 1]");
    }
  }
  while (hi - lo > 1e-14 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  FRoot out;
  out.root = 0.5 * (lo + hi);
  out.f_at_zero = mtotal * b * beta;

  constexpr int kGrid = 4001;
  double prev = out.f_at_zero;
  for (int k = 0; k < kGrid; ++k) {
    const double r = out.root * std::pow(10.0, -8.0 + 16.0 * k / (kGrid - 1));
    const double fr = f(r);
    if (fr == 0.0) continue;
    if ((prev > 0.0) != (fr > 0.0)) ++out.sign_changes;
    prev = fr;
  }
  out.unique = out.sign_changes == 1;
  return out;
}

// ---------------------------------------------------------------------------
// Collinear CCs of the homogeneous parts, and the simultaneous gap

/// Collinear CC of the single homogeneous potential sum m_i m_j / r^c.
inline Configuration<1> euler_collinear_homogeneous(const MassSystem& ms, double c, const Ordering& ord,
                                                    double inertia_I0 = 1.0) {
  if (!(c > 0.0)) throw ValidationError("homogeneous exponent must be > 0");
  CCQuery q{ms, PotentialParams{0.0, c, 0.0, 1.0}, inertia_I0};
  const CCResult r = solve_collinear_ordering(ord, q);
  return Configuration<1>::from_points(to_line(r.config.positions()), ms, 1e-10);
}

/// Consecutive gaps along the ordering, normalized to unit sum.
inline std::vector<double> gap_fractions(const Points<1>& x, const Ordering& ord) {
  std::vector<double> g;
  double total = 0.0;
  for (int k = 0; k + 1 < ord.size(); ++k) {
    g.push_back(x(0, ord[k + 1]) - x(0, ord[k]));
    total += g.back();
  }
  for (double& v : g) v /= total;
  return g;
}

/// Mass-metric distance between the unit-inertia collinear CCs of the pure
/// b-term and the pure a-term in one ordering.  Zero exactly when that
/// collinear class is a simultaneous central configuration.
inline double simultaneous_gap(const MassSystem& ms, const PotentialParams& pp, const Ordering& ord) {
  pp.validate();
  if (pp.alpha == 0.0 || pp.beta == 0.0) throw DegenerateTermError("simultaneous gap needs alpha > 0 and beta > 0");
  if (pp.a == 0.0) throw DegenerateTermError("a = 0 makes W constant; every configuration is central for it");
  CCQuery qv{ms, pp.strong_only(), 1.0};
  CCQuery qw{ms, pp.weak_only(), 1.0};
  const Points<1> sv = to_line(solve_collinear_ordering(ord, qv).config.positions());
  const Points<1> sw = to_line(solve_collinear_ordering(ord, qw).config.positions());
  // Both solutions are laid out increasing along the same ordering.
  const Points<1> d = sv - sw;
  return std::sqrt(moment_of_inertia(d, ms));
}

}  // namespace qh

#endif  // QH_CENTRAL_CONFIG_HPP
