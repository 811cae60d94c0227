// Acceptance checks: one PASS/FAIL line per criterion.  Exit status is 0 only
// when every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#include "commands.hpp"
#include "oracles.hpp"
#include "qh/qh.hpp"

namespace {

using namespace qh;
namespace fs = std::filesystem;

double phase_distance(const PhaseState<2>& a, const PhaseState<2>& b) {
  return std::max((a.config.positions() - b.config.positions()).cwiseAbs().maxCoeff(),
                  (a.momenta - b.momenta).cwiseAbs().maxCoeff());
}

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "first failure: " << what << "; ";
      pass = false;
    }
  }
};

std::string sci(double x) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << x;
  return os.str();
}

int failures = 0;

void report(int id, const std::string& title, Verdict& v) {
  std::cout << (v.pass ? "PASS" : "FAIL") << " [" << id << "] " << title << ": " << v.detail.str() << std::endl;
  if (!v.pass) ++failures;
}

template <class F>
void criterion(int id, const std::string& title, F&& body) {
  Verdict v;
  try {
    body(v);
  } catch (const std::exception& e) {
    v.require(false, std::string("exception ") + e.what());
  }
  report(id, title, v);
}

std::vector<Points<2>> collinear_shapes_of_V(const MassSystem& ms, const PotentialParams& pp) {
  std::vector<Points<2>> out;
  for (const auto& r : solve_collinear_all({ms, pp.strong_only()})) out.push_back(r.config.positions());
  return out;
}

std::vector<Points<2>> equilateral_shapes(const MassSystem& ms) {
  const double side = equilateral_side(ms, 1.0);
  return {equilateral_points(ms, side, +1), equilateral_points(ms, side, -1)};
}

// ---------------------------------------------------------------------------

void moulton_count() {
  criterion(1, "collinear classes number n!/2", [](Verdict& v) {
    auto g = oracle::rng(1001);
    const fs::path dir = fs::temp_directory_path() / "qh_acceptance_cc";
    fs::create_directories(dir);
    const std::vector<std::pair<double, double>> exponents{{1.0, 2.0}, {1.0, 3.0}, {0.5, 2.5}};
    double worst_residual = 0.0, slowest = 0.0;
    int cases = 0;
    for (int trial = 0; trial < 5; ++trial)
      for (int n = 2; n <= 4; ++n) {
        const auto masses = oracle::random_masses(g, n);
        for (const auto& [a, b] : exponents) {
          const cli::json cfg{{"schema", 1}, {"masses", masses}, {"a", a}, {"b", b}, {"alpha", 1.0}, {"beta", 1.0}};
          const auto t0 = std::chrono::steady_clock::now();
          const cli::json out = cli::cmd_cc_collinear(cli::parse_config(cfg), dir);
          const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          slowest = std::max(slowest, secs);
          const int expected = n == 2 ? 1 : n == 3 ? 3 : 12;
          v.require(out["count"].get<int>() == expected, "n = " + std::to_string(n) + " count mismatch");
          for (const auto& r : out["results"]) worst_residual = std::max(worst_residual, r["residual"].get<double>());
          v.require(secs < 10.0, "runtime above 10 s");
          ++cases;
        }
      }
    fs::remove_all(dir);
    v.require(worst_residual < 1e-10, "residual " + sci(worst_residual));
    v.detail << cases << " cases, counts 1/3/12, max residual " << sci(worst_residual) << ", slowest case "
             << std::fixed << std::setprecision(3) << slowest << " s";
  });
}

void equilateral() {
  criterion(2, "equilateral central configurations and f-root certificate", [](Verdict& v) {
    auto g = oracle::rng(1002);
    const PotentialParams pp{1.0, 3.0, 1.0, 1.0};
    double worst_residual = 0.0, worst_root = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const MassSystem ms(oracle::random_masses(g, 3));
      const EquilateralPair pair = equilateral_cc({ms, pp, 1.0});
      worst_residual = std::max({worst_residual, pair.plus.residual, pair.minus.residual});
      const FRoot fr = f_root(pair.plus.sigma, pp.b, ms.total(), pp.alpha, pp.beta);
      v.require(fr.unique && fr.sign_changes == 1, "f-root scan is not a single root");
      worst_root = std::max(worst_root, std::abs(fr.root - equilateral_side(ms, 1.0)));
    }
    v.require(worst_residual < 1e-10, "residual " + sci(worst_residual));
    v.require(worst_root < 1e-10, "root error " + sci(worst_root));
    v.detail << "20 triples, max residual " << sci(worst_residual) << ", one positive root each, |root - side| <= "
             << sci(worst_root);
  });
}

void derivative_oracles() {
  criterion(3, "derivatives against finite differences", [](Verdict& v) {
    auto g = oracle::rng(1003);
    std::uniform_real_distribution<double> ua(0.5, 1.5), ub(0.5, 2.0);
    double worst_grad = 0.0, worst_hess = 0.0, min_eig = std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < 50; ++trial) {
      const MassSystem ms(oracle::random_masses(g, 3 + trial % 3));
      const double a = ua(g);
      const PotentialParams pp{a, a + ub(g), 1.0, 1.0};
      const Points<2> r = oracle::random_points<2>(g, ms, 0.3);
      auto f = [&](const Eigen::VectorXd& x) { return potential_U(unflat<2>(x), ms, pp); };
      const Eigen::VectorXd fd = oracle::fd_gradient(f, flat(r), 1e-5);
      const Eigen::VectorXd an = flat(Points<2>(gradient_U(r, ms, pp)));
      worst_grad = std::max(worst_grad, (fd - an).norm() / an.norm());
      auto grad = [&](const Eigen::VectorXd& x) {
        return Eigen::VectorXd(flat(Points<2>(gradient_U(unflat<2>(x), ms, pp))));
      };
      const Eigen::MatrixXd fh = oracle::fd_jacobian(grad, flat(r), 1e-5);
      const Eigen::MatrixXd ah = hessian_matrix_U(r, ms, pp);
      worst_hess = std::max(worst_hess, (fh - ah).norm() / ah.norm());

      const Points<1> x = oracle::random_points<1>(g, ms, 0.05);
      const Eigen::MatrixXd restricted = restricted_hessian_matrix(x, ms, pp);
      min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(restricted).eigenvalues().minCoeff());
    }
    v.require(worst_grad < 1e-6, "gradient error " + sci(worst_grad));
    v.require(worst_hess < 1e-6, "Hessian error " + sci(worst_hess));
    v.require(min_eig > 0.0, "restricted Hessian not positive definite");
    v.detail << "50 configurations, gradient rel err " << sci(worst_grad) << ", Hessian rel err " << sci(worst_hess)
             << ", min restricted collinear eigenvalue " << sci(min_eig);
  });
}

void mcgehee_transform() {
  criterion(4, "McGehee round trip and pushforward", [](Verdict& v) {
    auto g = oracle::rng(1004);
    const PotentialParams pp{1.0, 3.0, 1.0, 1.0};
    double worst_trip = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const MassSystem ms(oracle::random_masses(g, 3 + trial % 3));
      const PhaseState<2> ps = oracle::random_phase<2>(g, ms, 0.2 + 0.1 * trial, 1.0);
      const double scale = std::max(1.0, ps.momenta.cwiseAbs().maxCoeff());
      worst_trip = std::max(worst_trip, phase_distance(from_mcgehee(to_mcgehee(ps, ms, pp), ms, pp), ps) / scale);
    }
    double worst_flow = 0.0;
    std::uniform_real_distribution<double> size(0.5, 2.0);
    for (int trial = 0; trial < 10; ++trial) {
      const auto [ms, ps] = oracle::random_rotating_state(g, pp, size(g));
      const Trajectory mg = integrate(mcgehee_ode<2>(ms, pp, true), pack(to_mcgehee(ps, ms, pp), true), 0.0, 1.0,
                                      {}, {}, mcgehee_renormalizer<2>(ms));
      const State yf = mg.final_state();
      const PhaseState<2> back = from_mcgehee(unpack<2>(yf, ms.n()), ms, pp);
      const Trajectory ct = integrate(cartesian_ode<2>(ms, pp), pack_phase(ps), 0.0, yf[yf.size() - 1]);
      const auto [r, p] = unpack_phase<2>(ct.final_state(), ms.n());
      worst_flow = std::max({worst_flow, (r - back.config.positions()).cwiseAbs().maxCoeff(),
                             (p - back.momenta).cwiseAbs().maxCoeff()});
    }
    v.require(worst_trip < 1e-12, "round trip " + sci(worst_trip));
    v.require(worst_flow < 1e-6, "Cartesian vs McGehee " + sci(worst_flow));
    v.detail << "round trip " << sci(worst_trip) << " over 50 states, Cartesian vs McGehee " << sci(worst_flow)
             << " over 10 states and one unit of tau";
  });
}

void energy_relation() {
  criterion(5, "energy relation along trajectories on and off C", [](Verdict& v) {
    auto g = oracle::rng(1005);
    const PotentialParams pp{1.0, 3.0, 1.0, 1.0};
    std::vector<oracle::SystemState> runs;
    std::uniform_real_distribution<double> size(0.8, 3.0), wide(2.5, 4.0);
    for (int k = 0; k < 6; ++k) runs.push_back(oracle::random_rotating_state(g, pp, size(g)));
    for (int k = 0; k < 4; ++k) {
      const MassSystem ms(oracle::random_masses(g, 2));
      Points<2> r(2, 2);
      r << 0.0, wide(g), 0.0, 0.0;
      PhaseState<2> ps = oracle::relative_equilibrium(recentered(r, ms), ms, pp);
      ps.momenta *= 1.0 + 0.03 * (k - 1.5) / 1.5;
      runs.push_back({ms, ps});
    }
    double off_c = 0.0;
    for (const auto& [ms, ps] : runs) {
      const double h = hamiltonian(ps, ms, pp);
      const int n = ms.n();
      const Trajectory tr = integrate(
          mcgehee_ode<2>(ms, pp), pack(to_mcgehee(ps, ms, pp)), 0.0, 20.0, {.throw_on_error = false}, {},
          mcgehee_renormalizer<2>(ms),
          {{"energy", [&](double, const State& y) { return energy_residual(unpack<2>(y, n), h, ms, pp); }}});
      v.require(tr.termination == Termination::time_budget, "off-C run stopped early: " + tr.termination_detail);
      for (double e : tr.series("energy")) off_c = std::max(off_c, std::abs(e));
    }

    double on_c = 0.0, defect = 0.0;
    int full_span = 0, on_runs = 0;
    for (int k = 0; k < 10; ++k) {
      const MassSystem ms(k < 5 ? oracle::random_masses(g, 2) : oracle::random_hierarchical_masses(g));
      const Points<2> s = oracle::random_points<2>(g, ms, 0.3);
      const auto st0 = project_onto_C(s, oracle::random_u<2>(g, s, ms, 0.1), k % 2 ? -1 : +1, ms, pp);
      const int n = ms.n();
      const Trajectory tr = integrate_on_C(st0, ms, pp, {.tau_max = 20.0, .equilibrium_tol = 0.0});
      v.require(tr.termination != Termination::error, "on-C run failed: " + tr.termination_detail);
      if (tr.termination == Termination::time_budget) ++full_span;
      ++on_runs;
      const auto& d = tr.series("projection_defect");
      for (std::size_t j = 0; j < tr.states.size(); ++j) {
        const auto st = unpack<2>(tr.states[j], n);
        on_c = std::max(on_c, std::abs(energy_residual(st, 0.0, ms, pp)));
        defect = std::max(defect, std::abs(d[j]) / (2.0 * potential_V(st.s, ms, pp)));
      }
    }
    v.require(off_c < 1e-8, "off-C residual " + sci(off_c));
    v.require(on_c < 1e-8, "on-C residual " + sci(on_c));
    v.detail << "off C: " << runs.size() << " orbits over tau in [0, 20], max |residual| " << sci(off_c) << "; on C: "
             << on_runs << " orbits (" << full_span << " reach tau = 20, " << on_runs - full_span
             << " end in binary collision), max |residual| " << sci(on_c) << ", max relative per-step projection " << sci(defect);
  });
}

void gradient_like() {
  criterion(6, "v is non-increasing on C", [](Verdict& v) {
    auto g = oracle::rng(1006);
    const PotentialParams pp{1.0, 3.0, 1.0, 1.0};
    double min_decrease = std::numeric_limits<double>::infinity(), max_increase = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const MassSystem ms(oracle::random_masses(g, 3));
      const Points<2> s = oracle::random_points<2>(g, ms, 0.3);
      const auto st0 = project_onto_C(s, oracle::random_u<2>(g, s, ms, 0.5), trial % 2 ? -1 : +1, ms, pp);
      const Trajectory tr = integrate_on_C(st0, ms, pp, {.tau_max = 50.0});
      v.require(tr.termination != Termination::error, "run failed: " + tr.termination_detail);
      const auto& vs = tr.series("v");
      for (std::size_t k = 1; k < vs.size(); ++k) max_increase = std::max(max_increase, vs[k] - vs[k - 1]);
      min_decrease = std::min(min_decrease, vs.front() - vs.back());
    }
    double max_rate = 0.0;
    const PotentialParams square{1.0, 2.0, 1.0, 1.0};
    for (int trial = 0; trial < 10; ++trial) {
      const MassSystem ms(oracle::random_masses(g, 3));
      const Points<2> s = oracle::random_points<2>(g, ms, 0.3);
      const auto st0 = project_onto_C(s, oracle::random_u<2>(g, s, ms, 1.0), +1, ms, square);
      max_rate = std::max(max_rate, std::abs(gradient_like_rate(st0, ms, square)));
      const Trajectory tr = integrate_on_C(st0, ms, square, {.tau_max = 5.0});
      for (double r : tr.series("rate")) max_rate = std::max(max_rate, std::abs(r));
    }
    v.require(max_increase <= 0.0, "v increased by " + sci(max_increase));
    v.require(min_decrease > 0.0, "no strict decrease");
    v.require(max_rate <= 1e-14, "b = 2 rate " + sci(max_rate));
    v.detail << "b = 3: 10 orbits, max step increase " << sci(max_increase) << ", smallest total decrease "
             << sci(min_decrease) << "; b = 2: max |rate| " << sci(max_rate);
  });
}

void eigenvalue_formula() {
  bool index_shifts = false;
  criterion(7, "closed-form spectra and manifold dimensions at n = 3 equilibria", [&](Verdict& v) {
    auto g = oracle::rng(1007);
    std::vector<MassSystem> systems{MassSystem({1.0, 2.0, 3.0}), MassSystem({1.0, 1.0, 1.0})};
    for (int k = 0; k < 2; ++k) systems.emplace_back(oracle::random_masses(g, 3));
    double worst = 0.0;
    int count = 0;
    for (double b : {2.5, 3.0, 4.0}) {
      const PotentialParams pp{1.0, b, 1.0, 1.0};
      for (const auto& ms : systems) {
        const int n = ms.n();
        auto check = [&](const EquilibriumReport& rep) {
          worst = std::max(worst, spectrum_distance(linearize_at_equilibrium(rep, ms, pp).eigenvalues,
                                                    predicted_spectrum(rep)));
          ++count;
          v.require(rep.dims.has_value(), "missing dimensions");
          return *rep.dims;
        };
        for (const auto& rep : find_equilibria(ms, pp, collinear_shapes_of_V(ms, pp), Ambient::collinear)) {
          const ManifoldDims d = check(rep);
          const int up = n - 1, down = n - 2;
          v.require(d.dim_unstable == (rep.v_sign > 0 ? up : down) && d.dim_stable == (rep.v_sign > 0 ? down : up) &&
                        d.dim_energy_surface == 2 * n - 3,
                    "collinear ambient dimensions");
        }
        for (const auto& rep : find_equilibria(ms, pp, equilateral_shapes(ms), Ambient::planar)) {
          const ManifoldDims d = check(rep);
          const int up = 2 * n - 2 - rep.index, down = 2 * n - 4 + rep.index;
          v.require(rep.index == 0, "equilateral index");
          v.require(d.dim_unstable == (rep.v_sign > 0 ? up : down) && d.dim_stable == (rep.v_sign > 0 ? down : up) &&
                        d.dim_energy_surface == 4 * n - 5,
                    "equilateral planar dimensions");
        }
        for (const auto& rep : find_equilibria(ms, pp, collinear_shapes_of_V(ms, pp), Ambient::planar)) {
          const ManifoldDims d = check(rep);
          const int up = 2 * n - 2 + rep.index, down = 2 * n - 4 - rep.index;
          v.require(d.dim_unstable == (rep.v_sign > 0 ? up : down) && d.dim_stable == (rep.v_sign > 0 ? down : up) &&
                        d.dim_energy_surface == 4 * n - 5,
                    "planar collinear dimensions");
          if (rep.index > 0) index_shifts = true;
        }
      }
    }
    v.require(worst < 1e-8, "spectrum distance " + sci(worst));
    v.detail << count << " equilibria over b in {2.5, 3, 4}, max spectrum distance " << sci(worst)
             << "; collinear ambient (n-1, n-2), equilateral (2n-2-ind, 2n-4+ind) with ind = 0, swapped for v < 0";
  });
  if (index_shifts)
    std::cout << "NOTE [7] collinear equilibria in the planar ambient have ind = 1 and give (2n-2+ind, 2n-4-ind) = "
                 "(5, 1); each negative Hessian eigenvalue contributes two unstable roots when v > 0"
              << std::endl;
}

void homothetic() {
  criterion(8, "homothetic ejection-collision orbit", [](Verdict& v) {
    const PotentialParams pp{1.0, 3.0, 1.0, 1.0};
    const MassSystem unit({1.0, 1.0, 1.0});
    const Points<2> s0 = equilateral_points(unit, equilateral_side(unit, 1.0), +1);
    const double vc = std::sqrt(2.0 * potential_V(s0, unit, pp));
    const PlaneOrbit orb = heteroclinic_orbit(s0, unit, pp, -1.0, 1e-8);
    const double e_start = std::abs(orb.v_start - vc), e_end = std::abs(orb.v_end + vc);
    const double e_rho = std::abs(orb.rho_max - orb.rho_max_bisection);
    v.require(orb.K_drift < 1e-9, "K drift " + sci(orb.K_drift));
    v.require(e_start < 1e-6 && e_end < 1e-6, "endpoint v");
    v.require(e_rho < 1e-6, "rho_max");

    double margin = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 400; ++k) {
      const double rho = std::pow(10.0, -8.0 + 16.0 * k / 400.0);
      margin = std::min(margin, energy_curve_v2(rho, s0, unit, pp, 1.0) - vc * vc);
    }
    v.require(margin >= 0.0, "h = +1 curve dips below 2V");

    const MassSystem ms({1.0, 2.0, 3.0});
    double least_drift = std::numeric_limits<double>::infinity();
    for (const auto& ord : Ordering::all(3)) {
      const Points<2> line = solve_collinear_ordering(ord, {ms, pp}).config.positions();
      const double h = -(potential_W(line, ms, pp) + potential_V(line, ms, pp));
      least_drift = std::min(least_drift, shape_drift(line, ms, pp, h, 1.0, 5.0).max_deviation);
    }
    v.require(least_drift > 1e-4, "non-simultaneous shape drift " + sci(least_drift));
    v.detail << "K drift " << sci(orb.K_drift) << ", |v| endpoint errors " << sci(e_start) << " / " << sci(e_end)
             << ", rho_max vs bisection " << sci(e_rho) << "; h = +1: min(v^2 - 2V) = " << sci(margin)
             << "; masses (1,2,3) collinear CCs of U drift by >= " << sci(least_drift);
  });
}

void simultaneous_locus() {
  criterion(9, "simultaneous central configuration probe", [](Verdict& v) {
    const PotentialParams pp{1.0, 3.0, 1.0, 1.0};
    auto min_gap = [&](const MassSystem& ms) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& ord : Ordering::all(3)) best = std::min(best, simultaneous_gap(ms, pp, ord));
      return best;
    };
    double symmetric = 0.0;
    for (double m2 : {0.5, 1.0, 2.0, 5.0}) symmetric = std::max(symmetric, min_gap(MassSystem({1.0, m2, 1.0})));
    const double generic = min_gap(MassSystem({1.0, 2.0, 3.0}));
    v.require(symmetric < 1e-12, "symmetric gap " + sci(symmetric));
    v.require(generic > 1e-3, "generic gap " + sci(generic));
    v.detail << "(1, m2, 1) max gap " << sci(symmetric) << "; (1, 2, 3) gap " << sci(generic);
  });
}

}  // namespace

int main() {
  std::cout << std::unitbuf;
  moulton_count();
  equilateral();
  derivative_oracles();
  mcgehee_transform();
  energy_relation();
  gradient_like();
  eigenvalue_formula();
  homothetic();
  simultaneous_locus();
  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAIL") << std::endl;
  return failures == 0 ? 0 : 1;
}
