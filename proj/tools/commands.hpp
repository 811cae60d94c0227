#ifndef QH_TOOLS_COMMANDS_HPP
#define QH_TOOLS_COMMANDS_HPP

// Subcommands of the qh tool.  Each writes its report files into the output
// directory and returns the summary it wrote.

#include <atomic>
#include <future>
#include <iostream>
#include <map>
#include <random>

#include "cli_io.hpp"

namespace qh::cli {

inline fs::path out_file(const RunConfig& c, const fs::path& dir, const std::string& name) {
  return dir / (c.output_prefix + name);
}

inline json potential_json(const PotentialParams& pp) {
  return {{"a", pp.a}, {"b", pp.b}, {"alpha", pp.alpha}, {"beta", pp.beta}};
}

inline json header_json(const std::string& command, const RunConfig& c) {
  return {{"command", command}, {"schema", 1}, {"masses", c.masses}, {"potential", potential_json(c.pp)}};
}

inline json labels_json(const Ordering& o) {
  json out = json::array();
  for (int i : o.perm()) out.push_back(i + 1);
  return out;
}

/// Re-raises a failed integration as the error named in its termination detail.
[[noreturn]] inline void raise_integration_failure(const Trajectory& tr) {
  const std::string& d = tr.termination_detail;
  if (d.rfind("StiffnessError", 0) == 0) throw StiffnessError(d.substr(d.find(':') + 2));
  throw FieldError(d.rfind("FieldError", 0) == 0 ? d.substr(d.find(':') + 2) : d);
}

// ---------------------------------------------------------------------------
// cc-collinear

inline json cmd_cc_collinear(const RunConfig& c, const fs::path& dir) {
  RunSettings rs(c.run, {"max_bodies"}, "cc-collinear");
  const MassSystem ms = c.mass_system();
  const int cap = rs.integer("max_bodies", 6);
  if (cap > 6) throw ValidationError("'run.max_bodies' cannot exceed 6");
  const CCQuery q{ms, c.pp, c.inertia_I0, c.tol.grad};
  const auto results = solve_collinear_all(q, cap, thread_budget());

  json recs = json::array();
  double worst = 0.0;
  for (const auto& r : results) {
    worst = std::max(worst, r.residual);
    json rec{{"ordering", r.ordering->str()},
             {"labels", labels_json(*r.ordering)},
             {"positions", to_json_line(r.config.positions())},
             {"sigma", r.sigma},
             {"sigma1", r.sigma1 ? json(*r.sigma1) : json()},
             {"sigma2", r.sigma2 ? json(*r.sigma2) : json()},
             {"residual", r.residual},
             {"index", r.index},
             {"iterations", r.iterations}};
    recs.push_back(std::move(rec));
  }
  json out = header_json("cc-collinear", c);
  out["n"] = ms.n();
  out["inertia_I0"] = c.inertia_I0;
  out["expected_count"] = collinear_class_count(ms.n());
  out["count"] = results.size();
  out["max_residual"] = worst;
  out["results"] = std::move(recs);
  save_json(out_file(c, dir, "cc_collinear.json"), out);
  return out;
}

// ---------------------------------------------------------------------------
// cc-planar3

inline json cmd_cc_planar3(const RunConfig& c, const fs::path& dir) {
  RunSettings rs(c.run, {}, "cc-planar3");
  const MassSystem ms = c.mass_system();
  if (ms.n() != 3) throw ValidationError("cc-planar3 needs exactly three masses");
  require_manev(c.pp);
  const CCQuery q{ms, c.pp, c.inertia_I0, c.tol.grad};
  const EquilateralPair pair = equilateral_cc(q);
  const FRoot fr = f_root(pair.plus.sigma, c.pp.b, ms.total(), c.pp.alpha, c.pp.beta);
  const double analytic = equilateral_side(ms, c.inertia_I0);

  json recs = json::array();
  for (const CCResult* r : {&pair.plus, &pair.minus})
    recs.push_back({{"orientation", r->orientation},
                    {"positions", to_json(r->config.positions())},
                    {"sigma", r->sigma},
                    {"residual", r->residual},
                    {"index", r->index}});
  json out = header_json("cc-planar3", c);
  out["inertia_I0"] = c.inertia_I0;
  out["side"] = pair.side;
  out["side_analytic"] = analytic;
  out["f_root"] = {{"root", fr.root},
                   {"sign_changes", fr.sign_changes},
                   {"unique", fr.unique},
                   {"f_at_zero", fr.f_at_zero},
                   {"root_minus_side", fr.root - analytic}};
  out["results"] = std::move(recs);
  save_json(out_file(c, dir, "cc_planar3.json"), out);
  if (!fr.unique) throw MismatchError("the f-root scan found " + std::to_string(fr.sign_changes) + " roots");
  if (std::abs(fr.root - analytic) > 1e-10 * analytic)
    throw MismatchError("the f-root does not match the analytic side");
  return out;
}

// ---------------------------------------------------------------------------
// simultaneous

namespace detail {

inline std::vector<double> axis(const json& j, const std::string& key) {
  if (j.is_number()) return {j.get<double>()};
  if (!j.is_array() || j.size() != 3 || !j[2].is_number_integer())
    throw ValidationError("'run.sweep." + key + "' must be a number or [lo, hi, count]");
  const double lo = j[0].get<double>(), hi = j[1].get<double>();
  const int count = j[2].get<int>();
  if (count < 1 || !(lo > 0.0) || !(hi >= lo)) throw ValidationError("'run.sweep." + key + "' needs 0 < lo <= hi, count >= 1");
  std::vector<double> out;
  for (int k = 0; k < count; ++k) out.push_back(count == 1 ? lo : lo + (hi - lo) * k / (count - 1));
  return out;
}

template <class F>
void parallel_for(std::size_t count, int threads, F&& body) {
  threads = std::max(1, std::min<int>(threads, static_cast<int>(count)));
  if (threads == 1) {
    for (std::size_t k = 0; k < count; ++k) body(k);
    return;
  }
  std::vector<std::future<void>> jobs;
  for (int w = 0; w < threads; ++w)
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t k = static_cast<std::size_t>(w); k < count; k += static_cast<std::size_t>(threads)) body(k);
    }));
  for (auto& j : jobs) j.get();
}

}  // namespace detail

inline json cmd_simultaneous(const RunConfig& c, const fs::path& dir) {
  RunSettings rs(c.run, {"gap_tol", "sweep"}, "simultaneous");
  const MassSystem ms = c.mass_system();
  if (!(c.pp.alpha > 0.0) || !(c.pp.beta > 0.0))
    throw DegenerateTermError("simultaneous needs alpha > 0 and beta > 0");
  if (ms.n() > 6) throw ValidationError("simultaneous supports n <= 6");
  const double gap_tol = rs.positive("gap_tol", c.tol.residual);

  json recs = json::array();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& ord : Ordering::all(ms.n())) {
    const double gap = simultaneous_gap(ms, c.pp, ord);
    best = std::min(best, gap);
    recs.push_back({{"ordering", ord.str()}, {"labels", labels_json(ord)}, {"gap", gap}, {"pass", gap < gap_tol}});
  }
  json out = header_json("simultaneous", c);
  out["gap_tol"] = gap_tol;
  out["min_gap"] = best;
  out["any_simultaneous"] = best < gap_tol;
  out["results"] = std::move(recs);

  if (rs.has("sweep")) {
    const json& sw = rs.raw("sweep");
    detail::only_keys(sw, {"m1", "m2", "m3"}, "run.sweep");
    if (ms.n() != 3) throw ValidationError("the mass sweep is defined for three bodies");
    auto ax = [&](const char* k, double fallback) {
      return sw.contains(k) ? detail::axis(sw[k], k) : std::vector<double>{fallback};
    };
    const auto a1 = ax("m1", ms[0]), a2 = ax("m2", ms[1]), a3 = ax("m3", ms[2]);
    struct Cell {
      double m1, m2, m3, gap;
    };
    std::vector<Cell> cells;
    for (double x : a1)
      for (double y : a2)
        for (double z : a3) cells.push_back({x, y, z, 0.0});
    detail::parallel_for(cells.size(), thread_budget(), [&](std::size_t k) {
      const MassSystem cm({cells[k].m1, cells[k].m2, cells[k].m3});
      double g = std::numeric_limits<double>::infinity();
      for (const auto& ord : Ordering::all(3)) g = std::min(g, simultaneous_gap(cm, c.pp, ord));
      cells[k].gap = g;
    });
    const fs::path csv = out_file(c, dir, "simultaneous_sweep.csv");
    CsvWriter w(csv, {"m1", "m2", "m3", "gap"});
    std::size_t below = 0;
    for (const auto& cell : cells) {
      w.row({cell.m1, cell.m2, cell.m3, cell.gap});
      if (cell.gap < gap_tol) ++below;
    }
    out["sweep"] = {{"csv", csv.filename().string()}, {"rows", w.rows()}, {"cells_below_tol", below}};
  }
  save_json(out_file(c, dir, "simultaneous.json"), out);
  return out;
}

// ---------------------------------------------------------------------------
// Initial states

struct InitialState {
  bool mcgehee = false;
  PhaseState<2> ps;
  McGeheeState<2> mg;
  double t0 = 0.0;
  double tau0 = 0.0;
};

inline InitialState parse_initial_state(const RunConfig& c, const MassSystem& ms, bool allow_mcgehee = true) {
  if (c.initial_state.is_null()) throw ValidationError("this command needs 'initial_state'");
  const json& j = c.initial_state;
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
    throw ValidationError("'initial_state' needs a string 'kind' (cartesian, mcgehee or csv)");
  const std::string kind = j["kind"].get<std::string>();
  const int n = ms.n();
  InitialState st;
  if (kind == "cartesian") {
    detail::only_keys(j, {"kind", "positions", "momenta", "t"}, "initial_state");
    const Points<2> r = points_from_json(j.value("positions", json()), n, "initial_state.positions");
    const Points<2> p = points_from_json(j.value("momenta", json()), n, "initial_state.momenta");
    st.ps = PhaseState<2>::make(Configuration<2>::from_points(r, ms, 1e-9), p, 1e-9);
    if (j.contains("t")) st.t0 = detail::number(j["t"], "initial_state.t");
    return st;
  }
  if (kind == "mcgehee") {
    if (!allow_mcgehee) throw ValidationError("this command takes a Cartesian initial state");
    detail::only_keys(j, {"kind", "rho", "v", "s", "u", "tau", "t"}, "initial_state");
    st.mcgehee = true;
    st.mg.rho = detail::number(j.value("rho", json()), "initial_state.rho");
    st.mg.v = detail::number(j.value("v", json()), "initial_state.v");
    st.mg.s = points_from_json(j.value("s", json()), n, "initial_state.s");
    st.mg.u = points_from_json(j.value("u", json()), n, "initial_state.u");
    const ConstraintResiduals cr = constraint_residuals(st.mg, ms);
    if (cr.sphere > 1e-9) throw ValidationError("initial_state.s violates s^T M s = 1");
    if (cr.orthogonal > 1e-9 * std::max(1.0, st.mg.u.cwiseAbs().maxCoeff()))
      throw ValidationError("initial_state.u violates u^T s = 0");
    if (!(st.mg.rho >= 0.0)) throw ValidationError("initial_state.rho must be >= 0");
    if (j.contains("tau")) st.tau0 = detail::number(j["tau"], "initial_state.tau");
    if (j.contains("t")) st.t0 = detail::number(j["t"], "initial_state.t");
    return st;
  }
  if (kind == "csv") {
    detail::only_keys(j, {"kind", "path", "row"}, "initial_state");
    if (!j.contains("path") || !j["path"].is_string()) throw ValidationError("initial_state.path must name a CSV file");
    fs::path path = j["path"].get<std::string>();
    if (path.is_relative()) path = c.source_dir / path;
    const CsvTable t = read_csv(path);
    if (t.rows.empty()) throw ValidationError(path.string() + " has no data rows");
    long row = j.contains("row") ? j["row"].get<long>() : -1;
    if (row < 0) row += static_cast<long>(t.rows.size());
    if (row < 0 || row >= static_cast<long>(t.rows.size())) throw ValidationError("initial_state.row out of range");
    const auto& r = t.rows[static_cast<std::size_t>(row)];
    const bool is_mcgehee = std::find(t.header.begin(), t.header.end(), "tau") != t.header.end();
    if (is_mcgehee) {
      if (!allow_mcgehee) throw ValidationError("this command takes a Cartesian initial state");
      st.mcgehee = true;
      st.tau0 = r[t.column("tau")];
      st.t0 = std::find(t.header.begin(), t.header.end(), "t") != t.header.end() ? r[t.column("t")] : 0.0;
      st.mg.rho = r[t.column("rho")];
      st.mg.v = r[t.column("v")];
      st.mg.s = points_from_row(t, r, "s", n);
      st.mg.u = points_from_row(t, r, "u", n);
      return st;
    }
    st.t0 = r[t.column("t")];
    const Points<2> pos = points_from_row(t, r, "", n);
    const Points<2> mom = points_from_row(t, r, "p", n);
    st.ps = PhaseState<2>::make(Configuration<2>::from_points(pos, ms, 1e-9), mom, 1e-9);
    return st;
  }
  throw ValidationError("unknown initial_state.kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// simulate

inline json cmd_simulate(const RunConfig& c, const fs::path& dir) {
  RunSettings rs(c.run, {"coordinates", "t_end", "tau_end", "rho_floor"}, "simulate");
  const MassSystem ms = c.mass_system();
  const int n = ms.n();
  InitialState init = parse_initial_state(c, ms);
  const std::string coords = rs.text("coordinates", "cartesian");
  if (coords != "cartesian" && coords != "mcgehee")
    throw ValidationError("'run.coordinates' must be cartesian or mcgehee");
  if (coords == "mcgehee") require_manev(c.pp);

  if (init.mcgehee) {
    if (!(init.mg.rho > 0.0)) throw ValidationError("simulate needs rho > 0; use collision-flow on the collision manifold");
    require_manev(c.pp);
    init.ps = from_mcgehee(init.mg, ms, c.pp);
  } else if (coords == "mcgehee") {
    init.mg = to_mcgehee(init.ps, ms, c.pp);
  }
  const double h0 = hamiltonian(init.ps, ms, c.pp);
  const double j0 = angular_momentum(init.ps, ms);
  if (c.energy_h && std::abs(h0 - *c.energy_h) > c.tol.energy * std::max(1.0, std::abs(*c.energy_h))) {
    std::ostringstream os;
    os << "energy_h = " << fmt17(*c.energy_h) << " does not match the energy of initial_state (H = " << fmt17(h0)
       << ")";
    throw ValidationError(os.str());
  }
  const IntegratorOptions opt{.rel_tol = c.tol.rel, .abs_tol = c.tol.abs, .throw_on_error = false};

  json out = header_json("simulate", c);
  out["coordinates"] = coords;
  out["energy_h"] = h0;
  const fs::path csv = out_file(c, dir, "simulate.csv");
  Trajectory tr;

  if (coords == "cartesian") {
    const double t_end = rs.number("t_end", init.t0 + 10.0);
    if (!(t_end > init.t0)) throw ValidationError("'run.t_end' must exceed the start time");
    auto phase = [&](const State& y) {
      const auto [r, p] = unpack_phase<2>(y, n);
      return std::pair{r, p};
    };
    std::vector<Monitor> mons{
        {"H_residual",
         [&](double, const State& y) {
           const auto [r, p] = phase(y);
           return hamiltonian(PhaseState<2>{Configuration<2>::from_points(r, ms, 1e-6), p}, ms, c.pp) - h0;
         }},
        {"J_residual",
         [&](double, const State& y) {
           const auto [r, p] = phase(y);
           return angular_momentum(PhaseState<2>{Configuration<2>::from_points(r, ms, 1e-6), p}, ms) - j0;
         }},
    };
    tr = integrate(cartesian_ode<2>(ms, c.pp), pack_phase(init.ps), init.t0, t_end, opt, {}, {}, mons);
    std::vector<std::string> header{"t"};
    for (const auto& h : point_columns("", n)) header.push_back(h);
    for (const auto& h : point_columns("p", n)) header.push_back(h);
    header.push_back("H_residual");
    header.push_back("J_residual");
    CsvWriter w(csv, header);
    double max_h = 0.0, max_j = 0.0, min_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
      const auto [r, p] = phase(tr.states[k]);
      std::vector<double> row{tr.times[k]};
      append(row, r);
      append(row, p);
      row.push_back(tr.residuals[0][k]);
      row.push_back(tr.residuals[1][k]);
      w.row(row);
      max_h = std::max(max_h, std::abs(tr.residuals[0][k]));
      max_j = std::max(max_j, std::abs(tr.residuals[1][k]));
      min_d = std::min(min_d, min_pair_distance(r));
    }
    const auto [rf, pf] = phase(tr.final_state());
    out["t_start"] = init.t0;
    out["t_final"] = tr.final_time();
    out["max_abs_H_residual"] = max_h;
    out["max_abs_J_residual"] = max_j;
    out["min_pair_distance"] = min_d;
    out["final_state"] = {{"positions", to_json(rf)}, {"momenta", to_json(pf)}};
  } else {
    const double tau_end = rs.number("tau_end", init.tau0 + 10.0);
    if (!(tau_end > init.tau0)) throw ValidationError("'run.tau_end' must exceed the start value of tau");
    const double rho_floor = rs.number("rho_floor", 0.0);
    std::vector<Event> events;
    if (rho_floor > 0.0)
      events.push_back({"rho_floor", [=](double, const State& y) { return y[0] - rho_floor; }, -1, true});
    std::vector<Monitor> mons{
        {"energy_residual",
         [&](double, const State& y) { return energy_residual(unpack<2>(y, n), h0, ms, c.pp); }},
        {"sphere", [&](double, const State& y) { return constraint_residuals(unpack<2>(y, n), ms).sphere; }},
        {"orthogonal",
         [&](double, const State& y) { return constraint_residuals(unpack<2>(y, n), ms).orthogonal; }},
    };
    tr = integrate(mcgehee_ode<2>(ms, c.pp, true), pack(init.mg, true, init.t0), init.tau0, tau_end, opt, events,
                   mcgehee_renormalizer<2>(ms), mons);
    std::vector<std::string> header{"tau", "t", "rho", "v"};
    for (const auto& h : point_columns("s", n)) header.push_back(h);
    for (const auto& h : point_columns("u", n)) header.push_back(h);
    for (const char* h : {"energy_residual", "sphere", "orthogonal"}) header.push_back(h);
    CsvWriter w(csv, header);
    double max_e = 0.0, rho_min = std::numeric_limits<double>::infinity(), rho_max = 0.0;
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
      const State& y = tr.states[k];
      const auto st = unpack<2>(y, n);
      std::vector<double> row{tr.times[k], y[y.size() - 1], st.rho, st.v};
      append(row, st.s);
      append(row, st.u);
      for (std::size_t m = 0; m < 3; ++m) row.push_back(tr.residuals[m][k]);
      w.row(row);
      max_e = std::max(max_e, std::abs(tr.residuals[0][k]));
      rho_min = std::min(rho_min, st.rho);
      rho_max = std::max(rho_max, st.rho);
    }
    const State& yf = tr.final_state();
    const auto sf = unpack<2>(yf, n);
    out["tau_start"] = init.tau0;
    out["tau_final"] = tr.final_time();
    out["t_final"] = yf[yf.size() - 1];
    out["max_abs_energy_residual"] = max_e;
    out["rho_min"] = rho_min;
    out["rho_max"] = rho_max;
    out["final_state"] = {{"rho", sf.rho}, {"v", sf.v}, {"s", to_json(sf.s)}, {"u", to_json(sf.u)}};
  }
  out["termination"] = to_string(tr.termination);
  out["termination_detail"] = tr.termination_detail;
  out["steps"] = tr.times.size() - 1;
  out["rejected_steps"] = tr.rejected_steps;
  out["csv"] = csv.filename().string();
  save_json(out_file(c, dir, "simulate.json"), out);
  if (tr.termination == Termination::error) raise_integration_failure(tr);
  return out;
}

// ---------------------------------------------------------------------------
// Equilibria on the collision manifold

struct CandidateShape {
  std::string label;
  std::string kind;  // collinear | equilateral
  Points<2> s;
};

/// Central configurations of V on the unit mass sphere: every collinear class,
/// plus the two equilateral triangles for three bodies.
inline std::vector<CandidateShape> shapes_of_V(const MassSystem& ms, const PotentialParams& pp, double grad_tol) {
  if (ms.n() > 6) throw ValidationError("equilibrium enumeration supports n <= 6");
  std::vector<CandidateShape> out;
  for (const auto& r : solve_collinear_all({ms, pp.strong_only(), 1.0, grad_tol}, 6, thread_budget()))
    out.push_back({"collinear " + r.ordering->str(), "collinear", r.config.positions()});
  if (ms.n() == 3) {
    const double side = equilateral_side(ms, 1.0);
    out.push_back({"equilateral +1", "equilateral", equilateral_points(ms, side, +1)});
    out.push_back({"equilateral -1", "equilateral", equilateral_points(ms, side, -1)});
  }
  return out;
}

inline json report_json(const EquilibriumReport& rep, const MassSystem& ms, const PotentialParams& pp) {
  json lambda = rep.lambda;
  json mu = json::array();
  for (const auto& [a, b] : rep.mu) mu.push_back(json::array({complex_json(a), complex_json(b)}));
  json out{{"ambient", to_string(rep.ambient)},
           {"v_sign", rep.v_sign},
           {"v", rep.v_value},
           {"index", rep.index},
           {"hessian_zero_modes", rep.zero_modes},
           {"residual", rep.residual},
           {"lambda", lambda},
           {"mu", mu}};
  if (pp.b > 2.0) {
    const Linearization lin = linearize_at_equilibrium(rep, ms, pp);
    const auto predicted = predicted_spectrum(rep);
    json num = json::array(), pred = json::array();
    for (auto z : lin.eigenvalues) num.push_back(complex_json(z));
    for (auto z : predicted) pred.push_back(complex_json(z));
    out["spectrum_numeric"] = num;
    out["spectrum_closed_form"] = pred;
    out["spectrum_distance"] = spectrum_distance(lin.eigenvalues, predicted);
  }
  if (rep.dims)
    out["dims"] = {{"unstable", rep.dims->dim_unstable},
                   {"stable", rep.dims->dim_stable},
                   {"energy_surface", rep.dims->dim_energy_surface},
                   {"zero_modes", rep.dims->zero_modes}};
  return out;
}

// ---------------------------------------------------------------------------
// eigen

inline json cmd_eigen(const RunConfig& c, const fs::path& dir) {
  RunSettings rs(c.run, {"ambient"}, "eigen");
  const MassSystem ms = c.mass_system();
  require_manev(c.pp);
  if (!(c.pp.b > 2.0)) throw ValidationError("eigenvalue and dimension reports assume b > 2");
  const std::string amb = rs.text("ambient", "both");
  if (amb != "both" && amb != "planar" && amb != "collinear")
    throw ValidationError("'run.ambient' must be both, planar or collinear");

  json recs = json::array();
  double worst = 0.0;
  for (const auto& shape : shapes_of_V(ms, c.pp, c.tol.grad)) {
    std::vector<Ambient> ambients;
    if (shape.kind == "collinear" && amb != "planar") ambients.push_back(Ambient::collinear);
    if (amb != "collinear") ambients.push_back(Ambient::planar);
    for (Ambient a : ambients)
      for (const auto& rep : find_equilibria(ms, c.pp, std::vector<Points<2>>{shape.s}, a, c.tol.residual)) {
        json r = report_json(rep, ms, c.pp);
        worst = std::max(worst, r["spectrum_distance"].get<double>());
        json rec{{"shape", shape.label}, {"kind", shape.kind}, {"positions", to_json(shape.s)}};
        for (auto it = r.begin(); it != r.end(); ++it) rec[it.key()] = it.value();
        recs.push_back(std::move(rec));
      }
  }
  json out = header_json("eigen", c);
  out["n"] = ms.n();
  out["count"] = recs.size();
  out["max_spectrum_distance"] = worst;
  out["equilibria"] = std::move(recs);
  save_json(out_file(c, dir, "eigen.json"), out);
  return out;
}

// ---------------------------------------------------------------------------
// collision-flow

inline json cmd_collision_flow(const RunConfig& c, const fs::path& dir) {
  RunSettings rs(c.run,
                 {"shape", "orientation", "ordering", "ambient", "v_sign", "perturbation", "seed", "tau_end",
                  "equilibrium_tol", "collision_distance"},
                 "collision-flow");
  const MassSystem ms = c.mass_system();
  const int n = ms.n();
  require_manev(c.pp);
  const auto candidates = shapes_of_V(ms, c.pp, c.tol.grad);

  McGeheeState<2> st0;
  std::string start_label;
  if (!c.initial_state.is_null()) {
    const json& j = c.initial_state;
    if (!j.is_object() || j.value("kind", "") != "shape")
      throw ValidationError("collision-flow takes initial_state.kind = shape (s, u, v_sign) or run.shape");
    detail::only_keys(j, {"kind", "s", "u", "v_sign"}, "initial_state");
    const int sign = j.value("v_sign", 1);
    if (sign != 1 && sign != -1) throw ValidationError("initial_state.v_sign must be +1 or -1");
    st0 = project_onto_C(points_from_json(j.value("s", json()), n, "initial_state.s"),
                         points_from_json(j.value("u", json()), n, "initial_state.u"), sign, ms, c.pp);
    start_label = "given shape";
  } else {
    const std::string kind = rs.text("shape", n == 3 ? "equilateral" : "collinear");
    const CandidateShape* base = nullptr;
    if (kind == "equilateral") {
      if (n != 3) throw ValidationError("the equilateral shape needs three bodies");
      const int o = rs.sign("orientation", 1);
      for (const auto& cs : candidates)
        if (cs.label == (o > 0 ? "equilateral +1" : "equilateral -1")) base = &cs;
    } else if (kind == "collinear") {
      const auto ord = rs.ordering("ordering", n);
      const std::string want = "collinear " + (ord ? ord->str() : Ordering::all(n).front().str());
      for (const auto& cs : candidates)
        if (cs.label == want) base = &cs;
    } else {
      throw ValidationError("'run.shape' must be equilateral or collinear");
    }
    if (!base) throw ValidationError("requested equilibrium shape not found");
    const double eps = rs.number("perturbation", 1e-3);
    if (!(eps >= 0.0)) throw ValidationError("'run.perturbation' must be >= 0");
    std::mt19937_64 g(static_cast<std::uint64_t>(rs.integer("seed", 1)));
    std::normal_distribution<double> nd(0.0, 1.0);
    Points<2> s = base->s, u = Points<2>::Zero(2, n);
    const std::string amb = rs.text("ambient", base->kind == "equilateral" ? "planar" : "collinear");
    if (amb != "planar" && amb != "collinear") throw ValidationError("'run.ambient' must be planar or collinear");
    if (amb == "collinear" && base->kind != "collinear")
      throw ValidationError("a collinear ambient needs a collinear shape");
    const bool planar = amb == "planar";
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < (planar ? 2 : 1); ++d) {
        s(d, i) += eps * nd(g);
        u(d, i) += eps * ms[i] * nd(g);
      }
    st0 = project_onto_C(s, u, rs.sign("v_sign", 1), ms, c.pp);
    start_label = base->label;
  }

  COrbitOptions opt;
  opt.tau_max = rs.positive("tau_end", 1e3);
  opt.equilibrium_tol = rs.positive("equilibrium_tol", 1e-9);
  opt.collision_distance = rs.positive("collision_distance", 1e-4);
  if (c.tol.rel != Tolerances{}.rel || c.tol.abs != Tolerances{}.abs)
    opt.integrator = {.rel_tol = c.tol.rel, .abs_tol = c.tol.abs};
  const Trajectory tr = integrate_on_C(st0, ms, c.pp, opt);

  const fs::path csv = out_file(c, dir, "collision_flow.csv");
  std::vector<std::string> header{"tau", "v"};
  for (const auto& h : point_columns("s", n)) header.push_back(h);
  for (const auto& h : point_columns("u", n)) header.push_back(h);
  for (const char* h : {"collision_relation", "projection_defect", "rate"}) header.push_back(h);
  CsvWriter w(csv, header);
  const auto& v = tr.series("v");
  const auto& rel = tr.series("collision_relation");
  const auto& defect = tr.series("projection_defect");
  const auto& rate = tr.series("rate");
  double max_increase = 0.0, max_rel = 0.0, max_defect = 0.0, max_rate = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    const auto st = unpack<2>(tr.states[k], n);
    std::vector<double> row{tr.times[k], st.v};
    append(row, st.s);
    append(row, st.u);
    row.push_back(rel[k]);
    row.push_back(defect[k]);
    row.push_back(rate[k]);
    w.row(row);
    if (k) max_increase = std::max(max_increase, v[k] - v[k - 1]);
    const double scale = 2.0 * potential_V(st.s, ms, c.pp);
    max_rel = std::max(max_rel, std::abs(rel[k]) / scale);
    max_defect = std::max(max_defect, std::abs(defect[k]) / scale);
    max_rate = std::max(max_rate, rate[k]);
  }

  const auto end = unpack<2>(tr.final_state(), n);
  json limit{{"reason", tr.termination == Termination::event ? tr.termination_detail : to_string(tr.termination)}};
  if (tr.termination_detail == "equilibrium") {
    const CandidateShape* nearest = nullptr;
    EquilibriumMatch best;
    for (const auto& cs : candidates) {
      const EquilibriumMatch m = classify_limit(end, {cs.s}, ms, c.pp);
      if (m.shape_distance < best.shape_distance) {
        best = m;
        nearest = &cs;
      }
    }
    if (nearest) {
      limit["nearest_equilibrium"] = nearest->label;
      limit["v_sign"] = best.v_sign;
      limit["shape_distance"] = best.shape_distance;
      limit["equilibrium_residual"] = best.residual;
      if (c.pp.b > 2.0) {
        const Ambient a = end.s.row(1).cwiseAbs().maxCoeff() == 0.0 ? Ambient::collinear : Ambient::planar;
        for (const auto& rep : find_equilibria(ms, c.pp, std::vector<Points<2>>{nearest->s}, a, c.tol.residual))
          if (rep.v_sign == best.v_sign) limit["equilibrium"] = report_json(rep, ms, c.pp);
      }
    }
  } else {
    int bi = 0, bj = 1;
    double dmin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (const double d = (end.s.col(i) - end.s.col(j)).norm(); d < dmin) {
          dmin = d;
          bi = i;
          bj = j;
        }
    limit["closest_pair"] = json::array({bi + 1, bj + 1});
    limit["closest_distance"] = dmin;
  }

  json out = header_json("collision-flow", c);
  out["start"] = start_label;
  out["termination"] = to_string(tr.termination);
  out["termination_detail"] = tr.termination_detail;
  out["tau_final"] = tr.final_time();
  out["steps"] = tr.times.size() - 1;
  out["v_initial"] = v.front();
  out["v_final"] = v.back();
  out["v_monotone"] = max_increase <= 0.0;
  out["max_v_increase"] = max_increase;
  out["total_decrease"] = v.front() - v.back();
  out["max_rate"] = max_rate;
  out["max_rel_collision_relation"] = max_rel;
  out["max_rel_projection_defect"] = max_defect;
  out["limit"] = std::move(limit);
  out["csv"] = csv.filename().string();
  save_json(out_file(c, dir, "collision_flow.json"), out);
  if (tr.termination == Termination::error) raise_integration_failure(tr);
  return out;
}

// ---------------------------------------------------------------------------
// homothetic

inline json cmd_homothetic(const RunConfig& c, const fs::path& dir) {
  RunSettings rs(c.run, {"shape", "orientation", "ordering", "rho_floor"}, "homothetic");
  const MassSystem ms = c.mass_system();
  const int n = ms.n();
  require_manev(c.pp);
  if (!c.energy_h) throw ValidationError("homothetic needs 'energy_h'");
  const double h = *c.energy_h;

  Points<2> s0;
  std::string label;
  if (!c.initial_state.is_null()) {
    const json& j = c.initial_state;
    if (!j.is_object() || j.value("kind", "") != "shape")
      throw ValidationError("homothetic takes initial_state.kind = shape (s) or run.shape");
    detail::only_keys(j, {"kind", "s"}, "initial_state");
    s0 = recentered(points_from_json(j.value("s", json()), n, "initial_state.s"), ms);
    s0 /= std::sqrt(moment_of_inertia(s0, ms));
    label = "given shape";
  } else {
    const std::string kind = rs.text("shape", "equilateral");
    if (kind == "equilateral") {
      if (n != 3) throw ValidationError("the equilateral shape needs three bodies");
      const int o = rs.sign("orientation", 1);
      s0 = equilateral_points(ms, equilateral_side(ms, 1.0), o);
      label = o > 0 ? "equilateral +1" : "equilateral -1";
    } else if (kind == "collinear") {
      const auto ord = rs.ordering("ordering", n).value_or(Ordering::all(n).front());
      s0 = solve_collinear_ordering(ord, {ms, c.pp.strong_only(), 1.0, c.tol.grad}).config.positions();
      label = "collinear " + ord.str();
    } else {
      throw ValidationError("'run.shape' must be equilateral or collinear");
    }
  }
  const SimultaneousResidual adm = simultaneous_residual(s0, ms, c.pp);
  if (adm.max() > c.tol.residual) {
    std::ostringstream os;
    os << label << " is not a simultaneous central configuration (residuals W " << fmt17(adm.res_W) << ", V "
       << fmt17(adm.res_V) << ")";
    throw AdmissibilityError(os.str());
  }
  const double rho_floor = rs.positive("rho_floor", 1e-8);
  const double vpot = potential_V(s0, ms, c.pp);
  const double vc = std::sqrt(2.0 * vpot);
  const int changes = energy_curve_sign_changes(s0, ms, c.pp, h);

  json out = header_json("homothetic", c);
  out["shape"] = label;
  out["positions"] = to_json(s0);
  out["energy_h"] = h;
  out["admissibility"] = {{"res_W", adm.res_W}, {"res_V", adm.res_V}};
  out["K"] = vpot;
  out["sqrt_2V"] = vc;
  out["sign_changes"] = changes;
  const fs::path csv = out_file(c, dir, "homothetic.csv");

  if (h < 0.0) {
    const PlaneOrbit orb = heteroclinic_orbit(s0, ms, c.pp, h, rho_floor);
    CsvWriter w(csv, {"tau", "rho", "v", "K_residual"});
    const auto& kres = orb.trajectory.series("K_residual");
    for (std::size_t k = 0; k < orb.samples.size(); ++k)
      w.row({orb.samples[k].tau, orb.samples[k].rho, orb.samples[k].v, kres[k]});
    out["connection"] = true;
    out["rho_floor"] = rho_floor;
    out["rho_max"] = orb.rho_max;
    out["rho_max_bisection"] = orb.rho_max_bisection;
    out["rho_max_error"] = std::abs(orb.rho_max - orb.rho_max_bisection);
    out["tau_max"] = orb.tau_max;
    out["tau_final"] = orb.trajectory.final_time();
    out["v_start"] = orb.v_start;
    out["v_end"] = orb.v_end;
    out["v_start_error"] = std::abs(orb.v_start - vc);
    out["v_end_error"] = std::abs(orb.v_end + vc);
    out["K_drift"] = orb.K_drift;
  } else {
    CsvWriter w(csv, {"rho", "v2", "v2_minus_2V"});
    double lowest = std::numeric_limits<double>::infinity();
    constexpr int samples = 401;
    for (int k = 0; k < samples; ++k) {
      const double rho = std::pow(10.0, -8.0 + 16.0 * k / (samples - 1));
      const double v2 = energy_curve_v2(rho, s0, ms, c.pp, h);
      w.row({rho, v2, v2 - 2.0 * vpot});
      lowest = std::min(lowest, v2 - 2.0 * vpot);
    }
    out["connection"] = false;
    out["min_v2_minus_2V"] = lowest;
    out["reason"] = "for h >= 0 the energy curve has no zero, so the orbit escapes instead of returning to collision";
  }
  out["csv"] = csv.filename().string();
  save_json(out_file(c, dir, "homothetic.json"), out);
  return out;
}

// ---------------------------------------------------------------------------
// Dispatch

inline const std::map<std::string, json (*)(const RunConfig&, const fs::path&)>& commands() {
  static const std::map<std::string, json (*)(const RunConfig&, const fs::path&)> table{
      {"cc-collinear", cmd_cc_collinear}, {"cc-planar3", cmd_cc_planar3},       {"simultaneous", cmd_simultaneous},
      {"simulate", cmd_simulate},         {"collision-flow", cmd_collision_flow}, {"eigen", cmd_eigen},
      {"homothetic", cmd_homothetic},
  };
  return table;
}

/// Runs one subcommand and maps failures to exit codes: 2 for validation,
/// 3 for numerical failures.  Errors are reported on stderr with their name.
inline int run_command(const std::string& name, const fs::path& config, const fs::path& out_dir) {
  try {
    const auto it = commands().find(name);
    if (it == commands().end()) throw ValidationError("unknown command " + name);
    const RunConfig cfg = load_config(config);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw ValidationError("cannot create output directory " + out_dir.string());
    const json summary = it->second(cfg, out_dir);
    std::cout << name << ": ok";
    for (const char* key : {"count", "termination", "connection", "min_gap", "max_spectrum_distance"})
      if (summary.contains(key)) std::cout << ", " << key << " = " << summary[key].dump();
    std::cout << "\n";
    return kExitOk;
  } catch (const ValidationError& e) {
    std::cerr << "qh " << name << ": " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "qh " << name << ": " << e.what() << "\n";
    return kExitNumerical;
  } catch (const json::exception& e) {
    std::cerr << "qh " << name << ": ValidationError: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace qh::cli

#endif  // QH_TOOLS_COMMANDS_HPP
