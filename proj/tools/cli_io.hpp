#ifndef QH_TOOLS_CLI_IO_HPP
#define QH_TOOLS_CLI_IO_HPP

// Config ingestion, fixed-precision JSON and CSV output for the qh tool.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "qh/qh.hpp"

namespace qh::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

// ---------------------------------------------------------------------------
// Formatting

/// 17 significant digits, enough to round-trip every double.
inline std::string fmt17(double x) {
  if (!std::isfinite(x)) return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Pretty JSON with every floating-point number written with 17 significant
/// digits.  Non-finite numbers become null.
inline void write_json(std::ostream& os, const json& j, int depth = 0) {
  const std::string pad(static_cast<std::size_t>(2 * (depth + 1)), ' ');
  const std::string close(static_cast<std::size_t>(2 * depth), ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << "{\n";
      std::size_t k = 0;
      for (auto it = j.begin(); it != j.end(); ++it, ++k) {
        os << pad << json(it.key()).dump() << ": ";
        write_json(os, it.value(), depth + 1);
        os << (k + 1 < j.size() ? ",\n" : "\n");
      }
      os << close << "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      const bool flat_numbers =
          std::all_of(j.begin(), j.end(), [](const json& e) { return e.is_number() || e.is_null(); });
      if (flat_numbers) {
        os << "[";
        for (std::size_t k = 0; k < j.size(); ++k) {
          if (k) os << ", ";
          write_json(os, j[k], depth + 1);
        }
        os << "]";
        return;
      }
      os << "[\n";
      for (std::size_t k = 0; k < j.size(); ++k) {
        os << pad;
        write_json(os, j[k], depth + 1);
        os << (k + 1 < j.size() ? ",\n" : "\n");
      }
      os << close << "]";
      return;
    }
    case json::value_t::number_float: {
      const double x = j.get<double>();
      os << (std::isfinite(x) ? fmt17(x) : "null");
      return;
    }
    default:
      os << j.dump();
  }
}

inline void save_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write " + path.string());
  write_json(os, j);
  os << "\n";
}

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : os_(path) {
    if (!os_) throw ValidationError("cannot write " + path.string());
    for (std::size_t k = 0; k < header.size(); ++k) os_ << (k ? "," : "") << header[k];
    os_ << "\n";
    width_ = header.size();
  }

  void row(const std::vector<double>& values) {
    if (values.size() != width_) throw ValidationError("CSV row width does not match the header");
    for (std::size_t k = 0; k < values.size(); ++k) os_ << (k ? "," : "") << fmt17(values[k]);
    os_ << "\n";
    ++rows_;
  }

  std::size_t rows() const { return rows_; }

 private:
  std::ofstream os_;
  std::size_t width_ = 0;
  std::size_t rows_ = 0;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return k;
    throw ValidationError("CSV has no column named " + name);
  }
};

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw ValidationError(path.string() + " is empty");
  std::stringstream hs(line);
  for (std::string cell; std::getline(hs, cell, ',');) t.header.push_back(cell);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::vector<double> row;
    for (std::string cell; std::getline(ls, cell, ',');) row.push_back(std::strtod(cell.c_str(), nullptr));
    if (row.size() != t.header.size()) throw ValidationError(path.string() + ": ragged CSV row");
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Configuration

struct Tolerances {
  double rel = 1e-10;
  double abs = 1e-12;
  double grad = 1e-12;
  double residual = 1e-9;  // acceptance threshold for equilibrium and admissibility checks
  double energy = 1e-9;    // allowed |H(initial_state) - energy_h| relative to max(1, |h|)
};

struct RunConfig {
  std::vector<double> masses;
  PotentialParams pp;
  double inertia_I0 = 1.0;
  std::optional<double> energy_h;
  json initial_state;  // null when absent
  Tolerances tol;
  std::string output_prefix;
  json run = json::object();  // command-specific settings
  fs::path source_dir;

  MassSystem mass_system() const { return MassSystem(masses); }
};

namespace detail {

inline double number(const json& j, const std::string& key) {
  if (!j.is_number()) throw ValidationError("'" + key + "' must be a number");
  const double x = j.get<double>();
  if (!std::isfinite(x)) throw ValidationError("'" + key + "' must be finite");
  return x;
}

inline void only_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError("'" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ValidationError("unknown key '" + it.key() + "' in " + where);
}

}  // namespace detail

inline RunConfig parse_config(const json& j, const fs::path& source_dir = {}) {
  detail::only_keys(j,
                    {"schema", "masses", "a", "b", "alpha", "beta", "inertia_I0", "energy_h", "initial_state",
                     "tolerances", "output", "run", "comment"},
                    "config");
  if (!j.contains("schema")) throw ValidationError("config lacks 'schema' (expected 1)");
  if (!j["schema"].is_number_integer() || j["schema"].get<int>() != 1)
    throw ValidationError("unsupported config schema " + j["schema"].dump() + " (expected 1)");

  RunConfig c;
  c.source_dir = source_dir;
  if (!j.contains("masses") || !j["masses"].is_array()) throw ValidationError("'masses' must be an array");
  for (const auto& m : j["masses"]) c.masses.push_back(detail::number(m, "masses"));
  if (c.masses.size() < 2) throw ValidationError("'masses' needs at least two bodies");
  for (std::size_t i = 0; i < c.masses.size(); ++i)
    if (!(c.masses[i] > 0.0))
      throw ValidationError("mass m" + std::to_string(i + 1) + " must be strictly positive");

  if (j.contains("a")) c.pp.a = detail::number(j["a"], "a");
  if (j.contains("b")) c.pp.b = detail::number(j["b"], "b");
  if (j.contains("alpha")) c.pp.alpha = detail::number(j["alpha"], "alpha");
  if (j.contains("beta")) c.pp.beta = detail::number(j["beta"], "beta");
  c.pp.validate();

  if (j.contains("inertia_I0")) c.inertia_I0 = detail::number(j["inertia_I0"], "inertia_I0");
  if (!(c.inertia_I0 > 0.0)) throw ValidationError("'inertia_I0' must be > 0");
  if (j.contains("energy_h") && !j["energy_h"].is_null()) c.energy_h = detail::number(j["energy_h"], "energy_h");
  if (j.contains("initial_state")) c.initial_state = j["initial_state"];

  if (j.contains("tolerances")) {
    const json& t = j["tolerances"];
    detail::only_keys(t, {"rel", "abs", "grad", "residual", "energy"}, "tolerances");
    auto take = [&](const char* key, double& dst) {
      if (t.contains(key)) dst = detail::number(t[key], std::string("tolerances.") + key);
      if (!(dst > 0.0)) throw ValidationError(std::string("'tolerances.") + key + "' must be > 0");
    };
    take("rel", c.tol.rel);
    take("abs", c.tol.abs);
    take("grad", c.tol.grad);
    take("residual", c.tol.residual);
    take("energy", c.tol.energy);
  }
  if (j.contains("output")) {
    detail::only_keys(j["output"], {"prefix"}, "output");
    if (j["output"].contains("prefix")) c.output_prefix = j["output"]["prefix"].get<std::string>();
  }
  if (j.contains("run")) {
    if (!j["run"].is_object()) throw ValidationError("'run' must be an object");
    c.run = j["run"];
  }
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j, path.parent_path());
}

/// Command-specific settings with defaults; unknown keys are rejected.
class RunSettings {
 public:
  RunSettings(const json& run, std::set<std::string> allowed, std::string command)
      : run_(run), command_(std::move(command)) {
    detail::only_keys(run_, allowed, "run (" + command_ + ")");
  }

  bool has(const std::string& key) const { return run_.contains(key) && !run_[key].is_null(); }
  const json& raw(const std::string& key) const { return run_[key]; }

  double number(const std::string& key, double fallback) const {
    return has(key) ? detail::number(run_[key], "run." + key) : fallback;
  }
  double positive(const std::string& key, double fallback) const {
    const double x = number(key, fallback);
    if (!(x > 0.0)) throw ValidationError("'run." + key + "' must be > 0");
    return x;
  }
  int integer(const std::string& key, int fallback) const {
    if (!has(key)) return fallback;
    if (!run_[key].is_number_integer()) throw ValidationError("'run." + key + "' must be an integer");
    return run_[key].get<int>();
  }
  std::string text(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    if (!run_[key].is_string()) throw ValidationError("'run." + key + "' must be a string");
    return run_[key].get<std::string>();
  }
  int sign(const std::string& key, int fallback) const {
    const int s = integer(key, fallback);
    if (s != 1 && s != -1) throw ValidationError("'run." + key + "' must be +1 or -1");
    return s;
  }
  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    if (!run_[key].is_boolean()) throw ValidationError("'run." + key + "' must be true or false");
    return run_[key].get<bool>();
  }
  std::optional<Ordering> ordering(const std::string& key, int n) const {
    if (!has(key)) return std::nullopt;
    if (!run_[key].is_array()) throw ValidationError("'run." + key + "' must be an array of body labels");
    std::vector<int> labels;
    for (const auto& l : run_[key]) {
      if (!l.is_number_integer()) throw ValidationError("'run." + key + "' must hold integer labels");
      labels.push_back(l.get<int>());
    }
    if (static_cast<int>(labels.size()) != n)
      throw ValidationError("'run." + key + "' must list all " + std::to_string(n) + " bodies");
    return Ordering::from_labels(labels);
  }

 private:
  json run_;
  std::string command_;
};

/// QH_THREADS caps the worker count; unset means the hardware concurrency.
inline int thread_budget() {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("QH_THREADS");
  if (!env || !*env) return static_cast<int>(hw);
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ValidationError(std::string("QH_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<int>(std::min<long>(v, static_cast<long>(hw)));
}

// ---------------------------------------------------------------------------
// Points <-> JSON

inline json to_json(const Points<2>& r) {
  json out = json::array();
  for (Eigen::Index i = 0; i < r.cols(); ++i) out.push_back(json::array({r(0, i), r(1, i)}));
  return out;
}

inline json to_json_line(const Points<2>& r) {
  json out = json::array();
  for (Eigen::Index i = 0; i < r.cols(); ++i) out.push_back(r(0, i));
  return out;
}

inline Points<2> points_from_json(const json& j, int n, const std::string& key) {
  if (!j.is_array() || static_cast<int>(j.size()) != n)
    throw ValidationError("'" + key + "' must list " + std::to_string(n) + " planar points");
  Points<2> r(2, n);
  for (int i = 0; i < n; ++i) {
    const json& p = j[static_cast<std::size_t>(i)];
    if (p.is_number()) {
      r(0, i) = detail::number(p, key);
      r(1, i) = 0.0;
    } else if (p.is_array() && p.size() == 2) {
      r(0, i) = detail::number(p[0], key);
      r(1, i) = detail::number(p[1], key);
    } else {
      throw ValidationError("'" + key + "' entries must be [x, y] pairs or numbers");
    }
  }
  return r;
}

inline json complex_json(Complex z) { return json::array({z.real(), z.imag()}); }

inline std::vector<std::string> point_columns(const std::string& prefix, int n) {
  std::vector<std::string> out;
  for (int i = 1; i <= n; ++i) {
    out.push_back(prefix + "x" + std::to_string(i));
    out.push_back(prefix + "y" + std::to_string(i));
  }
  return out;
}

inline void append(std::vector<double>& row, const Points<2>& r) {
  for (Eigen::Index i = 0; i < r.cols(); ++i) {
    row.push_back(r(0, i));
    row.push_back(r(1, i));
  }
}

inline Points<2> points_from_row(const CsvTable& t, const std::vector<double>& row, const std::string& prefix,
                                 int n) {
  Points<2> r(2, n);
  for (int i = 0; i < n; ++i) {
    r(0, i) = row[t.column(prefix + "x" + std::to_string(i + 1))];
    r(1, i) = row[t.column(prefix + "y" + std::to_string(i + 1))];
  }
  return r;
}

}  // namespace qh::cli

#endif  // QH_TOOLS_CLI_IO_HPP
