// Run configuration: a flat key = value text format with dotted sections.
// Unknown keys are errors; the validated key/value map is echoed verbatim
// into the run manifest.
#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "tracefem/error.hpp"
#include "tracefem/estimator.hpp"
#include "tracefem/fem.hpp"
#include "tracefem/problem.hpp"
#include "tracefem/solver.hpp"

namespace tracefem {

struct RunConfig {
  std::string problem_id = "ex1";
  ProblemParams params;

  double box_half = 0.0;  // 0 = problem default
  double h0 = 0.25;
  int level_cap = 12;
  int band_rings = 1;  // dilation of the band when refining toward the surface

  AssemblyOptions assembly;
  SolverOptions solver;

  int adapt_steps = 10;
  EstimatorOptions estimator;
  std::size_t dof_budget = (std::size_t)1 << 60;

  int converge_levels = 4;
  bool converge_both_variants = false;

  double shishkin_band = 1.0 / 64.0;
  double shishkin_hmin = 1.0 / 128.0;
  double shishkin_hmax = 0.25;
  int shishkin_levels = 3;

  double restrict_zmin = 0.0;  // >0: also report norms over |x3| > zmin

  int threads = 0;  // 0 = hardware concurrency; results are thread-count independent
  unsigned seed = 0;
  std::string output_dir = "out";

  std::map<std::string, std::string> echo;  // validated key/value pairs

  SurfaceProblem make_problem() const {
    SurfaceProblem p = builtin_problem(problem_id, params);
    if (box_half > 0.0) p.box_half = box_half;
    return p;
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (...) {
    throw Error(ErrorCode::ConfigError, "key '" + key + "': not a number: '" + v + "'");
  }
}

inline long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (...) {
    throw Error(ErrorCode::ConfigError, "key '" + key + "': not an integer: '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw Error(ErrorCode::ConfigError, "key '" + key + "': not a boolean: '" + v + "'");
}

}  // namespace config_detail

inline RunConfig parse_config_text(const std::string& text) {
  using namespace config_detail;
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::ConfigError,
                  "line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));
    if (key.empty() || val.empty())
      throw Error(ErrorCode::ConfigError,
                  "line " + std::to_string(lineno) + ": empty key or value");
    if (cfg.echo.count(key))
      throw Error(ErrorCode::ConfigError, "duplicate key '" + key + "'");
    cfg.echo[key] = val;

    if (key == "problem") {
      cfg.problem_id = val;
    } else if (key == "eps") {
      cfg.params.eps = to_double(key, val);
    } else if (key == "lambda") {
      cfg.params.lambda = to_double(key, val);
    } else if (key == "ex4.alt_x4") {
      cfg.params.x4_alternative = to_bool(key, val);
    } else if (key == "box.half") {
      cfg.box_half = to_double(key, val);
    } else if (key == "grid.h0") {
      cfg.h0 = to_double(key, val);
    } else if (key == "grid.level_cap") {
      cfg.level_cap = (int)to_int(key, val);
    } else if (key == "grid.band_rings") {
      cfg.band_rings = (int)to_int(key, val);
    } else if (key == "variant") {
      cfg.assembly.variant = variant_from_string(val);
    } else if (key == "supg.delta0") {
      cfg.assembly.supg_delta0 = to_double(key, val);
    } else if (key == "supg.delta1") {
      cfg.assembly.supg_delta1 = to_double(key, val);
    } else if (key == "quad.degree") {
      cfg.assembly.quad_degree = (int)to_int(key, val);
    } else if (key == "solver.method") {
      cfg.solver.method = solver_method_from_string(val);
    } else if (key == "solver.tol") {
      cfg.solver.tol = to_double(key, val);
    } else if (key == "solver.max_iterations") {
      cfg.solver.max_iterations = (int)to_int(key, val);
    } else if (key == "adapt.steps") {
      cfg.adapt_steps = (int)to_int(key, val);
    } else if (key == "adapt.mode") {
      cfg.estimator.mode = estimator_mode_from_string(val);
    } else if (key == "adapt.alpha_g") {
      cfg.estimator.alpha_g = to_double(key, val);
    } else if (key == "adapt.edge_velocity_term") {
      cfg.estimator.edge_velocity_term = to_bool(key, val);
    } else if (key == "adapt.dof_budget") {
      cfg.dof_budget = (std::size_t)to_int(key, val);
    } else if (key == "adapt.quad_degree") {
      cfg.estimator.quad_degree = (int)to_int(key, val);
    } else if (key == "converge.levels") {
      cfg.converge_levels = (int)to_int(key, val);
    } else if (key == "converge.both_variants") {
      cfg.converge_both_variants = to_bool(key, val);
    } else if (key == "shishkin.band") {
      cfg.shishkin_band = to_double(key, val);
    } else if (key == "shishkin.hmin") {
      cfg.shishkin_hmin = to_double(key, val);
    } else if (key == "shishkin.hmax") {
      cfg.shishkin_hmax = to_double(key, val);
    } else if (key == "shishkin.levels") {
      cfg.shishkin_levels = (int)to_int(key, val);
    } else if (key == "restrict.zmin") {
      cfg.restrict_zmin = to_double(key, val);
    } else if (key == "threads") {
      cfg.threads = (int)to_int(key, val);
    } else if (key == "seed") {
      cfg.seed = (unsigned)to_int(key, val);
    } else if (key == "output.dir") {
      cfg.output_dir = val;
    } else {
      throw Error(ErrorCode::ConfigError, "unknown key '" + key + "'");
    }
  }
  cfg.assembly.threads = cfg.threads;
  cfg.estimator.threads = cfg.threads;

  // validation beyond per-key parsing
  if (cfg.h0 <= 0.0) throw Error(ErrorCode::ConfigError, "grid.h0 must be positive");
  if (cfg.converge_levels < 1)
    throw Error(ErrorCode::ConfigError, "converge.levels must be >= 1");
  if (cfg.adapt_steps < 0) throw Error(ErrorCode::ConfigError, "adapt.steps must be >= 0");
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoError, "cannot read config file '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace tracefem
