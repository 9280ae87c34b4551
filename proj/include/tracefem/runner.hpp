// Command implementations behind the CLI: single solves, uniform-convergence
// sweeps, adaptive loops, layer-fitted studies, surface extraction, and the
// invariant audit. Every run writes its artifacts plus a JSON manifest that
// echoes the validated configuration.
#pragma once

#include <chrono>
#include <random>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tracefem/analysis.hpp"
#include "tracefem/config.hpp"
#include "tracefem/estimator.hpp"
#include "tracefem/solver.hpp"
#include "tracefem/vtk_io.hpp"

namespace tracefem {

inline const char* version_string() { return "1.0.0"; }

struct CommandIO {
  std::string dump_grid;     // --dump-grid
  std::string dump_surface;  // --dump-surface
  std::string dump_matrix;   // --dump-matrix
  std::string report_path;   // --report
  std::ostream* log = &std::cout;
};

namespace run_detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct ManifestWriter {
  nlohmann::json j;
  std::string dir;
  Clock::time_point start = Clock::now();

  ManifestWriter(const RunConfig& cfg, const std::string& command) {
    dir = cfg.output_dir;
    std::filesystem::create_directories(dir);
    j["command"] = command;
    j["version"] = version_string();
    j["config"] = nlohmann::json::object();
    for (const auto& [k, v] : cfg.echo) j["config"][k] = v;
    j["artifacts"] = nlohmann::json::array();
    j["status"] = "running";
  }

  std::string path(const std::string& name) const { return dir + "/" + name; }

  void artifact(const std::string& p) { j["artifacts"].push_back(p); }

  void solver_info(const LinearSolveReport& rep) {
    j["solver"] = {{"method", rep.method},
                   {"iterations", rep.iterations},
                   {"relative_residual", rep.relative_residual},
                   {"diag_condition_proxy", rep.diag_condition_proxy},
                   {"dropped_dofs", rep.dropped_dofs.size()}};
  }

  void finish(const std::string& status, const std::string& error = "") {
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    j["elapsed_ms"] = ms_since(start);
    std::ofstream os(path("manifest.json"));
    os << j.dump(2) << "\n";
  }
};

struct SolvedState {
  OctreeGrid grid;
  TrilinearField field;
  SurfaceTriangulation tri;
  DofMap dofs;
  TraceSystem sys;
  std::vector<double> u;
  std::vector<double> nodal;
  LinearSolveReport report;
};

inline SolvedState solve_on_grid(const SurfaceProblem& problem, OctreeGrid grid,
                                 const RunConfig& cfg) {
  SolvedState s{std::move(grid), {}, {}, {}, {}, {}, {}, {}};
  s.field = interpolate_levelset(s.grid, *problem.level_set);
  s.tri = extract_surface(s.grid, s.field, cfg.threads);
  s.dofs = build_dof_map(s.grid, s.tri);
  s.sys = assemble(problem, s.grid, s.tri, s.dofs, cfg.assembly);
  if (problem.zero_mean_mode)
    zero_mean_close(s.sys, s.grid, s.tri, s.dofs, cfg.assembly.quad_degree);
  s.u = solve_trace_system(s.sys, cfg.solver, s.report);
  s.nodal = expand_solution(s.grid, s.dofs, s.u);
  return s;
}

inline ErrorReport report_for(const SurfaceProblem& problem, const SolvedState& s,
                              const RunConfig& cfg) {
  if (problem.has_exact_solution())
    return error_norms(problem, s.grid, s.tri, s.nodal, s.dofs.size(),
                       cfg.assembly.quad_degree);
  ErrorReport rep;
  rep.dofs = s.dofs.size();
  rep.area = s.tri.total_area();
  rep.triangles = s.tri.triangles.size();
  rep.surface_vertices = s.tri.vertices.size();
  for (const CellKey& c : s.tri.band_cells)
    rep.h_band = std::max(rep.h_band, s.grid.cell_size(c));
  return rep;
}

inline void common_dumps(const SolvedState& s, const CommandIO& io, ManifestWriter& man) {
  if (!io.dump_grid.empty()) {
    write_grid_vtk(io.dump_grid, s.grid);
    man.artifact(io.dump_grid);
  }
  if (!io.dump_surface.empty()) {
    write_surface_vtk(io.dump_surface, s.grid, s.tri, &s.nodal);
    man.artifact(io.dump_surface);
  }
  if (!io.dump_matrix.empty()) {
    write_matrix_market(io.dump_matrix, s.sys.matrix, &s.sys.rhs);
    man.artifact(io.dump_matrix);
  }
}

}  // namespace run_detail

// Exit code classification: configuration/usage problems return 2, numeric
// or I/O failures during a run return 1.
inline int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::ConfigError:
    case ErrorCode::UnknownProblemId:
    case ErrorCode::InsufficientLevels:
      return 2;
    default:
      return 1;
  }
}

// Single solve on the uniform h0 grid (optionally refined toward the band).
inline int cmd_solve(const RunConfig& cfg, const CommandIO& io = {}) {
  run_detail::ManifestWriter man(cfg, "solve");
  try {
    SurfaceProblem problem = cfg.make_problem();
    OctreeGrid grid =
        OctreeGrid::build_uniform(-problem.box_half, problem.box_half, cfg.h0, cfg.level_cap);
    run_detail::SolvedState s = run_detail::solve_on_grid(problem, std::move(grid), cfg);
    ErrorReport rep = report_for(problem, s, cfg);

    std::string surface_path =
        io.dump_surface.empty() ? man.path("surface.vtk") : io.dump_surface;
    write_surface_vtk(surface_path, s.grid, s.tri, &s.nodal);
    man.artifact(surface_path);
    std::string report_path = io.report_path.empty() ? man.path("report.csv") : io.report_path;
    write_report_csv(report_path, {rep});
    man.artifact(report_path);
    if (!io.dump_grid.empty()) {
      write_grid_vtk(io.dump_grid, s.grid);
      man.artifact(io.dump_grid);
    }
    if (!io.dump_matrix.empty()) {
      write_matrix_market(io.dump_matrix, s.sys.matrix, &s.sys.rhs);
      man.artifact(io.dump_matrix);
    }
    man.solver_info(s.report);
    man.j["dofs"] = s.dofs.size();
    man.j["triangles"] = s.tri.triangles.size();
    man.finish("ok");
    *io.log << "solve: dofs=" << s.dofs.size() << " triangles=" << s.tri.triangles.size();
    if (problem.has_exact_solution())
      *io.log << " l2=" << rep.l2 << " h1=" << rep.h1 << " linf=" << rep.linf;
    *io.log << "\n";
    return 0;
  } catch (const Error& e) {
    man.finish("error", e.what());
    *io.log << e.what() << "\n";
    return exit_code_for(e);
  }
}

// Convergence sweep: refine toward the surface band (dilated by
// grid.band_rings) from the uniform h0 start.
inline int cmd_converge(const RunConfig& cfg, const CommandIO& io = {}) {
  run_detail::ManifestWriter man(cfg, "converge");
  try {
    if (cfg.converge_levels < 2)
      throw Error(ErrorCode::InsufficientLevels, "converge needs at least 2 levels");
    SurfaceProblem problem = cfg.make_problem();

    std::vector<Variant> variants{cfg.assembly.variant};
    if (cfg.converge_both_variants)
      variants = {Variant::surface_gradient, Variant::full_gradient};

    // the grid sequence is variant-independent
    std::vector<OctreeGrid> grids;
    grids.push_back(OctreeGrid::build_uniform(-problem.box_half, problem.box_half, cfg.h0,
                                              cfg.level_cap));
    for (int lvl = 1; lvl < cfg.converge_levels; ++lvl) {
      OctreeGrid g = grids.back();
      g.refine(g.dilate_cells(surface_band(g, *problem.level_set), cfg.band_rings));
      grids.push_back(std::move(g));
    }

    std::string csv_path = io.report_path.empty() ? man.path("converge.csv") : io.report_path;
    std::ofstream csv(csv_path);
    csv << "variant,level,dofs,h_band,l2,l2_rate,h1_semi,h1,h1_rate,linf,linf_rate\n";
    for (Variant variant : variants) {
      RunConfig vcfg = cfg;
      vcfg.assembly.variant = variant;
      std::vector<ErrorReport> reports;
      for (int lvl = 0; lvl < cfg.converge_levels; ++lvl) {
        run_detail::SolvedState s = run_detail::solve_on_grid(problem, grids[(std::size_t)lvl], vcfg);
        ErrorReport rep = report_for(problem, s, vcfg);
        rep.step = lvl;
        reports.push_back(rep);
        if (lvl + 1 == cfg.converge_levels) common_dumps(s, io, man);
      }
      auto rows = eoc_rows(reports);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        csv << to_string(variant) << "," << i << "," << r.report.dofs << ","
            << io_detail::num(r.report.h_band) << "," << io_detail::num(r.report.l2) << ","
            << io_detail::num(r.rate_l2) << "," << io_detail::num(r.report.h1_semi) << ","
            << io_detail::num(r.report.h1) << "," << io_detail::num(r.rate_h1) << ","
            << io_detail::num(r.report.linf) << "," << io_detail::num(r.rate_linf) << "\n";
      }
      *io.log << to_string(variant) << ":\n" << eoc_table(reports);
    }
    csv.close();
    man.artifact(csv_path);
    man.finish("ok");
    return 0;
  } catch (const Error& e) {
    man.finish("error", e.what());
    *io.log << e.what() << "\n";
    return exit_code_for(e);
  }
}

// Adaptive loop driven by the error indicator; per-step CSV and final VTK.
inline int cmd_adapt(const RunConfig& cfg, const CommandIO& io = {}) {
  run_detail::ManifestWriter man(cfg, "adapt");
  try {
    SurfaceProblem problem = cfg.make_problem();
    AdaptControls controls;
    controls.max_steps = cfg.adapt_steps;
    controls.dof_budget = cfg.dof_budget;
    controls.assembly = cfg.assembly;
    controls.solver = cfg.solver;
    controls.estimator = cfg.estimator;
    OctreeGrid grid =
        OctreeGrid::build_uniform(-problem.box_half, problem.box_half, cfg.h0, cfg.level_cap);
    AdaptResult res = adapt_loop(problem, std::move(grid), controls, [&](const ErrorReport& r) {
      *io.log << "step " << r.step << ": dofs=" << r.dofs << " eta=" << std::sqrt(r.sum_eta2);
      if (problem.has_exact_solution()) *io.log << " l2=" << r.l2 << " h1=" << r.h1;
      *io.log << " marked=" << r.marked << "\n";
    });

    std::string csv_path = io.report_path.empty() ? man.path("adapt.csv") : io.report_path;
    write_report_csv(csv_path, res.steps, /*adaptive=*/true);
    man.artifact(csv_path);
    std::string surface_path =
        io.dump_surface.empty() ? man.path("surface.vtk") : io.dump_surface;
    write_surface_vtk(surface_path, res.state.grid, res.state.tri, &res.state.nodal);
    man.artifact(surface_path);
    if (!io.dump_grid.empty()) {
      write_grid_vtk(io.dump_grid, res.state.grid);
      man.artifact(io.dump_grid);
    }
    man.j["steps"] = res.steps.size();
    man.j["final_dofs"] = res.steps.back().dofs;
    man.finish("ok");
    return 0;
  } catch (const Error& e) {
    man.finish("error", e.what());
    *io.log << e.what() << "\n";
    return exit_code_for(e);
  }
}

// Layer-fitted study: the initial Shishkin grid plus uniform refinements of
// the surface band; optional restricted norms over |x3| > restrict.zmin.
inline int cmd_shishkin(const RunConfig& cfg, const CommandIO& io = {}) {
  run_detail::ManifestWriter man(cfg, "shishkin");
  try {
    SurfaceProblem problem = cfg.make_problem();
    OctreeGrid grid = build_shishkin_grid(-problem.box_half, problem.box_half,
                                          cfg.shishkin_band, cfg.shishkin_hmin,
                                          cfg.shishkin_hmax, problem.level_set.get(),
                                          cfg.level_cap);
    std::vector<ErrorReport> reports, restricted;
    for (int lvl = 0; lvl < cfg.shishkin_levels; ++lvl) {
      run_detail::SolvedState s = run_detail::solve_on_grid(problem, grid, cfg);
      ErrorReport rep = report_for(problem, s, cfg);
      rep.step = lvl;
      reports.push_back(rep);
      if (cfg.restrict_zmin > 0.0 && problem.has_exact_solution()) {
        double zmin = cfg.restrict_zmin;
        ErrorReport rrep = restricted_error(
            problem, s.grid, s.tri, s.nodal, s.dofs.size(),
            [zmin](const Vec3& x) { return std::abs(x.z) > zmin; }, cfg.assembly.quad_degree);
        rrep.step = lvl;
        restricted.push_back(rrep);
      }
      *io.log << "level " << lvl << ": dofs=" << rep.dofs;
      if (problem.has_exact_solution())
        *io.log << " l2=" << rep.l2 << " h1=" << rep.h1 << " linf=" << rep.linf;
      *io.log << "\n";
      if (lvl + 1 == cfg.shishkin_levels) {
        common_dumps(s, io, man);
      } else {
        grid = std::move(s.grid);
        grid.refine(grid.dilate_cells(surface_band(grid, *problem.level_set), cfg.band_rings));
      }
    }
    std::string csv_path = io.report_path.empty() ? man.path("shishkin.csv") : io.report_path;
    write_report_csv(csv_path, reports);
    man.artifact(csv_path);
    if (!restricted.empty()) {
      write_report_csv(man.path("shishkin_restricted.csv"), restricted);
      man.artifact(man.path("shishkin_restricted.csv"));
    }
    *io.log << eoc_table(reports);
    man.finish("ok");
    return 0;
  } catch (const Error& e) {
    man.finish("error", e.what());
    *io.log << e.what() << "\n";
    return exit_code_for(e);
  }
}

// Grid + surface extraction without a solve.
inline int cmd_extract_surface(const RunConfig& cfg, const CommandIO& io = {}) {
  run_detail::ManifestWriter man(cfg, "extract-surface");
  try {
    SurfaceProblem problem = cfg.make_problem();
    OctreeGrid grid =
        OctreeGrid::build_uniform(-problem.box_half, problem.box_half, cfg.h0, cfg.level_cap);
    TrilinearField field = interpolate_levelset(grid, *problem.level_set);
    SurfaceTriangulation tri = extract_surface(grid, field, cfg.threads);
    std::string surface_path =
        io.dump_surface.empty() ? man.path("surface.vtk") : io.dump_surface;
    write_surface_vtk(surface_path, grid, tri);
    man.artifact(surface_path);
    if (!io.dump_grid.empty()) {
      write_grid_vtk(io.dump_grid, grid);
      man.artifact(io.dump_grid);
    }
    man.j["triangles"] = tri.triangles.size();
    man.j["vertices"] = tri.vertices.size();
    man.j["area"] = tri.total_area();
    man.finish("ok");
    *io.log << "extracted " << tri.triangles.size() << " triangles, area "
            << tri.total_area() << "\n";
    return 0;
  } catch (const Error& e) {
    man.finish("error", e.what());
    *io.log << e.what() << "\n";
    return exit_code_for(e);
  }
}

// Invariant audit on the configured problem and grid.
inline int cmd_check(const RunConfig& cfg, const CommandIO& io = {}) {
  run_detail::ManifestWriter man(cfg, "check");
  int failures = 0;
  auto verdict = [&](const char* name, bool ok) {
    *io.log << (ok ? "[PASS] " : "[FAIL] ") << name << "\n";
    man.j["checks"][name] = ok ? "pass" : "fail";
    if (!ok) ++failures;
  };
  try {
    SurfaceProblem problem = cfg.make_problem();
    OctreeGrid grid =
        OctreeGrid::build_uniform(-problem.box_half, problem.box_half, cfg.h0, cfg.level_cap);
    grid.refine(grid.dilate_cells(surface_band(grid, *problem.level_set), cfg.band_rings));
    TrilinearField field = interpolate_levelset(grid, *problem.level_set);
    SurfaceTriangulation tri = extract_surface(grid, field, cfg.threads);

    WatertightReport wt;
    tri.build_edge_table(&wt);
    verdict("watertight", wt.watertight());

    bool contained = true, oriented = true, bounded = true;
    for (std::size_t bi = 0; bi < tri.band_cells.size(); ++bi) {
      const CellKey& c = tri.band_cells[bi];
      Vec3 lo, hi;
      grid.cell_bounds(c, lo, hi);
      auto [tb, te] = tri.cell_tris[bi];
      bounded = bounded && (te - tb <= 12);
      for (std::int32_t t = tb; t < te; ++t) {
        const auto& T = tri.triangles[(std::size_t)t];
        Vec3 b = (tri.vertices[(std::size_t)T.v[0]] + tri.vertices[(std::size_t)T.v[1]] +
                  tri.vertices[(std::size_t)T.v[2]]) /
                 3.0;
        double slack = 1e-12;
        contained = contained && b.x >= lo.x - slack && b.x <= hi.x + slack &&
                    b.y >= lo.y - slack && b.y <= hi.y + slack && b.z >= lo.z - slack &&
                    b.z <= hi.z + slack;
        if (T.area > 1e-300)
          oriented = oriented && dot(T.normal, field.gradient_in_cell(c, b)) > 0.0;
      }
    }
    verdict("parent_containment", contained);
    verdict("orientation", oriented);
    verdict("per_cell_triangle_bound", bounded);

    double vol_err = std::abs(grid.volume() - std::pow(2.0 * problem.box_half, 3));
    verdict("volume_conservation", vol_err <= 1e-12 * std::pow(2.0 * problem.box_half, 3));

    // hanging-node trilinear reproduction with seeded random coefficients
    bool hanging_ok = true;
    const auto& nodes = grid.nodes();
    std::mt19937 rng(cfg.seed);
    std::uniform_real_distribution<double> coef(-2.0, 2.0);
    for (int trial = 0; trial < 5; ++trial) {
      double c[8];
      for (double& v : c) v = coef(rng);
      auto q = [&](const Vec3& p) {
        return c[0] + c[1] * p.x + c[2] * p.y + c[3] * p.z + c[4] * p.x * p.y +
               c[5] * p.x * p.z + c[6] * p.y * p.z + c[7] * p.x * p.y * p.z;
      };
      for (std::size_t id = 0; id < nodes.size(); ++id) {
        if (!grid.node_hanging((int)id)) continue;
        double via = 0.0;
        for (const auto& [base, w] : grid.resolution((int)id))
          via += w * q(nodes[(std::size_t)base].pos);
        hanging_ok = hanging_ok && std::abs(via - q(nodes[id].pos)) < 1e-13;
      }
    }
    verdict("hanging_node_trilinear_reproduction", hanging_ok);

    // patch test on this grid
    SurfaceProblem patch = problem;
    patch.reaction = [](const Vec3&) { return 1.0; };
    patch.rhs = [](const Vec3&) { return 1.0; };
    patch.exact_solution = nullptr;
    patch.velocity = nullptr;
    patch.div_gamma_w = nullptr;
    patch.zero_mean_mode = false;
    RunConfig pcfg = cfg;
    pcfg.assembly.variant = Variant::surface_gradient;
    run_detail::SolvedState s = run_detail::solve_on_grid(patch, grid, pcfg);
    double worst = 0.0;
    for (double v : s.u) worst = std::max(worst, std::abs(v - 1.0));
    verdict("patch_test_exactness", worst < 1e-9);
    verdict("solver_residual", s.report.relative_residual <= cfg.solver.tol);

    man.finish(failures == 0 ? "ok" : "failed");
    return failures == 0 ? 0 : 1;
  } catch (const Error& e) {
    man.finish("error", e.what());
    *io.log << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace tracefem
