// Shared end-to-end helper for tests: grid -> surface -> dofs -> system.
#pragma once

#include "tracefem/fem.hpp"
#include "tracefem/solver.hpp"

namespace pipeline {

using namespace tracefem;

struct Solved {
  OctreeGrid grid;
  TrilinearField field;
  SurfaceTriangulation tri;
  DofMap dofs;
  TraceSystem sys;
  std::vector<double> u;       // dof values
  std::vector<double> nodal;   // expanded to all nodes
  LinearSolveReport report;
};

inline Solved solve_problem(const SurfaceProblem& p, OctreeGrid grid,
                            AssemblyOptions opts = {}, SolverOptions sopts = {}) {
  Solved s{std::move(grid), {}, {}, {}, {}, {}, {}, {}};
  s.field = interpolate_levelset(s.grid, *p.level_set);
  s.tri = extract_surface(s.grid, s.field, opts.threads);
  s.dofs = build_dof_map(s.grid, s.tri);
  s.sys = assemble(p, s.grid, s.tri, s.dofs, opts);
  if (p.zero_mean_mode) zero_mean_close(s.sys, s.grid, s.tri, s.dofs, opts.quad_degree);
  s.u = solve_trace_system(s.sys, sopts, s.report);
  s.nodal = expand_solution(s.grid, s.dofs, s.u);
  return s;
}

// grid refined toward the surface band `rounds` times from h0; the band is
// dilated by one ring so hanging constraints stay off the cut cells
inline OctreeGrid band_refined_grid(const SurfaceProblem& p, double h0, int rounds,
                                    int level_cap = 12, int rings = 1) {
  OctreeGrid g = OctreeGrid::build_uniform(-p.box_half, p.box_half, h0, level_cap);
  for (int r = 0; r < rounds; ++r)
    g.refine(g.dilate_cells(surface_band(g, *p.level_set), rings));
  return g;
}

}  // namespace pipeline
