// A posteriori error indicators (residual, edge-jump, geometric parts),
// Peclet-dependent weighting, maximum marking, and the adaptive
// solve-estimate-mark-refine loop.
#pragma once

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <vector>

#include "tracefem/analysis.hpp"
#include "tracefem/fem.hpp"
#include "tracefem/solver.hpp"
#include "tracefem/surface.hpp"

namespace tracefem {

struct CellIndicator {
  CellKey cell;
  double eta_r2 = 0.0;
  double eta_e2 = 0.0;
  double eta_g2 = 0.0;
  double eta = 0.0;
  double alpha_r = 1.0, alpha_e = 1.0, alpha_g = 0.0;
};

struct EstimatorOptions {
  enum class Mode { elliptic, advection };
  Mode mode = Mode::elliptic;
  double alpha_g = 0.0;            // geometric part weight in elliptic mode (0 or 1)
  bool edge_velocity_term = true;  // the higher-order w.[m] edge term
  int quad_degree = 7;
  int threads = 1;
};

inline EstimatorOptions::Mode estimator_mode_from_string(const std::string& s) {
  if (s == "elliptic") return EstimatorOptions::Mode::elliptic;
  if (s == "advection") return EstimatorOptions::Mode::advection;
  throw Error(ErrorCode::ConfigError, "unknown adapt.mode '" + s + "'");
}

namespace est_detail {

struct TriangleParts {
  double r2 = 0.0;  // eta_R(T)^2
  double e2 = 0.0;  // eta_E(T)^2
  double g2 = 0.0;  // eta_G(T)^2
};

// in-plane outward unit normal of the edge (a,b) of a triangle with unit
// normal n and opposite vertex c
inline Vec3 edge_conormal(const Vec3& a, const Vec3& b, const Vec3& opposite, const Vec3& n) {
  Vec3 m = cross(b - a, n);
  double mn = norm(m);
  if (mn < 1e-300) return {};
  m = m / mn;
  if (dot(m, opposite - a) > 0.0) m = -m;
  return m;
}

}  // namespace est_detail

// eta_R(T)^2 = h_{S_T}^2 || f + eps Lap_G u_h - (c + div_G w) u_h - w.grad_G u_h ||^2_{L2(T)}
inline double eta_residual(const SurfaceProblem& problem, const OctreeGrid& grid,
                           const SurfaceTriangulation& tri, std::size_t t,
                           const std::vector<double>& nodal, const QuadratureRule& rule) {
  const SurfaceTriangle& T = tri.triangles[t];
  const CellKey cell = T.parent;
  const double h_cell = grid.cell_size(cell);
  const Vec3 p0 = tri.vertices[(std::size_t)T.v[0]];
  const Vec3 p1 = tri.vertices[(std::size_t)T.v[1]];
  const Vec3 p2 = tri.vertices[(std::size_t)T.v[2]];
  const Mat3 proj = tangential_projector(T.normal);
  FemFunction uh{&grid, &nodal};

  double acc = 0.0;
  for (const auto& qp : rule.points) {
    Vec3 x = barycentric_point(p0, p1, p2, qp);
    TrilinearBasis basis = trilinear_basis(grid, cell, x);
    double u = uh.value(cell, basis);
    Vec3 tg = proj * uh.gradient(cell, basis);
    Mat3 hess = uh.hessian(cell, basis);
    double lap = 0.0;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) lap += hess(r, c) * proj(c, r);
    double divw = 0.0, adv = 0.0;
    if (problem.has_velocity()) {
      divw = surface_divergence_of_velocity(problem, x, proj);
      adv = dot(problem.velocity(x), tg);
    }
    double res = problem.rhs(x) + problem.eps * lap - (problem.reaction(x) + divw) * u - adv;
    acc += qp.w * T.area * res * res;
  }
  return std::max(0.0, h_cell * h_cell * acc);
}

// eta_E(T)^2 = sum_e h_{S_T} ( ||[eps grad_G u_h]||^2_{L2(e)} + ||w.[m]||^2_{L2(e)} )
inline double eta_edge(const SurfaceProblem& problem, const OctreeGrid& grid,
                       const SurfaceTriangulation& tri, std::size_t t,
                       const std::vector<double>& nodal,
                       const std::unordered_map<std::uint64_t, std::array<std::int32_t, 2>>& edges,
                       bool velocity_term) {
  const SurfaceTriangle& T = tri.triangles[t];
  const double h_cell = grid.cell_size(T.parent);
  FemFunction uh{&grid, &nodal};
  auto rule = line_gauss3();

  double acc = 0.0;
  for (int e = 0; e < 3; ++e) {
    std::int32_t va = T.v[(std::size_t)e], vb = T.v[(std::size_t)((e + 1) % 3)];
    std::int32_t vc = T.v[(std::size_t)((e + 2) % 3)];
    auto it = edges.find(SurfaceTriangulation::edge_key(va, vb));
    if (it == edges.end() || it->second[1] < 0)
      throw Error(ErrorCode::BoundaryEdge, "estimator met an open surface edge");
    std::int32_t other = (it->second[0] == (std::int32_t)t) ? it->second[1] : it->second[0];
    const SurfaceTriangle& S = tri.triangles[(std::size_t)other];
    std::int32_t vd = S.v[0] + S.v[1] + S.v[2] - va - vb;  // opposite vertex of S

    const Vec3 a = tri.vertices[(std::size_t)va], b = tri.vertices[(std::size_t)vb];
    const Vec3 m_t = est_detail::edge_conormal(a, b, tri.vertices[(std::size_t)vc], T.normal);
    const Vec3 m_s = est_detail::edge_conormal(a, b, tri.vertices[(std::size_t)vd], S.normal);
    const Vec3 jump_m = m_t + m_s;
    const Mat3 proj_t = tangential_projector(T.normal);
    const Mat3 proj_s = tangential_projector(S.normal);

    double len = norm(b - a);
    double gsum = 0.0, wsum = 0.0;
    for (const auto& lp : rule) {
      Vec3 x = a + (b - a) * lp.t;
      Vec3 gt = proj_t * uh.gradient(T.parent, trilinear_basis(grid, T.parent, x));
      Vec3 gs = proj_s * uh.gradient(S.parent, trilinear_basis(grid, S.parent, x));
      gsum += lp.w * norm2(problem.eps * (gt - gs));
      if (velocity_term && problem.has_velocity())
        wsum += lp.w * dot(problem.velocity(x), jump_m) * dot(problem.velocity(x), jump_m);
    }
    acc += h_cell * len * (gsum + wsum);
  }
  return acc;
}

// eta_G(T)^2 = h^4 ||H_h||^2_{Linf(T)} ( ||f||^2_{L2(T)} + ||u_h||^2_{H1(T)} )
inline double eta_geometric(const SurfaceProblem& problem, const OctreeGrid& grid,
                            const SurfaceTriangulation& tri, std::size_t t,
                            const std::vector<double>& nodal, const QuadratureRule& rule) {
  const SurfaceTriangle& T = tri.triangles[t];
  const CellKey cell = T.parent;
  const double h_cell = grid.cell_size(cell);
  const Vec3 p0 = tri.vertices[(std::size_t)T.v[0]];
  const Vec3 p1 = tri.vertices[(std::size_t)T.v[1]];
  const Vec3 p2 = tri.vertices[(std::size_t)T.v[2]];
  const Mat3 proj = tangential_projector(T.normal);
  FemFunction uh{&grid, &nodal};

  // curvature reconstruction at the barycenter; Frobenius bounds the spectral norm
  SurfaceDiffData dd = normal_hessian(*problem.level_set, (p0 + p1 + p2) / 3.0);
  double curv2 = dd.hessian_of_distance.frobenius();
  curv2 *= curv2;

  double f2 = 0.0, uh1 = 0.0;
  for (const auto& qp : rule.points) {
    Vec3 x = barycentric_point(p0, p1, p2, qp);
    TrilinearBasis basis = trilinear_basis(grid, cell, x);
    double f = problem.rhs(x);
    double u = uh.value(cell, basis);
    Vec3 tg = proj * uh.gradient(cell, basis);
    f2 += qp.w * T.area * f * f;
    uh1 += qp.w * T.area * (u * u + norm2(tg));
  }
  double h4 = h_cell * h_cell * h_cell * h_cell;
  return h4 * curv2 * (f2 + uh1);
}

// Per-cell indicators: each cell of omega_h sums its triangles' parts and
// applies the mode weights.
inline std::vector<CellIndicator> estimate(const SurfaceProblem& problem,
                                           const OctreeGrid& grid,
                                           const SurfaceTriangulation& tri,
                                           const std::vector<double>& nodal,
                                           const EstimatorOptions& opts = {}) {
  const QuadratureRule rule = triangle_rule(opts.quad_degree);
  auto edges = tri.build_edge_table();

  std::vector<est_detail::TriangleParts> parts(tri.triangles.size());
  parallel_for(tri.triangles.size(), opts.threads, [&](std::size_t t) {
    parts[t].r2 = eta_residual(problem, grid, tri, t, nodal, rule);
    parts[t].e2 = eta_edge(problem, grid, tri, t, nodal, edges, opts.edge_velocity_term);
    if (opts.mode == EstimatorOptions::Mode::elliptic && opts.alpha_g != 0.0)
      parts[t].g2 = eta_geometric(problem, grid, tri, t, nodal, rule);
  });

  std::vector<CellIndicator> cells(tri.band_cells.size());
  for (std::size_t bi = 0; bi < tri.band_cells.size(); ++bi) {
    CellIndicator& ci = cells[bi];
    ci.cell = tri.band_cells[bi];
    auto [tb, te] = tri.cell_tris[bi];
    for (std::int32_t t = tb; t < te; ++t) {
      ci.eta_r2 += parts[(std::size_t)t].r2;
      ci.eta_e2 += parts[(std::size_t)t].e2;
      ci.eta_g2 += parts[(std::size_t)t].g2;
    }
    double h_cell = grid.cell_size(ci.cell);
    if (opts.mode == EstimatorOptions::Mode::advection) {
      double inv_eps = 1.0 / problem.eps;
      ci.alpha_r = std::min(inv_eps, 1.0 / (h_cell * h_cell));
      ci.alpha_e = std::min(inv_eps, std::sqrt(inv_eps) / h_cell);
      ci.alpha_g = 0.0;
    } else {
      ci.alpha_r = ci.alpha_e = 1.0;
      ci.alpha_g = opts.alpha_g;
    }
    ci.eta = std::sqrt(ci.alpha_r * ci.eta_r2 + ci.alpha_e * ci.eta_e2 + ci.alpha_g * ci.eta_g2);
  }
  return cells;
}

// Maximum marking: every cell with eta >= max eta / 2 (ties included).
inline std::vector<CellKey> mark_maximum(const std::vector<CellIndicator>& indicators) {
  double eta_max = 0.0;
  for (const auto& ci : indicators) eta_max = std::max(eta_max, ci.eta);
  std::vector<CellKey> marked;
  for (const auto& ci : indicators)
    if (ci.eta >= 0.5 * eta_max) marked.push_back(ci.cell);
  return marked;
}

struct AdaptControls {
  int max_steps = 10;
  std::size_t dof_budget = (std::size_t)1 << 60;
  AssemblyOptions assembly;
  SolverOptions solver;
  EstimatorOptions estimator;
};

struct AdaptState {
  OctreeGrid grid;
  TrilinearField field;
  SurfaceTriangulation tri;
  DofMap dofs;
  std::vector<double> u;
  std::vector<double> nodal;
  LinearSolveReport solve_report;
};

struct AdaptResult {
  std::vector<ErrorReport> steps;
  std::vector<std::vector<CellKey>> marked;  // per step (empty on the last)
  AdaptState state;                          // final grid and solution
};

// solve -> estimate -> mark -> refine + balance -> re-extract, until the step
// or dof budget is exhausted.
template <class StepCallback>
AdaptResult adapt_loop(const SurfaceProblem& problem, OctreeGrid grid,
                       const AdaptControls& controls, StepCallback&& on_step) {
  AdaptResult out{{}, {}, {std::move(grid), {}, {}, {}, {}, {}, {}}};
  for (int step = 0;; ++step) {
    AdaptState& st = out.state;
    st.field = interpolate_levelset(st.grid, *problem.level_set);
    st.tri = extract_surface(st.grid, st.field, controls.assembly.threads);
    st.dofs = build_dof_map(st.grid, st.tri);
    TraceSystem sys = assemble(problem, st.grid, st.tri, st.dofs, controls.assembly);
    if (problem.zero_mean_mode)
      zero_mean_close(sys, st.grid, st.tri, st.dofs, controls.assembly.quad_degree);
    st.u = solve_trace_system(sys, controls.solver, st.solve_report);
    st.nodal = expand_solution(st.grid, st.dofs, st.u);

    ErrorReport rep;
    if (problem.has_exact_solution()) {
      rep = error_norms(problem, st.grid, st.tri, st.nodal, st.dofs.size(),
                        controls.assembly.quad_degree);
    } else {
      rep.dofs = st.dofs.size();
      rep.area = st.tri.total_area();
      rep.triangles = st.tri.triangles.size();
      rep.surface_vertices = st.tri.vertices.size();
      for (const CellKey& c : st.tri.band_cells)
        rep.h_band = std::max(rep.h_band, st.grid.cell_size(c));
    }
    rep.step = step;

    std::vector<CellIndicator> indicators =
        estimate(problem, st.grid, st.tri, st.nodal, controls.estimator);
    rep.sum_eta2 = 0.0;
    for (const auto& ci : indicators)
      rep.sum_eta2 += ci.alpha_r * ci.eta_r2 + ci.alpha_e * ci.eta_e2 + ci.alpha_g * ci.eta_g2;

    bool last = step >= controls.max_steps || st.dofs.size() >= controls.dof_budget;
    std::vector<CellKey> marked;
    if (!last) {
      marked = mark_maximum(indicators);
      rep.marked = marked.size();
    }
    out.steps.push_back(rep);
    on_step(rep);
    if (last) break;
    out.marked.push_back(marked);
    std::size_t before = out.state.grid.leaves().size();
    out.state.grid.refine(marked);
    if (out.state.grid.leaves().size() == before) break;  // level cap saturated
  }
  return out;
}

inline AdaptResult adapt_loop(const SurfaceProblem& problem, OctreeGrid grid,
                              const AdaptControls& controls) {
  return adapt_loop(problem, std::move(grid), controls, [](const ErrorReport&) {});
}

}  // namespace tracefem
