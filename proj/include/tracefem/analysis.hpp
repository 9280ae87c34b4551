// Error norms on Gamma_h against normal-extended exact solutions,
// experimental orders of convergence, and the layer-fitted (Shishkin) grid
// construction.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "tracefem/fem.hpp"
#include "tracefem/octree.hpp"
#include "tracefem/problem.hpp"
#include "tracefem/surface.hpp"

namespace tracefem {

struct ErrorReport {
  std::size_t dofs = 0;
  double h_band = 0.0;  // max cell size over omega_h
  double l2 = 0.0;
  double h1_semi = 0.0;
  double h1 = 0.0;
  double linf = 0.0;  // max over quadrature points
  double area = 0.0;
  std::size_t triangles = 0;
  std::size_t surface_vertices = 0;
  // adaptive-loop extras
  double sum_eta2 = std::numeric_limits<double>::quiet_NaN();
  std::size_t marked = 0;
  int step = -1;
};

// grad_{Gamma_h} u^e = P_h (I - d H) grad_Gamma u(p(x)); with an analytic
// surface gradient this is exact, otherwise central differences of the
// normal-constant extension are used.
inline Vec3 extended_surface_gradient(const SurfaceProblem& problem, const Vec3& x,
                                      const Mat3& proj) {
  if (problem.exact_surface_gradient) {
    SurfaceDiffData d = normal_hessian(*problem.level_set, x);
    double dist = d.signed_value;
    if (!problem.level_set->is_signed_distance())
      dist /= std::max(1e-12, norm(problem.level_set->gradient(x)));
    Vec3 g = problem.exact_surface_gradient(x);
    return proj * (g - dist * (d.hessian_of_distance * g));
  }
  const double step = 1e-6;
  Vec3 g{};
  for (int a = 0; a < 3; ++a) {
    Vec3 e{};
    e[a] = step;
    g[a] = (problem.exact_solution(x + e) - problem.exact_solution(x - e)) / (2.0 * step);
  }
  return proj * g;
}

// L2 / H1 / Linf(quadrature points) errors of u_h against u^e = u(p(x)),
// restricted to triangles whose barycenter satisfies `region` (all triangles
// when empty).
inline ErrorReport error_norms(const SurfaceProblem& problem, const OctreeGrid& grid,
                               const SurfaceTriangulation& tri,
                               const std::vector<double>& nodal_solution,
                               std::size_t dof_count, int quad_degree = 4,
                               const std::function<bool(const Vec3&)>& region = nullptr) {
  if (!problem.has_exact_solution())
    throw Error(ErrorCode::MissingExactSolution,
                "error norms need the exact solution of the benchmark problem");
  const QuadratureRule rule = triangle_rule(quad_degree);
  FemFunction uh{&grid, &nodal_solution};

  ErrorReport rep;
  rep.dofs = dof_count;
  rep.surface_vertices = tri.vertices.size();
  double l2 = 0.0, h1s = 0.0, linf = 0.0, area = 0.0;
  std::size_t used = 0;
  for (std::size_t bi = 0; bi < tri.band_cells.size(); ++bi) {
    const CellKey cell = tri.band_cells[bi];
    auto [tb, te] = tri.cell_tris[bi];
    bool any = false;
    for (std::int32_t t = tb; t < te; ++t) {
      const SurfaceTriangle& T = tri.triangles[(std::size_t)t];
      const Vec3 p0 = tri.vertices[(std::size_t)T.v[0]];
      const Vec3 p1 = tri.vertices[(std::size_t)T.v[1]];
      const Vec3 p2 = tri.vertices[(std::size_t)T.v[2]];
      if (region && !region((p0 + p1 + p2) / 3.0)) continue;
      any = true;
      ++used;
      area += T.area;
      const Mat3 proj = tangential_projector(T.normal);
      for (const auto& qp : rule.points) {
        Vec3 x = barycentric_point(p0, p1, p2, qp);
        double w = qp.w * T.area;
        TrilinearBasis basis = trilinear_basis(grid, cell, x);
        double e = problem.exact_solution(x) - uh.value(cell, basis);
        Vec3 ge = extended_surface_gradient(problem, x, proj) -
                  proj * uh.gradient(cell, basis);
        l2 += w * e * e;
        h1s += w * norm2(ge);
        linf = std::max(linf, std::abs(e));
      }
    }
    if (any) rep.h_band = std::max(rep.h_band, grid.cell_size(cell));
  }
  if (region && used == 0)
    throw Error(ErrorCode::EmptyRegion, "no triangles inside the requested region");
  rep.l2 = std::sqrt(l2);
  rep.h1_semi = std::sqrt(h1s);
  rep.h1 = std::sqrt(l2 + h1s);
  rep.linf = linf;
  rep.area = area;
  rep.triangles = used;
  return rep;
}

inline ErrorReport restricted_error(const SurfaceProblem& problem, const OctreeGrid& grid,
                                    const SurfaceTriangulation& tri,
                                    const std::vector<double>& nodal_solution,
                                    std::size_t dof_count,
                                    const std::function<bool(const Vec3&)>& region,
                                    int quad_degree = 4) {
  return error_norms(problem, grid, tri, nodal_solution, dof_count, quad_degree, region);
}

// Experimental orders of convergence. Uniform sequences use the mesh-size
// ratio; adaptive sequences use dof-based slopes, reported both as the
// log-log slope d log e / d log N and as the h-equivalent order -2*slope.
struct EocRow {
  ErrorReport report;
  double rate_l2 = std::numeric_limits<double>::quiet_NaN();
  double rate_h1 = std::numeric_limits<double>::quiet_NaN();
  double rate_linf = std::numeric_limits<double>::quiet_NaN();
  double slope_l2 = std::numeric_limits<double>::quiet_NaN();  // vs dofs (adaptive)
  double slope_h1 = std::numeric_limits<double>::quiet_NaN();
  double slope_linf = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<EocRow> eoc_rows(const std::vector<ErrorReport>& reports,
                                    bool adaptive = false) {
  std::vector<EocRow> rows;
  rows.reserve(reports.size());
  for (std::size_t i = 0; i < reports.size(); ++i) {
    EocRow row;
    row.report = reports[i];
    if (i > 0) {
      const ErrorReport& prev = reports[i - 1];
      const ErrorReport& cur = reports[i];
      if (adaptive) {
        double dn = std::log((double)cur.dofs / (double)prev.dofs);
        row.slope_l2 = -std::log(prev.l2 / cur.l2) / dn;
        row.slope_h1 = -std::log(prev.h1 / cur.h1) / dn;
        row.slope_linf = -std::log(prev.linf / cur.linf) / dn;
        row.rate_l2 = -2.0 * row.slope_l2;
        row.rate_h1 = -2.0 * row.slope_h1;
        row.rate_linf = -2.0 * row.slope_linf;
      } else {
        double dh = std::log(prev.h_band / cur.h_band);
        row.rate_l2 = std::log(prev.l2 / cur.l2) / dh;
        row.rate_h1 = std::log(prev.h1 / cur.h1) / dh;
        row.rate_linf = std::log(prev.linf / cur.linf) / dh;
      }
    }
    rows.push_back(row);
  }
  return rows;
}

// Human-readable table in the dofs | norm | rate layout.
inline std::string eoc_table(const std::vector<ErrorReport>& reports, bool adaptive = false) {
  auto rows = eoc_rows(reports, adaptive);
  std::ostringstream os;
  os << "#d.o.f.      L2-norm    rate    H1-norm    rate    Linf-norm  rate\n";
  for (const auto& r : rows) {
    char buf[160];
    auto fmt = [](double v, char* out) {
      if (std::isnan(v))
        std::snprintf(out, 8, "   -  ");
      else
        std::snprintf(out, 8, "%6.2f", v);
    };
    char r2[8], rh[8], ri[8];
    fmt(r.rate_l2, r2);
    fmt(r.rate_h1, rh);
    fmt(r.rate_linf, ri);
    std::snprintf(buf, sizeof buf, "%8zu   %9.3e  %s  %9.3e  %s  %9.3e  %s\n",
                  r.report.dofs, r.report.l2, r2, r.report.h1, rh, r.report.linf, ri);
    os << buf;
  }
  return os.str();
}

// Layer-fitted grid: cells intersecting the open strip |x3| < band_halfwidth
// are refined to h_min, the rest stays at h_max up to the 2:1 transition.
// With a level set only strip cells near the zero set are refined, which
// leaves the active trace dofs unchanged while keeping the bulk cell count
// bounded; the fine region is padded by one ring of neighbours so hanging
// constraints stay off the strip's cut cells.
inline OctreeGrid build_shishkin_grid(double lo, double hi, double band_halfwidth,
                                      double h_min, double h_max,
                                      const LevelSet* ls = nullptr, int level_cap = 12) {
  if (!(h_min > 0.0) || !(h_max >= h_min))
    throw Error(ErrorCode::NonDivisibleResolution, "invalid shishkin resolutions");
  double ratio = h_max / h_min;
  int k = (int)std::llround(std::log2(ratio));
  if (std::abs(ratio - std::ldexp(1.0, k)) > 1e-12 * ratio)
    throw Error(ErrorCode::NonDivisibleResolution,
                "h_max / h_min must be a power of two");
  OctreeGrid g = OctreeGrid::build_uniform(lo, hi, h_max, level_cap);
  for (;;) {
    std::vector<CellKey> marks;
    for (const CellKey& c : g.leaves()) {
      if (g.cell_size(c) <= h_min * (1.0 + 1e-12)) continue;
      Vec3 blo, bhi;
      g.cell_bounds(c, blo, bhi);
      // open slab: rows only touching the strip boundary stay coarse
      if (blo.z >= band_halfwidth - 1e-15 || bhi.z <= -band_halfwidth + 1e-15) continue;
      if (ls) {
        // only cells the surface passes through
        bool neg = false, pos = false;
        for (int v = 0; v < 8; ++v) {
          Vec3 p{(v & 1) ? bhi.x : blo.x, (v & 2) ? bhi.y : blo.y, (v & 4) ? bhi.z : blo.z};
          (ls->value(p) < 0.0 ? neg : pos) = true;
        }
        if (!(neg && pos)) continue;
      }
      marks.push_back(c);
    }
    if (marks.empty()) break;
    g.refine(marks);
  }
  return g;
}

}  // namespace tracefem
