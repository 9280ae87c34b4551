// Trace finite element core: trilinear basis data, the active dof map with
// hanging-node elimination, and sparse assembly of the three variants
// (surface gradient, full gradient, SUPG-stabilized), all in conservative
// advection form.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <unordered_map>
#include <vector>

#include "tracefem/octree.hpp"
#include "tracefem/parallel.hpp"
#include "tracefem/problem.hpp"
#include "tracefem/quadrature.hpp"
#include "tracefem/sparse.hpp"
#include "tracefem/surface.hpp"

namespace tracefem {

struct TrilinearBasis {
  std::array<double, 8> value;
  std::array<Vec3, 8> gradient;
  std::array<Mat3, 8> hessian;  // only mixed second derivatives are nonzero
};

inline TrilinearBasis trilinear_basis(const OctreeGrid& grid, const CellKey& cell,
                                      const Vec3& x) {
  Vec3 lo, hi;
  grid.cell_bounds(cell, lo, hi);
  double h = grid.cell_size(cell);
  double slack = 1e-12 * h;
  if (x.x < lo.x - slack || x.y < lo.y - slack || x.z < lo.z - slack ||
      x.x > hi.x + slack || x.y > hi.y + slack || x.z > hi.z + slack)
    throw Error(ErrorCode::PointOutsideCell, "basis evaluation outside the cell");

  double xi[3] = {(x.x - lo.x) / h, (x.y - lo.y) / h, (x.z - lo.z) / h};
  TrilinearBasis out;
  double inv_h = 1.0 / h;
  for (int c = 0; c < 8; ++c) {
    double t[3], s[3];  // factor and its derivative sign per axis
    for (int a = 0; a < 3; ++a) {
      bool high = (c >> a) & 1;
      t[a] = high ? xi[a] : 1.0 - xi[a];
      s[a] = high ? 1.0 : -1.0;
    }
    out.value[(std::size_t)c] = t[0] * t[1] * t[2];
    out.gradient[(std::size_t)c] = Vec3{s[0] * t[1] * t[2], t[0] * s[1] * t[2],
                                        t[0] * t[1] * s[2]} * inv_h;
    Mat3 hm = Mat3::zero();
    hm(0, 1) = hm(1, 0) = s[0] * s[1] * t[2] * inv_h * inv_h;
    hm(0, 2) = hm(2, 0) = s[0] * t[1] * s[2] * inv_h * inv_h;
    hm(1, 2) = hm(2, 1) = t[0] * s[1] * s[2] * inv_h * inv_h;
    out.hessian[(std::size_t)c] = hm;
  }
  return out;
}

// Active trace degrees of freedom: the unconstrained nodes reached by
// resolving the corners of every cell of omega_h. Hanging corners fold into
// their masters, so the dof count equals the dimension of the linear system.
struct DofMap {
  std::vector<std::int32_t> active_nodes;       // dof -> node id, ascending
  std::vector<std::int32_t> dof_of_node;        // node id -> dof or -1
  std::size_t size() const { return active_nodes.size(); }
};

inline DofMap build_dof_map(const OctreeGrid& grid, const SurfaceTriangulation& tri) {
  DofMap map;
  map.dof_of_node.assign(grid.nodes().size(), -1);
  std::vector<char> active(grid.nodes().size(), 0);
  for (const CellKey& c : tri.band_cells)
    for (int id : grid.cell_node_ids(c))
      for (const auto& [base, w] : grid.resolution(id)) active[(std::size_t)base] = 1;
  for (std::size_t id = 0; id < active.size(); ++id)
    if (active[id]) {
      map.dof_of_node[id] = (std::int32_t)map.active_nodes.size();
      map.active_nodes.push_back((std::int32_t)id);
    }
  return map;
}

enum class Variant { surface_gradient, full_gradient, supg };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::surface_gradient: return "surface_gradient";
    case Variant::full_gradient: return "full_gradient";
    case Variant::supg: return "supg";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "surface_gradient") return Variant::surface_gradient;
  if (s == "full_gradient") return Variant::full_gradient;
  if (s == "supg") return Variant::supg;
  throw Error(ErrorCode::ConfigError, "unknown variant '" + s + "'");
}

// SUPG stabilization parameter per triangle.
inline double supg_delta(double h_cell, double w_inf, double eps, double c_max,
                         double delta0, double delta1) {
  double peclet = h_cell * w_inf / (2.0 * eps);
  double dt = (peclet > 1.0) ? delta0 * h_cell / w_inf : delta1 * h_cell * h_cell / eps;
  if (c_max > 0.0) dt = std::min(dt, 1.0 / c_max);
  return dt;
}

struct AssemblyOptions {
  Variant variant = Variant::surface_gradient;
  double supg_delta0 = 0.5;
  double supg_delta1 = 1.0 / 12.0;
  int quad_degree = 4;
  int threads = 1;
};

// div_{Gamma_h} w = tr(P grad w); analytic when the problem provides it,
// otherwise a finite-difference Jacobian of the extended velocity.
inline double surface_divergence_of_velocity(const SurfaceProblem& problem, const Vec3& x,
                                             const Mat3& proj) {
  if (problem.div_gamma_w) return problem.div_gamma_w(x);
  double step = 1e-6 * std::max(1.0, norm(x));
  Mat3 jac;
  for (int a = 0; a < 3; ++a) {
    Vec3 e{};
    e[a] = step;
    Vec3 dw = (problem.velocity(x + e) - problem.velocity(x - e)) / (2.0 * step);
    for (int i = 0; i < 3; ++i) jac(i, a) = dw[i];
  }
  return (proj * jac).trace();
}

struct TraceSystem {
  CsrMatrix matrix;
  std::vector<double> rhs;
  Variant variant = Variant::surface_gradient;
  std::size_t dof_count = 0;  // without the zero-mean multiplier
  bool symmetric = false;
  bool pure_laplace_beltrami = false;
  bool zero_mean_augmented = false;
  std::vector<double> mean_row;  // m_i = int psi_i ds, filled by zero_mean_close
  std::vector<Vec3> dof_positions;  // node coordinates, for geometric orderings
  std::size_t triangle_count = 0;
  std::size_t band_cell_count = 0;
};

inline TraceSystem assemble(const SurfaceProblem& problem, const OctreeGrid& grid,
                            const SurfaceTriangulation& tri, const DofMap& dofs,
                            const AssemblyOptions& opts = {}) {
  if (tri.triangles.empty())
    throw Error(ErrorCode::EmptyTriangulation, "no surface triangles to assemble on");

  const QuadratureRule rule = triangle_rule(opts.quad_degree);
  const bool has_w = problem.has_velocity();
  const bool supg = opts.variant == Variant::supg;
  const bool full_grad = opts.variant == Variant::full_gradient;
  const double eps = problem.eps;

  struct CellBlock {
    std::vector<Triplet> trip;
    std::vector<std::pair<std::int32_t, double>> rhs;
    double c_abs_max = 0.0;
  };
  std::vector<CellBlock> blocks(tri.band_cells.size());

  parallel_for(tri.band_cells.size(), opts.threads, [&](std::size_t bi) {
    const CellKey cell = tri.band_cells[bi];
    const double h_cell = grid.cell_size(cell);
    auto [tb, te] = tri.cell_tris[bi];
    CellBlock& blk = blocks[bi];

    double local_mat[8][8] = {};
    double local_rhs[8] = {};

    for (std::int32_t t = tb; t < te; ++t) {
      const SurfaceTriangle& T = tri.triangles[(std::size_t)t];
      if (T.area <= 0.0) continue;
      const Vec3 p0 = tri.vertices[(std::size_t)T.v[0]];
      const Vec3 p1 = tri.vertices[(std::size_t)T.v[1]];
      const Vec3 p2 = tri.vertices[(std::size_t)T.v[2]];
      const Mat3 proj = tangential_projector(T.normal);

      double delta_t = 0.0;
      if (supg && has_w) {
        double w_inf = 0.0, c_max = 0.0;
        for (const auto& qp : rule.points) {
          Vec3 x = barycentric_point(p0, p1, p2, qp);
          w_inf = std::max(w_inf, norm(problem.velocity(x)));
          c_max = std::max(c_max, problem.reaction(x));
        }
        delta_t = supg_delta(h_cell, w_inf, eps, c_max, opts.supg_delta0, opts.supg_delta1);
      }

      for (const auto& qp : rule.points) {
        const Vec3 x = barycentric_point(p0, p1, p2, qp);
        const double dw = qp.w * T.area;
        const TrilinearBasis basis = trilinear_basis(grid, cell, x);

        const double c_val = problem.reaction(x);
        const double f_val = problem.rhs(x);
        blk.c_abs_max = std::max(blk.c_abs_max, std::abs(c_val));
        Vec3 w_val{};
        double divw = 0.0;
        if (has_w) {
          w_val = problem.velocity(x);
          if (supg && delta_t > 0.0) divw = surface_divergence_of_velocity(problem, x, proj);
        }

        Vec3 tgrad[8];
        double wdots[8];
        for (int a = 0; a < 8; ++a) {
          tgrad[a] = proj * basis.gradient[(std::size_t)a];
          wdots[a] = has_w ? dot(w_val, tgrad[a]) : 0.0;
        }

        for (int i = 0; i < 8; ++i) {
          for (int j = 0; j < 8; ++j) {
            double diffusion = full_grad
                                   ? dot(basis.gradient[(std::size_t)j], basis.gradient[(std::size_t)i])
                                   : dot(tgrad[j], tgrad[i]);
            double v = eps * diffusion +
                       c_val * basis.value[(std::size_t)j] * basis.value[(std::size_t)i];
            if (has_w) v -= wdots[i] * basis.value[(std::size_t)j];
            if (supg && delta_t > 0.0) {
              double lap_j = 0.0;
              const Mat3& hj = basis.hessian[(std::size_t)j];
              for (int r = 0; r < 3; ++r)
                for (int cc = 0; cc < 3; ++cc) lap_j += hj(r, cc) * proj(cc, r);
              double residual_j = -eps * lap_j + wdots[j] +
                                  (c_val + divw) * basis.value[(std::size_t)j];
              v += delta_t * residual_j * wdots[i];
            }
            local_mat[i][j] += dw * v;
          }
          double rv = f_val * basis.value[(std::size_t)i];
          if (supg && delta_t > 0.0) rv += delta_t * f_val * wdots[i];
          local_rhs[i] += dw * rv;
        }
      }
    }

    // constraint elimination: fold hanging corners into their masters
    auto ids = grid.cell_node_ids(cell);
    for (int i = 0; i < 8; ++i) {
      const auto& ri = grid.resolution(ids[(std::size_t)i]);
      if (local_rhs[i] != 0.0)
        for (const auto& [ni, wi] : ri) blk.rhs.emplace_back(ni, wi * local_rhs[i]);
      for (int j = 0; j < 8; ++j) {
        double v = local_mat[i][j];
        if (v == 0.0) continue;
        const auto& rj = grid.resolution(ids[(std::size_t)j]);
        for (const auto& [ni, wi] : ri)
          for (const auto& [nj, wj] : rj) blk.trip.push_back({ni, nj, wi * wj * v});
      }
    }
  });

  // deterministic merge in cell order, then node ids -> dof ids
  TraceSystem sys;
  sys.variant = opts.variant;
  sys.dof_count = dofs.size();
  sys.triangle_count = tri.triangles.size();
  sys.band_cell_count = tri.band_cells.size();
  std::vector<Triplet> trip;
  sys.rhs.assign(dofs.size(), 0.0);
  double c_abs_max = 0.0;
  std::size_t total = 0;
  for (const auto& blk : blocks) total += blk.trip.size();
  trip.reserve(total);
  for (const auto& blk : blocks) {
    c_abs_max = std::max(c_abs_max, blk.c_abs_max);
    for (const auto& t : blk.trip)
      trip.push_back({dofs.dof_of_node[(std::size_t)t.r], dofs.dof_of_node[(std::size_t)t.c], t.v});
    for (const auto& [node, v] : blk.rhs) sys.rhs[(std::size_t)dofs.dof_of_node[(std::size_t)node]] += v;
  }
  sys.dof_positions.reserve(dofs.size());
  for (std::int32_t node : dofs.active_nodes)
    sys.dof_positions.push_back(grid.nodes()[(std::size_t)node].pos);
  sys.matrix = CsrMatrix::from_triplets((std::int32_t)dofs.size(), trip);
  for (double v : sys.matrix.val)
    if (!std::isfinite(v))
      throw Error(ErrorCode::NonFiniteEntry, "non-finite assembly contribution");
  for (double v : sys.rhs)
    if (!std::isfinite(v))
      throw Error(ErrorCode::NonFiniteEntry, "non-finite load contribution");
  sys.symmetric = !has_w && !supg;
  sys.pure_laplace_beltrami = !has_w && c_abs_max == 0.0;
  return sys;
}

// Augments a pure Laplace-Beltrami system with the mean-value multiplier row
// m_i = int psi_i ds and shifts the load to zero mean over Gamma_h.
inline void zero_mean_close(TraceSystem& sys, const OctreeGrid& grid,
                            const SurfaceTriangulation& tri, const DofMap& dofs,
                            int quad_degree = 4) {
  if (!sys.pure_laplace_beltrami)
    throw Error(ErrorCode::NotApplicable,
                "zero-mean closure applies to the pure Laplace-Beltrami case only");
  const QuadratureRule rule = triangle_rule(quad_degree);
  std::vector<double> m(dofs.size(), 0.0);
  for (std::size_t bi = 0; bi < tri.band_cells.size(); ++bi) {
    const CellKey cell = tri.band_cells[bi];
    auto ids = grid.cell_node_ids(cell);
    auto [tb, te] = tri.cell_tris[bi];
    for (std::int32_t t = tb; t < te; ++t) {
      const SurfaceTriangle& T = tri.triangles[(std::size_t)t];
      const Vec3 p0 = tri.vertices[(std::size_t)T.v[0]];
      const Vec3 p1 = tri.vertices[(std::size_t)T.v[1]];
      const Vec3 p2 = tri.vertices[(std::size_t)T.v[2]];
      for (const auto& qp : rule.points) {
        Vec3 x = barycentric_point(p0, p1, p2, qp);
        TrilinearBasis basis = trilinear_basis(grid, cell, x);
        for (int a = 0; a < 8; ++a)
          for (const auto& [node, w] : grid.resolution(ids[(std::size_t)a]))
            m[(std::size_t)dofs.dof_of_node[(std::size_t)node]] +=
                qp.w * T.area * w * basis.value[(std::size_t)a];
      }
    }
  }

  // partition of unity: sum_i b_i = int f, sum_i m_i = area
  double f_int = 0.0, area = 0.0;
  for (std::size_t i = 0; i < dofs.size(); ++i) {
    f_int += sys.rhs[i];
    area += m[i];
  }
  double mean = f_int / area;
  for (std::size_t i = 0; i < dofs.size(); ++i) sys.rhs[i] -= mean * m[i];

  std::int32_t n = (std::int32_t)dofs.size();
  std::vector<Triplet> trip;
  trip.reserve(sys.matrix.nnz() + 2 * dofs.size());
  for (std::int32_t r = 0; r < sys.matrix.n; ++r)
    for (std::int32_t k = sys.matrix.row_ptr[(std::size_t)r]; k < sys.matrix.row_ptr[(std::size_t)r + 1]; ++k)
      trip.push_back({r, sys.matrix.col[(std::size_t)k], sys.matrix.val[(std::size_t)k]});
  for (std::int32_t i = 0; i < n; ++i) {
    trip.push_back({i, n, m[(std::size_t)i]});
    trip.push_back({n, i, m[(std::size_t)i]});
  }
  sys.matrix = CsrMatrix::from_triplets(n + 1, trip);
  sys.rhs.push_back(0.0);
  sys.mean_row = std::move(m);
  sys.zero_mean_augmented = true;
}

// Discrete solution expanded to all grid nodes (hanging nodes receive their
// constrained values; inactive nodes are zero).
inline std::vector<double> expand_solution(const OctreeGrid& grid, const DofMap& dofs,
                                           const std::vector<double>& u) {
  std::vector<double> nodal(grid.nodes().size(), 0.0);
  for (std::size_t id = 0; id < nodal.size(); ++id) {
    double s = 0.0;
    for (const auto& [base, w] : grid.resolution((int)id)) {
      std::int32_t dof = dofs.dof_of_node[(std::size_t)base];
      if (dof >= 0) s += w * u[(std::size_t)dof];
    }
    nodal[id] = s;
  }
  return nodal;
}

// Pointwise evaluation of a nodal function on a parent cell.
struct FemFunction {
  const OctreeGrid* grid;
  const std::vector<double>* nodal;

  double value(const CellKey& cell, const TrilinearBasis& basis) const {
    auto ids = grid->cell_node_ids(cell);
    double s = 0.0;
    for (int a = 0; a < 8; ++a) s += (*nodal)[(std::size_t)ids[(std::size_t)a]] * basis.value[(std::size_t)a];
    return s;
  }
  Vec3 gradient(const CellKey& cell, const TrilinearBasis& basis) const {
    auto ids = grid->cell_node_ids(cell);
    Vec3 g{};
    for (int a = 0; a < 8; ++a) g += (*nodal)[(std::size_t)ids[(std::size_t)a]] * basis.gradient[(std::size_t)a];
    return g;
  }
  Mat3 hessian(const CellKey& cell, const TrilinearBasis& basis) const {
    auto ids = grid->cell_node_ids(cell);
    Mat3 h = Mat3::zero();
    for (int a = 0; a < 8; ++a) h = h + basis.hessian[(std::size_t)a] * (*nodal)[(std::size_t)ids[(std::size_t)a]];
    return h;
  }
};

}  // namespace tracefem
