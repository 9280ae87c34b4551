// Piecewise trilinear nodal field on an octree grid. Hanging nodes carry the
// constrained combination of their master values, which makes the field
// globally continuous (coarse and fine restrictions of a face agree exactly).
#pragma once

#include <cmath>
#include <vector>

#include "tracefem/levelset.hpp"
#include "tracefem/octree.hpp"

namespace tracefem {

struct TrilinearField {
  const OctreeGrid* grid = nullptr;
  std::vector<double> nodal;

  double max_abs() const {
    double m = 0.0;
    for (double v : nodal) m = std::max(m, std::abs(v));
    return m;
  }

  double eval_in_cell(const CellKey& c, const Vec3& p) const {
    Vec3 blo, bhi;
    grid->cell_bounds(c, blo, bhi);
    double h = grid->cell_size(c);
    double u = (p.x - blo.x) / h, v = (p.y - blo.y) / h, w = (p.z - blo.z) / h;
    auto ids = grid->cell_node_ids(c);
    double s = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
      double bu = (corner & 1) ? u : 1.0 - u;
      double bv = (corner & 2) ? v : 1.0 - v;
      double bw = (corner & 4) ? w : 1.0 - w;
      s += nodal[(std::size_t)ids[(std::size_t)corner]] * bu * bv * bw;
    }
    return s;
  }

  Vec3 gradient_in_cell(const CellKey& c, const Vec3& p) const {
    Vec3 blo, bhi;
    grid->cell_bounds(c, blo, bhi);
    double h = grid->cell_size(c);
    double u = (p.x - blo.x) / h, v = (p.y - blo.y) / h, w = (p.z - blo.z) / h;
    auto ids = grid->cell_node_ids(c);
    Vec3 g{};
    for (int corner = 0; corner < 8; ++corner) {
      double su = (corner & 1) ? 1.0 : -1.0;
      double sv = (corner & 2) ? 1.0 : -1.0;
      double sw = (corner & 4) ? 1.0 : -1.0;
      double bu = (corner & 1) ? u : 1.0 - u;
      double bv = (corner & 2) ? v : 1.0 - v;
      double bw = (corner & 4) ? w : 1.0 - w;
      double val = nodal[(std::size_t)ids[(std::size_t)corner]];
      g.x += val * su * bv * bw;
      g.y += val * bu * sv * bw;
      g.z += val * bu * bv * sw;
    }
    return g / h;
  }

  double eval(const Vec3& p) const {
    int li = grid->find_leaf_index(p);
    if (li < 0) throw Error(ErrorCode::PointOutsideCell, "point outside the grid domain");
    return eval_in_cell(grid->leaves()[(std::size_t)li], p);
  }
};

// Nodal interpolant of the level set: exact values at unconstrained nodes,
// constrained combinations at hanging nodes (so the field lies in V_h).
inline TrilinearField interpolate_levelset(const OctreeGrid& grid, const LevelSet& ls) {
  TrilinearField f;
  f.grid = &grid;
  const auto& nodes = grid.nodes();
  std::vector<double> raw(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) raw[i] = ls.value(nodes[i].pos);
  f.nodal.resize(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].constraint < 0) {
      f.nodal[i] = raw[i];
    } else {
      double s = 0.0;
      for (const auto& [base, w] : grid.resolution((int)i)) s += w * raw[(std::size_t)base];
      f.nodal[i] = s;
    }
  }
  return f;
}

// Narrow band: leaves whose trilinear interpolant changes sign over the
// corners or vanishes at one.
inline std::vector<CellKey> surface_band(const OctreeGrid& grid,
                                         const TrilinearField& field) {
  std::vector<CellKey> band;
  for (const CellKey& c : grid.leaves()) {
    auto ids = grid.cell_node_ids(c);
    double mn = 1e300, mx = -1e300;
    for (int v = 0; v < 8; ++v) {
      double val = field.nodal[(std::size_t)ids[(std::size_t)v]];
      mn = std::min(mn, val);
      mx = std::max(mx, val);
    }
    if (mn <= 0.0 && mx >= 0.0) band.push_back(c);
  }
  if (band.empty())
    throw Error(ErrorCode::EmptyBand, "the zero level set does not intersect the domain");
  return band;
}

inline std::vector<CellKey> surface_band(const OctreeGrid& grid, const LevelSet& ls) {
  TrilinearField f = interpolate_levelset(grid, ls);
  return surface_band(grid, f);
}

}  // namespace tracefem
