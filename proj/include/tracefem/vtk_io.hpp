// Legacy VTK ASCII export (hexahedral grids, surface polydata), MatrixMarket
// matrix dumps, and the CSV report writers. ASCII keeps the artifacts
// byte-stable for golden tests.
#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "tracefem/analysis.hpp"
#include "tracefem/error.hpp"
#include "tracefem/octree.hpp"
#include "tracefem/sparse.hpp"
#include "tracefem/surface.hpp"

namespace tracefem {

namespace io_detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  return os;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace io_detail

// Octree leaves as VTK hexahedra with the refinement level as cell data.
inline void write_grid_vtk(const std::string& path, const OctreeGrid& grid) {
  auto os = io_detail::open_out(path);
  const auto& leaves = grid.leaves();
  os << "# vtk DataFile Version 3.0\noctree grid\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << 8 * leaves.size() << " double\n";
  // VTK hexahedron corner order: bottom face ccw, then top face ccw
  static const int kVtkOrder[8] = {0, 1, 3, 2, 4, 5, 7, 6};
  for (const CellKey& c : leaves) {
    for (int v : kVtkOrder) {
      Vec3 p = grid.lattice_position(grid.corner_lattice(c, v));
      os << io_detail::num(p.x) << " " << io_detail::num(p.y) << " " << io_detail::num(p.z)
         << "\n";
    }
  }
  os << "CELLS " << leaves.size() << " " << 9 * leaves.size() << "\n";
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    os << 8;
    for (int v = 0; v < 8; ++v) os << " " << 8 * i + (std::size_t)v;
    os << "\n";
  }
  os << "CELL_TYPES " << leaves.size() << "\n";
  for (std::size_t i = 0; i < leaves.size(); ++i) os << "12\n";
  os << "CELL_DATA " << leaves.size() << "\nSCALARS level int 1\nLOOKUP_TABLE default\n";
  for (const CellKey& c : leaves) os << c.level << "\n";
}

// Surface triangulation as VTK polydata with parent-cell ids, triangle
// normals, and an optional nodal solution sampled at the vertices.
inline void write_surface_vtk(const std::string& path, const OctreeGrid& grid,
                              const SurfaceTriangulation& tri,
                              const std::vector<double>* nodal_solution = nullptr) {
  auto os = io_detail::open_out(path);
  os << "# vtk DataFile Version 3.0\nsurface triangulation\nASCII\nDATASET POLYDATA\n";
  os << "POINTS " << tri.vertices.size() << " double\n";
  for (const Vec3& v : tri.vertices)
    os << io_detail::num(v.x) << " " << io_detail::num(v.y) << " " << io_detail::num(v.z)
       << "\n";
  os << "POLYGONS " << tri.triangles.size() << " " << 4 * tri.triangles.size() << "\n";
  for (const auto& t : tri.triangles)
    os << "3 " << t.v[0] << " " << t.v[1] << " " << t.v[2] << "\n";

  os << "CELL_DATA " << tri.triangles.size() << "\n";
  os << "SCALARS parent_cell int 1\nLOOKUP_TABLE default\n";
  for (const auto& t : tri.triangles) os << t.band_index << "\n";
  os << "NORMALS triangle_normal double\n";
  for (const auto& t : tri.triangles)
    os << io_detail::num(t.normal.x) << " " << io_detail::num(t.normal.y) << " "
       << io_detail::num(t.normal.z) << "\n";

  if (nodal_solution) {
    os << "POINT_DATA " << tri.vertices.size() << "\nSCALARS solution double 1\n"
       << "LOOKUP_TABLE default\n";
    std::vector<double> at_vertex(tri.vertices.size(), 0.0);
    std::vector<char> have(tri.vertices.size(), 0);
    FemFunction uh{&grid, nodal_solution};
    for (const auto& t : tri.triangles) {
      for (int v = 0; v < 3; ++v) {
        std::size_t id = (std::size_t)t.v[(std::size_t)v];
        if (have[id]) continue;
        have[id] = 1;
        at_vertex[id] =
            uh.value(t.parent, trilinear_basis(grid, t.parent, tri.vertices[id]));
      }
    }
    for (double v : at_vertex) os << io_detail::num(v) << "\n";
  }
}

// MatrixMarket coordinate format, 1-based indices.
inline void write_matrix_market(const std::string& path, const CsrMatrix& m,
                                const std::vector<double>* rhs = nullptr) {
  auto os = io_detail::open_out(path);
  os << "%%MatrixMarket matrix coordinate real general\n";
  os << m.n << " " << m.n << " " << m.nnz() << "\n";
  for (std::int32_t r = 0; r < m.n; ++r)
    for (std::int32_t k = m.row_ptr[(std::size_t)r]; k < m.row_ptr[(std::size_t)r + 1]; ++k)
      os << r + 1 << " " << m.col[(std::size_t)k] + 1 << " "
         << io_detail::num(m.val[(std::size_t)k]) << "\n";
  if (rhs) {
    auto osb = io_detail::open_out(path + ".rhs");
    osb << "%%MatrixMarket matrix array real general\n" << rhs->size() << " 1\n";
    for (double v : *rhs) osb << io_detail::num(v) << "\n";
  }
}

// step, dofs, errors, estimator sum, marked count
inline void write_report_csv(const std::string& path, const std::vector<ErrorReport>& reports,
                             bool adaptive = false) {
  auto os = io_detail::open_out(path);
  auto rows = eoc_rows(reports, adaptive);
  os << "step,dofs,h_band,l2,l2_rate,h1_semi,h1,h1_rate,linf,linf_rate,area,"
        "triangles,surface_vertices,sum_eta2,marked\n";
  for (const auto& r : rows) {
    os << r.report.step << "," << r.report.dofs << "," << io_detail::num(r.report.h_band)
       << "," << io_detail::num(r.report.l2) << "," << io_detail::num(r.rate_l2) << ","
       << io_detail::num(r.report.h1_semi) << "," << io_detail::num(r.report.h1) << ","
       << io_detail::num(r.rate_h1) << "," << io_detail::num(r.report.linf) << ","
       << io_detail::num(r.rate_linf) << "," << io_detail::num(r.report.area) << ","
       << r.report.triangles << "," << r.report.surface_vertices << ","
       << io_detail::num(r.report.sum_eta2) << "," << r.report.marked << "\n";
  }
}

}  // namespace tracefem
