// Surface reconstruction from the zero level of a trilinear octree field.
//
// Within each cut cell the six faces are contoured by marching squares on
// the bilinear restriction; the resulting closed boundary polygons are
// triangulated (quads by a diagonal, larger polygons by a fan around the
// centroid projected onto the zero set). Faces shared with finer neighbours
// are contoured at the finer resolution, and every grid edge is evaluated on
// its finest existing subdivision, so segments and crossing vertices agree
// exactly between neighbouring cells and the global mesh is crack-free,
// including across hanging faces.
#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "tracefem/field.hpp"
#include "tracefem/octree.hpp"
#include "tracefem/parallel.hpp"
#include "tracefem/quadrature.hpp"

namespace tracefem {

struct SurfaceTriangle {
  std::array<std::int32_t, 3> v;
  CellKey parent;
  std::int32_t band_index = -1;  // index into SurfaceTriangulation::band_cells
  Vec3 normal;                   // unit, oriented with grad(phi_h)
  double area = 0.0;
};

struct WatertightReport {
  std::size_t edge_count = 0;
  std::size_t boundary_edges = 0;
  std::size_t nonmanifold_edges = 0;
  bool watertight() const { return boundary_edges == 0 && nonmanifold_edges == 0; }
};

struct SurfaceTriangulation {
  std::vector<Vec3> vertices;
  std::vector<SurfaceTriangle> triangles;
  std::vector<CellKey> band_cells;                     // omega_h, canonical order
  std::vector<std::pair<std::int32_t, std::int32_t>> cell_tris;  // [begin,end) per band cell

  double total_area() const {
    double a = 0.0;
    for (const auto& t : triangles) a += t.area;
    return a;
  }

  static std::uint64_t edge_key(std::int32_t a, std::int32_t b) {
    if (a > b) std::swap(a, b);
    return ((std::uint64_t)(std::uint32_t)a << 32) | (std::uint32_t)b;
  }

  // undirected vertex pair -> incident triangles (-1 when fewer than two)
  std::unordered_map<std::uint64_t, std::array<std::int32_t, 2>> build_edge_table(
      WatertightReport* report = nullptr) const {
    std::unordered_map<std::uint64_t, std::array<std::int32_t, 2>> table;
    table.reserve(triangles.size() * 2);
    std::size_t nonmanifold = 0;
    for (std::size_t t = 0; t < triangles.size(); ++t) {
      const auto& tri = triangles[t];
      for (int e = 0; e < 3; ++e) {
        std::uint64_t key = edge_key(tri.v[(std::size_t)e], tri.v[(std::size_t)((e + 1) % 3)]);
        auto [it, fresh] = table.try_emplace(key, std::array<std::int32_t, 2>{(std::int32_t)t, -1});
        if (!fresh) {
          if (it->second[1] >= 0)
            ++nonmanifold;
          else
            it->second[1] = (std::int32_t)t;
        }
      }
    }
    if (report) {
      report->edge_count = table.size();
      report->nonmanifold_edges = nonmanifold;
      report->boundary_edges = 0;
      for (const auto& [k, tt] : table)
        if (tt[1] < 0) ++report->boundary_edges;
    }
    return table;
  }

  // V - E + F of the triangulated surface
  long euler_characteristic() const {
    WatertightReport rep;
    auto table = build_edge_table(&rep);
    return (long)vertices.size() - (long)table.size() + (long)triangles.size();
  }
};

namespace mc_detail {

struct PairHash {
  std::size_t operator()(const std::pair<std::uint64_t, std::uint64_t>& p) const {
    return (std::size_t)(p.first * 0x9E3779B97F4A7C15ull ^ (p.second + 0x7F4A7C15u));
  }
};

constexpr std::uint64_t kInteriorKey = ~(std::uint64_t)0;

struct LocalVertex {
  std::uint64_t ka = kInteriorKey, kb = kInteriorKey;  // canonical sub-edge key
  Vec3 pos;
};

struct CellPatch {
  std::vector<LocalVertex> verts;
  std::vector<std::array<std::int32_t, 3>> tris;
};

struct Crossing {
  Lat3 a, b;
  Vec3 pos;
};

// Crossing of the field on a grid edge, evaluated on the finest subdivision
// present in the node table; at most one crossing exists since the field is
// linear along grid edges and nudges only lift near-zero values.
inline std::optional<Crossing> edge_crossing(const OctreeGrid& grid,
                                             const std::vector<double>& val,
                                             const Lat3& a, const Lat3& b, int depth = 0) {
  if (depth < 8 && (((a.x + b.x) | (a.y + b.y) | (a.z + b.z)) & 1) == 0) {
    Lat3 mid{(a.x + b.x) / 2, (a.y + b.y) / 2, (a.z + b.z) / 2};
    if (grid.node_exists(mid)) {
      if (auto c = edge_crossing(grid, val, a, mid, depth + 1)) return c;
      return edge_crossing(grid, val, mid, b, depth + 1);
    }
  }
  int ia = grid.node_id(a), ib = grid.node_id(b);
  double va = val[(std::size_t)ia], vb = val[(std::size_t)ib];
  if ((va < 0.0) == (vb < 0.0)) return std::nullopt;
  double t = va / (va - vb);
  Vec3 pa = grid.lattice_position(a), pb = grid.lattice_position(b);
  return Crossing{a, b, pa + (pb - pa) * t};
}

inline std::uint64_t canon_a(const Lat3& a, const Lat3& b) {
  std::uint64_t pa = pack_lattice(a), pb = pack_lattice(b);
  return std::min(pa, pb);
}
inline std::uint64_t canon_b(const Lat3& a, const Lat3& b) {
  std::uint64_t pa = pack_lattice(a), pb = pack_lattice(b);
  return std::max(pa, pb);
}

// Contour one cut cell. `val` holds nudged nodal values (no exact zeros).
inline CellPatch contour_cell(const OctreeGrid& grid, const TrilinearField& field,
                              const std::vector<double>& val, const CellKey& cell) {
  CellPatch patch;
  struct Seg {
    Crossing a, b;
  };
  std::vector<Seg> segs;

  const std::int32_t step = grid.lattice_step(cell.level);
  const Lat3 origin = grid.corner_lattice(cell, 0);

  for (int dir = 0; dir < 6; ++dir) {
    int axis = dir / 2, sgn = dir % 2;
    int ua = (axis + 1) % 3, va = (axis + 2) % 3;
    Lat3 fo = origin;
    if (sgn) (axis == 0 ? fo.x : axis == 1 ? fo.y : fo.z) += step;
    bool finer = grid.face_neighbor_level(cell, dir) > cell.level;
    std::int32_t ss = finer ? step / 2 : step;
    int nsub = finer ? 2 : 1;

    for (int iu = 0; iu < nsub; ++iu) {
      for (int iv = 0; iv < nsub; ++iv) {
        auto at = [&](int du, int dv) {
          Lat3 p = fo;
          auto& pu = (ua == 0 ? p.x : ua == 1 ? p.y : p.z);
          auto& pv = (va == 0 ? p.x : va == 1 ? p.y : p.z);
          pu += (iu + du) * ss;
          pv += (iv + dv) * ss;
          return p;
        };
        Lat3 c00 = at(0, 0), c10 = at(1, 0), c01 = at(0, 1), c11 = at(1, 1);
        double f00 = val[(std::size_t)grid.node_id(c00)];
        double f10 = val[(std::size_t)grid.node_id(c10)];
        double f01 = val[(std::size_t)grid.node_id(c01)];
        double f11 = val[(std::size_t)grid.node_id(c11)];

        int pattern = (f00 < 0.0) | ((f10 < 0.0) << 1) | ((f01 < 0.0) << 2) |
                      ((f11 < 0.0) << 3);
        if (pattern == 0 || pattern == 15) continue;

        auto bottom = edge_crossing(grid, val, c00, c10);
        auto top = edge_crossing(grid, val, c01, c11);
        auto left = edge_crossing(grid, val, c00, c01);
        auto right = edge_crossing(grid, val, c10, c11);

        if ((pattern == 6 || pattern == 9) && bottom && top && left && right) {
          // diagonally separated corners: resolve by the saddle value of the
          // bilinear restriction
          double d = f00 + f11 - f10 - f01;
          double saddle = f00 - (f10 - f00) * (f01 - f00) / d;
          if ((saddle < 0.0) == (f00 < 0.0)) {
            segs.push_back({*bottom, *right});
            segs.push_back({*left, *top});
          } else {
            segs.push_back({*bottom, *left});
            segs.push_back({*top, *right});
          }
        } else {
          std::array<std::optional<Crossing>, 4> cr{bottom, top, left, right};
          Crossing hits[2];
          int n = 0;
          for (auto& c : cr)
            if (c && n < 2) hits[n++] = *c;
          if (n == 2) segs.push_back({hits[0], hits[1]});
        }
      }
    }
  }
  if (segs.empty()) return patch;

  // chain segments into closed loops; every crossing vertex joins exactly
  // two segments within the cell
  using VKey = std::pair<std::uint64_t, std::uint64_t>;
  auto vkey = [](const Crossing& c) { return VKey{canon_a(c.a, c.b), canon_b(c.a, c.b)}; };
  std::unordered_map<VKey, std::vector<int>, PairHash> by_end;
  for (std::size_t s = 0; s < segs.size(); ++s) {
    by_end[vkey(segs[s].a)].push_back((int)s);
    by_end[vkey(segs[s].b)].push_back((int)s);
  }

  std::vector<char> used(segs.size(), 0);
  std::unordered_map<VKey, std::int32_t, PairHash> local_of;
  auto local_vertex = [&](const Crossing& c) {
    auto [it, fresh] = local_of.try_emplace(vkey(c), (std::int32_t)patch.verts.size());
    if (fresh) patch.verts.push_back({canon_a(c.a, c.b), canon_b(c.a, c.b), c.pos});
    return it->second;
  };

  Vec3 blo, bhi;
  grid.cell_bounds(cell, blo, bhi);
  double margin = 1e-12 * grid.cell_size(cell);
  double scale = 1.0;
  {
    auto ids = grid.cell_node_ids(cell);
    for (int v = 0; v < 8; ++v)
      scale = std::max(scale, std::abs(val[(std::size_t)ids[(std::size_t)v]]));
  }

  for (std::size_t s0 = 0; s0 < segs.size(); ++s0) {
    if (used[s0]) continue;
    std::vector<std::int32_t> loop;
    std::vector<Vec3> pts;
    int cur = (int)s0;
    Crossing at = segs[s0].a;
    for (;;) {
      used[(std::size_t)cur] = 1;
      loop.push_back(local_vertex(at));
      pts.push_back(at.pos);
      const Seg& sg = segs[(std::size_t)cur];
      Crossing next = (vkey(sg.a) == vkey(at)) ? sg.b : sg.a;
      int next_seg = -1;
      for (int cand : by_end[vkey(next)])
        if (!used[(std::size_t)cand]) {
          next_seg = cand;
          break;
        }
      at = next;
      if (next_seg < 0) break;  // loop closed (or open at a defect)
      cur = next_seg;
    }
    std::size_t k = loop.size();
    if (k < 3) continue;

    if (k == 3) {
      patch.tris.push_back({loop[0], loop[1], loop[2]});
    } else if (k == 4) {
      // split along the diagonal closer to the zero set
      Vec3 m02 = (pts[0] + pts[2]) * 0.5, m13 = (pts[1] + pts[3]) * 0.5;
      bool use02 = std::abs(field.eval_in_cell(cell, m02)) <=
                   std::abs(field.eval_in_cell(cell, m13));
      if (use02) {
        patch.tris.push_back({loop[0], loop[1], loop[2]});
        patch.tris.push_back({loop[0], loop[2], loop[3]});
      } else {
        patch.tris.push_back({loop[1], loop[2], loop[3]});
        patch.tris.push_back({loop[1], loop[3], loop[0]});
      }
    } else {
      // fan around the loop centroid projected onto the zero set
      Vec3 c{};
      for (const Vec3& p : pts) c += p;
      c *= 1.0 / (double)k;
      bool ok = false;
      for (int it = 0; it < 30; ++it) {
        double phi = field.eval_in_cell(cell, c);
        if (std::abs(phi) <= 1e-12 * scale) {
          ok = true;
          break;
        }
        Vec3 g = field.gradient_in_cell(cell, c);
        double g2 = norm2(g);
        if (g2 < 1e-30) break;
        c -= g * (phi / g2);
        c.x = std::clamp(c.x, blo.x + margin, bhi.x - margin);
        c.y = std::clamp(c.y, blo.y + margin, bhi.y - margin);
        c.z = std::clamp(c.z, blo.z + margin, bhi.z - margin);
      }
      if (ok) {
        std::int32_t cv = (std::int32_t)patch.verts.size();
        patch.verts.push_back({kInteriorKey, kInteriorKey, c});
        for (std::size_t e = 0; e < k; ++e)
          patch.tris.push_back({cv, loop[e], loop[(e + 1) % k]});
      } else {
        // projection failed (flat gradient): fall back to an ear fan that
        // keeps all vertices on the crossings
        for (std::size_t e = 1; e + 1 < k; ++e)
          patch.tris.push_back({loop[0], loop[e], loop[e + 1]});
      }
    }
  }
  return patch;
}

}  // namespace mc_detail

// Extract the triangulated zero level set. The result is independent of the
// worker count: cells are contoured independently and merged in canonical
// cell order.
inline SurfaceTriangulation extract_surface(const OctreeGrid& grid,
                                            const TrilinearField& field, int threads = 1) {
  const double scale = field.max_abs();
  const double eps0 = 1e-14 * scale;

  // candidate cells and the degenerate-cell guard
  std::vector<CellKey> cand;
  for (const CellKey& c : grid.leaves()) {
    auto ids = grid.cell_node_ids(c);
    double mn = 1e300, mx = -1e300;
    bool all_tiny = true;
    for (int v = 0; v < 8; ++v) {
      double raw = field.nodal[(std::size_t)ids[(std::size_t)v]];
      mn = std::min(mn, raw);
      mx = std::max(mx, raw);
      all_tiny = all_tiny && std::abs(raw) <= eps0;
    }
    if (all_tiny) {
      // retry with a small positive shift; an identically-zero patch cannot
      // be contoured
      double shift = 1e-12 * scale;
      if (!(mn + shift < 0.0 && mx + shift > 0.0))
        throw Error(ErrorCode::DegenerateCell,
                    "cell with all-zero corner values cannot be contoured");
    }
    if (mn < eps0 && mx >= -eps0) cand.push_back(c);  // nudged sign change possible
  }

  std::vector<double> val = field.nodal;
  for (double& v : val)
    if (std::abs(v) < eps0) v = eps0;

  std::vector<mc_detail::CellPatch> patches(cand.size());
  parallel_for(cand.size(), threads, [&](std::size_t i) {
    patches[i] = mc_detail::contour_cell(grid, field, val, cand[i]);
  });

  // deterministic merge in canonical cell order
  SurfaceTriangulation out;
  std::unordered_map<std::pair<std::uint64_t, std::uint64_t>, std::int32_t,
                     mc_detail::PairHash>
      global_of;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    const auto& patch = patches[i];
    if (patch.tris.empty()) continue;
    std::int32_t band_index = (std::int32_t)out.band_cells.size();
    out.band_cells.push_back(cand[i]);
    std::vector<std::int32_t> vid(patch.verts.size());
    for (std::size_t v = 0; v < patch.verts.size(); ++v) {
      const auto& lv = patch.verts[v];
      if (lv.ka == mc_detail::kInteriorKey) {
        vid[v] = (std::int32_t)out.vertices.size();
        out.vertices.push_back(lv.pos);
      } else {
        auto [it, fresh] = global_of.try_emplace({lv.ka, lv.kb},
                                                 (std::int32_t)out.vertices.size());
        if (fresh) out.vertices.push_back(lv.pos);
        vid[v] = it->second;
      }
    }
    std::int32_t begin = (std::int32_t)out.triangles.size();
    for (const auto& t : patch.tris) {
      SurfaceTriangle tri;
      tri.parent = cand[i];
      tri.band_index = band_index;
      tri.v = {vid[(std::size_t)t[0]], vid[(std::size_t)t[1]], vid[(std::size_t)t[2]]};
      Vec3 p0 = out.vertices[(std::size_t)tri.v[0]];
      Vec3 p1 = out.vertices[(std::size_t)tri.v[1]];
      Vec3 p2 = out.vertices[(std::size_t)tri.v[2]];
      Vec3 cr = cross(p1 - p0, p2 - p0);
      double a2 = norm(cr);
      Vec3 bary = (p0 + p1 + p2) / 3.0;
      Vec3 g = field.gradient_in_cell(cand[i], bary);
      if (a2 > 1e-300) {
        Vec3 n = cr / a2;
        if (dot(n, g) < 0.0) {
          std::swap(tri.v[1], tri.v[2]);
          n = -n;
        }
        tri.normal = n;
      } else {
        double gn = norm(g);
        tri.normal = gn > 0.0 ? g / gn : Vec3{0.0, 0.0, 1.0};
      }
      tri.area = 0.5 * a2;
      out.triangles.push_back(tri);
    }
    out.cell_tris.emplace_back(begin, (std::int32_t)out.triangles.size());
  }
  return out;
}

struct GeometryQuality {
  double max_distance = 0.0;       // max |signed distance| over quadrature points
  double max_normal_error = 0.0;   // max |n(p(x)) - n_h|
};

// How well Gamma_h approximates Gamma: O(h^2) distances and O(h) normals for
// a smooth level set.
inline GeometryQuality geometry_quality(const SurfaceTriangulation& tri, const LevelSet& ls,
                                        int quad_degree = 4) {
  GeometryQuality q;
  auto rule = triangle_rule(quad_degree);
  for (const auto& t : tri.triangles) {
    Vec3 p0 = tri.vertices[(std::size_t)t.v[0]];
    Vec3 p1 = tri.vertices[(std::size_t)t.v[1]];
    Vec3 p2 = tri.vertices[(std::size_t)t.v[2]];
    for (const auto& qp : rule.points) {
      Vec3 x = barycentric_point(p0, p1, p2, qp);
      Vec3 p = closest_point_project(ls, x);
      q.max_distance = std::max(q.max_distance, norm(x - p));
      Vec3 n = normalized(ls.gradient(p));
      q.max_normal_error = std::max(q.max_normal_error, norm(n - t.normal));
    }
  }
  return q;
}

}  // namespace tracefem
