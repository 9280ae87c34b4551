// Octree grid over a cubic bulk box: per-level cell keys, face+edge 2:1
// balance, and the vertex/hanging-node tables the trace FEM builds on.
//
// Vertices are addressed on the integer lattice of the deepest admissible
// level, so node identity across refinement levels is exact integer
// comparison. A hanging node stores its master nodes and weights ({1/2,1/2}
// on coarse edges, {1/4,...} on coarse faces); resolutions expand chains of
// constraints down to unconstrained nodes.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tracefem/error.hpp"
#include "tracefem/levelset.hpp"
#include "tracefem/smallvec.hpp"

namespace tracefem {

struct CellKey {
  std::int32_t level = 0;
  std::int32_t i = 0, j = 0, k = 0;

  friend bool operator==(const CellKey&, const CellKey&) = default;
  friend auto operator<=>(const CellKey&, const CellKey&) = default;

  CellKey parent() const { return {level - 1, i >> 1, j >> 1, k >> 1}; }
  CellKey child(int c) const {
    return {level + 1, 2 * i + (c & 1), 2 * j + ((c >> 1) & 1), 2 * k + ((c >> 2) & 1)};
  }
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& c) const {
    std::uint64_t h = (std::uint64_t)c.level;
    h = h * 1000003u ^ (std::uint64_t)(std::uint32_t)c.i;
    h = h * 1000003u ^ (std::uint64_t)(std::uint32_t)c.j;
    h = h * 1000003u ^ (std::uint64_t)(std::uint32_t)c.k;
    return (std::size_t)(h ^ (h >> 31));
  }
};

// Lattice coordinate of a grid vertex at the finest admissible level.
struct Lat3 {
  std::int32_t x = 0, y = 0, z = 0;
  friend bool operator==(const Lat3&, const Lat3&) = default;
};

inline std::uint64_t pack_lattice(const Lat3& p) {
  return ((std::uint64_t)(std::uint32_t)p.x << 42) |
         ((std::uint64_t)(std::uint32_t)p.y << 21) |
         (std::uint64_t)(std::uint32_t)p.z;
}

struct GridNode {
  Lat3 lat;
  Vec3 pos;
  std::int32_t constraint = -1;  // index into constraint table, -1 if unconstrained
};

struct NodeConstraint {
  std::array<std::int32_t, 4> masters{-1, -1, -1, -1};
  int count = 0;
  double weight = 0.0;  // 1/2 for edge midpoints, 1/4 for face centers
};

class OctreeGrid {
 public:
  static OctreeGrid build_uniform(double lo, double hi, double h0, int level_cap = 12) {
    if (!(hi > lo) || !(h0 > 0.0))
      throw Error(ErrorCode::NonDivisibleResolution, "invalid box or resolution");
    double n_real = (hi - lo) / h0;
    int n = (int)std::llround(n_real);
    if (n < 1 || std::abs(n_real - n) > 1e-12 * n)
      throw Error(ErrorCode::NonDivisibleResolution,
                  "h0 does not divide the box side evenly");
    // lattice coordinates are packed into 21 bits per axis
    if ((std::int64_t)n << level_cap >= (std::int64_t)1 << 21)
      throw Error(ErrorCode::ConfigError, "level cap too deep for the base resolution");
    OctreeGrid g;
    g.lo_ = lo;
    g.hi_ = hi;
    g.base_n_ = n;
    g.level_cap_ = level_cap;
    g.leaves_.reserve((std::size_t)n * n * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) g.leaves_.push_back({0, i, j, k});
    g.finalize();
    return g;
  }

  // Replaces each marked leaf by its 8 children, then restores 2:1 balance.
  // Keys that are not current leaves (or sit at the level cap) are skipped;
  // the number of skipped keys is returned.
  std::size_t refine(const std::vector<CellKey>& marked) {
    std::size_t ignored = 0;
    std::unordered_set<CellKey, CellKeyHash> uniq;
    for (const CellKey& c : marked) {
      if (!leaf_set_.count(c) || c.level >= level_cap_) {
        ++ignored;
        continue;
      }
      uniq.insert(c);
    }
    if (!uniq.empty()) {
      split_leaves(uniq);
      balance_sweep();
      finalize();
    }
    return ignored;
  }

  void enforce_balance() {
    balance_sweep();
    finalize();
  }

  // --- cell geometry ------------------------------------------------------

  int cells_per_side(int level) const { return base_n_ << level; }
  double cell_size(int level) const { return (hi_ - lo_) / cells_per_side(level); }
  double cell_size(const CellKey& c) const { return cell_size(c.level); }

  // lattice units spanned by one cell edge at this level
  std::int32_t lattice_step(int level) const {
    return std::int32_t(1) << (level_cap_ - level);
  }

  Lat3 corner_lattice(const CellKey& c, int corner) const {
    std::int32_t s = lattice_step(c.level);
    return {(c.i + (corner & 1)) * s, (c.j + ((corner >> 1) & 1)) * s,
            (c.k + ((corner >> 2) & 1)) * s};
  }

  Vec3 lattice_position(const Lat3& p) const {
    return {lo_ + p.x * pitch_, lo_ + p.y * pitch_, lo_ + p.z * pitch_};
  }

  void cell_bounds(const CellKey& c, Vec3& blo, Vec3& bhi) const {
    blo = lattice_position(corner_lattice(c, 0));
    bhi = lattice_position(corner_lattice(c, 7));
  }

  Vec3 cell_center(const CellKey& c) const {
    Vec3 a, b;
    cell_bounds(c, a, b);
    return (a + b) * 0.5;
  }

  // --- cell topology ------------------------------------------------------

  bool is_leaf(const CellKey& c) const { return leaf_set_.count(c) != 0; }
  bool is_internal(const CellKey& c) const { return internal_.count(c) != 0; }

  bool in_domain(const CellKey& c) const {
    int n = cells_per_side(c.level);
    return c.level >= 0 && c.i >= 0 && c.j >= 0 && c.k >= 0 && c.i < n && c.j < n &&
           c.k < n;
  }

  // Leaf covering the given same-or-coarser region, or level -1 if the key is
  // refined further (internal) or outside the domain.
  CellKey covering_leaf(CellKey c) const {
    if (!in_domain(c)) return {-1, 0, 0, 0};
    while (c.level >= 0) {
      if (leaf_set_.count(c)) return c;
      if (c.level == 0) break;
      c = c.parent();
    }
    return {-1, 0, 0, 0};
  }

  // Level of the finest leaf adjacent across a face (dir 0..5: -x,+x,-y,+y,-z,+z);
  // -1 at the domain boundary. With 2:1 balance the result is in
  // {level-1, level, level+1}.
  int face_neighbor_level(const CellKey& c, int dir) const {
    CellKey n = face_neighbor_key(c, dir);
    if (!in_domain(n)) return -1;
    if (leaf_set_.count(n)) return n.level;
    if (internal_.count(n)) return n.level + 1;
    CellKey cov = covering_leaf(n);
    return cov.level;
  }

  static CellKey face_neighbor_key(const CellKey& c, int dir) {
    CellKey n = c;
    int axis = dir / 2, sgn = (dir % 2) ? 1 : -1;
    (axis == 0 ? n.i : axis == 1 ? n.j : n.k) += sgn;
    return n;
  }

  int find_leaf_index(const Vec3& p) const {
    if (p.x < lo_ || p.y < lo_ || p.z < lo_ || p.x > hi_ || p.y > hi_ || p.z > hi_)
      return -1;
    auto clamp_idx = [this](double t, int n) {
      int i = (int)((t - lo_) / (hi_ - lo_) * n);
      return std::clamp(i, 0, n - 1);
    };
    CellKey c{0, clamp_idx(p.x, base_n_), clamp_idx(p.y, base_n_), clamp_idx(p.z, base_n_)};
    while (internal_.count(c)) {
      Vec3 mid = cell_center(c);
      int ch = (p.x >= mid.x ? 1 : 0) | (p.y >= mid.y ? 2 : 0) | (p.z >= mid.z ? 4 : 0);
      c = c.child(ch);
    }
    auto it = leaf_index_.find(c);
    return it == leaf_index_.end() ? -1 : (int)it->second;
  }

  // --- tables -------------------------------------------------------------

  const std::vector<CellKey>& leaves() const { return leaves_; }
  int max_level() const { return max_level_; }
  int level_cap() const { return level_cap_; }
  double domain_lo() const { return lo_; }
  double domain_hi() const { return hi_; }
  int base_resolution() const { return base_n_; }

  const std::vector<GridNode>& nodes() const { return nodes_; }
  const std::vector<NodeConstraint>& constraints() const { return constraints_; }

  int node_id(const Lat3& p) const {
    auto it = node_index_.find(pack_lattice(p));
    return it == node_index_.end() ? -1 : (int)it->second;
  }
  bool node_exists(const Lat3& p) const { return node_index_.count(pack_lattice(p)) != 0; }
  bool node_hanging(int id) const { return nodes_[(std::size_t)id].constraint >= 0; }

  std::size_t hanging_count() const { return constraints_.size(); }

  // Expansion of a node value into unconstrained master nodes.
  const std::vector<std::pair<std::int32_t, double>>& resolution(int id) const {
    return resolutions_[(std::size_t)id];
  }

  std::array<int, 8> cell_node_ids(const CellKey& c) const {
    std::array<int, 8> ids;
    for (int v = 0; v < 8; ++v) ids[(std::size_t)v] = node_id(corner_lattice(c, v));
    return ids;
  }

  double volume() const {
    double v = 0.0;
    for (const CellKey& c : leaves_) {
      double h = cell_size(c);
      v += h * h * h;
    }
    return v;
  }

  // Leaves within `rings` layers of vertex-adjacent neighbourhood of the
  // given cells (the cells themselves included). Finer neighbours are
  // collected through their ancestors' children, coarser ones through the
  // covering leaf.
  std::vector<CellKey> dilate_cells(const std::vector<CellKey>& cells, int rings) const {
    std::unordered_set<CellKey, CellKeyHash> acc(cells.begin(), cells.end());
    for (int r = 0; r < rings; ++r) {
      std::vector<CellKey> frontier(acc.begin(), acc.end());
      for (const CellKey& c : frontier) {
        for (int dx = -1; dx <= 1; ++dx)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dz = -1; dz <= 1; ++dz) {
              if (dx == 0 && dy == 0 && dz == 0) continue;
              CellKey n{c.level, c.i + dx, c.j + dy, c.k + dz};
              if (!in_domain(n)) continue;
              if (leaf_set_.count(n)) {
                acc.insert(n);
              } else if (internal_.count(n)) {
                collect_leaves_under(n, acc);
              } else {
                CellKey cov = covering_leaf(n);
                if (cov.level >= 0) acc.insert(cov);
              }
            }
      }
    }
    std::vector<CellKey> out(acc.begin(), acc.end());
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  void collect_leaves_under(const CellKey& c,
                            std::unordered_set<CellKey, CellKeyHash>& acc) const {
    if (leaf_set_.count(c)) {
      acc.insert(c);
      return;
    }
    if (!internal_.count(c) || c.level >= level_cap_) return;
    for (int ch = 0; ch < 8; ++ch) collect_leaves_under(c.child(ch), acc);
  }

  void split_leaves(const std::unordered_set<CellKey, CellKeyHash>& marks) {
    std::vector<CellKey> next;
    next.reserve(leaves_.size() + 7 * marks.size());
    for (const CellKey& c : leaves_) {
      if (marks.count(c)) {
        for (int ch = 0; ch < 8; ++ch) next.push_back(c.child(ch));
      } else {
        next.push_back(c);
      }
    }
    leaves_ = std::move(next);
    rebuild_cell_sets();
  }

  void rebuild_cell_sets() {
    std::sort(leaves_.begin(), leaves_.end());
    leaf_set_.clear();
    leaf_index_.clear();
    internal_.clear();
    max_level_ = 0;
    leaf_set_.reserve(leaves_.size() * 2);
    leaf_index_.reserve(leaves_.size() * 2);
    for (std::size_t i = 0; i < leaves_.size(); ++i) {
      const CellKey& c = leaves_[i];
      leaf_set_.insert(c);
      leaf_index_.emplace(c, (std::int32_t)i);
      max_level_ = std::max(max_level_, c.level);
      CellKey a = c;
      while (a.level > 0) {
        a = a.parent();
        if (!internal_.insert(a).second) break;
      }
    }
  }

  // One round marks every leaf with a face- or edge-adjacent leaf two or more
  // levels finer; iterate to the fixed point.
  void balance_sweep() {
    static const int kEdgeDirs[12][2] = {{0, 2}, {0, 3}, {1, 2}, {1, 3}, {0, 4}, {0, 5},
                                         {1, 4}, {1, 5}, {2, 4}, {2, 5}, {3, 4}, {3, 5}};
    for (;;) {
      std::unordered_set<CellKey, CellKeyHash> marks;
      auto consider_region = [&](const CellKey& me, const CellKey& region,
                                 int touch_axis_a, int touch_sign_a, int touch_axis_b,
                                 int touch_sign_b) {
        if (!in_domain(region)) return;
        if (leaf_set_.count(region)) return;
        if (internal_.count(region)) {
          // a child of `region` touching me that is itself internal means a
          // leaf at me.level + 2 or deeper is adjacent
          for (int ch = 0; ch < 8; ++ch) {
            if (touch_axis_a >= 0) {
              int bit = (ch >> touch_axis_a) & 1;
              if (bit != touch_sign_a) continue;
            }
            if (touch_axis_b >= 0) {
              int bit = (ch >> touch_axis_b) & 1;
              if (bit != touch_sign_b) continue;
            }
            if (internal_.count(region.child(ch))) {
              marks.insert(me);
              return;
            }
          }
          return;
        }
        CellKey cov = covering_leaf(region);
        if (cov.level >= 0 && me.level - cov.level >= 2) marks.insert(cov);
      };

      for (const CellKey& c : leaves_) {
        for (int dir = 0; dir < 6; ++dir) {
          CellKey n = face_neighbor_key(c, dir);
          // children of n touching c lie on the face opposite to dir
          consider_region(c, n, dir / 2, 1 - dir % 2, -1, 0);
        }
        for (const auto& ed : kEdgeDirs) {
          CellKey n = face_neighbor_key(face_neighbor_key(c, ed[0]), ed[1]);
          consider_region(c, n, ed[0] / 2, 1 - ed[0] % 2, ed[1] / 2, 1 - ed[1] % 2);
        }
      }
      if (marks.empty()) return;
      for (const CellKey& c : marks)
        if (c.level >= level_cap_)
          throw Error(ErrorCode::MaxLevelExceeded,
                      "2:1 balance requires refining past the level cap " +
                          std::to_string(level_cap_));
      split_leaves(marks);
    }
  }

  void finalize() {
    rebuild_cell_sets();
    build_nodes();
    build_constraints();
    build_resolutions();
  }

  void build_nodes() {
    nodes_.clear();
    node_index_.clear();
    node_index_.reserve(leaves_.size() * 3);
    pitch_ = (hi_ - lo_) / ((double)base_n_ * (double)lattice_step(0));
    for (const CellKey& c : leaves_) {
      for (int v = 0; v < 8; ++v) {
        Lat3 p = corner_lattice(c, v);
        std::uint64_t key = pack_lattice(p);
        if (node_index_.emplace(key, (std::int32_t)nodes_.size()).second)
          nodes_.push_back({p, lattice_position(p), -1});
      }
    }
  }

  void build_constraints() {
    constraints_.clear();
    static const int kEdgeCorners[12][2] = {{0, 1}, {2, 3}, {4, 5}, {6, 7},
                                            {0, 2}, {1, 3}, {4, 6}, {5, 7},
                                            {0, 4}, {1, 5}, {2, 6}, {3, 7}};
    static const int kFaceCorners[6][4] = {{0, 2, 4, 6}, {1, 3, 5, 7}, {0, 1, 4, 5},
                                           {2, 3, 6, 7}, {0, 1, 2, 3}, {4, 5, 6, 7}};
    auto add_constraint = [this](const Lat3& at, const std::int32_t* masters, int count,
                                 double w) {
      int id = node_id(at);
      if (id < 0) return;
      GridNode& nd = nodes_[(std::size_t)id];
      if (nd.constraint >= 0) return;  // already recorded identically
      NodeConstraint nc;
      nc.count = count;
      nc.weight = w;
      for (int m = 0; m < count; ++m) nc.masters[(std::size_t)m] = masters[m];
      nd.constraint = (std::int32_t)constraints_.size();
      constraints_.push_back(nc);
    };

    for (const CellKey& c : leaves_) {
      if (c.level >= level_cap_) continue;
      std::array<Lat3, 8> lat;
      std::array<std::int32_t, 8> ids;
      for (int v = 0; v < 8; ++v) {
        lat[(std::size_t)v] = corner_lattice(c, v);
        ids[(std::size_t)v] = node_id(lat[(std::size_t)v]);
      }
      for (const auto& e : kEdgeCorners) {
        const Lat3 &a = lat[(std::size_t)e[0]], &b = lat[(std::size_t)e[1]];
        Lat3 mid{(a.x + b.x) / 2, (a.y + b.y) / 2, (a.z + b.z) / 2};
        std::int32_t masters[2] = {ids[(std::size_t)e[0]], ids[(std::size_t)e[1]]};
        add_constraint(mid, masters, 2, 0.5);
      }
      for (const auto& f : kFaceCorners) {
        const Lat3& a = lat[(std::size_t)f[0]];
        const Lat3& d = lat[(std::size_t)f[3]];
        Lat3 ctr{(a.x + d.x) / 2, (a.y + d.y) / 2, (a.z + d.z) / 2};
        std::int32_t masters[4] = {ids[(std::size_t)f[0]], ids[(std::size_t)f[1]],
                                   ids[(std::size_t)f[2]], ids[(std::size_t)f[3]]};
        add_constraint(ctr, masters, 4, 0.25);
      }
    }
  }

  // Expand constraint chains; masters live on strictly coarser lattice
  // spacings, so the recursion terminates.
  void build_resolutions() {
    resolutions_.assign(nodes_.size(), {});
    std::vector<char> done(nodes_.size(), 0);
    for (std::size_t id = 0; id < nodes_.size(); ++id) resolve_node((int)id, done);
  }

  void resolve_node(int id, std::vector<char>& done) {
    if (done[(std::size_t)id]) return;
    done[(std::size_t)id] = 1;
    const GridNode& nd = nodes_[(std::size_t)id];
    auto& out = resolutions_[(std::size_t)id];
    if (nd.constraint < 0) {
      out.emplace_back((std::int32_t)id, 1.0);
      return;
    }
    const NodeConstraint& nc = constraints_[(std::size_t)nd.constraint];
    for (int m = 0; m < nc.count; ++m) {
      int mid = nc.masters[(std::size_t)m];
      resolve_node(mid, done);
      for (const auto& [base, w] : resolutions_[(std::size_t)mid]) {
        bool merged = false;
        for (auto& [b2, w2] : out)
          if (b2 == base) {
            w2 += nc.weight * w;
            merged = true;
            break;
          }
        if (!merged) out.emplace_back(base, nc.weight * w);
      }
    }
    std::sort(out.begin(), out.end());
  }

  double lo_ = 0.0, hi_ = 1.0, pitch_ = 0.0;
  int base_n_ = 1;
  int level_cap_ = 12;
  int max_level_ = 0;

  std::vector<CellKey> leaves_;
  std::unordered_set<CellKey, CellKeyHash> leaf_set_;
  std::unordered_map<CellKey, std::int32_t, CellKeyHash> leaf_index_;
  std::unordered_set<CellKey, CellKeyHash> internal_;

  std::vector<GridNode> nodes_;
  std::unordered_map<std::uint64_t, std::int32_t> node_index_;
  std::vector<NodeConstraint> constraints_;
  std::vector<std::vector<std::pair<std::int32_t, double>>> resolutions_;
};

}  // namespace tracefem
