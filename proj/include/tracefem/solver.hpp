// Sparse linear solvers for the trace systems: a direct profile (skyline) LU
// with reverse Cuthill-McKee ordering, mirroring the diagonally scaled direct
// approach, plus conjugate gradients / BiCGStab with the diagonal scaling as
// preconditioner for verification and as fallback for very large systems.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "tracefem/error.hpp"
#include "tracefem/fem.hpp"
#include "tracefem/sparse.hpp"

namespace tracefem {

struct LinearSolveReport {
  std::string method;  // "direct", "cg", "bicgstab"
  int iterations = 0;
  double relative_residual = 0.0;
  double diag_condition_proxy = 1.0;  // max|d_i| / min|d_i| over nonzero diagonal
  std::vector<std::int32_t> dropped_dofs;
};

struct SolverOptions {
  enum class Method { automatic, direct, iterative };
  Method method = Method::automatic;
  double tol = 1e-10;
  int max_iterations = 20000;
  std::size_t direct_dof_limit = 200000;
  std::size_t profile_entry_limit = 220'000'000;  // LU factor entries guard (~2.6 GB)
};

inline SolverOptions::Method solver_method_from_string(const std::string& s) {
  if (s == "auto") return SolverOptions::Method::automatic;
  if (s == "direct") return SolverOptions::Method::direct;
  if (s == "iterative") return SolverOptions::Method::iterative;
  throw Error(ErrorCode::ConfigError, "unknown solver.method '" + s + "'");
}

struct ScaledSystem {
  CsrMatrix matrix;
  std::vector<double> rhs;
  std::vector<double> scale;  // x = scale .* x_hat for symmetric scaling
  bool symmetric_scaling = false;
  LinearSolveReport report;   // condition proxy and dropped dofs
};

// Symmetric scaling D^{-1/2} A D^{-1/2} (symmetric A) or row scaling D^{-1} A.
// Exactly zero diagonals are singular; tiny diagonals are tiny-cut dofs and
// are dropped (identity row, zero solution). Symmetric Gram systems tolerate
// much smaller cuts under scaling (off-diagonals are bounded by
// Cauchy-Schwarz), so their drop threshold is far lower; row-scaled
// nonsymmetric systems are guarded at 1e-14. `exempt_tail` rows (zero-mean
// multipliers) are left unscaled.
inline ScaledSystem diagonal_scale(const CsrMatrix& A, const std::vector<double>& b,
                                   bool symmetric, std::size_t exempt_tail = 0) {
  ScaledSystem out;
  std::vector<double> diag = A.diagonal();
  std::size_t n = (std::size_t)A.n;
  double dmax = 0.0;
  for (std::size_t i = 0; i + exempt_tail < n; ++i) dmax = std::max(dmax, std::abs(diag[i]));
  double dmin = dmax;
  const double drop_threshold = symmetric ? 1e-18 : 1e-14;
  std::vector<char> dropped(n, 0);
  for (std::size_t i = 0; i + exempt_tail < n; ++i) {
    double d = std::abs(diag[i]);
    if (d == 0.0)
      throw Error(ErrorCode::SingularMatrix,
                  "zero diagonal at dof " + std::to_string(i));
    if (d < drop_threshold * dmax) {
      dropped[i] = 1;
      out.report.dropped_dofs.push_back((std::int32_t)i);
    } else {
      dmin = std::min(dmin, d);
    }
  }
  out.report.diag_condition_proxy = dmin > 0.0 ? dmax / dmin : 1.0;

  out.scale.assign(n, 1.0);
  for (std::size_t i = 0; i + exempt_tail < n; ++i)
    if (!dropped[i])
      out.scale[i] = symmetric ? 1.0 / std::sqrt(std::abs(diag[i])) : 1.0 / diag[i];
  out.symmetric_scaling = symmetric;

  out.matrix = A;
  out.rhs = b;
  for (std::int32_t r = 0; r < A.n; ++r) {
    bool row_dropped = dropped[(std::size_t)r];
    for (std::int32_t k = A.row_ptr[(std::size_t)r]; k < A.row_ptr[(std::size_t)r + 1]; ++k) {
      std::int32_t c = A.col[(std::size_t)k];
      if (row_dropped || dropped[(std::size_t)c]) {
        out.matrix.val[(std::size_t)k] = (r == c) ? 1.0 : 0.0;
      } else if (symmetric) {
        out.matrix.val[(std::size_t)k] *= out.scale[(std::size_t)r] * out.scale[(std::size_t)c];
      } else {
        out.matrix.val[(std::size_t)k] *= out.scale[(std::size_t)r];
      }
    }
    if (row_dropped)
      out.rhs[(std::size_t)r] = 0.0;
    else
      out.rhs[(std::size_t)r] *= out.scale[(std::size_t)r];
  }
  return out;
}

namespace solver_detail {

// Fill-reducing column ordering by recursive BFS-level dissection: the nodes
// of a middle BFS level form a separator and are numbered last. Multiplier
// rows (tail) keep their position at the end.
inline std::vector<std::int32_t> dissection_order(const CsrMatrix& A,
                                                  std::size_t exempt_tail) {
  std::size_t n = (std::size_t)A.n - exempt_tail;
  std::vector<std::int32_t> adj_ptr(n + 1, 0), adj;
  {
    std::vector<std::vector<std::int32_t>> tmp(n);
    for (std::int32_t r = 0; r < (std::int32_t)n; ++r)
      for (std::int32_t k = A.row_ptr[(std::size_t)r]; k < A.row_ptr[(std::size_t)r + 1]; ++k) {
        std::int32_t c = A.col[(std::size_t)k];
        if (c != r && c < (std::int32_t)n) {
          tmp[(std::size_t)r].push_back(c);
          tmp[(std::size_t)c].push_back(r);
        }
      }
    for (std::size_t i = 0; i < n; ++i) {
      auto& a = tmp[i];
      std::sort(a.begin(), a.end());
      a.erase(std::unique(a.begin(), a.end()), a.end());
      adj_ptr[i + 1] = adj_ptr[i] + (std::int32_t)a.size();
    }
    adj.reserve((std::size_t)adj_ptr[n]);
    for (auto& a : tmp) adj.insert(adj.end(), a.begin(), a.end());
  }

  std::vector<std::int32_t> order;
  order.reserve((std::size_t)A.n);
  std::vector<std::int32_t> level(n);
  std::vector<std::int32_t> queue;
  queue.reserve(n);

  // explicit work stack of node subsets
  std::vector<std::vector<std::int32_t>> work;
  {
    std::vector<std::int32_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = (std::int32_t)i;
    work.push_back(std::move(all));
  }
  std::vector<char> in_subset(n, 0);

  while (!work.empty()) {
    std::vector<std::int32_t> subset = std::move(work.back());
    work.pop_back();
    if (subset.size() <= 96) {
      for (std::int32_t v : subset) order.push_back(v);
      continue;
    }
    for (std::int32_t v : subset) {
      in_subset[(std::size_t)v] = 1;
      level[(std::size_t)v] = -1;
    }
    // BFS levelization from a pseudo-peripheral node of the subset
    auto bfs = [&](std::int32_t start) {
      for (std::int32_t v : subset) level[(std::size_t)v] = -1;
      queue.clear();
      queue.push_back(start);
      level[(std::size_t)start] = 0;
      std::size_t head = 0;
      std::int32_t far = start;
      while (head < queue.size()) {
        std::int32_t v = queue[head++];
        if (level[(std::size_t)v] > level[(std::size_t)far]) far = v;
        for (std::int32_t k = adj_ptr[(std::size_t)v]; k < adj_ptr[(std::size_t)v + 1]; ++k) {
          std::int32_t w = adj[(std::size_t)k];
          if (in_subset[(std::size_t)w] && level[(std::size_t)w] < 0) {
            level[(std::size_t)w] = level[(std::size_t)v] + 1;
            queue.push_back(w);
          }
        }
      }
      return far;
    };
    std::int32_t start = bfs(bfs(subset[0]));
    (void)bfs(start);

    // disconnected remainder goes into its own subset
    std::vector<std::int32_t> untouched;
    for (std::int32_t v : subset)
      if (level[(std::size_t)v] < 0) untouched.push_back(v);

    std::int32_t max_level = 0;
    for (std::int32_t v : queue) max_level = std::max(max_level, level[(std::size_t)v]);
    if (max_level < 2) {
      // no useful split; emit as-is
      for (std::int32_t v : subset) in_subset[(std::size_t)v] = 0;
      for (std::int32_t v : queue) order.push_back(v);
      if (!untouched.empty()) work.push_back(std::move(untouched));
      continue;
    }
    // cut level balancing the two sides
    std::vector<std::int32_t> count((std::size_t)max_level + 1, 0);
    for (std::int32_t v : queue) ++count[(std::size_t)level[(std::size_t)v]];
    std::int32_t cut = 1, below = count[0];
    while (cut < max_level && below + count[(std::size_t)cut] < (std::int32_t)queue.size() / 2)
      below += count[(std::size_t)cut++];

    std::vector<std::int32_t> separator, left, right;
    for (std::int32_t v : queue) {
      std::int32_t l = level[(std::size_t)v];
      (l == cut ? separator : (l < cut ? left : right)).push_back(v);
    }
    for (std::int32_t v : subset) in_subset[(std::size_t)v] = 0;

    // children processed first, separator numbered last: push in reverse
    work.push_back(std::move(separator));
    if (!untouched.empty()) work.push_back(std::move(untouched));
    work.push_back(std::move(right));
    work.push_back(std::move(left));
  }
  for (std::size_t t = 0; t < exempt_tail; ++t) order.push_back((std::int32_t)(n + t));
  return order;  // order[k] = column to eliminate at step k
}

// Fill-reducing ordering by recursive coordinate bisection: split along the
// widest axis at the median, number the vertex separator (left-side nodes
// with right-side neighbours) last. Needs the dof coordinates; tail rows
// keep their position at the end.
inline std::vector<std::int32_t> geometric_dissection_order(const CsrMatrix& A,
                                                            const std::vector<Vec3>& coords,
                                                            std::size_t exempt_tail) {
  std::size_t n = (std::size_t)A.n - exempt_tail;
  std::vector<std::int32_t> adj_ptr(n + 1, 0), adj;
  {
    std::vector<std::vector<std::int32_t>> tmp(n);
    for (std::int32_t r = 0; r < (std::int32_t)n; ++r)
      for (std::int32_t k = A.row_ptr[(std::size_t)r]; k < A.row_ptr[(std::size_t)r + 1]; ++k) {
        std::int32_t c = A.col[(std::size_t)k];
        if (c != r && c < (std::int32_t)n) {
          tmp[(std::size_t)r].push_back(c);
          tmp[(std::size_t)c].push_back(r);
        }
      }
    for (std::size_t i = 0; i < n; ++i) {
      auto& a = tmp[i];
      std::sort(a.begin(), a.end());
      a.erase(std::unique(a.begin(), a.end()), a.end());
      adj_ptr[i + 1] = adj_ptr[i] + (std::int32_t)a.size();
    }
    adj.reserve((std::size_t)adj_ptr[n]);
    for (auto& a : tmp) adj.insert(adj.end(), a.begin(), a.end());
  }

  std::vector<std::int32_t> order;
  order.reserve((std::size_t)A.n);
  std::vector<char> side(n, 0);  // 1 = right half of the current split

  std::vector<std::vector<std::int32_t>> work;
  {
    std::vector<std::int32_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = (std::int32_t)i;
    work.push_back(std::move(all));
  }
  while (!work.empty()) {
    std::vector<std::int32_t> subset = std::move(work.back());
    work.pop_back();
    if (subset.size() <= 96) {
      for (std::int32_t v : subset) order.push_back(v);
      continue;
    }
    // median split per axis; pick the axis with the smallest vertex separator
    // (a widest-axis heuristic can slice along dense bands)
    auto mark_sides = [&](int axis) -> bool {
      std::vector<std::int32_t> sorted = subset;
      std::nth_element(sorted.begin(), sorted.begin() + (std::ptrdiff_t)(sorted.size() / 2),
                       sorted.end(), [&](std::int32_t a, std::int32_t b) {
                         double ca = coords[(std::size_t)a][axis];
                         double cb = coords[(std::size_t)b][axis];
                         return ca != cb ? ca < cb : a < b;
                       });
      std::int32_t median = sorted[sorted.size() / 2];
      double cut = coords[(std::size_t)median][axis];
      std::size_t rights = 0;
      for (std::int32_t v : subset) {
        double c = coords[(std::size_t)v][axis];
        bool right_side = c != cut ? c > cut : v >= median;
        side[(std::size_t)v] = right_side ? 1 : 0;
        rights += right_side ? 1u : 0u;
      }
      return rights > 0 && rights < subset.size();
    };
    auto separator_count = [&]() {
      std::size_t cnt = 0;
      for (std::int32_t v : subset) {
        if (side[(std::size_t)v]) continue;
        for (std::int32_t k = adj_ptr[(std::size_t)v]; k < adj_ptr[(std::size_t)v + 1]; ++k) {
          std::int32_t w = adj[(std::size_t)k];
          if (side[(std::size_t)w] && std::binary_search(subset.begin(), subset.end(), w)) {
            ++cnt;
            break;
          }
        }
      }
      return cnt;
    };
    int best_axis = -1;
    std::size_t best_sep = subset.size();
    for (int axis = 0; axis < 3; ++axis) {
      if (!mark_sides(axis)) continue;
      std::size_t s = separator_count();
      if (s < best_sep) {
        best_sep = s;
        best_axis = axis;
      }
    }
    if (best_axis < 0) {  // coincident coordinates: emit as-is
      for (std::int32_t v : subset) order.push_back(v);
      continue;
    }
    mark_sides(best_axis);

    std::vector<std::int32_t> left, right, separator;
    for (std::int32_t v : subset) {
      if (side[(std::size_t)v]) {
        right.push_back(v);
        continue;
      }
      bool boundary = false;
      for (std::int32_t k = adj_ptr[(std::size_t)v]; k < adj_ptr[(std::size_t)v + 1]; ++k) {
        std::int32_t w = adj[(std::size_t)k];
        if (side[(std::size_t)w] && std::binary_search(subset.begin(), subset.end(), w)) {
          boundary = true;
          break;
        }
      }
      (boundary ? separator : left).push_back(v);
    }
    if (left.empty() || right.empty()) {  // degenerate split
      for (std::int32_t v : subset) order.push_back(v);
      continue;
    }
    work.push_back(std::move(separator));
    work.push_back(std::move(right));
    work.push_back(std::move(left));
  }
  for (std::size_t t = 0; t < exempt_tail; ++t) order.push_back((std::int32_t)(n + t));
  return order;
}

// Left-looking sparse LU (Gilbert-Peierls) with threshold partial pivoting.
class SparseLU {
 public:
  // returns false when the factor storage would exceed `entry_limit`
  bool factor(const CsrMatrix& A, const std::vector<std::int32_t>& col_order,
              std::size_t entry_limit, double pivot_threshold = 0.05) {
    n_ = (std::size_t)A.n;
    q_ = col_order;

    // CSC copy of A
    std::vector<std::int32_t> cp(n_ + 1, 0), ci(A.nnz());
    std::vector<double> cx(A.nnz());
    {
      for (std::size_t k = 0; k < A.nnz(); ++k) ++cp[(std::size_t)A.col[k] + 1];
      for (std::size_t j = 0; j < n_; ++j) cp[j + 1] += cp[j];
      std::vector<std::int32_t> next(cp.begin(), cp.end() - 1);
      for (std::int32_t r = 0; r < A.n; ++r)
        for (std::int32_t k = A.row_ptr[(std::size_t)r]; k < A.row_ptr[(std::size_t)r + 1]; ++k) {
          std::int32_t c = A.col[(std::size_t)k];
          ci[(std::size_t)next[(std::size_t)c]] = r;
          cx[(std::size_t)next[(std::size_t)c]] = A.val[(std::size_t)k];
          ++next[(std::size_t)c];
        }
    }

    lp_.assign(n_ + 1, 0);
    up_.assign(n_ + 1, 0);
    li_.clear();
    lx_.clear();
    ui_.clear();
    ux_.clear();
    li_.reserve(4 * A.nnz());
    lx_.reserve(4 * A.nnz());
    ui_.reserve(4 * A.nnz());
    ux_.reserve(4 * A.nnz());
    pinv_.assign(n_, -1);

    std::vector<double> x(n_, 0.0);
    std::vector<std::int32_t> stack(n_), pstack(n_), found;
    std::vector<char> mark(n_, 0);
    found.reserve(n_);

    for (std::size_t k = 0; k < n_; ++k) {
      std::int32_t col = q_[k];

      // symbolic: rows reachable from A(:,col) through finished L columns
      found.clear();
      for (std::int32_t p = cp[(std::size_t)col]; p < cp[(std::size_t)col + 1]; ++p) {
        std::int32_t row = ci[(std::size_t)p];
        if (mark[(std::size_t)row]) continue;
        // iterative DFS
        std::int32_t top = 0;
        stack[0] = row;
        while (top >= 0) {
          std::int32_t i = stack[(std::size_t)top];
          if (!mark[(std::size_t)i]) {
            mark[(std::size_t)i] = 1;
            std::int32_t c2 = pinv_[(std::size_t)i];
            pstack[(std::size_t)top] = c2 >= 0 ? lp_[(std::size_t)c2] : -1;
          }
          std::int32_t c2 = pinv_[(std::size_t)i];
          bool descended = false;
          if (c2 >= 0) {
            std::int32_t& pp = pstack[(std::size_t)top];
            while (pp < lp_[(std::size_t)c2 + 1]) {
              std::int32_t child = li_[(std::size_t)pp];
              ++pp;
              if (!mark[(std::size_t)child]) {
                stack[(std::size_t)(top + 1)] = child;
                ++top;
                descended = true;
                break;
              }
            }
          }
          if (!descended) {
            found.push_back(i);  // postorder
            --top;
          }
        }
      }

      // numeric: x = L \ A(:,col) over the found pattern (reverse postorder
      // is a valid topological order)
      for (std::int32_t p = cp[(std::size_t)col]; p < cp[(std::size_t)col + 1]; ++p)
        x[(std::size_t)ci[(std::size_t)p]] = cx[(std::size_t)p];
      for (std::size_t f = found.size(); f-- > 0;) {
        std::int32_t i = found[f];
        std::int32_t c2 = pinv_[(std::size_t)i];
        if (c2 < 0) continue;
        double xi = x[(std::size_t)i];
        if (xi == 0.0) continue;
        for (std::int32_t p = lp_[(std::size_t)c2]; p < lp_[(std::size_t)c2 + 1]; ++p)
          x[(std::size_t)li_[(std::size_t)p]] -= lx_[(std::size_t)p] * xi;
      }

      // pivot: largest unpivoted entry, diagonal preferred within threshold
      std::int32_t ipiv = -1;
      double amax = 0.0;
      for (std::int32_t i : found) {
        if (pinv_[(std::size_t)i] >= 0) continue;
        double a = std::abs(x[(std::size_t)i]);
        if (a > amax) {
          amax = a;
          ipiv = i;
        }
      }
      if (ipiv < 0 || amax == 0.0) {
        clear_marks(found, mark, x);
        throw Error(ErrorCode::SingularMatrix,
                    "no pivot in column " + std::to_string(col));
      }
      if (pinv_[(std::size_t)col] < 0 && std::abs(x[(std::size_t)col]) >= pivot_threshold * amax)
        ipiv = col;
      double pivot = x[(std::size_t)ipiv];
      pinv_[(std::size_t)ipiv] = (std::int32_t)k;

      // scatter into U (pivoted rows) and L (unpivoted, scaled by the pivot)
      for (std::int32_t i : found) {
        double v = x[(std::size_t)i];
        if (i == ipiv) continue;
        std::int32_t pi = pinv_[(std::size_t)i];
        if (pi >= 0 && pi < (std::int32_t)k) {
          if (v != 0.0) {
            ui_.push_back(pi);
            ux_.push_back(v);
          }
        } else if (v != 0.0) {
          li_.push_back(i);  // original row id, remapped after the loop
          lx_.push_back(v / pivot);
        }
      }
      ui_.push_back((std::int32_t)k);
      ux_.push_back(pivot);
      lp_[k + 1] = (std::int32_t)li_.size();
      up_[k + 1] = (std::int32_t)ui_.size();

      clear_marks(found, mark, x);
      if (li_.size() + ui_.size() > entry_limit) return false;
    }

    // remap L row indices to pivot positions
    for (auto& i : li_) i = pinv_[(std::size_t)i];
    return true;
  }

  std::vector<double> solve(const std::vector<double>& b) const {
    std::vector<double> y(n_);
    for (std::size_t i = 0; i < n_; ++i) y[(std::size_t)pinv_[i]] = b[i];
    for (std::size_t j = 0; j < n_; ++j) {  // L y' = P b, unit diagonal
      double yj = y[j];
      if (yj == 0.0) continue;
      for (std::int32_t p = lp_[j]; p < lp_[j + 1]; ++p)
        y[(std::size_t)li_[(std::size_t)p]] -= lx_[(std::size_t)p] * yj;
    }
    for (std::size_t j = n_; j-- > 0;) {  // U z = y'; diagonal entry is last
      double& yj = y[j];
      yj /= ux_[(std::size_t)(up_[j + 1] - 1)];
      for (std::int32_t p = up_[j]; p < up_[j + 1] - 1; ++p)
        y[(std::size_t)ui_[(std::size_t)p]] -= ux_[(std::size_t)p] * yj;
    }
    std::vector<double> out(n_);
    for (std::size_t k = 0; k < n_; ++k) out[(std::size_t)q_[k]] = y[k];
    return out;
  }

  std::size_t factor_nnz() const { return li_.size() + ui_.size(); }

 private:
  static void clear_marks(const std::vector<std::int32_t>& found, std::vector<char>& mark,
                          std::vector<double>& x) {
    for (std::int32_t i : found) {
      mark[(std::size_t)i] = 0;
      x[(std::size_t)i] = 0.0;
    }
  }

  std::size_t n_ = 0;
  std::vector<std::int32_t> q_, pinv_, lp_, up_, li_, ui_;
  std::vector<double> lx_, ux_;
};

inline int conjugate_gradient(const CsrMatrix& A, const std::vector<double>& b,
                              std::vector<double>& x, double tol, int max_iter) {
  std::size_t n = (std::size_t)A.n;
  x.assign(n, 0.0);
  std::vector<double> r = b, p = b, Ap(n);
  double bn = norm2v(b);
  if (bn == 0.0) return 0;
  double rr = dot(r, r);
  for (int it = 1; it <= max_iter; ++it) {
    A.multiply(p, Ap);
    double pap = dot(p, Ap);
    if (pap == 0.0) throw Error(ErrorCode::NoConvergence, "cg breakdown");
    double alpha = rr / pap;
    axpy(alpha, p, x);
    axpy(-alpha, Ap, r);
    double rr_new = dot(r, r);
    if (std::sqrt(rr_new) <= tol * bn) return it;
    double beta = rr_new / rr;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    rr = rr_new;
  }
  throw Error(ErrorCode::NoConvergence, "cg exceeded max iterations");
}

// ILU(0): incomplete LU on the sparsity pattern of the (scaled) matrix,
// the preconditioner for the nonsymmetric iterative path.
struct Ilu0Preconditioner {
  CsrMatrix lu;                       // L (unit diagonal, strictly lower) and U combined
  std::vector<std::int32_t> diag_pos;

  explicit Ilu0Preconditioner(const CsrMatrix& A) : lu(A) {
    std::size_t n = (std::size_t)A.n;
    diag_pos.assign(n, -1);
    for (std::int32_t r = 0; r < A.n; ++r)
      for (std::int32_t k = lu.row_ptr[(std::size_t)r]; k < lu.row_ptr[(std::size_t)r + 1]; ++k)
        if (lu.col[(std::size_t)k] == r) diag_pos[(std::size_t)r] = k;

    double dmax = 0.0;
    for (std::size_t r = 0; r < n; ++r)
      if (diag_pos[r] >= 0) dmax = std::max(dmax, std::abs(lu.val[(std::size_t)diag_pos[r]]));
    const double pivot_floor = std::max(1e-300, 1e-14 * dmax);

    std::vector<std::int32_t> pos_of_col(n, -1);
    for (std::int32_t i = 0; i < lu.n; ++i) {
      std::int32_t rb = lu.row_ptr[(std::size_t)i], re = lu.row_ptr[(std::size_t)i + 1];
      for (std::int32_t k = rb; k < re; ++k) pos_of_col[(std::size_t)lu.col[(std::size_t)k]] = k;
      for (std::int32_t k = rb; k < re; ++k) {
        std::int32_t c = lu.col[(std::size_t)k];
        if (c >= i) break;  // columns are sorted
        double piv = lu.val[(std::size_t)diag_pos[(std::size_t)c]];
        if (std::abs(piv) < pivot_floor) piv = piv < 0.0 ? -pivot_floor : pivot_floor;
        double lik = lu.val[(std::size_t)k] / piv;
        lu.val[(std::size_t)k] = lik;
        for (std::int32_t kk = diag_pos[(std::size_t)c] + 1;
             kk < lu.row_ptr[(std::size_t)c + 1]; ++kk) {
          std::int32_t p = pos_of_col[(std::size_t)lu.col[(std::size_t)kk]];
          if (p >= 0) lu.val[(std::size_t)p] -= lik * lu.val[(std::size_t)kk];
        }
      }
      for (std::int32_t k = rb; k < re; ++k) pos_of_col[(std::size_t)lu.col[(std::size_t)k]] = -1;
      double& d = lu.val[(std::size_t)diag_pos[(std::size_t)i]];
      if (std::abs(d) < pivot_floor) d = d < 0.0 ? -pivot_floor : pivot_floor;
    }
  }

  void apply(const std::vector<double>& r, std::vector<double>& z) const {
    std::size_t n = (std::size_t)lu.n;
    z = r;
    for (std::size_t i = 0; i < n; ++i) {  // L y = r, unit diagonal
      double s = z[i];
      for (std::int32_t k = lu.row_ptr[i]; k < diag_pos[i]; ++k)
        s -= lu.val[(std::size_t)k] * z[(std::size_t)lu.col[(std::size_t)k]];
      z[i] = s;
    }
    for (std::size_t i = n; i-- > 0;) {  // U z = y
      double s = z[i];
      for (std::int32_t k = diag_pos[i] + 1; k < lu.row_ptr[i + 1]; ++k)
        s -= lu.val[(std::size_t)k] * z[(std::size_t)lu.col[(std::size_t)k]];
      z[i] = s / lu.val[(std::size_t)diag_pos[i]];
    }
  }
};

// BiCGStab with restarts on (near-)breakdown of the bi-orthogonality;
// right-preconditioned when a preconditioner is given.
template <class Precond = Ilu0Preconditioner>
inline int bicgstab(const CsrMatrix& A, const std::vector<double>& b,
                    std::vector<double>& x, double tol, int max_iter,
                    const Precond* precond = nullptr) {
  std::size_t n = (std::size_t)A.n;
  x.assign(n, 0.0);
  std::vector<double> r = b, r0 = b, p = b, v(n, 0.0), s(n), t(n), Ax(n);
  std::vector<double> ph(n), sh(n);
  double bn = norm2v(b);
  if (bn == 0.0) return 0;
  double rho = dot(r0, r), alpha = 1.0, omega = 1.0;
  bool fresh = true;
  for (int it = 1; it <= max_iter; ++it) {
    if (precond)
      precond->apply(p, ph);
    else
      ph = p;
    A.multiply(ph, v);
    double r0v = dot(r0, v);
    if (std::abs(r0v) < 1e-300) r0v = r0v < 0.0 ? -1e-300 : 1e-300;
    alpha = rho / r0v;
    for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
    if (norm2v(s) <= tol * bn) {
      axpy(alpha, ph, x);
      return it;
    }
    if (precond)
      precond->apply(s, sh);
    else
      sh = s;
    A.multiply(sh, t);
    double tt = dot(t, t);
    omega = tt > 0.0 ? dot(t, s) / tt : 0.0;
    for (std::size_t i = 0; i < n; ++i) x[i] += alpha * ph[i] + omega * sh[i];
    for (std::size_t i = 0; i < n; ++i) r[i] = s[i] - omega * t[i];
    double rn = norm2v(r);
    if (rn <= tol * bn) return it;

    double rho_new = dot(r0, r);
    bool degenerate = !std::isfinite(rn) || std::abs(rho_new) <= 1e-40 * rn * bn ||
                      omega == 0.0;
    if (degenerate) {
      if (!std::isfinite(rn))
        throw Error(ErrorCode::NoConvergence, "bicgstab diverged");
      if (fresh && rn > 0.99 * bn && it > 8)
        throw Error(ErrorCode::NoConvergence, "bicgstab stagnated");
      // restart with the current residual as the shadow vector
      A.multiply(x, Ax);
      for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - Ax[i];
      r0 = r;
      p = r;
      rho = dot(r0, r);
      omega = alpha = 1.0;
      fresh = true;
      continue;
    }
    double beta = (rho_new / rho) * (alpha / omega);
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
    rho = rho_new;
    fresh = false;
  }
  throw Error(ErrorCode::NoConvergence, "bicgstab exceeded max iterations");
}

}  // namespace solver_detail

// Solve A x = b with the requested method. The relative residual of the
// returned solution is checked against options.tol; one step of iterative
// refinement is applied on the direct path.
inline std::vector<double> solve(const CsrMatrix& A, const std::vector<double>& b,
                                 bool symmetric, const SolverOptions& options,
                                 LinearSolveReport& report, std::size_t exempt_tail = 0,
                                 const std::vector<Vec3>* dof_coords = nullptr) {
  ScaledSystem scaled = diagonal_scale(A, b, symmetric && exempt_tail == 0, exempt_tail);
  report = scaled.report;

  auto unscale = [&](std::vector<double>& x) {
    if (scaled.symmetric_scaling)
      for (std::size_t i = 0; i < x.size(); ++i) x[i] *= scaled.scale[i];
  };
  auto residual = [&](const std::vector<double>& x) {
    std::vector<double> Ax;
    A.multiply(x, Ax);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < Ax.size(); ++i) {
      num += (Ax[i] - b[i]) * (Ax[i] - b[i]);
      den += b[i] * b[i];
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  };

  bool try_direct = options.method != SolverOptions::Method::iterative &&
                    (std::size_t)A.n <= options.direct_dof_limit;
  if (try_direct) {
    try {
      bool have_coords =
          dof_coords && dof_coords->size() + exempt_tail == (std::size_t)A.n;
      auto order = have_coords ? solver_detail::geometric_dissection_order(
                                     scaled.matrix, *dof_coords, exempt_tail)
                               : solver_detail::dissection_order(scaled.matrix, exempt_tail);
      solver_detail::SparseLU lu;
      if (lu.factor(scaled.matrix, order, options.profile_entry_limit)) {
        std::vector<double> x = lu.solve(scaled.rhs);
        // one step of iterative refinement in the scaled system
        std::vector<double> Ax;
        scaled.matrix.multiply(x, Ax);
        std::vector<double> r(Ax.size());
        for (std::size_t i = 0; i < Ax.size(); ++i) r[i] = scaled.rhs[i] - Ax[i];
        std::vector<double> dx = lu.solve(r);
        axpy(1.0, dx, x);
        unscale(x);
        report.method = "direct";
        report.iterations = 0;
        report.relative_residual = residual(x);
        return x;
      }
      // profile too large: fall through to the iterative path
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularMatrix ||
          options.method == SolverOptions::Method::direct)
        throw;
      // automatic mode falls back to the iterative path
    }
  } else if (options.method == SolverOptions::Method::direct) {
    throw Error(ErrorCode::ConfigError, "system too large for the direct solver");
  }

  std::vector<double> x;
  int its;
  if (symmetric && exempt_tail == 0) {
    its = solver_detail::conjugate_gradient(scaled.matrix, scaled.rhs, x, options.tol * 0.1,
                                            options.max_iterations);
    report.method = "cg";
  } else {
    solver_detail::Ilu0Preconditioner ilu(scaled.matrix);
    its = solver_detail::bicgstab(scaled.matrix, scaled.rhs, x, options.tol * 0.1,
                                  options.max_iterations, &ilu);
    report.method = "bicgstab";
  }
  unscale(x);
  report.iterations = its;
  report.relative_residual = residual(x);
  return x;
}

inline std::vector<double> solve(const CsrMatrix& A, const std::vector<double>& b,
                                 bool symmetric = true, const SolverOptions& options = {}) {
  LinearSolveReport report;
  return solve(A, b, symmetric, options, report);
}

// Trace-system entry point. Zero-mean augmented systems go to the direct
// solver with the multiplier row pinned last; the iterative path solves the
// singular consistent system and shifts to the zero-mean representative.
inline std::vector<double> solve_trace_system(const TraceSystem& sys,
                                              const SolverOptions& options,
                                              LinearSolveReport& report) {
  if (sys.zero_mean_augmented) {
    bool want_direct = options.method != SolverOptions::Method::iterative &&
                       (std::size_t)sys.matrix.n <= options.direct_dof_limit;
    if (want_direct) {
      std::vector<double> x =
          solve(sys.matrix, sys.rhs, /*symmetric=*/false, options, report, /*exempt_tail=*/1, &sys.dof_positions);
      x.resize(sys.dof_count);  // drop the multiplier
      return x;
    }
    // strip the multiplier row/col and solve the singular consistent system
    std::vector<Triplet> trip;
    std::int32_t n = (std::int32_t)sys.dof_count;
    for (std::int32_t r = 0; r < n; ++r)
      for (std::int32_t k = sys.matrix.row_ptr[(std::size_t)r];
           k < sys.matrix.row_ptr[(std::size_t)r + 1]; ++k)
        if (sys.matrix.col[(std::size_t)k] < n)
          trip.push_back({r, sys.matrix.col[(std::size_t)k], sys.matrix.val[(std::size_t)k]});
    CsrMatrix core = CsrMatrix::from_triplets(n, trip);
    std::vector<double> b(sys.rhs.begin(), sys.rhs.begin() + n);
    std::vector<double> x;
    report.method = "cg";
    report.iterations =
        solver_detail::conjugate_gradient(core, b, x, options.tol * 0.1, options.max_iterations);
    // representative with zero discrete mean
    double mx = 0.0, area = 0.0;
    for (std::size_t i = 0; i < (std::size_t)n; ++i) {
      mx += sys.mean_row[i] * x[i];
      area += sys.mean_row[i];
    }
    for (double& v : x) v -= mx / area;
    std::vector<double> Ax;
    core.multiply(x, Ax);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < (std::size_t)n; ++i) {
      num += (Ax[i] - b[i]) * (Ax[i] - b[i]);
      den += b[i] * b[i];
    }
    report.relative_residual = den > 0.0 ? std::sqrt(num / den) : 0.0;
    return x;
  }
  return solve(sys.matrix, sys.rhs, sys.symmetric, options, report, 0, &sys.dof_positions);
}

}  // namespace tracefem

