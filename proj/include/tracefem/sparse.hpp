// Row-compressed sparse matrices built from coordinate triplets with a
// deterministic ordering, so assembled systems are reproducible bit for bit.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tracefem/error.hpp"

namespace tracefem {

struct Triplet {
  std::int32_t r, c;
  double v;
};

struct CsrMatrix {
  std::int32_t n = 0;  // square
  std::vector<std::int32_t> row_ptr;
  std::vector<std::int32_t> col;
  std::vector<double> val;

  static CsrMatrix from_triplets(std::int32_t n, std::vector<Triplet>& trip) {
    // stable sort keeps the insertion order of equal keys, so the summation
    // order is fixed by the assembly order
    std::stable_sort(trip.begin(), trip.end(), [](const Triplet& a, const Triplet& b) {
      return a.r != b.r ? a.r < b.r : a.c < b.c;
    });
    CsrMatrix m;
    m.n = n;
    m.row_ptr.assign((std::size_t)n + 1, 0);
    for (std::size_t i = 0; i < trip.size();) {
      std::size_t j = i;
      double s = 0.0;
      while (j < trip.size() && trip[j].r == trip[i].r && trip[j].c == trip[i].c)
        s += trip[j++].v;
      if (s != 0.0 || trip[i].r == trip[i].c) {
        m.col.push_back(trip[i].c);
        m.val.push_back(s);
        ++m.row_ptr[(std::size_t)trip[i].r + 1];
      }
      i = j;
    }
    for (std::int32_t r = 0; r < n; ++r) m.row_ptr[(std::size_t)r + 1] += m.row_ptr[(std::size_t)r];
    return m;
  }

  std::size_t nnz() const { return val.size(); }

  void multiply(const std::vector<double>& x, std::vector<double>& y) const {
    y.assign((std::size_t)n, 0.0);
    for (std::int32_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::int32_t k = row_ptr[(std::size_t)r]; k < row_ptr[(std::size_t)r + 1]; ++k)
        s += val[(std::size_t)k] * x[(std::size_t)col[(std::size_t)k]];
      y[(std::size_t)r] = s;
    }
  }

  std::vector<double> diagonal() const {
    std::vector<double> d((std::size_t)n, 0.0);
    for (std::int32_t r = 0; r < n; ++r)
      for (std::int32_t k = row_ptr[(std::size_t)r]; k < row_ptr[(std::size_t)r + 1]; ++k)
        if (col[(std::size_t)k] == r) d[(std::size_t)r] = val[(std::size_t)k];
    return d;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : val) m = std::max(m, std::abs(v));
    return m;
  }

  double coeff(std::int32_t r, std::int32_t c) const {
    for (std::int32_t k = row_ptr[(std::size_t)r]; k < row_ptr[(std::size_t)r + 1]; ++k)
      if (col[(std::size_t)k] == c) return val[(std::size_t)k];
    return 0.0;
  }

  // || A - A^T ||_max, for symmetry diagnostics
  double asymmetry() const {
    double m = 0.0;
    for (std::int32_t r = 0; r < n; ++r)
      for (std::int32_t k = row_ptr[(std::size_t)r]; k < row_ptr[(std::size_t)r + 1]; ++k)
        m = std::max(m, std::abs(val[(std::size_t)k] - coeff(col[(std::size_t)k], r)));
    return m;
  }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2v(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline void axpy(double alpha, const std::vector<double>& x, std::vector<double>& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace tracefem
