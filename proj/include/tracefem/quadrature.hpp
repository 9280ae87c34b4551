// Symmetric quadrature rules on the reference triangle (barycentric points,
// weights summing to one) and Gauss rules on [0,1] for edge integrals.
#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "tracefem/error.hpp"
#include "tracefem/smallvec.hpp"

namespace tracefem {

struct TrianglePoint {
  double b0, b1, b2;  // barycentric coordinates
  double w;           // weight, sum over the rule = 1
};

struct QuadratureRule {
  int degree = 0;
  std::vector<TrianglePoint> points;
};

namespace detail {

inline void push3(std::vector<TrianglePoint>& pts, double a, double w) {
  double c = 1.0 - 2.0 * a;
  pts.push_back({a, a, c, w});
  pts.push_back({a, c, a, w});
  pts.push_back({c, a, a, w});
}

inline void push6(std::vector<TrianglePoint>& pts, double a, double b, double w) {
  double c = 1.0 - a - b;
  pts.push_back({a, b, c, w});
  pts.push_back({a, c, b, w});
  pts.push_back({b, a, c, w});
  pts.push_back({b, c, a, w});
  pts.push_back({c, a, b, w});
  pts.push_back({c, b, a, w});
}

}  // namespace detail

// Dunavant rules; supported exactness degrees: 1, 2, 4 (default), 5, 7.
inline QuadratureRule triangle_rule(int degree) {
  QuadratureRule q;
  auto& pts = q.points;
  if (degree <= 1) {
    q.degree = 1;
    pts.push_back({1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0});
  } else if (degree == 2 || degree == 3) {
    q.degree = 2;
    detail::push3(pts, 1.0 / 6.0, 1.0 / 3.0);
  } else if (degree == 4) {
    q.degree = 4;
    detail::push3(pts, 0.445948490915965, 0.223381589678011);
    detail::push3(pts, 0.091576213509771, 0.109951743655322);
  } else if (degree == 5 || degree == 6) {
    q.degree = 5;
    pts.push_back({1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.225});
    detail::push3(pts, 0.470142064105115, 0.132394152788506);
    detail::push3(pts, 0.101286507323456, 0.125939180544827);
  } else if (degree == 7) {
    q.degree = 7;
    pts.push_back({1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, -0.149570044467670});
    detail::push3(pts, 0.260345966079038, 0.175615257433204);
    detail::push3(pts, 0.065130102902216, 0.053347235608839);
    detail::push6(pts, 0.638444188569809, 0.312865496004875, 0.077113760890257);
  } else {
    throw Error(ErrorCode::ConfigError,
                "unsupported triangle quadrature degree " + std::to_string(degree));
  }
  return q;
}

inline Vec3 barycentric_point(const Vec3& p0, const Vec3& p1, const Vec3& p2,
                              const TrianglePoint& q) {
  return p0 * q.b0 + p1 * q.b1 + p2 * q.b2;
}

// 3-point Gauss-Legendre nodes/weights on [0,1] (degree 5).
struct LinePoint {
  double t, w;
};

inline std::array<LinePoint, 3> line_gauss3() {
  double s = std::sqrt(0.6) * 0.5;
  return {{{0.5 - s, 5.0 / 18.0}, {0.5, 8.0 / 18.0}, {0.5 + s, 5.0 / 18.0}}};
}

}  // namespace tracefem
