// Implicit surface descriptions with analytic first and second derivatives,
// closest-point projection onto the zero level, and the differential data
// (normal, tangential projector, shape operator) derived from them.
#pragma once

#include <cmath>
#include <functional>
#include <memory>

#include "tracefem/error.hpp"
#include "tracefem/smallvec.hpp"

namespace tracefem {

class LevelSet {
 public:
  virtual ~LevelSet() = default;

  virtual double value(const Vec3& x) const = 0;
  virtual Vec3 gradient(const Vec3& x) const = 0;
  virtual Mat3 hessian(const Vec3& x) const = 0;

  // True when value() is the exact signed distance (|grad| = 1 in the band).
  virtual bool is_signed_distance() const { return false; }
};

using LevelSetPtr = std::shared_ptr<const LevelSet>;

class Sphere : public LevelSet {
 public:
  explicit Sphere(double radius) : radius_(radius) {}

  double value(const Vec3& x) const override { return norm(x) - radius_; }
  Vec3 gradient(const Vec3& x) const override { return x / norm(x); }
  Mat3 hessian(const Vec3& x) const override {
    double r = norm(x);
    Vec3 n = x / r;
    return tangential_projector(n) * (1.0 / r);
  }
  bool is_signed_distance() const override { return true; }
  double radius() const { return radius_; }

 private:
  double radius_;
};

class Torus : public LevelSet {
 public:
  Torus(double ring_radius, double tube_radius) : R_(ring_radius), r_(tube_radius) {}

  // Signed distance to the torus x3^2 + (sqrt(x1^2+x2^2) - R)^2 = r^2,
  // valid away from the symmetry axis.
  double value(const Vec3& x) const override {
    double s = std::hypot(x.x, x.y);
    return std::hypot(x.z, s - R_) - r_;
  }
  Vec3 gradient(const Vec3& x) const override {
    double s = std::hypot(x.x, x.y);
    double q = s - R_;
    double rho = std::hypot(x.z, q);
    double g = q / s;
    return Vec3{g * x.x, g * x.y, x.z} / rho;
  }
  Mat3 hessian(const Vec3& x) const override {
    double s = std::hypot(x.x, x.y);
    double q = s - R_;
    double rho = std::hypot(x.z, q);
    double g = q / s;
    Mat3 dv = Mat3::zero();
    double s3 = s * s * s;
    dv(0, 0) = g + R_ * x.x * x.x / s3;
    dv(0, 1) = R_ * x.x * x.y / s3;
    dv(1, 0) = dv(0, 1);
    dv(1, 1) = g + R_ * x.y * x.y / s3;
    dv(2, 2) = 1.0;
    Vec3 n = gradient(x);
    return (dv - Mat3::outer(n, n)) * (1.0 / rho);
  }
  bool is_signed_distance() const override { return true; }
  double ring_radius() const { return R_; }
  double tube_radius() const { return r_; }

 private:
  double R_, r_;
};

// Wavy closed surface: phi = x1^2/4 + x2^2 + 4 x3^2 / (1 + sin(pi x1)/2)^2 - 1.
class WavyCigar : public LevelSet {
 public:
  double value(const Vec3& x) const override {
    double A = amp(x.x);
    return 0.25 * x.x * x.x + x.y * x.y + 4.0 * x.z * x.z / (A * A) - 1.0;
  }
  Vec3 gradient(const Vec3& x) const override {
    double A = amp(x.x), dA = damp(x.x);
    double A3 = A * A * A;
    return {0.5 * x.x - 8.0 * x.z * x.z * dA / A3, 2.0 * x.y, 8.0 * x.z / (A * A)};
  }
  Mat3 hessian(const Vec3& x) const override {
    double A = amp(x.x), dA = damp(x.x), ddA = ddamp(x.x);
    double A3 = A * A * A, A4 = A3 * A;
    Mat3 h = Mat3::zero();
    h(0, 0) = 0.5 + 24.0 * x.z * x.z * dA * dA / A4 - 8.0 * x.z * x.z * ddA / A3;
    h(0, 2) = h(2, 0) = -16.0 * x.z * dA / A3;
    h(1, 1) = 2.0;
    h(2, 2) = 8.0 / (A * A);
    return h;
  }

 private:
  static double amp(double x1) { return 1.0 + 0.5 * std::sin(M_PI * x1); }
  static double damp(double x1) { return 0.5 * M_PI * std::cos(M_PI * x1); }
  static double ddamp(double x1) { return -0.5 * M_PI * M_PI * std::sin(M_PI * x1); }
};

// Closed surface homeomorphic to a sphere with six handles:
// phi = (x1^2+x2^2-4)^2 + (x2^2-1)^2 + (x2^2+x3^2-4)^2 + (x1^2-1)^2
//     + (x1^2+x3^2-4)^2 + (x3^2-1)^2 - 13.
class SixHandleSurface : public LevelSet {
 public:
  double value(const Vec3& x) const override {
    double a = x.x * x.x, b = x.y * x.y, c = x.z * x.z;
    auto sq = [](double t) { return t * t; };
    return sq(a + b - 4.0) + sq(b - 1.0) + sq(b + c - 4.0) + sq(a - 1.0) +
           sq(a + c - 4.0) + sq(c - 1.0) - 13.0;
  }
  Vec3 gradient(const Vec3& x) const override {
    double a = x.x * x.x, b = x.y * x.y, c = x.z * x.z;
    return {4.0 * x.x * (3.0 * a + b + c - 9.0),
            4.0 * x.y * (a + 3.0 * b + c - 9.0),
            4.0 * x.z * (a + b + 3.0 * c - 9.0)};
  }
  Mat3 hessian(const Vec3& x) const override {
    double a = x.x * x.x, b = x.y * x.y, c = x.z * x.z;
    Mat3 h = Mat3::zero();
    h(0, 0) = 4.0 * (3.0 * a + b + c - 9.0) + 24.0 * a;
    h(1, 1) = 4.0 * (a + 3.0 * b + c - 9.0) + 24.0 * b;
    h(2, 2) = 4.0 * (a + b + 3.0 * c - 9.0) + 24.0 * c;
    h(0, 1) = h(1, 0) = 8.0 * x.x * x.y;
    h(0, 2) = h(2, 0) = 8.0 * x.x * x.z;
    h(1, 2) = h(2, 1) = 8.0 * x.y * x.z;
    return h;
  }
};

// Closed-form expression wrapper; hessian may be omitted and falls back to
// central differences of the gradient.
class AnalyticLevelSet : public LevelSet {
 public:
  using ScalarFn = std::function<double(const Vec3&)>;
  using VectorFn = std::function<Vec3(const Vec3&)>;
  using MatrixFn = std::function<Mat3(const Vec3&)>;

  AnalyticLevelSet(ScalarFn value, VectorFn gradient, MatrixFn hessian = nullptr,
                   bool signed_distance = false)
      : value_(std::move(value)),
        gradient_(std::move(gradient)),
        hessian_(std::move(hessian)),
        signed_distance_(signed_distance) {}

  double value(const Vec3& x) const override { return value_(x); }
  Vec3 gradient(const Vec3& x) const override { return gradient_(x); }
  Mat3 hessian(const Vec3& x) const override {
    if (hessian_) return hessian_(x);
    const double d = 1e-5;
    Mat3 h;
    for (int j = 0; j < 3; ++j) {
      Vec3 e{};
      e[j] = d;
      Vec3 dg = (gradient_(x + e) - gradient_(x - e)) / (2.0 * d);
      for (int i = 0; i < 3; ++i) h(i, j) = dg[i];
    }
    // symmetrize
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j) h(i, j) = h(j, i) = 0.5 * (h(i, j) + h(j, i));
    return h;
  }
  bool is_signed_distance() const override { return signed_distance_; }

 private:
  ScalarFn value_;
  VectorFn gradient_;
  MatrixFn hessian_;
  bool signed_distance_;
};

// Pointwise differential data of the level set.
struct SurfaceDiffData {
  Vec3 point;
  double signed_value = 0.0;     // phi(x)
  Vec3 unit_normal;              // grad phi / |grad phi|
  Mat3 projector;                // I - n n^T
  Mat3 hessian_of_distance;      // P (grad^2 phi) P / |grad phi|
  double mean_curvature_trace = 0.0;
};

// Normal, projector and shape operator H = P grad^2(phi) P / |grad phi|.
// On the zero level this equals the Hessian of the signed distance.
inline SurfaceDiffData normal_hessian(const LevelSet& ls, const Vec3& x) {
  Vec3 g = ls.gradient(x);
  double gn = norm(g);
  if (gn < 1e-8)
    throw Error(ErrorCode::DegenerateGradient, "level set gradient below 1e-8");
  SurfaceDiffData d;
  d.point = x;
  d.signed_value = ls.value(x);
  d.unit_normal = g / gn;
  d.projector = tangential_projector(d.unit_normal);
  d.hessian_of_distance = d.projector * ls.hessian(x) * d.projector * (1.0 / gn);
  d.mean_curvature_trace = d.hessian_of_distance.trace();
  return d;
}

namespace project_detail {

// Damped Newton iteration y <- y - phi(y) grad(y) / |grad(y)|^2 with the
// direction re-evaluated every step; |phi| decreases monotonically.
inline Vec3 descend_to_surface(const LevelSet& ls, Vec3 y, double tol, int max_iter,
                               int& budget) {
  double phi = ls.value(y);
  while (budget-- > 0) {
    if (std::abs(phi) <= tol) return y;
    Vec3 g = ls.gradient(y);
    double g2 = norm2(g);
    if (g2 < 1e-16)
      throw Error(ErrorCode::DegenerateGradient, "level set gradient below 1e-8");
    Vec3 step = g * (phi / g2);
    double alpha = 1.0;
    for (int half = 0; half < 30; ++half) {
      double phi_try = ls.value(y - alpha * step);
      if (std::abs(phi_try) < std::abs(phi)) {
        y -= alpha * step;
        phi = phi_try;
        break;
      }
      alpha *= 0.5;
    }
  }
  throw Error(ErrorCode::NonConvergence,
              "closest-point projection did not converge in 50 iterations");
}

}  // namespace project_detail

// Closest-point projection p(x) onto the zero level set.
//
// Exact-distance fields use p = x - phi(x) n(x) directly. Otherwise damped
// Newton along the gradient direction reaches the surface, and Newton on the
// first-order optimality system
//   x - y - lam grad(y) = 0,  phi(y) = 0
// polishes the foot point; steps are damped on a combined residual merit.
inline Vec3 closest_point_project(const LevelSet& ls, const Vec3& x, double tol = 1e-12,
                                  int max_iter = 50) {
  Vec3 g0 = ls.gradient(x);
  double g0n = norm(g0);
  if (!(g0n >= 1e-8))
    throw Error(ErrorCode::DegenerateGradient, "level set gradient below 1e-8");
  if (ls.is_signed_distance()) return x - ls.value(x) * (g0 / g0n);

  int budget = max_iter;
  Vec3 y = project_detail::descend_to_surface(ls, x, tol, max_iter, budget);

  Vec3 gy = ls.gradient(y);
  double lam = dot(x - y, gy) / norm2(gy);
  const double scale = std::max(1.0, norm(x));
  auto merit = [&](const Vec3& yy, double ll) {
    Vec3 gg = ls.gradient(yy);
    return std::abs(ls.value(yy)) / std::max(1e-8, norm(gg)) + norm(x - yy - ll * gg);
  };

  double m = merit(y, lam);
  Vec3 best = y;
  double best_rt = 1e300;
  while (budget-- > 0) {
    gy = ls.gradient(y);
    double gyn = norm(gy);
    if (!(gyn >= 1e-8))
      throw Error(ErrorCode::DegenerateGradient, "level set gradient below 1e-8");
    double phi = ls.value(y);
    Vec3 r = x - y - lam * gy;
    Vec3 rt = r - dot(r, gy / gyn) * (gy / gyn);
    if (std::abs(phi) <= tol && norm(rt) < best_rt) {
      best = y;
      best_rt = norm(rt);
    }
    if (std::abs(phi) <= tol && norm(rt) <= 1e-13 * scale) return y;

    Mat3 H = ls.hessian(y);
    // assemble and solve the 4x4 Newton system with partial pivoting
    double A[4][5];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) A[i][j] = -((i == j ? 1.0 : 0.0) + lam * H(i, j));
      A[i][3] = -gy[i];
      A[i][4] = -r[i];
    }
    for (int j = 0; j < 3; ++j) A[3][j] = gy[j];
    A[3][3] = 0.0;
    A[3][4] = -phi;
    bool singular = false;
    for (int col = 0; col < 4 && !singular; ++col) {
      int piv = col;
      for (int row = col + 1; row < 4; ++row)
        if (std::abs(A[row][col]) > std::abs(A[piv][col])) piv = row;
      if (std::abs(A[piv][col]) < 1e-300) {
        singular = true;
        break;
      }
      if (piv != col)
        for (int c2 = 0; c2 < 5; ++c2) std::swap(A[piv][c2], A[col][c2]);
      for (int row = col + 1; row < 4; ++row) {
        double f = A[row][col] / A[col][col];
        for (int c2 = col; c2 < 5; ++c2) A[row][c2] -= f * A[col][c2];
      }
    }
    Vec3 dy{};
    double dlam = 0.0;
    if (!singular) {
      double sol[4];
      for (int row = 3; row >= 0; --row) {
        double s = A[row][4];
        for (int c2 = row + 1; c2 < 4; ++c2) s -= A[row][c2] * sol[c2];
        sol[row] = s / A[row][row];
      }
      dy = {sol[0], sol[1], sol[2]};
      dlam = sol[3];
    } else {
      dy = rt;  // gradient-flow fallback
      dlam = 0.0;
    }

    double step = 1.0;
    bool accepted = false;
    for (int half = 0; half < 8; ++half) {
      Vec3 y_try = y + step * dy;
      double lam_try = lam + step * dlam;
      double m_try = merit(y_try, lam_try);
      if (m_try < m * (1.0 - 1e-4 * step) || m_try <= tol) {
        y = y_try;
        lam = lam_try;
        m = m_try;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // re-land on the surface and restart the multiplier
      y = project_detail::descend_to_surface(ls, y, tol, max_iter, budget);
      gy = ls.gradient(y);
      lam = dot(x - y, gy) / norm2(gy);
      m = merit(y, lam);
    }
  }
  if (best_rt <= 1e-9 * scale) return best;
  throw Error(ErrorCode::NonConvergence,
              "closest-point projection did not converge in 50 iterations");
}

}  // namespace tracefem
