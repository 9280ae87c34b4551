// Surface advection-diffusion problem data and the built-in benchmark set.
//
// A problem bundles a level set with the PDE data of
//   -eps Lap_G u + w . grad_G u + (c + div_G w) u = f   on Gamma,
// all maps extended off the surface constant along normals: data(x) =
// data(p(x)) with the closest-point projection p. Benchmarks whose closed
// forms already are normal-constant evaluate them directly.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>

#include "tracefem/error.hpp"
#include "tracefem/levelset.hpp"

namespace tracefem {

struct SurfaceProblem {
  std::string id;
  LevelSetPtr level_set;
  double eps = 1.0;

  std::function<Vec3(const Vec3&)> velocity;    // w, tangential on Gamma
  std::function<double(const Vec3&)> reaction;  // c
  std::function<double(const Vec3&)> rhs;       // f

  std::function<double(const Vec3&)> exact_solution;        // u(p(x)), optional
  std::function<Vec3(const Vec3&)> exact_surface_gradient;  // grad_G u at p(x), optional
  std::function<double(const Vec3&)> div_gamma_w;           // div_G w at p(x), optional

  // Pure Laplace-Beltrami case (w = 0, c = 0): solution fixed by zero mean.
  bool zero_mean_mode = false;

  // Recommended bulk box (-box_half, box_half)^3.
  double box_half = 2.0;

  bool has_velocity() const { return static_cast<bool>(velocity); }
  bool has_exact_solution() const { return static_cast<bool>(exact_solution); }
};

struct ProblemParams {
  double eps = 1.0;       // Ex6 diffusion coefficient
  double lambda = 0.6;    // Ex5 singularity exponent
  bool x4_alternative = false;  // Ex4: read the garbled 4th point as (-1,-1,-2.04)
};

namespace detail {

inline Vec3 project_sphere(const Vec3& x) {
  double r = norm(x);
  return r > 0.0 ? x / r : Vec3{0.0, 0.0, 1.0};
}

// Eigenfunction benchmark on the unit sphere: u = 12 (3 x1^2 x2 - x2^3)/|x|^3,
// -Lap_G u + u = 13 u. The closed forms are degree-0 homogeneous and hence
// already normal-constant.
inline SurfaceProblem make_ex1() {
  SurfaceProblem p;
  p.id = "ex1";
  p.level_set = std::make_shared<Sphere>(1.0);
  p.eps = 1.0;
  p.reaction = [](const Vec3&) { return 1.0; };
  const double a = 12.0;
  auto u = [a](const Vec3& x) {
    double r = norm(x);
    return a / (r * r * r) * (3.0 * x.x * x.x * x.y - x.y * x.y * x.y);
  };
  p.exact_solution = u;
  p.rhs = [u](const Vec3& x) { return 13.0 * u(x); };
  p.exact_surface_gradient = [a](const Vec3& x) {
    Vec3 q = project_sphere(x);
    double g = 3.0 * q.x * q.x * q.y - q.y * q.y * q.y;
    Vec3 dg{6.0 * q.x * q.y, 3.0 * q.x * q.x - 3.0 * q.y * q.y, 0.0};
    return a * (dg - 3.0 * g * q);
  };
  p.box_half = 2.0;
  return p;
}

// Same equation on the torus R = 1, r = 0.6 with data given in the torus
// angles (phi around the axis, theta around the tube); both angles are
// constant along normals, so direct evaluation is the normal extension.
inline SurfaceProblem make_ex2() {
  const double R = 1.0, r = 0.6;
  SurfaceProblem p;
  p.id = "ex2";
  p.level_set = std::make_shared<Torus>(R, r);
  p.eps = 1.0;
  p.reaction = [](const Vec3&) { return 1.0; };
  auto angles = [R](const Vec3& x) {
    double s = std::hypot(x.x, x.y);
    return std::pair<double, double>(std::atan2(x.y, x.x), std::atan2(x.z, s - R));
  };
  auto u = [angles](const Vec3& x) {
    auto [phi, theta] = angles(x);
    return std::sin(3.0 * phi) * std::cos(3.0 * theta + phi);
  };
  p.exact_solution = u;
  p.rhs = [angles, u, R, r](const Vec3& x) {
    auto [phi, theta] = angles(x);
    double s3p = std::sin(3.0 * phi), c3p = std::cos(3.0 * phi);
    double sv = std::sin(3.0 * theta + phi), cv = std::cos(3.0 * theta + phi);
    double ring = R + r * std::cos(theta);
    return 9.0 / (r * r) * s3p * cv -
           (-10.0 * s3p * cv - 6.0 * c3p * sv) / (ring * ring) -
           3.0 * std::sin(theta) * s3p * sv / (r * ring) + u(x);
  };
  p.exact_surface_gradient = [angles, R, r](const Vec3& x) {
    auto [phi, theta] = angles(x);
    double s3p = std::sin(3.0 * phi), c3p = std::cos(3.0 * phi);
    double sv = std::sin(3.0 * theta + phi), cv = std::cos(3.0 * theta + phi);
    double du_dphi = 3.0 * c3p * cv - s3p * sv;
    double du_dtheta = -3.0 * s3p * sv;
    Vec3 e_phi{-std::sin(phi), std::cos(phi), 0.0};
    Vec3 e_theta{-std::cos(phi) * std::sin(theta), -std::sin(phi) * std::sin(theta),
                 std::cos(theta)};
    double ring = R + r * std::cos(theta);
    return e_phi * (du_dphi / ring) + e_theta * (du_dtheta / r);
  };
  p.box_half = 2.0;
  return p;
}

// Wavy surface, u = x1 x2 on Gamma. The right-hand side needs the normal and
// the trace of the shape operator; both come from the analytic level set
// derivatives and the data is extended via closest-point composition.
inline SurfaceProblem make_ex3() {
  SurfaceProblem p;
  p.id = "ex3";
  auto ls = std::make_shared<WavyCigar>();
  p.level_set = ls;
  p.eps = 1.0;
  p.reaction = [](const Vec3&) { return 1.0; };
  p.exact_solution = [ls](const Vec3& x) {
    Vec3 q = closest_point_project(*ls, x);
    return q.x * q.y;
  };
  p.rhs = [ls](const Vec3& x) {
    Vec3 q = closest_point_project(*ls, x);
    SurfaceDiffData d = normal_hessian(*ls, q);
    const Vec3& n = d.unit_normal;
    return q.x * q.y + 2.0 * n.x * n.y +
           d.mean_curvature_trace * (q.x * n.y + q.y * n.x);
  };
  p.exact_surface_gradient = [ls](const Vec3& x) {
    Vec3 q = closest_point_project(*ls, x);
    SurfaceDiffData d = normal_hessian(*ls, q);
    return d.projector * Vec3{q.y, q.x, 0.0};
  };
  p.box_half = 2.5;
  return p;
}

// Laplace-Beltrami equation on the six-handle surface with four Gaussian
// sources near the surface; no closed-form solution, zero-mean closure.
inline SurfaceProblem make_ex4(bool x4_alternative) {
  SurfaceProblem p;
  p.id = "ex4";
  auto ls = std::make_shared<SixHandleSurface>();
  p.level_set = ls;
  p.eps = 1.0;
  p.reaction = [](const Vec3&) { return 0.0; };
  p.zero_mean_mode = true;
  const Vec3 x4 = x4_alternative ? Vec3{-1.0, -1.0, -2.04} : Vec3{0.0, -1.0, -2.04};
  const std::array<Vec3, 4> centers{Vec3{-1.0, 1.0, 2.04}, Vec3{1.0, 2.04, 1.0},
                                    Vec3{2.04, 0.0, 1.0}, x4};
  p.rhs = [ls, centers](const Vec3& x) {
    Vec3 q = closest_point_project(*ls, x);
    double s = 0.0;
    for (const Vec3& c : centers) s += std::exp(-norm2(q - c));
    return 100.0 * s;
  };
  p.box_half = 3.0;
  return p;
}

// Point singularity on the unit sphere: u = sin^lambda(theta) sin(phi) with
// the polar angle theta; u is in H^1 but not H^2 for lambda < 1.
inline SurfaceProblem make_ex5(double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0))
    throw Error(ErrorCode::ConfigError, "ex5 requires lambda in (0, 1]");
  SurfaceProblem p;
  p.id = "ex5";
  p.level_set = std::make_shared<Sphere>(1.0);
  p.eps = 1.0;
  p.reaction = [](const Vec3&) { return 1.0; };
  auto sph = [](const Vec3& x) {
    double r = norm(x);
    double sxy = std::hypot(x.x, x.y);
    double st = sxy / r;                           // sin(theta)
    double ct = x.z / r;                           // cos(theta)
    double sp = sxy > 0.0 ? x.y / sxy : 0.0;       // sin(phi)
    double cp = sxy > 0.0 ? x.x / sxy : 1.0;       // cos(phi)
    return std::array<double, 4>{st, ct, sp, cp};
  };
  p.exact_solution = [sph, lambda](const Vec3& x) {
    auto [st, ct, sp, cp] = sph(x);
    return st > 0.0 ? std::pow(st, lambda) * sp : 0.0;
  };
  p.rhs = [sph, lambda](const Vec3& x) {
    auto [st, ct, sp, cp] = sph(x);
    double s = std::max(st, 1e-14);
    return (1.0 + lambda * lambda + lambda) * std::pow(s, lambda) * sp +
           (1.0 - lambda * lambda) * std::pow(s, lambda - 2.0) * sp;
  };
  p.exact_surface_gradient = [sph, lambda](const Vec3& x) {
    auto [st, ct, sp, cp] = sph(x);
    double s = std::max(st, 1e-14);
    double f = std::pow(s, lambda - 1.0);
    double k = lambda * ct * ct - 1.0;
    return Vec3{f * 0.5 * (2.0 * sp * cp) * k,       // sin(2 phi)/2 * k
                f * (sp * sp * k + 1.0),
                -f * 0.5 * lambda * (2.0 * st * ct) * sp};
  };
  p.box_half = 2.0;
  return p;
}

// Advection-diffusion on the unit sphere with an internal layer along the
// equator of width O(sqrt(eps)); Pe = 1/eps. The azimuthal velocity field is
// divergence-free on the sphere.
inline SurfaceProblem make_ex6(double eps) {
  if (!(eps >= 1e-6 && eps <= 1.0))
    throw Error(ErrorCode::ConfigError, "ex6 requires eps in [1e-6, 1]");
  SurfaceProblem p;
  p.id = "ex6";
  p.level_set = std::make_shared<Sphere>(1.0);
  p.eps = eps;
  p.reaction = [](const Vec3&) { return 1.0; };
  p.velocity = [](const Vec3& x) {
    Vec3 q = project_sphere(x);
    double g = std::sqrt(std::max(0.0, 1.0 - q.z * q.z));
    return Vec3{-q.y * g, q.x * g, 0.0};
  };
  p.div_gamma_w = [](const Vec3&) { return 0.0; };
  auto u = [eps](const Vec3& x) {
    Vec3 q = project_sphere(x);
    return q.x * q.y * std::atan(2.0 * q.z / std::sqrt(eps));
  };
  p.exact_solution = u;
  p.rhs = [eps, u](const Vec3& x) {
    Vec3 q = project_sphere(x);
    double e32 = eps * std::sqrt(eps);
    double den = eps + 4.0 * q.z * q.z;
    double at = std::atan(2.0 * q.z / std::sqrt(eps));
    return 12.0 * e32 * q.x * q.y * q.z / den +
           16.0 * e32 * (1.0 - q.z * q.z) * q.x * q.y * q.z / (den * den) +
           (6.0 * eps * q.x * q.y +
            std::hypot(q.x, q.y) * (q.x * q.x - q.y * q.y)) * at +
           u(x);
  };
  p.exact_surface_gradient = [eps](const Vec3& x) {
    Vec3 q = project_sphere(x);
    double at = std::atan(2.0 * q.z / std::sqrt(eps));
    double dat = 2.0 * std::sqrt(eps) / (eps + 4.0 * q.z * q.z);
    Vec3 grad{q.y * at, q.x * at, q.x * q.y * dat};
    return grad - dot(grad, q) * q;
  };
  p.box_half = 2.0;
  return p;
}

}  // namespace detail

// Built-in benchmark problems, selectable by string id "ex1".."ex6".
inline SurfaceProblem builtin_problem(const std::string& id,
                                      const ProblemParams& params = {}) {
  if (id == "ex1") return detail::make_ex1();
  if (id == "ex2") return detail::make_ex2();
  if (id == "ex3") return detail::make_ex3();
  if (id == "ex4") return detail::make_ex4(params.x4_alternative);
  if (id == "ex5") return detail::make_ex5(params.lambda);
  if (id == "ex6") return detail::make_ex6(params.eps);
  throw Error(ErrorCode::UnknownProblemId, "no builtin problem '" + id + "'");
}

}  // namespace tracefem
