#include "doctest.h"

#include <random>

#include "pipeline.hpp"
#include "tracefem/solver.hpp"

using namespace tracefem;

namespace {

CsrMatrix dense_to_csr(std::int32_t n, const std::vector<double>& entries) {
  std::vector<Triplet> trip;
  for (std::int32_t r = 0; r < n; ++r)
    for (std::int32_t c = 0; c < n; ++c)
      if (entries[(std::size_t)(r * n + c)] != 0.0 || r == c)
        trip.push_back({r, c, entries[(std::size_t)(r * n + c)]});
  return CsrMatrix::from_triplets(n, trip);
}

// power iteration for the largest eigenvalue; inverse iteration via CG for
// the smallest (symmetric positive definite input)
double condition_estimate(const CsrMatrix& A, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v((std::size_t)A.n), w;
  for (double& x : v) x = gauss(gen);
  double lam_max = 0.0;
  for (int it = 0; it < 200; ++it) {
    A.multiply(v, w);
    lam_max = norm2v(w) / norm2v(v);
    double n2 = norm2v(w);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = w[i] / n2;
  }
  for (double& x : v) x = gauss(gen);
  double lam_min = lam_max;
  for (int it = 0; it < 60; ++it) {
    w.assign(v.size(), 0.0);
    solver_detail::conjugate_gradient(A, v, w, 1e-12, 10000);
    double n2 = norm2v(w);
    lam_min = norm2v(v) / n2;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = w[i] / n2;
  }
  return lam_max / lam_min;
}

}  // namespace

TEST_CASE("direct solve of a diagonal system") {
  CsrMatrix A = dense_to_csr(2, {2.0, 0.0, 0.0, 4.0});
  std::vector<double> x = solve(A, {2.0, 4.0});
  CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(x[1] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("diagonal scaling") {
  CsrMatrix I = dense_to_csr(2, {1.0, 0.0, 0.0, 1.0});
  ScaledSystem s = diagonal_scale(I, {1.0, 1.0}, true);
  CHECK(s.matrix.coeff(0, 0) == 1.0);
  CHECK(s.matrix.coeff(1, 1) == 1.0);

  CsrMatrix D = dense_to_csr(2, {4.0, 0.0, 0.0, 9.0});
  s = diagonal_scale(D, {1.0, 1.0}, true);
  CHECK(s.matrix.coeff(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.matrix.coeff(1, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(1.0 / s.scale[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(1.0 / s.scale[1] == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("zero row and column is reported singular with the dof id") {
  CsrMatrix A = dense_to_csr(3, {2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0});
  CHECK_THROWS_WITH_AS(solve(A, {1.0, 0.0, 1.0}), doctest::Contains("dof 1"), Error);
}

TEST_CASE("tiny-cut diagonal entries are dropped with a warning entry") {
  CsrMatrix A = dense_to_csr(3, {1.0, 0.1, 0.0, 0.1, 1e-20, 0.0, 0.0, 0.0, 2.0});
  LinearSolveReport rep;
  std::vector<double> x = solve(A, {1.0, 1.0, 2.0}, true, {}, rep);
  REQUIRE(rep.dropped_dofs.size() == 1);
  CHECK(rep.dropped_dofs[0] == 1);
  CHECK(x[1] == 0.0);
  CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(x[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("direct and conjugate-gradient answers agree on the Ex1 system") {
  SurfaceProblem p = builtin_problem("ex1");
  OctreeGrid g = pipeline::band_refined_grid(p, 0.25, 0);
  TrilinearField f = interpolate_levelset(g, *p.level_set);
  SurfaceTriangulation tri = extract_surface(g, f);
  DofMap dofs = build_dof_map(g, tri);
  TraceSystem sys = assemble(p, g, tri, dofs, {});
  REQUIRE(sys.matrix.n == 556);

  SolverOptions direct;
  direct.method = SolverOptions::Method::direct;
  SolverOptions iterative;
  iterative.method = SolverOptions::Method::iterative;
  LinearSolveReport rd, ri;
  std::vector<double> xd = solve(sys.matrix, sys.rhs, sys.symmetric, direct, rd);
  std::vector<double> xi = solve(sys.matrix, sys.rhs, sys.symmetric, iterative, ri);
  CHECK(rd.method == "direct");
  CHECK(ri.method == "cg");
  CHECK(rd.relative_residual <= 1e-10);
  CHECK(ri.relative_residual <= 1e-10);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < xd.size(); ++i) {
    num += (xd[i] - xi[i]) * (xd[i] - xi[i]);
    den += xd[i] * xd[i];
  }
  CHECK(std::sqrt(num / den) < 1e-8);
}

TEST_CASE("solution is invariant under scaling of the whole system") {
  SurfaceProblem p = builtin_problem("ex1");
  OctreeGrid g = pipeline::band_refined_grid(p, 0.25, 0);
  TrilinearField f = interpolate_levelset(g, *p.level_set);
  SurfaceTriangulation tri = extract_surface(g, f);
  DofMap dofs = build_dof_map(g, tri);
  TraceSystem sys = assemble(p, g, tri, dofs, {});

  std::vector<double> ref = solve(sys.matrix, sys.rhs, true);
  for (double alpha : {1e-6, 1e6}) {
    CsrMatrix As = sys.matrix;
    for (double& v : As.val) v *= alpha;
    std::vector<double> bs = sys.rhs;
    for (double& v : bs) v *= alpha;
    std::vector<double> x = solve(As, bs, true);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      num += (x[i] - ref[i]) * (x[i] - ref[i]);
      den += ref[i] * ref[i];
    }
    CHECK(std::sqrt(num / den) < 1e-9);
  }
}

TEST_CASE("diagonal scaling improves the spectral condition estimate") {
  SurfaceProblem p = builtin_problem("ex1");
  OctreeGrid g = pipeline::band_refined_grid(p, 0.25, 0);
  TrilinearField f = interpolate_levelset(g, *p.level_set);
  SurfaceTriangulation tri = extract_surface(g, f);
  DofMap dofs = build_dof_map(g, tri);
  TraceSystem sys = assemble(p, g, tri, dofs, {});

  ScaledSystem s = diagonal_scale(sys.matrix, sys.rhs, true);
  double cond_raw = condition_estimate(sys.matrix, 31);
  double cond_scaled = condition_estimate(s.matrix, 31);
  CHECK(cond_raw > 10.0 * cond_scaled);
  CHECK(s.report.diag_condition_proxy > 10.0);
}

TEST_CASE("iterative path reports NoConvergence with the iteration count") {
  SurfaceProblem p = builtin_problem("ex1");
  OctreeGrid g = pipeline::band_refined_grid(p, 0.25, 0);
  TrilinearField f = interpolate_levelset(g, *p.level_set);
  SurfaceTriangulation tri = extract_surface(g, f);
  DofMap dofs = build_dof_map(g, tri);
  TraceSystem sys = assemble(p, g, tri, dofs, {});

  SolverOptions o;
  o.method = SolverOptions::Method::iterative;
  o.max_iterations = 2;
  LinearSolveReport rep;
  CHECK_THROWS_WITH_AS(solve(sys.matrix, sys.rhs, true, o, rep),
                       doctest::Contains("NoConvergence"), Error);
}

TEST_CASE("bicgstab handles a nonsymmetric system") {
  // small advection-diffusion-like nonsymmetric matrix
  std::mt19937 gen(5);
  std::uniform_real_distribution<double> dist(-0.2, 0.2);
  const std::int32_t n = 60;
  std::vector<double> dense((std::size_t)(n * n), 0.0);
  for (std::int32_t i = 0; i < n; ++i) {
    dense[(std::size_t)(i * n + i)] = 2.5;
    if (i > 0) dense[(std::size_t)(i * n + i - 1)] = -1.0 + dist(gen);
    if (i + 1 < n) dense[(std::size_t)(i * n + i + 1)] = -1.0 + dist(gen);
  }
  CsrMatrix A = dense_to_csr(n, dense);
  std::vector<double> x_true((std::size_t)n);
  for (double& v : x_true) v = dist(gen) * 10.0;
  std::vector<double> b;
  A.multiply(x_true, b);
  SolverOptions o;
  o.method = SolverOptions::Method::iterative;
  LinearSolveReport rep;
  std::vector<double> x = solve(A, b, false, o, rep);
  CHECK(rep.method == "bicgstab");
  for (std::int32_t i = 0; i < n; ++i)
    CHECK(x[(std::size_t)i] == doctest::Approx(x_true[(std::size_t)i]).epsilon(1e-7));
}
