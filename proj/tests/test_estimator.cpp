#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "pipeline.hpp"
#include "tracefem/estimator.hpp"

using namespace tracefem;

namespace {

SurfaceProblem plane_problem(double z0) {
  SurfaceProblem p;
  p.id = "plane";
  p.level_set = std::make_shared<AnalyticLevelSet>(
      [z0](const Vec3& x) { return x.z - z0; },
      [](const Vec3&) { return Vec3{0.0, 0.0, 1.0}; },
      [](const Vec3&) { return Mat3::zero(); });
  p.eps = 1.0;
  p.reaction = [](const Vec3&) { return 1.0; };
  p.rhs = [](const Vec3&) { return 1.0; };
  p.box_half = 0.5;
  return p;
}

}  // namespace

TEST_CASE("residual indicator vanishes for the exact patch solution") {
  SurfaceProblem p = plane_problem(0.5);
  OctreeGrid g = OctreeGrid::build_uniform(0.0, 1.0, 1.0);
  TrilinearField f = interpolate_levelset(g, *p.level_set);
  SurfaceTriangulation tri = extract_surface(g, f);
  std::vector<double> ones(g.nodes().size(), 1.0);
  QuadratureRule rule = triangle_rule(7);
  for (std::size_t t = 0; t < tri.triangles.size(); ++t)
    CHECK(eta_residual(p, g, tri, t, ones, rule) < 1e-28);
}

TEST_CASE("residual indicator for constant load and zero solution") {
  SurfaceProblem p = plane_problem(0.5);
  p.reaction = [](const Vec3&) { return 0.7; };  // value irrelevant for u = 0
  OctreeGrid g = OctreeGrid::build_uniform(0.0, 1.0, 1.0);
  TrilinearField f = interpolate_levelset(g, *p.level_set);
  SurfaceTriangulation tri = extract_surface(g, f);
  std::vector<double> zeros(g.nodes().size(), 0.0);
  QuadratureRule rule = triangle_rule(7);
  double h = 1.0;
  for (std::size_t t = 0; t < tri.triangles.size(); ++t) {
    double expected = h * h * tri.triangles[t].area;  // residual = f = 1
    CHECK(eta_residual(p, g, tri, t, zeros, rule) == doctest::Approx(expected).epsilon(1e-13));
  }
}

TEST_CASE("residual indicator matches the dense Gauss-product oracle") {
  SurfaceProblem p = plane_problem(0.55);
  p.rhs = [](const Vec3& x) { return 0.4 + 0.8 * x.y - 0.3 * x.x; };
  p.velocity = [](const Vec3&) { return Vec3{0.2, -0.1, 0.0}; };
  p.div_gamma_w = [](const Vec3&) { return 0.0; };
  OctreeGrid g = OctreeGrid::build_uniform(0.0, 1.0, 0.5);
  TrilinearField f = interpolate_levelset(g, *p.level_set);
  SurfaceTriangulation tri = extract_surface(g, f);

  std::mt19937 gen(41);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> nodal(g.nodes().size());
  for (double& v : nodal) v = dist(gen);

  QuadratureRule rule = triangle_rule(7);
  FemFunction uh{&g, &nodal};
  for (std::size_t t = 0; t < tri.triangles.size(); ++t) {
    const SurfaceTriangle& T = tri.triangles[t];
    const Mat3 proj = tangential_projector(T.normal);
    double h = g.cell_size(T.parent);
    auto integrand = [&](const Vec3& x) {
      TrilinearBasis b = trilinear_basis(g, T.parent, x);
      double u = uh.value(T.parent, b);
      Vec3 tg = proj * uh.gradient(T.parent, b);
      Mat3 hs = uh.hessian(T.parent, b);
      double lap = 0.0;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) lap += hs(r, c) * proj(c, r);
      double res = p.rhs(x) + p.eps * lap - p.reaction(x) * u - dot(p.velocity(x), tg);
      return res * res;
    };
    double oracle =
        h * h * oracles::duffy_integrate(tri.vertices[(std::size_t)T.v[0]],
                                         tri.vertices[(std::size_t)T.v[1]],
                                         tri.vertices[(std::size_t)T.v[2]], integrand);
    double impl = eta_residual(p, g, tri, t, nodal, rule);
    CHECK(impl == doctest::Approx(oracle).epsilon(1e-8));
  }
}

TEST_CASE("edge co-normals: coplanar and perpendicular configurations") {
  // coplanar triangles in z = 0 sharing the edge (0,0,0)-(1,0,0)
  Vec3 a{0.0, 0.0, 0.0}, b{1.0, 0.0, 0.0};
  Vec3 n{0.0, 0.0, 1.0};
  Vec3 m_plus = est_detail::edge_conormal(a, b, {0.5, 1.0, 0.0}, n);
  Vec3 m_minus = est_detail::edge_conormal(a, b, {0.5, -1.0, 0.0}, n);
  CHECK(norm(m_plus + m_minus) < 1e-14);

  // dihedral angle pi/2: second triangle in the y = 0 plane
  Vec3 m_perp = est_detail::edge_conormal(a, b, {0.5, 0.0, 1.0}, {0.0, -1.0, 0.0});
  CHECK(norm(m_plus + m_perp) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("edge indicator pieces on the clipped plane") {
  SurfaceProblem p = plane_problem(0.5);
  OctreeGrid g = OctreeGrid::build_uniform(0.0, 1.0, 1.0);
  TrilinearField f = interpolate_levelset(g, *p.level_set);
  SurfaceTriangulation tri = extract_surface(g, f);
  REQUIRE(tri.triangles.size() == 2);
  auto edges = tri.build_edge_table();
  std::vector<double> nodal(g.nodes().size());
  for (std::size_t i = 0; i < nodal.size(); ++i) {
    Vec3 q = g.nodes()[i].pos;
    nodal[i] = 0.3 + q.x - 0.2 * q.y + 0.7 * q.z + 0.4 * q.x * q.y * q.z;
  }
  // open boundary edges of the clipped plane are reported
  CHECK_THROWS_WITH_AS(eta_edge(p, g, tri, 0, nodal, edges, true),
                       doctest::Contains("BoundaryEdge"), Error);

  // across the interior diagonal the tangential-gradient jump vanishes since
  // both triangles restrict the same trilinear from the same cell
  FemFunction uh{&g, &nodal};
  const SurfaceTriangle& T0 = tri.triangles[0];
  const SurfaceTriangle& T1 = tri.triangles[1];
  Mat3 proj = tangential_projector(T0.normal);
  Vec3 x{0.4, 0.4, 0.5};
  Vec3 g0 = proj * uh.gradient(T0.parent, trilinear_basis(g, T0.parent, x));
  Vec3 g1 = proj * uh.gradient(T1.parent, trilinear_basis(g, T1.parent, x));
  CHECK(norm(g0 - g1) < 1e-14);
}

TEST_CASE("edge indicator decreases at second order for the smooth benchmark") {
  SurfaceProblem p = builtin_problem("ex1");
  double sums[2];
  int idx = 0;
  for (int rounds : {1, 2}) {
    pipeline::Solved s = pipeline::solve_problem(p, pipeline::band_refined_grid(p, 0.25, rounds));
    auto edges = s.tri.build_edge_table();
    double sum = 0.0;
    for (std::size_t t = 0; t < s.tri.triangles.size(); ++t)
      sum += eta_edge(p, s.grid, s.tri, t, s.nodal, edges, true);
    sums[idx++] = sum;
  }
  double ratio = sums[0] / sums[1];
  CHECK(ratio > 3.0);
  CHECK(ratio < 5.0);
}

TEST_CASE("geometric indicator") {
  SurfaceProblem p = plane_problem(0.5);
  OctreeGrid g = OctreeGrid::build_uniform(0.0, 1.0, 1.0);
  TrilinearField f = interpolate_levelset(g, *p.level_set);
  SurfaceTriangulation tri = extract_surface(g, f);
  std::vector<double> zeros(g.nodes().size(), 0.0);
  QuadratureRule rule = triangle_rule(7);
  for (std::size_t t = 0; t < tri.triangles.size(); ++t)
    CHECK(eta_geometric(p, g, tri, t, zeros, rule) == 0.0);  // flat surface: H = 0

  // unit sphere with u = 0, f = 1: eta_G^2 = h^4 |H|_F^2 area, |H|_F ~ sqrt(2)
  SurfaceProblem sp = builtin_problem("ex1");
  sp.rhs = [](const Vec3&) { return 1.0; };
  double density[2];
  int idx = 0;
  for (double h : {0.25, 0.125}) {
    OctreeGrid sg = OctreeGrid::build_uniform(-2.0, 2.0, h);
    TrilinearField sf = interpolate_levelset(sg, *sp.level_set);
    SurfaceTriangulation stri = extract_surface(sg, sf);
    std::vector<double> szero(sg.nodes().size(), 0.0);
    double sum = 0.0, area = 0.0;
    for (std::size_t t = 0; t < stri.triangles.size(); ++t) {
      sum += eta_geometric(sp, sg, stri, t, szero, rule);
      area += stri.triangles[t].area;
    }
    double expected = h * h * h * h * 2.0 * area;  // |H|_F^2 = 2 on the unit sphere
    CHECK(sum == doctest::Approx(expected).epsilon(0.05));
    density[idx++] = sum / area;
  }
  CHECK(density[0] / density[1] == doctest::Approx(16.0).epsilon(0.1));
}

TEST_CASE("combined indicator weights") {
  SurfaceProblem p = builtin_problem("ex1");
  pipeline::Solved s = pipeline::solve_problem(p, pipeline::band_refined_grid(p, 0.25, 0));
  EstimatorOptions opts;
  opts.alpha_g = 1.0;
  auto cells = estimate(p, s.grid, s.tri, s.nodal, opts);
  REQUIRE(!cells.empty());
  for (const auto& ci : cells) {
    CHECK(ci.alpha_r == 1.0);
    CHECK(ci.alpha_e == 1.0);
    CHECK(ci.alpha_g == 1.0);
    CHECK(ci.eta_r2 >= 0.0);
    CHECK(ci.eta_e2 >= 0.0);
    CHECK(ci.eta_g2 >= 0.0);
    double combined = ci.alpha_r * ci.eta_r2 + ci.alpha_e * ci.eta_e2 + ci.alpha_g * ci.eta_g2;
    CHECK(std::abs(ci.eta * ci.eta - combined) <= 1e-12 * std::max(1.0, combined));
  }

  // advection weights at eps = 1e-4, h = 1/8
  SurfaceProblem adv = builtin_problem("ex6", {.eps = 1e-4});
  pipeline::Solved sa = pipeline::solve_problem(adv, pipeline::band_refined_grid(adv, 0.125, 0));
  EstimatorOptions aopts;
  aopts.mode = EstimatorOptions::Mode::advection;
  auto acells = estimate(adv, sa.grid, sa.tri, sa.nodal, aopts);
  for (const auto& ci : acells) {
    CHECK(ci.alpha_r == doctest::Approx(64.0));
    CHECK(ci.alpha_e == doctest::Approx(800.0));
    CHECK(ci.alpha_g == 0.0);
  }

  // eps = 1 reduces both weights to 1 at h = 1/8
  SurfaceProblem mild = builtin_problem("ex6", {.eps = 1.0});
  auto mcells = estimate(mild, sa.grid, sa.tri, sa.nodal, aopts);
  for (const auto& ci : mcells) {
    CHECK(ci.alpha_r == doctest::Approx(1.0));
    CHECK(ci.alpha_e == doctest::Approx(1.0));
  }
}

TEST_CASE("the co-normal velocity edge term is removable") {
  SurfaceProblem p = builtin_problem("ex6", {.eps = 1e-2});
  AssemblyOptions opts;
  opts.variant = Variant::supg;
  pipeline::Solved s = pipeline::solve_problem(p, pipeline::band_refined_grid(p, 0.25, 0), opts);
  EstimatorOptions with, without;
  without.edge_velocity_term = false;
  auto a = estimate(p, s.grid, s.tri, s.nodal, with);
  auto b = estimate(p, s.grid, s.tri, s.nodal, without);
  double sum_with = 0.0, sum_without = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum_with += a[i].eta_e2;
    sum_without += b[i].eta_e2;
    CHECK(b[i].eta_e2 <= a[i].eta_e2 * (1.0 + 1e-12));
    // residual parts are untouched by the toggle
    CHECK(a[i].eta_r2 == b[i].eta_r2);
  }
  CHECK(sum_without < sum_with);
}

TEST_CASE("maximum marking") {
  auto make = [](std::initializer_list<double> etas) {
    std::vector<CellIndicator> v;
    int i = 0;
    for (double e : etas) {
      CellIndicator ci;
      ci.cell = CellKey{0, i++, 0, 0};
      ci.eta = e;
      v.push_back(ci);
    }
    return v;
  };
  auto marked = mark_maximum(make({1.0, 0.6, 0.4}));
  REQUIRE(marked.size() == 2);
  CHECK(marked[0].i == 0);
  CHECK(marked[1].i == 1);

  CHECK(mark_maximum(make({0.7, 0.7, 0.7})).size() == 3);
  CHECK(mark_maximum(make({0.5})).size() == 1);

  // invariance under positive scaling
  std::mt19937 gen(17);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  auto base = make({});
  for (int i = 0; i < 40; ++i) {
    CellIndicator ci;
    ci.cell = CellKey{0, i, 0, 0};
    ci.eta = dist(gen);
    base.push_back(ci);
  }
  auto m1 = mark_maximum(base);
  for (double lambda : {1e-8, 3.7, 1e9}) {
    auto scaled = base;
    for (auto& ci : scaled) ci.eta *= lambda;
    auto m2 = mark_maximum(scaled);
    REQUIRE(m1.size() == m2.size());
    for (std::size_t i = 0; i < m1.size(); ++i) CHECK(m1[i] == m2[i]);
  }
}

TEST_CASE("patch solution leaves only geometric and edge parts, decreasing in h") {
  SurfaceProblem p = builtin_problem("ex1");
  p.reaction = [](const Vec3&) { return 1.0; };
  p.rhs = [](const Vec3&) { return 1.0; };
  p.exact_solution = nullptr;
  double eta_sums[2];
  int idx = 0;
  for (int rounds : {0, 1}) {
    pipeline::Solved s = pipeline::solve_problem(p, pipeline::band_refined_grid(p, 0.25, rounds));
    EstimatorOptions opts;
    opts.alpha_g = 1.0;
    auto cells = estimate(p, s.grid, s.tri, s.nodal, opts);
    double r2 = 0.0, rest = 0.0;
    for (const auto& ci : cells) {
      r2 += ci.eta_r2;
      rest += ci.eta_e2 + ci.eta_g2;
    }
    CHECK(r2 < 1e-18);
    eta_sums[idx++] = rest;
  }
  CHECK(eta_sums[1] < eta_sums[0]);
}

TEST_CASE("adaptive loop: zero-step budget returns the initial solve only") {
  SurfaceProblem p = builtin_problem("ex1");
  AdaptControls controls;
  controls.max_steps = 0;
  AdaptResult res = adapt_loop(p, pipeline::band_refined_grid(p, 0.25, 0), controls);
  CHECK(res.steps.size() == 1);
  CHECK(res.steps[0].dofs == 556);
  CHECK(res.marked.empty());
}

TEST_CASE("adaptive loop stops at the dof budget") {
  SurfaceProblem p = builtin_problem("ex1");
  AdaptControls controls;
  controls.max_steps = 50;
  controls.dof_budget = 2000;
  AdaptResult res = adapt_loop(p, pipeline::band_refined_grid(p, 0.25, 0), controls);
  CHECK(res.steps.size() < 10);
  CHECK(res.steps.back().dofs >= 2000);
  for (std::size_t i = 0; i + 1 < res.steps.size(); ++i) CHECK(res.steps[i].dofs < 2000);
}

TEST_CASE("adaptive loop concentrates near the Ex5 poles") {
  SurfaceProblem p = builtin_problem("ex5", {.lambda = 0.6});
  AdaptControls controls;
  controls.max_steps = 12;
  AdaptResult res = adapt_loop(p, pipeline::band_refined_grid(p, 0.25, 0), controls);
  REQUIRE(res.steps.size() == 13);

  // the deepest refinement sits at the singular poles: every band cell
  // within one level of the deepest is near a pole, and the depth spread is
  // large
  const OctreeGrid& g = res.state.grid;
  int deepest = 0, shallow = 1000;
  for (const CellKey& c : res.state.tri.band_cells) {
    deepest = std::max(deepest, c.level);
    shallow = std::min(shallow, c.level);
  }
  CHECK(deepest - shallow >= 5);
  for (const CellKey& c : res.state.tri.band_cells) {
    if (c.level < deepest - 1) continue;
    Vec3 ctr = g.cell_center(c);
    double d = std::min(norm(ctr - Vec3{0.0, 0.0, 1.0}), norm(ctr - Vec3{0.0, 0.0, -1.0}));
    CHECK(d < 0.3);
  }
  // marking touches the poles in every early step
  for (std::size_t step = 0; step < 4; ++step) {
    std::size_t near = 0;
    for (const CellKey& c : res.marked[step]) {
      Vec3 ctr = g.cell_center(c);
      if (std::min(norm(ctr - Vec3{0.0, 0.0, 1.0}), norm(ctr - Vec3{0.0, 0.0, -1.0})) < 0.3)
        ++near;
    }
    CHECK(near * 2 >= res.marked[step].size());
  }
  CHECK(res.steps.back().l2 < res.steps.front().l2);
}

TEST_CASE("adaptive loop follows curvature on the wavy surface") {
  SurfaceProblem p = builtin_problem("ex3");
  AdaptControls controls;
  controls.max_steps = 5;
  controls.estimator.alpha_g = 1.0;
  AdaptResult res = adapt_loop(p, pipeline::band_refined_grid(p, 0.25, 0), controls);

  // correlation between refinement level and curvature across band cells
  std::vector<double> lev, curv;
  for (const CellKey& c : res.state.tri.band_cells) {
    lev.push_back((double)c.level);
    Vec3 q = closest_point_project(*p.level_set, res.state.grid.cell_center(c));
    curv.push_back(normal_hessian(*p.level_set, q).hessian_of_distance.frobenius());
  }
  double ml = 0.0, mc = 0.0;
  for (std::size_t i = 0; i < lev.size(); ++i) {
    ml += lev[i];
    mc += curv[i];
  }
  ml /= (double)lev.size();
  mc /= (double)lev.size();
  double cov = 0.0, vl = 0.0, vc = 0.0;
  for (std::size_t i = 0; i < lev.size(); ++i) {
    cov += (lev[i] - ml) * (curv[i] - mc);
    vl += (lev[i] - ml) * (lev[i] - ml);
    vc += (curv[i] - mc) * (curv[i] - mc);
  }
  CHECK(cov / std::sqrt(vl * vc) > 0.0);
}

TEST_CASE("adaptive solution on the six-handle surface peaks near the sources") {
  SurfaceProblem p = builtin_problem("ex4");
  AdaptControls controls;
  controls.max_steps = 4;
  controls.estimator.alpha_g = 1.0;
  AdaptResult res = adapt_loop(p, pipeline::band_refined_grid(p, 0.25, 0), controls);
  REQUIRE(res.steps.size() == 5);

  const std::array<Vec3, 4> sources{Vec3{-1.0, 1.0, 2.04}, Vec3{1.0, 2.04, 1.0},
                                    Vec3{2.04, 0.0, 1.0}, Vec3{0.0, -1.0, -2.04}};
  const AdaptState& st = res.state;
  FemFunction uh{&st.grid, &st.nodal};
  const QuadratureRule rule = triangle_rule(2);
  double best = -1e300;
  Vec3 at{};
  for (std::size_t bi = 0; bi < st.tri.band_cells.size(); ++bi) {
    auto [tb, te] = st.tri.cell_tris[bi];
    for (std::int32_t t = tb; t < te; ++t) {
      const auto& T = st.tri.triangles[(std::size_t)t];
      for (const auto& qp : rule.points) {
        Vec3 x = barycentric_point(st.tri.vertices[(std::size_t)T.v[0]],
                                   st.tri.vertices[(std::size_t)T.v[1]],
                                   st.tri.vertices[(std::size_t)T.v[2]], qp);
        double v = uh.value(st.tri.band_cells[bi],
                            trilinear_basis(st.grid, st.tri.band_cells[bi], x));
        if (v > best) {
          best = v;
          at = x;
        }
      }
    }
  }
  double dist = 1e300;
  for (const Vec3& s : sources) dist = std::min(dist, norm(at - s));
  CHECK(dist < 0.8);
}

TEST_CASE("estimator efficiency stays within a fixed band on Ex1") {
  SurfaceProblem p = builtin_problem("ex1");
  for (int rounds : {0, 1, 2}) {
    pipeline::Solved s = pipeline::solve_problem(p, pipeline::band_refined_grid(p, 0.25, rounds));
    ErrorReport rep = error_norms(p, s.grid, s.tri, s.nodal, s.dofs.size());
    auto cells = estimate(p, s.grid, s.tri, s.nodal, {});
    double sum = 0.0;
    for (const auto& ci : cells) sum += ci.eta * ci.eta;
    double ratio = std::sqrt(sum) / rep.h1;
    CHECK(ratio > 0.1);
    CHECK(ratio < 50.0);
  }
}
