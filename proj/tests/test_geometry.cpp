#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "fieldflow/geometry.hpp"

using namespace fieldflow;

namespace {

// All-pairs reference for the hashed radius search.
Eigen::Matrix<std::int32_t, Eigen::Dynamic, 2> brute_force_edges(
    const PointSet& input, const LatentGrid& query, double radius) {
  std::vector<std::array<std::int32_t, 2>> pairs;
  const double r2 = radius * radius;
  for (Eigen::Index q = 0; q < query.query_positions.rows(); ++q)
    for (Eigen::Index i = 0; i < input.positions.rows(); ++i) {
      const double d2 =
          (input.positions.row(i) - query.query_positions.row(q)).squaredNorm();
      if (d2 <= r2)
        pairs.push_back({static_cast<std::int32_t>(q), static_cast<std::int32_t>(i)});
    }
  Eigen::Matrix<std::int32_t, Eigen::Dynamic, 2> out(
      static_cast<Eigen::Index>(pairs.size()), 2);
  for (std::size_t e = 0; e < pairs.size(); ++e) {
    out(static_cast<Eigen::Index>(e), 0) = pairs[e][0];
    out(static_cast<Eigen::Index>(e), 1) = pairs[e][1];
  }
  return out;
}

PointSet random_box_points(int n, int dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd pos(n, dim);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) pos(i, d) = u(rng);
  return make_point_set(std::move(pos), Domain::unit_box(dim));
}

PointSet random_sphere_points(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd pos(n, 3);
  for (int i = 0; i < n; ++i) {
    Eigen::Vector3d v(g(rng), g(rng), g(rng));
    pos.row(i) = v.normalized().transpose();
  }
  return make_point_set(std::move(pos), Domain::sphere(1.0));
}

}  // namespace

TEST_CASE("domain constructors enforce preconditions") {
  CHECK_THROWS_AS(Domain::box(Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(2)),
                  std::invalid_argument);
  CHECK_THROWS_AS(Domain::box(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Ones(4)),
                  std::invalid_argument);
  CHECK_THROWS_AS(Domain::sphere(0.0), std::invalid_argument);
  CHECK(Domain::unit_box(3).dim() == 3);
  CHECK(Domain::sphere(2.0).dim() == 3);
}

TEST_CASE("point set validation catches bad coordinates") {
  Eigen::MatrixXd ok(2, 2);
  ok << 0.2, 0.3, 0.9, 0.1;
  CHECK_NOTHROW(make_point_set(ok, Domain::unit_box(2)));

  Eigen::MatrixXd outside = ok;
  outside(1, 0) = 1.5;
  CHECK_THROWS_AS(make_point_set(outside, Domain::unit_box(2)),
                  std::invalid_argument);

  Eigen::MatrixXd nonfinite = ok;
  nonfinite(0, 1) = std::nan("");
  CHECK_THROWS_AS(make_point_set(nonfinite, Domain::unit_box(2)),
                  std::invalid_argument);

  CHECK_THROWS_AS(make_point_set(ok, Domain::unit_box(1)), std::invalid_argument);

  Eigen::MatrixXd off_sphere(1, 3);
  off_sphere << 0.5, 0.5, 0.5;
  CHECK_THROWS_AS(make_point_set(off_sphere, Domain::sphere(1.0)),
                  std::invalid_argument);
}

TEST_CASE("regular grid uses cell centers") {
  LatentGrid one = make_regular_grid(1, 1, Domain::unit_box(2));
  REQUIRE(one.size() == 1);
  CHECK(one.query_positions(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(one.query_positions(0, 1) == doctest::Approx(0.5).epsilon(1e-15));

  LatentGrid g = make_regular_grid(16, 16, Domain::unit_box(2));
  REQUIRE(g.size() == 256);
  double min_gap = 1e9;
  for (int a = 0; a < g.size(); ++a)
    for (int b = a + 1; b < g.size(); ++b)
      min_gap = std::min(
          min_gap, (g.query_positions.row(a) - g.query_positions.row(b)).norm());
  CHECK(min_gap == doctest::Approx(1.0 / 16.0).epsilon(1e-12));
}

TEST_CASE("regular grid matches hand-enumerated centers with index i*ny+j") {
  Eigen::VectorXd lo(2), hi(2);
  lo << 0.0, 0.0;
  hi << 1.0, 2.0;
  LatentGrid g = make_regular_grid(2, 3, Domain::box(lo, hi));
  REQUIRE(g.size() == 6);
  const double xs[2] = {0.25, 0.75};
  const double ys[3] = {1.0 / 3.0, 1.0, 5.0 / 3.0};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) {
      CHECK(g.query_positions(i * 3 + j, 0) == doctest::Approx(xs[i]).epsilon(1e-14));
      CHECK(g.query_positions(i * 3 + j, 1) == doctest::Approx(ys[j]).epsilon(1e-14));
    }
}

TEST_CASE("regular grid 1D variant") {
  LatentGrid g = make_regular_grid(4, 1, Domain::unit_box(1));
  REQUIRE(g.size() == 4);
  REQUIRE(g.dim() == 1);
  for (int i = 0; i < 4; ++i)
    CHECK(g.query_positions(i, 0) == doctest::Approx(0.125 + 0.25 * i).epsilon(1e-14));
  CHECK_THROWS_AS(make_regular_grid(4, 2, Domain::unit_box(1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_regular_grid(0, 1, Domain::unit_box(1)),
                  std::invalid_argument);
}

TEST_CASE("spherical grid conventions") {
  LatentGrid single = make_spherical_grid(1, 1);
  REQUIRE(single.size() == 1);
  CHECK(single.query_positions(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(single.query_positions(0, 1)) < 1e-14);
  CHECK(std::abs(single.query_positions(0, 2)) < 1e-14);

  LatentGrid g = make_spherical_grid(32, 16);
  REQUIRE(g.size() == 512);
  for (int i = 0; i < g.size(); ++i)
    CHECK(std::abs(g.query_positions.row(i).norm() - 1.0) < 1e-12);

  LatentGrid small = make_spherical_grid(8, 4);
  for (int i = 0; i < small.size(); ++i)
    CHECK(std::abs(small.query_positions.row(i).norm() - 1.0) < 1e-12);

  // row index j * n_lon + i for latitude row j, longitude column i
  const double pi = std::acos(-1.0);
  LatentGrid idx = make_spherical_grid(4, 2);
  const double lat = -pi / 2 + 1.5 * pi / 2;
  const double lon = 2 * pi * 2 / 4;
  CHECK(idx.query_positions(1 * 4 + 2, 0) ==
        doctest::Approx(std::cos(lon) * std::cos(lat)).epsilon(1e-14));
  CHECK(idx.query_positions(1 * 4 + 2, 2) ==
        doctest::Approx(std::sin(lat)).epsilon(1e-14));
  // no point sits at a pole
  for (int i = 0; i < idx.size(); ++i)
    CHECK(std::abs(idx.query_positions(i, 2)) < 1.0 - 1e-9);
}

TEST_CASE("radius graph basic cases") {
  Eigen::MatrixXd pos(2, 2);
  pos << 0.0, 0.0, 1.0, 1.0;
  PointSet input = make_point_set(pos, Domain::unit_box(2));

  LatentGrid query;
  query.kind = GridKind::regular;
  query.query_positions = Eigen::MatrixXd::Zero(1, 2);
  query.domain = Domain::unit_box(2);

  EdgeList coincident = build_radius_graph(input, query, 0.1);
  REQUIRE(coincident.edge_count() == 1);
  CHECK(coincident.pairs(0, 0) == 0);
  CHECK(coincident.pairs(0, 1) == 0);
  CHECK(coincident.degree[0] == 1);
  CHECK_FALSE(coincident.no_edges);

  EdgeList half = build_radius_graph(input, query, 0.5);
  REQUIRE(half.edge_count() == 1);
  CHECK(half.pairs(0, 1) == 0);

  // boundary distance counts as inside
  Eigen::MatrixXd bpos(1, 2);
  bpos << 0.5, 0.0;
  PointSet binput = make_point_set(bpos, Domain::unit_box(2));
  EdgeList boundary = build_radius_graph(binput, query, 0.5);
  CHECK(boundary.edge_count() == 1);

  EdgeList none = build_radius_graph(input, query, 1e-12);
  CHECK(none.edge_count() == 1);  // the coincident point survives any radius
  Eigen::MatrixXd far_pos(1, 2);
  far_pos << 0.9, 0.9;
  PointSet far_input = make_point_set(far_pos, Domain::unit_box(2));
  EdgeList empty = build_radius_graph(far_input, query, 0.1);
  CHECK(empty.edge_count() == 0);
  CHECK(empty.no_edges);
  CHECK(empty.empty_queries == 1);

  std::mt19937_64 rng(1);
  PointSet input1d = random_box_points(5, 1, rng);
  CHECK_THROWS_AS(build_radius_graph(input1d, query, 0.1), std::invalid_argument);
}

TEST_CASE("radius graph matches the all-pairs oracle") {
  std::mt19937_64 rng(42);

  PointSet input = random_box_points(200, 2, rng);
  LatentGrid query = make_regular_grid(8, 8, Domain::unit_box(2));
  EdgeList fast = build_radius_graph(input, query, 0.07);
  auto oracle = brute_force_edges(input, query, 0.07);
  REQUIRE(fast.pairs.rows() == oracle.rows());
  CHECK((fast.pairs.array() == oracle.array()).all());

  std::uniform_int_distribution<int> count(1, 200);
  std::uniform_real_distribution<double> rad(0.02, 0.4);
  for (int trial = 0; trial < 50; ++trial) {
    const int mode = trial % 3;
    PointSet in;
    LatentGrid q;
    double r;
    if (mode == 0) {
      in = random_box_points(count(rng), 1, rng);
      q = make_regular_grid(7, 1, Domain::unit_box(1));
      r = rad(rng);
    } else if (mode == 1) {
      in = random_box_points(count(rng), 2, rng);
      q = make_regular_grid(6, 5, Domain::unit_box(2));
      r = rad(rng);
    } else {
      in = random_sphere_points(count(rng), rng);
      q = make_spherical_grid(6, 3);
      r = 0.2 + rad(rng);
    }
    EdgeList got = build_radius_graph(in, q, r);
    auto want = brute_force_edges(in, q, r);
    REQUIRE(got.pairs.rows() == want.rows());
    CHECK((got.pairs.array() == want.array()).all());

    // degrees mirror the pair counts; ordering is sorted
    Eigen::VectorXi deg = Eigen::VectorXi::Zero(q.size());
    for (Eigen::Index e = 0; e < got.pairs.rows(); ++e) ++deg[got.pairs(e, 0)];
    CHECK((deg.array() == got.degree.array()).all());
    for (Eigen::Index e = 1; e < got.pairs.rows(); ++e) {
      const bool sorted = got.pairs(e - 1, 0) < got.pairs(e, 0) ||
                          (got.pairs(e - 1, 0) == got.pairs(e, 0) &&
                           got.pairs(e - 1, 1) < got.pairs(e, 1));
      CHECK(sorted);
    }
  }
}

TEST_CASE("radius graph is monotone in radius and translation invariant") {
  std::mt19937_64 rng(7);
  PointSet input = random_box_points(150, 2, rng);
  LatentGrid query = make_regular_grid(5, 5, Domain::unit_box(2));

  EdgeList small = build_radius_graph(input, query, 0.07);
  EdgeList large = build_radius_graph(input, query, 0.14);
  std::set<std::pair<int, int>> large_set;
  for (Eigen::Index e = 0; e < large.pairs.rows(); ++e)
    large_set.insert({large.pairs(e, 0), large.pairs(e, 1)});
  for (Eigen::Index e = 0; e < small.pairs.rows(); ++e)
    CHECK(large_set.count({small.pairs(e, 0), small.pairs(e, 1)}) == 1);

  Eigen::RowVector2d shift(10.0, -3.0);
  Eigen::MatrixXd moved = input.positions.rowwise() + shift;
  Eigen::VectorXd lo(2), hi(2);
  lo << 10.0, -3.0;
  hi << 11.0, -2.0;
  PointSet moved_input = make_point_set(moved, Domain::box(lo, hi));
  LatentGrid moved_query = query;
  moved_query.query_positions = query.query_positions.rowwise() + shift;
  EdgeList moved_edges = build_radius_graph(moved_input, moved_query, 0.07);
  REQUIRE(moved_edges.pairs.rows() == small.pairs.rows());
  CHECK((moved_edges.pairs.array() == small.pairs.array()).all());
}

TEST_CASE("sinusoidal embedding layout and values") {
  Eigen::MatrixXd zero(1, 1);
  zero << 0.0;
  Eigen::MatrixXd e0 = sinusoidal_embed(zero, 4);
  REQUIRE(e0.rows() == 4);
  REQUIRE(e0.cols() == 1);
  CHECK(e0(0, 0) == 0.0);
  CHECK(e0(1, 0) == 0.0);
  CHECK(e0(2, 0) == 1.0);
  CHECK(e0(3, 0) == 1.0);

  // quarter period of the single frequency at embed_dim=2
  Eigen::VectorXd w2 = sinusoidal_frequencies(2);
  REQUIRE(w2.size() == 1);
  CHECK(w2[0] == doctest::Approx(0.1).epsilon(1e-12));
  Eigen::MatrixXd quarter(1, 1);
  const double pi = std::acos(-1.0);
  quarter << pi / (2 * w2[0]);
  Eigen::MatrixXd eq = sinusoidal_embed(quarter, 2);
  CHECK(eq(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(eq(1, 0)) < 1e-12);

  CHECK_THROWS_AS(sinusoidal_embed(zero, 5), std::invalid_argument);
  CHECK_THROWS_AS(sinusoidal_embed(zero, 0), std::invalid_argument);
}

TEST_CASE("sinusoidal embedding matches an independent formula evaluation") {
  Eigen::MatrixXd t(1, 1);
  t << 0.5;
  const int ed = 64;
  Eigen::MatrixXd e = sinusoidal_embed(t, ed);
  REQUIRE(e.rows() == ed);
  for (int k = 1; k <= ed / 2; ++k) {
    const double w = 1000.0 * std::pow(10000.0, -2.0 * k / ed);
    CHECK(e(k - 1, 0) == doctest::Approx(std::sin(w * 0.5)).epsilon(1e-14));
    CHECK(e(ed / 2 + k - 1, 0) == doctest::Approx(std::cos(w * 0.5)).epsilon(1e-14));
  }
}

TEST_CASE("sinusoidal embedding stacks one block per coordinate") {
  Eigen::MatrixXd pts(3, 2);
  pts << 0.1, 0.7, 0.4, 0.2, 0.9, 0.5;
  const int ed = 6;
  Eigen::MatrixXd e = sinusoidal_embed(pts, ed);
  REQUIRE(e.rows() == 2 * ed);
  REQUIRE(e.cols() == 3);
  Eigen::MatrixXd ex = sinusoidal_embed(pts.col(0), ed);
  Eigen::MatrixXd ey = sinusoidal_embed(pts.col(1), ed);
  CHECK((e.topRows(ed) - ex).cwiseAbs().maxCoeff() == 0.0);
  CHECK((e.bottomRows(ed) - ey).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sinusoidal embedding separates nearby values") {
  const int n = 1001;
  Eigen::MatrixXd v(n, 1);
  for (int i = 0; i < n; ++i) v(i, 0) = i * 1e-3;
  Eigen::MatrixXd e = sinusoidal_embed(v, 4);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    for (int r = 0; r < 4; ++r) {
      if (e(r, a) != e(r, b)) return e(r, a) < e(r, b);
    }
    return false;
  });
  for (int i = 1; i < n; ++i) {
    const Eigen::Index a = order[i - 1], b = order[i];
    CHECK((e.col(a) - e.col(b)).cwiseAbs().maxCoeff() > 0.0);
  }
}
