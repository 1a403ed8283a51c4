#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fieldflow/gaussian_field.hpp"
#include "fieldflow/geometry.hpp"
#include "fieldflow/metrics.hpp"

using namespace fieldflow;

namespace {

PointSet line_points(int n) {
  Eigen::VectorXd lo(1), hi(1);
  lo << 0.0;
  hi << 1.0;
  LatentGrid g = make_regular_grid(n, 1, Domain::box(lo, hi));
  PointSet pos;
  pos.positions = g.query_positions;
  pos.domain = g.domain;
  return pos;
}

FunctionBatch noise_batch(int n_points, int n_samples, double sigma,
                          std::uint64_t seed) {
  FunctionBatch b;
  b.points = line_points(n_points);
  b.f_dim = 1;
  b.values.resize(n_points, n_samples);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  for (int s = 0; s < n_samples; ++s)
    for (int i = 0; i < n_points; ++i)
      b.values(i, s) = static_cast<float>(g(rng));
  return b;
}

FunctionBatch grid_noise_batch(int nx, int ny, int n_samples, double sigma,
                               std::uint64_t seed) {
  LatentGrid g = make_regular_grid(nx, ny, Domain::unit_box(2));
  FunctionBatch b;
  b.points.positions = g.query_positions;
  b.points.domain = g.domain;
  b.f_dim = 1;
  b.grid_nx = nx;
  b.grid_ny = ny;
  b.values.resize(nx * ny, n_samples);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, sigma);
  for (int s = 0; s < n_samples; ++s)
    for (int i = 0; i < nx * ny; ++i)
      b.values(i, s) = static_cast<float>(n01(rng));
  return b;
}

double naive_mmd_squared(const FunctionBatch& x, const FunctionBatch& y,
                         double bw) {
  const Eigen::MatrixXd xs = x.values.cast<double>();
  const Eigen::MatrixXd ys = y.values.cast<double>();
  const Eigen::Index n = xs.cols(), m = ys.cols();
  auto k = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return std::exp(-(a - b).squaredNorm() / (2.0 * bw * bw));
  };
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) sxx += k(xs.col(i), xs.col(j));
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (i != j) syy += k(ys.col(i), ys.col(j));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) sxy += k(xs.col(i), ys.col(j));
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  return sxx / (nn * (nn - 1.0)) + syy / (mm * (mm - 1.0)) - 2.0 * sxy / (nn * mm);
}

}  // namespace

TEST_CASE("one-dimensional wasserstein distances") {
  Eigen::VectorXd a(2), b(2);
  a << 0.0, 2.0;
  b << 3.0, 1.0;

  SUBCASE("interleaved pair has unit distance at both orders") {
    CHECK(wasserstein_1d(a, b, 1) == 1.0);
    CHECK(wasserstein_1d(a, b, 2) == 1.0);
  }

  SUBCASE("identity is zero") {
    CHECK(wasserstein_1d(a, a, 1) == 0.0);
    CHECK(wasserstein_1d(a, a, 2) == 0.0);
  }

  SUBCASE("translation shifts by the offset under p=1") {
    Eigen::VectorXd c(4), d(4);
    c << -1.0, 0.5, 2.0, 3.5;
    d = c.array() + 0.75;
    CHECK(wasserstein_1d(c, d, 1) == doctest::Approx(0.75).epsilon(1e-15));
  }

  SUBCASE("sorting makes it order invariant") {
    Eigen::VectorXd ar = a.reverse();
    CHECK(wasserstein_1d(ar, b, 2) == wasserstein_1d(a, b, 2));
  }

  SUBCASE("preconditions") {
    CHECK_THROWS_WITH_AS(wasserstein_1d(a, Eigen::VectorXd::Zero(3), 1),
                         doctest::Contains("length mismatch"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(wasserstein_1d(a, b, 3),
                         doctest::Contains("p must be 1 or 2"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(
        wasserstein_1d(Eigen::VectorXd(), Eigen::VectorXd(), 1),
        doctest::Contains("empty"), std::invalid_argument);
  }
}

TEST_CASE("sliced wasserstein estimator") {
  FunctionBatch x = noise_batch(12, 64, 1.0, 1);
  FunctionBatch y = noise_batch(12, 64, 1.0, 2);

  SUBCASE("identical batches give exactly zero") {
    CHECK(sliced_wasserstein(x, x, 32, 2, 7) == 0.0);
    CHECK(sliced_wasserstein(x, x, 32, 1, 7) == 0.0);
  }

  SUBCASE("one-dimensional data collapses to the exact distance") {
    FunctionBatch a = noise_batch(1, 40, 1.0, 3);
    FunctionBatch b = noise_batch(1, 40, 1.5, 4);
    const Eigen::VectorXd av = a.values.row(0).transpose().cast<double>();
    const Eigen::VectorXd bv = b.values.row(0).transpose().cast<double>();
    for (int p : {1, 2})
      CHECK(sliced_wasserstein(a, b, 16, p, 5) ==
            doctest::Approx(wasserstein_1d(av, bv, p)).epsilon(1e-12));
  }

  SUBCASE("symmetric in its arguments") {
    CHECK(sliced_wasserstein(x, y, 32, 2, 7) ==
          sliced_wasserstein(y, x, 32, 2, 7));
  }

  SUBCASE("invariant under sample permutation") {
    FunctionBatch xp = x;
    std::vector<int> order(64);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(9);
    std::shuffle(order.begin(), order.end(), rng);
    for (int s = 0; s < 64; ++s)
      xp.values.col(s) = x.values.col(order[static_cast<std::size_t>(s)]);
    const double base = sliced_wasserstein(x, y, 32, 2, 7);
    CHECK(sliced_wasserstein(xp, y, 32, 2, 7) ==
          doctest::Approx(base).epsilon(1e-12));
  }

  SUBCASE("separates distributions of different scale") {
    FunctionBatch wide = noise_batch(12, 64, 3.0, 5);
    const double near = sliced_wasserstein(x, y, 64, 2, 7);
    const double far = sliced_wasserstein(x, wide, 64, 2, 7);
    CHECK(far > 2.0 * near);
  }

  SUBCASE("preconditions") {
    FunctionBatch fewer = noise_batch(12, 32, 1.0, 6);
    CHECK_THROWS_WITH_AS(sliced_wasserstein(x, fewer, 8, 2, 0),
                         doctest::Contains("sample counts differ"),
                         std::invalid_argument);
    FunctionBatch coarse = noise_batch(6, 64, 1.0, 6);
    CHECK_THROWS_WITH_AS(sliced_wasserstein(x, coarse, 8, 2, 0),
                         doctest::Contains("discretizations differ"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(sliced_wasserstein(x, y, 0, 2, 0),
                         doctest::Contains("L must be positive"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(sliced_wasserstein(x, y, 8, 3, 0),
                         doctest::Contains("p must be 1 or 2"),
                         std::invalid_argument);
  }
}

TEST_CASE("averaged sliced wasserstein") {
  FunctionBatch x = noise_batch(8, 48, 1.0, 11);
  FunctionBatch y = noise_batch(8, 48, 2.0, 12);

  const AveragedSwd five = averaged_swd(x, y, 32, 5, 2, 3);
  REQUIRE(five.runs.size() == 5);
  double acc = 0.0;
  for (double v : five.runs) acc += v;
  CHECK(five.mean == acc / 5.0);

  SUBCASE("runs are a prefix-stable stream in the seed") {
    const AveragedSwd three = averaged_swd(x, y, 32, 3, 2, 3);
    for (int r = 0; r < 3; ++r)
      CHECK(three.runs[static_cast<std::size_t>(r)] ==
            five.runs[static_cast<std::size_t>(r)]);
  }

  SUBCASE("averaging reduces projection scatter") {
    std::vector<double> singles, tens;
    for (int rep = 0; rep < 8; ++rep) {
      singles.push_back(
          averaged_swd(x, y, 16, 1, 2, 100 + static_cast<std::uint64_t>(rep)).mean);
      tens.push_back(
          averaged_swd(x, y, 16, 10, 2, 100 + static_cast<std::uint64_t>(rep)).mean);
    }
    auto spread = [](const std::vector<double>& v) {
      const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
      return *hi - *lo;
    };
    CHECK(spread(tens) < spread(singles));
  }

  SUBCASE("n_run must be positive") {
    CHECK_THROWS_WITH_AS(averaged_swd(x, y, 32, 0, 2, 3),
                         doctest::Contains("n_run"), std::invalid_argument);
  }
}

TEST_CASE("mmd agrees with the naive u-statistic") {
  FunctionBatch x = noise_batch(6, 37, 1.0, 21);
  FunctionBatch y = noise_batch(6, 29, 1.4, 22);

  for (double bw : {0.5, 1.0, 3.0}) {
    double raw = 0.0;
    const double value = mmd_unbiased(x, y, bw, &raw);
    const double naive = naive_mmd_squared(x, y, bw);
    CHECK(raw == doctest::Approx(naive).epsilon(1e-12));
    CHECK(value == doctest::Approx(std::sqrt(std::max(naive, 0.0))).epsilon(1e-12));
  }

  SUBCASE("null distribution stays near zero and clamps negatives") {
    FunctionBatch a = noise_batch(6, 200, 1.0, 23);
    FunctionBatch b = noise_batch(6, 200, 1.0, 24);
    double raw = 0.0;
    mmd_unbiased(a, b, 1.5, &raw);
    CHECK(std::abs(raw) < 0.02);

    double raw_same = 0.0;
    const double v_same = mmd_unbiased(a, a, 1.5, &raw_same);
    // identical batches push the u-statistic negative by the missing
    // diagonal mass, so the root clamps at zero
    CHECK(raw_same < 0.0);
    CHECK(v_same == 0.0);
  }

  SUBCASE("separates scales decisively") {
    FunctionBatch wide = noise_batch(6, 200, 3.0, 25);
    FunctionBatch narrow = noise_batch(6, 200, 1.0, 26);
    const double bw = median_bandwidth(wide, narrow);
    CHECK(mmd_unbiased(wide, narrow, bw) > 0.2);
  }

  SUBCASE("symmetric and permutation invariant") {
    double rxy = 0.0, ryx = 0.0;
    mmd_unbiased(x, y, 1.0, &rxy);
    mmd_unbiased(y, x, 1.0, &ryx);
    CHECK(rxy == doctest::Approx(ryx).epsilon(1e-12));

    FunctionBatch xp = x;
    std::vector<int> order(37);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(9);
    std::shuffle(order.begin(), order.end(), rng);
    for (int s = 0; s < 37; ++s)
      xp.values.col(s) = x.values.col(order[static_cast<std::size_t>(s)]);
    double rp = 0.0;
    mmd_unbiased(xp, y, 1.0, &rp);
    CHECK(rp == doctest::Approx(rxy).epsilon(1e-12));
  }

  SUBCASE("preconditions") {
    FunctionBatch one = noise_batch(6, 1, 1.0, 27);
    CHECK_THROWS_WITH_AS(mmd_unbiased(one, y, 1.0),
                         doctest::Contains("at least 2 samples"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(mmd_unbiased(x, y, 0.0),
                         doctest::Contains("bandwidth must be positive"),
                         std::invalid_argument);
  }
}

TEST_CASE("median bandwidth heuristic") {
  SUBCASE("matches the exhaustive pooled median") {
    FunctionBatch x = noise_batch(4, 9, 1.0, 31);
    FunctionBatch y = noise_batch(4, 8, 2.0, 32);
    std::vector<Eigen::VectorXd> pool;
    for (int i = 0; i < 9; ++i) pool.push_back(x.values.col(i).cast<double>());
    for (int i = 0; i < 8; ++i) pool.push_back(y.values.col(i).cast<double>());
    std::vector<double> d;
    for (std::size_t i = 0; i < pool.size(); ++i)
      for (std::size_t j = i + 1; j < pool.size(); ++j)
        d.push_back((pool[i] - pool[j]).norm());
    std::sort(d.begin(), d.end());
    const std::size_t k = d.size();
    const double median = k % 2 == 1 ? d[k / 2] : 0.5 * (d[k / 2 - 1] + d[k / 2]);
    bool degenerate = true;
    CHECK(median_bandwidth(x, y, &degenerate) ==
          doctest::Approx(median / std::sqrt(2.0)).epsilon(1e-14));
    CHECK_FALSE(degenerate);
  }

  SUBCASE("two pooled points use their single distance") {
    FunctionBatch x = noise_batch(4, 1, 1.0, 33);
    FunctionBatch y = noise_batch(4, 1, 1.0, 34);
    const double d =
        (x.values.col(0).cast<double>() - y.values.col(0).cast<double>()).norm();
    CHECK(median_bandwidth(x, y) == doctest::Approx(d / std::sqrt(2.0)).epsilon(1e-14));
  }

  SUBCASE("an all-equal pool falls back to one") {
    FunctionBatch x = noise_batch(4, 6, 1.0, 35);
    x.values.setConstant(2.5f);
    bool degenerate = false;
    CHECK(median_bandwidth(x, x, &degenerate) == 1.0);
    CHECK(degenerate);
  }
}

TEST_CASE("grid metrics from spectral reconstructions") {
  SUBCASE("identical batches give zero everywhere") {
    FunctionBatch x = grid_noise_batch(8, 8, 32, 1.0, 41);
    const GridMetrics m = grid_metrics(x, x, 8, 8);
    CHECK(m.spectra_mse == 0.0);
    CHECK(m.autocov_mse == 0.0);
    CHECK(m.density_mse == 0.0);
  }

  SUBCASE("white noise has a flat unit spectrum") {
    FunctionBatch x = grid_noise_batch(8, 8, 4000, 1.0, 42);
    const std::vector<double> bins = radial_spectrum(x, 8, 8);
    REQUIRE(bins.size() >= 2);
    for (double b : bins) CHECK(b == doctest::Approx(1.0).epsilon(0.1));

    // lag-zero autocovariance is the count-weighted spectrum mean; for unit
    // white noise it recovers the variance
    double lag0 = 0.0;
    int total = 0;
    for (int i = 0; i < 8; ++i) {
      const int ki = i <= 4 ? i : i - 8;
      for (int j = 0; j < 8; ++j) {
        const int kj = j <= 4 ? j : j - 8;
        const int r = static_cast<int>(
            std::llround(std::hypot(static_cast<double>(ki), static_cast<double>(kj))));
        if (r >= static_cast<int>(bins.size())) continue;
        lag0 += bins[static_cast<std::size_t>(r)];
        total += 1;
      }
    }
    lag0 /= static_cast<double>(total);
    CHECK(lag0 == doctest::Approx(1.0).epsilon(0.05));
  }

  SUBCASE("matched distributions score far below mismatched ones") {
    FunctionBatch a = grid_noise_batch(8, 8, 256, 1.0, 43);
    FunctionBatch b = grid_noise_batch(8, 8, 256, 1.0, 44);
    FunctionBatch wide = grid_noise_batch(8, 8, 256, 2.0, 45);
    const GridMetrics close = grid_metrics(a, b, 8, 8);
    const GridMetrics far = grid_metrics(a, wide, 8, 8);
    CHECK(far.spectra_mse > 10.0 * close.spectra_mse);
    CHECK(far.autocov_mse > 10.0 * close.autocov_mse);
    CHECK(far.density_mse > close.density_mse);
  }

  SUBCASE("preconditions") {
    FunctionBatch x = grid_noise_batch(4, 4, 8, 1.0, 46);
    FunctionBatch y = grid_noise_batch(4, 4, 8, 1.0, 47);
    CHECK_THROWS_WITH_AS(grid_metrics(x, y, 8, 3),
                         doctest::Contains("grid shape"), std::invalid_argument);
    FunctionBatch empty = x;
    empty.values.resize(16, 0);
    CHECK_THROWS_WITH_AS(grid_metrics(x, empty, 4, 4),
                         doctest::Contains("empty"), std::invalid_argument);
    FunctionBatch wide = x;
    wide.f_dim = 2;
    wide.values.resize(32, 8);
    wide.values.setZero();
    CHECK_THROWS_WITH_AS(grid_metrics(wide, wide, 4, 4),
                         doctest::Contains("single-channel"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(radial_spectrum(x, 8, 8),
                         doctest::Contains("grid shape"), std::invalid_argument);
  }
}

TEST_CASE("metric reports aggregate and round trip") {
  FunctionBatch x = grid_noise_batch(4, 4, 40, 1.0, 51);
  FunctionBatch y = grid_noise_batch(4, 4, 40, 1.5, 52);

  MetricParams params;
  params.n_projections = 16;
  params.n_run = 4;
  params.p = 2;
  params.seed = 9;

  const MetricReport report = compute_metrics(x, y, params);
  CHECK(report.swd_runs.size() == 4);
  CHECK(report.swd_mean ==
        averaged_swd(x, y, 16, 4, 2, 9).mean);
  CHECK(report.has_grid_metrics);
  CHECK(report.n_x_samples == 40);
  CHECK(report.n_y_samples == 40);
  CHECK(report.mmd_bandwidth == median_bandwidth(x, y));
  CHECK(report.mmd == mmd_unbiased(x, y, report.mmd_bandwidth));

  SUBCASE("bandwidth override is honored") {
    MetricParams forced = params;
    forced.bandwidth_override = 2.5;
    const MetricReport r = compute_metrics(x, y, forced);
    CHECK(r.mmd_bandwidth == 2.5);
    CHECK_FALSE(r.bandwidth_degenerate);
  }

  SUBCASE("grid block only appears when both sides declare the grid") {
    FunctionBatch loose = y;
    loose.grid_nx = 0;
    loose.grid_ny = 0;
    const MetricReport r = compute_metrics(x, loose, params);
    CHECK_FALSE(r.has_grid_metrics);
  }

  SUBCASE("serialization round trips every field exactly") {
    const std::string text = serialize_report(report);
    const MetricReport back = parse_report(text);
    CHECK(back.swd_mean == report.swd_mean);
    REQUIRE(back.swd_runs.size() == report.swd_runs.size());
    for (std::size_t i = 0; i < back.swd_runs.size(); ++i)
      CHECK(back.swd_runs[i] == report.swd_runs[i]);
    CHECK(back.mmd == report.mmd);
    CHECK(back.mmd_squared == report.mmd_squared);
    CHECK(back.mmd_negative == report.mmd_negative);
    CHECK(back.mmd_bandwidth == report.mmd_bandwidth);
    CHECK(back.bandwidth_degenerate == report.bandwidth_degenerate);
    CHECK(back.has_grid_metrics == report.has_grid_metrics);
    CHECK(back.grid.spectra_mse == report.grid.spectra_mse);
    CHECK(back.grid.autocov_mse == report.grid.autocov_mse);
    CHECK(back.grid.density_mse == report.grid.density_mse);
    CHECK(back.n_projections == report.n_projections);
    CHECK(back.n_run == report.n_run);
    CHECK(back.p == report.p);
    CHECK(back.seed == report.seed);
    CHECK(back.n_x_samples == report.n_x_samples);
    CHECK(back.n_y_samples == report.n_y_samples);
  }

  SUBCASE("parser rejects foreign documents") {
    CHECK_THROWS_WITH_AS(parse_report("format = other\nversion = 1\n"),
                         doctest::Contains("wrong format marker"),
                         std::runtime_error);
  }
}
