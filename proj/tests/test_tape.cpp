#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "fieldflow/tape.hpp"

using namespace fieldflow;

namespace {

using Mat = Eigen::MatrixXd;
using TapeD = Tape<double>;
using TensorD = Tensor<double>;
using Store = ParamStore<double>;

void fill_random(Store& store, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  for (Eigen::Index i = 0; i < store.size(); ++i) store.values[i] = g(rng);
}

// Central finite differences against the recorded gradient, max relative
// error over every parameter entry.
double fd_max_rel_err(Store& store,
                      const std::function<TensorD(TapeD&, Store&)>& build) {
  store.zero_grads();
  TapeD tape;
  TensorD loss = build(tape, store);
  tape.backward(loss);
  Eigen::VectorXd analytic = store.grads;

  const double h = 1e-5;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < store.size(); ++i) {
    const double old = store.values[i];
    store.values[i] = old + h;
    TapeD tp;
    const double lp = tp.val(build(tp, store))(0, 0);
    store.values[i] = old - h;
    TapeD tm;
    const double lm = tm.val(build(tm, store))(0, 0);
    store.values[i] = old;
    const double fd = (lp - lm) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
  }
  return worst;
}

Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = g(rng);
  return m;
}

}  // namespace

TEST_CASE("param store slices are disjoint and initialized by kind") {
  Store store;
  const int a = store.add("a", 3, 4, Store::Init::fan_in_uniform);
  const int b = store.add("b", 2, 2, Store::Init::zeros);
  store.finalize();
  REQUIRE(store.size() == 16);
  store.init_params(7);

  auto sa = store.slice(a);
  CHECK(sa.rows() == 3);
  CHECK(sa.cols() == 4);
  CHECK(sa.cwiseAbs().maxCoeff() <= 0.5);  // U(-1/sqrt(cols), 1/sqrt(cols))
  CHECK(sa.cwiseAbs().maxCoeff() > 0.0);
  CHECK(store.slice(b).cwiseAbs().maxCoeff() == 0.0);

  Store again;
  again.add("a", 3, 4, Store::Init::fan_in_uniform);
  again.add("b", 2, 2, Store::Init::zeros);
  again.finalize();
  again.init_params(7);
  CHECK((again.values.array() == store.values.array()).all());
  again.init_params(8);
  CHECK((again.values.array() != store.values.array()).any());
}

TEST_CASE("quadratic loss gradient is 2 theta / size") {
  Store store;
  const int id = store.add("theta", 2, 3, Store::Init::fan_in_uniform);
  store.finalize();
  fill_random(store, 1);

  TapeD tape;
  auto p = tape.param(store, id);
  auto loss = tape.mean_all(tape.cwise_mul(p, p));
  store.zero_grads();
  tape.backward(loss);
  Eigen::VectorXd want = 2.0 * store.values / 6.0;
  CHECK((store.grads - want).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("constants receive no gradient and constant losses give zeros") {
  Store store;
  const int id = store.add("theta", 2, 2, Store::Init::fan_in_uniform);
  store.finalize();
  fill_random(store, 2);
  store.zero_grads();

  TapeD tape;
  auto c = tape.constant(random_mat(2, 2, 3));
  auto loss = tape.mean_all(c);
  tape.backward(loss);
  CHECK(store.grads.cwiseAbs().maxCoeff() == 0.0);

  // params touched only through a branch not reaching the loss stay zero
  TapeD t2;
  auto p = t2.param(store, id);
  (void)t2.gelu(p);
  auto l2 = t2.mean_all(t2.constant(random_mat(2, 2, 4)));
  t2.backward(l2);
  CHECK(store.grads.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward demands a scalar loss") {
  Store store;
  const int id = store.add("theta", 2, 2, Store::Init::fan_in_uniform);
  store.finalize();
  fill_random(store, 5);
  TapeD tape;
  auto p = tape.param(store, id);
  CHECK_THROWS_AS(tape.backward(p), std::invalid_argument);
}

TEST_CASE("elementwise and affine ops match finite differences") {
  Store store;
  const int a = store.add("a", 3, 4, Store::Init::fan_in_uniform);
  const int b = store.add("b", 3, 4, Store::Init::fan_in_uniform);
  const int v = store.add("v", 3, 1, Store::Init::fan_in_uniform);
  store.finalize();
  fill_random(store, 11);
  const Mat w = random_mat(3, 4, 12);

  auto weighted = [&](TapeD& t, TensorD x) {
    return t.mean_all(t.cwise_mul(x, t.constant(w)));
  };

  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          return weighted(t, t.add(t.param(s, a), t.param(s, b)));
        }) < 1e-6);
  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          return weighted(t, t.sub(t.param(s, a), t.param(s, b)));
        }) < 1e-6);
  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          return weighted(t, t.cwise_mul(t.param(s, a), t.param(s, b)));
        }) < 1e-6);
  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          return weighted(t, t.add_colvec(t.param(s, a), t.param(s, v)));
        }) < 1e-6);
  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          return weighted(t, t.mul_colvec(t.param(s, a), t.param(s, v)));
        }) < 1e-6);
  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          return weighted(t, t.add_scalar(t.param(s, a), 0.37));
        }) < 1e-6);
  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          return weighted(t, t.scale(t.param(s, a), -1.9));
        }) < 1e-6);
}

TEST_CASE("structural ops match finite differences") {
  Store store;
  const int a = store.add("a", 3, 5, Store::Init::fan_in_uniform);
  const int b = store.add("b", 2, 5, Store::Init::fan_in_uniform);
  store.finalize();
  fill_random(store, 21);

  const Mat w25 = random_mat(2, 5, 22);
  const Mat w53 = random_mat(5, 3, 23);
  const Mat w34 = random_mat(3, 4, 24);
  const Mat w55 = random_mat(5, 5, 25);

  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          auto y = t.matmul(t.param(s, b), t.transpose(t.param(s, a)));
          return t.mean_all(t.cwise_mul(y, t.constant(random_mat(2, 3, 26))));
        }) < 1e-6);
  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          auto y = t.rows(t.param(s, a), 1, 2);
          return t.mean_all(t.cwise_mul(y, t.constant(w25)));
        }) < 1e-6);
  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          auto y = t.vcat(t.param(s, a), t.param(s, b));
          return t.mean_all(t.cwise_mul(y, t.constant(w55)));
        }) < 1e-6);

  // duplicate indices must accumulate
  const std::vector<std::int32_t> idx{4, 0, 2, 2};
  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          auto y = t.gather_cols(t.param(s, a), idx);
          return t.mean_all(t.cwise_mul(y, t.constant(w34)));
        }) < 1e-6);

  // one empty segment, one multi-column segment
  const std::vector<std::int32_t> seg{0, 0, 1, 3, 3, 3};
  Store store6;
  const int a6 = store6.add("a", 3, 6, Store::Init::fan_in_uniform);
  store6.finalize();
  fill_random(store6, 27);
  const Mat w44 = random_mat(3, 4, 28);
  CHECK(fd_max_rel_err(store6, [&](TapeD& t, Store& s) {
          auto y = t.segment_mean_cols(t.param(s, a6), seg, 4);
          return t.mean_all(t.cwise_mul(y, t.constant(w44)));
        }) < 1e-6);
}

TEST_CASE("normalization and activation ops match finite differences") {
  Store store;
  const int a = store.add("a", 5, 3, Store::Init::fan_in_uniform);
  store.finalize();
  fill_random(store, 31);
  const Mat w = random_mat(5, 3, 32);

  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          return t.mean_all(t.cwise_mul(t.layer_norm_raw(t.param(s, a)),
                                        t.constant(w)));
        }) < 1e-5);
  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          return t.mean_all(t.cwise_mul(t.gelu(t.param(s, a)), t.constant(w)));
        }) < 1e-5);
  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          return t.mean_all(t.cwise_mul(t.silu(t.param(s, a)), t.constant(w)));
        }) < 1e-5);

  Store srow;
  const int r = srow.add("r", 4, 6, Store::Init::fan_in_uniform);
  srow.finalize();
  fill_random(srow, 33);
  const Mat wr = random_mat(4, 6, 34);
  CHECK(fd_max_rel_err(srow, [&](TapeD& t, Store& s) {
          return t.mean_all(t.cwise_mul(t.softmax_rows(t.param(s, r)),
                                        t.constant(wr)));
        }) < 1e-5);
}

TEST_CASE("softmax rows sum to one and layer norm standardizes columns") {
  TapeD tape;
  auto x = tape.constant(random_mat(4, 7, 41));
  auto y = tape.softmax_rows(x);
  Eigen::VectorXd sums = tape.val(y).rowwise().sum();
  for (int i = 0; i < 4; ++i) CHECK(sums[i] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(tape.val(y).minCoeff() > 0.0);

  auto ln = tape.layer_norm_raw(tape.constant(random_mat(6, 3, 42)));
  const Mat& v = tape.val(ln);
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(v.col(c).mean()) < 1e-6);
    const double var = v.col(c).squaredNorm() / 6.0;
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }

  // constant column collapses to zeros through the epsilon guard
  auto flat = tape.layer_norm_raw(tape.constant(Mat::Constant(5, 2, 3.25)));
  CHECK(tape.val(flat).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("composite network gradient matches finite differences") {
  Store store;
  const int w1 = store.add("w1", 6, 4, Store::Init::fan_in_uniform);
  const int b1 = store.add("b1", 6, 1, Store::Init::zeros);
  const int w2 = store.add("w2", 2, 6, Store::Init::fan_in_uniform);
  store.finalize();
  fill_random(store, 51, 0.5);
  const Mat x = random_mat(4, 9, 52);
  const Mat w = random_mat(2, 9, 53);

  CHECK(fd_max_rel_err(store, [&](TapeD& t, Store& s) {
          auto h = t.gelu(t.add_colvec(t.matmul(t.param(s, w1), t.constant(x)),
                                       t.param(s, b1)));
          auto y = t.matmul(t.param(s, w2), t.layer_norm_raw(h));
          return t.mean_all(t.cwise_mul(y, t.constant(w)));
        }) < 1e-5);
}

TEST_CASE("tape op preconditions") {
  TapeD tape;
  auto a = tape.constant(random_mat(2, 3, 61));
  auto b = tape.constant(random_mat(3, 2, 62));
  CHECK_THROWS_AS(tape.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tape.cwise_mul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tape.matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(tape.add_colvec(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tape.rows(a, 1, 5), std::invalid_argument);
  CHECK_THROWS_AS(tape.vcat(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tape.gather_cols(a, {0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(tape.segment_mean_cols(a, {0, 1}, 2), std::invalid_argument);
  CHECK_THROWS_AS(tape.segment_mean_cols(a, {0, 1, 2}, 2), std::invalid_argument);
}

TEST_CASE("gradients accumulate across backward calls until cleared") {
  Store store;
  const int id = store.add("theta", 2, 2, Store::Init::fan_in_uniform);
  store.finalize();
  fill_random(store, 71);

  auto run = [&] {
    TapeD tape;
    auto p = tape.param(store, id);
    tape.backward(tape.mean_all(p));
  };
  store.zero_grads();
  run();
  Eigen::VectorXd once = store.grads;
  run();
  CHECK((store.grads - 2.0 * once).cwiseAbs().maxCoeff() < 1e-15);
  store.zero_grads();
  run();
  CHECK((store.grads - once).cwiseAbs().maxCoeff() == 0.0);
}
