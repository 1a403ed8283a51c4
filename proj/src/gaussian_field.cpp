#include "fieldflow/gaussian_field.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fieldflow/rng.hpp"

namespace fieldflow {

void validate(const GPSpec& spec) {
  if (!(spec.length_scale > 0))
    throw std::invalid_argument("GPSpec: length_scale must be positive");
  if (!(spec.variance > 0))
    throw std::invalid_argument("GPSpec: variance must be positive");
  if (spec.jitter < 0)
    throw std::invalid_argument("GPSpec: jitter must be >= 0");
}

Smoothness smoothness_from_nu(double nu) {
  if (nu == 0.5) return Smoothness::half;
  if (nu == 1.5) return Smoothness::three_halves;
  if (nu == 2.5) return Smoothness::five_halves;
  std::ostringstream msg;
  msg << "smoothness_from_nu: unsupported nu " << nu << " (use 0.5, 1.5 or 2.5)";
  throw std::invalid_argument(msg.str());
}

double nu_of(Smoothness s) {
  switch (s) {
    case Smoothness::half: return 0.5;
    case Smoothness::three_halves: return 1.5;
    case Smoothness::five_halves: return 2.5;
  }
  throw std::invalid_argument("nu_of: bad smoothness enum");
}

double matern(double d, const GPSpec& spec) {
  if (d < 0) throw std::invalid_argument("matern: distance must be >= 0");
  const double s2 = spec.variance;
  const double x = d / spec.length_scale;
  switch (spec.smoothness) {
    case Smoothness::half:
      return s2 * std::exp(-x);
    case Smoothness::three_halves: {
      const double a = std::sqrt(3.0) * x;
      return s2 * (1.0 + a) * std::exp(-a);
    }
    case Smoothness::five_halves: {
      const double a = std::sqrt(5.0) * x;
      return s2 * (1.0 + a + 5.0 * x * x / 3.0) * std::exp(-a);
    }
  }
  throw std::invalid_argument("matern: bad smoothness enum");
}

Eigen::MatrixXd covariance_matrix(const PointSet& points, const GPSpec& spec) {
  validate(spec);
  const Eigen::Index n = points.positions.rows();
  if (n < 1) throw std::invalid_argument("covariance_matrix: empty point set");
  Eigen::MatrixXd C(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    C(i, i) = spec.variance;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double d = (points.positions.row(i) - points.positions.row(j)).norm();
      const double v = matern(d, spec);
      C(i, j) = v;
      C(j, i) = v;
    }
  }
  return C;
}

CholFactor cholesky_with_jitter(const Eigen::MatrixXd& C, double initial_jitter) {
  if (C.rows() != C.cols())
    throw std::invalid_argument("cholesky_with_jitter: matrix must be square");
  if (initial_jitter < 0)
    throw std::invalid_argument("cholesky_with_jitter: jitter must be >= 0");
  const double max_jitter = 1e-2 * C.diagonal().maxCoeff();
  double j = initial_jitter;
  while (true) {
    Eigen::MatrixXd A = C;
    if (j > 0) A.diagonal().array() += j;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success) {
      CholFactor f;
      f.lower = llt.matrixL();
      f.jitter_used = j;
      return f;
    }
    if (j >= max_jitter) {
      std::ostringstream msg;
      msg << "cholesky_with_jitter: factorization failed at final jitter " << j;
      throw std::runtime_error(msg.str());
    }
    j = j == 0 ? 1e-10 : j * 10;
    if (j > max_jitter) j = max_jitter;
  }
}

FunctionBatch sample_gp_with_factor(const CholFactor& factor,
                                    const PointSet& points, int n_samples,
                                    std::uint64_t rng_seed) {
  const Eigen::Index n = points.positions.rows();
  if (factor.lower.rows() != n)
    throw std::invalid_argument("sample_gp_with_factor: factor size mismatch");
  FunctionBatch batch;
  batch.points = points;
  batch.f_dim = 1;
  batch.values.resize(n, n_samples);
  Eigen::VectorXd z(n);
  for (int s = 0; s < n_samples; ++s) {
    std::mt19937_64 engine = make_engine(rng_seed, static_cast<std::uint64_t>(s));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(engine);
    batch.values.col(s) =
        (factor.lower.triangularView<Eigen::Lower>() * z).cast<float>();
  }
  return batch;
}

FunctionBatch sample_gp(const GPSpec& spec, const PointSet& points,
                        int n_samples, std::uint64_t rng_seed) {
  if (n_samples < 0)
    throw std::invalid_argument("sample_gp: n_samples must be >= 0");
  const CholFactor factor =
      cholesky_with_jitter(covariance_matrix(points, spec), spec.jitter);
  return sample_gp_with_factor(factor, points, n_samples, rng_seed);
}

}  // namespace fieldflow
