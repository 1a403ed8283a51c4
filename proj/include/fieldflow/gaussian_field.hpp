#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "fieldflow/function_batch.hpp"
#include "fieldflow/geometry.hpp"

namespace fieldflow {

enum class Smoothness { half, three_halves, five_halves };
enum class DistanceMode { euclidean, chordal };

// Matern kernel parameters of a Gaussian random field. `jitter` is the
// initial diagonal regularizer handed to the Cholesky factorization.
struct GPSpec {
  double length_scale = 1.0;
  Smoothness smoothness = Smoothness::half;
  double variance = 1.0;
  DistanceMode distance = DistanceMode::euclidean;
  double jitter = 1e-10;
};

void validate(const GPSpec& spec);

Smoothness smoothness_from_nu(double nu);
double nu_of(Smoothness s);

// Matern covariance at distance d for nu in {1/2, 3/2, 5/2} (closed forms).
double matern(double d, const GPSpec& spec);

// Dense covariance matrix C[i, j] = matern(||p_i - p_j||). Chordal mode is
// the Euclidean distance of the R^3 sphere embedding, which the stored
// positions already are; the enum records intent for sphere domains.
Eigen::MatrixXd covariance_matrix(const PointSet& points, const GPSpec& spec);

struct CholFactor {
  Eigen::MatrixXd lower;
  double jitter_used = 0.0;
};

// Lower Cholesky factor of C + jI. The jitter j starts at initial_jitter
// (0 means try the plain matrix first, then 1e-10) and escalates by x10 up
// to 1e-2 * max(diag) until the factorization succeeds.
CholFactor cholesky_with_jitter(const Eigen::MatrixXd& C, double initial_jitter);

// Draws n_samples functions f = L z with z iid standard normal. Each sample
// uses its own generator stream derived from (rng_seed, sample index), so
// batches are reproducible regardless of evaluation order. f_dim = 1.
FunctionBatch sample_gp(const GPSpec& spec, const PointSet& points,
                        int n_samples, std::uint64_t rng_seed);

// Same draw with the precomputed factor, avoiding repeated factorizations
// when many batches share one point set.
FunctionBatch sample_gp_with_factor(const CholFactor& factor,
                                    const PointSet& points, int n_samples,
                                    std::uint64_t rng_seed);

}  // namespace fieldflow
